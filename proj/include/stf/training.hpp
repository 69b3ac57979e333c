#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stf/checkpoint.hpp"
#include "stf/config.hpp"
#include "stf/discriminator.hpp"
#include "stf/eval.hpp"
#include "stf/generator.hpp"

namespace stf {

// Adaptive moment estimation. Moments are keyed by parameter name so that
// they survive checkpointing.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params);

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::map<std::string, std::vector<double>>& first_moments() { return m_; }
  std::map<std::string, std::vector<double>>& second_moments() { return v_; }
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Losses. All return scalar tensors on the given tape.

// Negative log-likelihood of reproducing x from (dropout(x), s), teacher
// forced; word dropout deletes interior tokens of the encoder copy only.
Tensor loss_self(Tape& tape, const Generator& gen, const Sentence& x, StyleId s,
                 double word_dropout_rate, Rng& rng);

// NLL of recovering x from the soft transfer, with gradients flowing through
// the soft first pass.
Tensor loss_cycle_from(Tape& tape, const Generator& gen, Tensor soft_transfer, const Sentence& x,
                       StyleId s);
// Hard variant: the transfer is argmax-discretized and re-embedded, so no
// gradient reaches the first pass.
Tensor loss_cycle_from_hard(Tape& tape, const Generator& gen, const Sentence& y_hat,
                            const Sentence& x, StyleId s);
Tensor loss_cycle(Tape& tape, const Generator& gen, const Sentence& x, StyleId s, StyleId s_hat,
                  double temperature);

// Discriminator-supplied style loss on a soft transfer; discriminator
// parameters enter as constants.
Tensor loss_style(Tape& tape, const Discriminator& disc, Tensor soft_transfer, StyleId s_hat,
                  DiscVariant variant);

// One labeled discriminator example. proposal is 0 for the multi-class
// variant.
struct LabeledExample {
  Sentence sent;
  StyleId proposal = 0;
  int label = 0;
};

// The labeling protocol: conditional labels (x,s) and (y,s) as 1, (x,s_hat)
// and (y_hat,s_hat) as 0; multi-class labels x and y with their style's
// class and y_hat with class 0. The drop switches remove the corresponding
// positive sample kind.
std::vector<LabeledExample> make_disc_examples(const Sentence& x, const Sentence& y,
                                               const Sentence& y_hat, StyleId s, StyleId s_hat,
                                               DiscVariant variant, bool drop_real,
                                               bool drop_generated);

// Mean cross entropy over the batch. Generator outputs must already be
// detached (plain sentences).
Tensor loss_discriminator(Tape& tape, const Discriminator& disc,
                          const std::vector<LabeledExample>& batch);

// ---------------------------------------------------------------------------
// Trainer: the alternating optimization loop.

struct StepMetrics {
  double d_loss = 0.0;
  double d_acc = 0.0;
  double g_loss = 0.0;
  double g_self = 0.0;
  double g_cycle = 0.0;
  double g_style = 0.0;
};

struct DevMetrics {
  double acc = 0.0;
  double self_bleu = 0.0;
  double ppl = 0.0;
  double score() const { return (acc + self_bleu) / 2.0; }
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<StyleCorpus> corpora, Vocabulary vocab);

  // One optimizer update on the discriminator with the generator frozen.
  StepMetrics discriminator_step();
  // One optimizer update on the generator with the discriminator frozen.
  StepMetrics generator_step();

  // Runs the full loop: n_d discriminator steps then n_f generator steps per
  // iteration, periodic dev evaluation and checkpointing, best-checkpoint
  // tracking by mean of dev accuracy and self-BLEU.
  void train();

  double temperature_at(int64_t iteration) const;
  double temperature() const { return temperature_at(iteration_); }
  int64_t iteration() const { return iteration_; }
  int64_t iters_per_epoch() const { return iters_per_epoch_; }

  Generator& generator() { return *gen_; }
  const Generator& generator() const { return *gen_; }
  Discriminator& discriminator() { return *disc_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<StyleCorpus>& corpora() const { return corpora_; }
  const EvalArtifacts& eval_artifacts() const { return artifacts_; }
  const std::vector<std::string>& log_lines() const { return log_lines_; }
  const RunConfig& config() const { return cfg_; }
  DevMetrics evaluate_dev(int limit_per_style) const;

  CheckpointData snapshot() const;
  void restore(const CheckpointData& data);

 private:
  StyleId sample_target_style(StyleId s);
  const Sentence& sample_sentence(const StyleCorpus& corpus);
  Sentence detached_transfer(const Sentence& x, StyleId target, double temperature) const;
  void log_line(const std::string& line);
  void write_checkpoint(const std::string& name) const;

  RunConfig cfg_;
  std::vector<StyleCorpus> corpora_;
  Vocabulary vocab_;
  std::unique_ptr<Generator> gen_;
  std::unique_ptr<Discriminator> disc_;
  AdamOptimizer gen_opt_, disc_opt_;
  Rng rng_;
  int64_t iteration_ = 0;
  int64_t iters_per_epoch_ = 1;
  EvalArtifacts artifacts_;
  std::vector<std::string> log_lines_;
  std::string log_path_;
  double best_score_ = -1.0;
};

}  // namespace stf
