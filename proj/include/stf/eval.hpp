#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stf/data.hpp"
#include "stf/generator.hpp"
#include "stf/types.hpp"

namespace stf {

// ---------------------------------------------------------------------------
// BLEU. Scores are in [0, 100]. N-grams are computed over the word ids with
// BOS/EOS stripped. Reference length uses the shortest reference; zero match
// counts are epsilon-smoothed (1e-9); orders longer than the candidate are
// skipped so that an exact copy scores 100 exactly.

struct BleuAccumulator {
  std::array<long, 4> match{{0, 0, 0, 0}};
  std::array<long, 4> total{{0, 0, 0, 0}};
  long cand_len = 0;
  long ref_len = 0;

  void add(const Sentence& candidate, const std::vector<Sentence>& references);
  double score() const;
};

double sentence_bleu(const Sentence& candidate, const std::vector<Sentence>& references);
double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references);

// ---------------------------------------------------------------------------
// N-gram language model with either no smoothing or interpolated Kneser-Ney
// with a fixed discount. Contexts are left-padded with BOS; every sentence
// contributes len+1 predictions (EOS included).

class NgramLM {
 public:
  enum class Smoothing { kNone, kKneserNey };

  NgramLM() : NgramLM(1, Smoothing::kNone, 0.5, 1) {}
  NgramLM(int order, Smoothing mode, double discount, int vocab_size);

  void fit(const std::vector<Sentence>& corpus);

  // p(token | previous order-1 tokens). Zero only in unsmoothed mode.
  double prob(const std::vector<TokenId>& context, TokenId token) const;

  // Natural-log likelihood and prediction count; -inf when an unsmoothed
  // n-gram is unseen.
  double sentence_logprob(const Sentence& s, long* predictions) const;

  int order() const { return order_; }
  int vocab_size() const { return vocab_size_; }
  Smoothing smoothing() const { return mode_; }

 private:
  struct Level {
    std::unordered_map<std::string, long> count;      // k-gram -> count
    std::unordered_map<std::string, long> ctx_total;  // context -> sum of counts
    std::unordered_map<std::string, long> ctx_types;  // context -> distinct continuations
  };

  static std::string key(const TokenId* ids, int n);
  void pad_stream(const Sentence& s, std::vector<TokenId>* stream) const;

  int order_;
  Smoothing mode_;
  double discount_;
  int vocab_size_;
  std::vector<Level> levels_;  // levels_[k-1]: raw counts at highest order,
                               // continuation counts below it
  bool fitted_ = false;
};

NgramLM train_lm(const std::vector<Sentence>& corpus, int vocab_size, int order = 5,
                 NgramLM::Smoothing mode = NgramLM::Smoothing::kKneserNey,
                 double discount = 0.75);

// exp(-(1/N) sum log p); +inf when any unsmoothed prediction is unseen.
double perplexity(const NgramLM& lm, const std::vector<Sentence>& sentences);

// ---------------------------------------------------------------------------
// Style classifier: linear model over hashed bag-of-1..2-gram features,
// trained full batch with a mean logistic loss so that balanced duplication
// of training sentences cannot change its decisions.

class StyleClassifier {
 public:
  StyleClassifier() : StyleClassifier(2) {}
  explicit StyleClassifier(int num_classes, int hash_bits = 18);

  void fit(const std::vector<std::vector<Sentence>>& per_class, int epochs = 300,
           double learning_rate = 5.0);

  int predict(const Sentence& s) const;  // class index 0..K-1, ties to lower
  std::vector<double> scores(const Sentence& s) const;
  int num_classes() const { return num_classes_; }

 private:
  std::vector<std::pair<uint32_t, double>> features(const Sentence& s) const;

  int num_classes_;
  uint32_t bucket_mask_;
  std::vector<std::vector<double>> weights_;  // [class][bucket]
  std::vector<double> bias_;
};

StyleClassifier train_classifier(const std::vector<StyleCorpus>& corpora, int epochs = 300);

// Percent of transferred sentences classified as their target style.
double transfer_accuracy(const StyleClassifier& clf, const std::vector<Sentence>& transferred,
                         const std::vector<StyleId>& targets);

// ---------------------------------------------------------------------------
// System evaluation.

struct EvalReport {
  double acc = 0.0;        // percent in [0, 100]
  double self_bleu = 0.0;  // [0, 100]
  std::optional<double> ref_bleu;
  double ppl = 1.0;  // >= 1 (or +inf)

  std::string to_text() const;    // key: value lines
  std::string to_record() const;  // single machine-readable line
};

// Classifier + language model trained on the train splits, reusable across
// evaluations of the same data.
struct EvalArtifacts {
  StyleClassifier classifier;
  NgramLM lm;
  double classifier_dev_acc = 0.0;  // held-out sanity number, percent
};

EvalArtifacts build_eval_artifacts(const std::vector<StyleCorpus>& corpora, int vocab_size);

// One transferred sentence with its provenance.
struct TransferCase {
  Sentence input;
  Sentence output;
  StyleId target = 0;
  std::optional<Sentence> reference;
};

EvalReport evaluate_outputs(const EvalArtifacts& artifacts, const std::vector<TransferCase>& cases);

// Greedy-transfers every sentence of the split to each other style and
// evaluates the pool. Per-sentence transfers run on up to `threads` threads
// (0 = hardware default, capped by the STFM_THREADS environment variable).
// refs, when present, holds per-style references aligned with the split.
EvalReport evaluate_system(const Generator& gen, const std::vector<StyleCorpus>& corpora,
                           const std::string& split, const EvalArtifacts& artifacts,
                           const std::vector<std::vector<Sentence>>* refs = nullptr,
                           int limit_per_style = 0, int threads = 0);

// The transfers evaluate_system would score, exposed for output files.
std::vector<TransferCase> collect_transfers(const Generator& gen,
                                            const std::vector<StyleCorpus>& corpora,
                                            const std::string& split,
                                            const std::vector<std::vector<Sentence>>* refs,
                                            int limit_per_style, int threads);

int eval_thread_count(int requested, size_t work_items);

}  // namespace stf
