#include "stf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace stf {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int argmax(const double* v, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

Sentence hard_from_rows(const Tensor& rows) {
  Sentence s;
  const int L = rows.shape()[0], v = rows.shape()[1];
  s.ids.reserve(L);
  for (int i = 0; i < L; ++i)
    s.ids.push_back(argmax(rows.data() + static_cast<size_t>(i) * v, v));
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// AdamOptimizer

void AdamOptimizer::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.all()) {
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(p.value.size(), 0.0);
    if (v.empty()) v.assign(p.value.size(), 0.0);
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

Tensor loss_self(Tape& tape, const Generator& gen, const Sentence& x, StyleId s,
                 double word_dropout_rate, Rng& rng) {
  validate_sentence(x, gen.config().vocab_size);
  if (word_dropout_rate < 0.0 || word_dropout_rate >= 1.0)
    throw std::invalid_argument("loss_self: word dropout rate must be in [0, 1)");
  // Word dropout deletes interior tokens from the encoder copy only; the
  // reconstruction targets stay untouched.
  std::vector<TokenId> enc_input;
  enc_input.push_back(kBosId);
  for (size_t i = 1; i + 1 < x.ids.size(); ++i) {
    if (word_dropout_rate > 0.0 && rng.uniform() < word_dropout_rate) continue;
    enc_input.push_back(x.ids[i]);
  }
  enc_input.push_back(kEosId);

  Tensor z = gen.encode(tape, enc_input, s);
  std::vector<TokenId> prefix(x.ids.begin(), x.ids.end() - 1);
  std::vector<TokenId> targets(x.ids.begin() + 1, x.ids.end());
  Tensor ce = tape.cross_entropy(gen.decode(tape, z, prefix), targets);
  return tape.scale(ce, static_cast<double>(targets.size()));
}

Tensor loss_cycle_from(Tape& tape, const Generator& gen, Tensor soft_transfer, const Sentence& x,
                       StyleId s) {
  validate_sentence(x, gen.config().vocab_size);
  Tensor z = gen.encode_soft(tape, soft_transfer, s);
  std::vector<TokenId> prefix(x.ids.begin(), x.ids.end() - 1);
  std::vector<TokenId> targets(x.ids.begin() + 1, x.ids.end());
  Tensor ce = tape.cross_entropy(gen.decode(tape, z, prefix), targets);
  return tape.scale(ce, static_cast<double>(targets.size()));
}

Tensor loss_cycle_from_hard(Tape& tape, const Generator& gen, const Sentence& y_hat,
                            const Sentence& x, StyleId s) {
  validate_sentence(x, gen.config().vocab_size);
  validate_sentence(y_hat, gen.config().vocab_size);
  Tensor z = gen.encode(tape, y_hat.ids, s);
  std::vector<TokenId> prefix(x.ids.begin(), x.ids.end() - 1);
  std::vector<TokenId> targets(x.ids.begin() + 1, x.ids.end());
  Tensor ce = tape.cross_entropy(gen.decode(tape, z, prefix), targets);
  return tape.scale(ce, static_cast<double>(targets.size()));
}

Tensor loss_cycle(Tape& tape, const Generator& gen, const Sentence& x, StyleId s, StyleId s_hat,
                  double temperature) {
  if (s == s_hat)
    throw std::invalid_argument("loss_cycle: target style equals source style");
  Tensor soft = gen.transfer_soft(tape, x, s_hat, temperature);
  return loss_cycle_from(tape, gen, soft, x, s);
}

Tensor loss_style(Tape& tape, const Discriminator& disc, Tensor soft_transfer, StyleId s_hat,
                  DiscVariant variant) {
  if (variant != disc.variant())
    throw std::invalid_argument("loss_style: variant does not match the discriminator");
  if (variant == DiscVariant::kConditional) {
    Tensor logits = disc.class_logits_soft(tape, soft_transfer, s_hat, /*frozen=*/true);
    return tape.cross_entropy(logits, {1});
  }
  Tensor logits = disc.class_logits_soft(tape, soft_transfer, std::nullopt, /*frozen=*/true);
  return tape.cross_entropy(logits, {s_hat});
}

std::vector<LabeledExample> make_disc_examples(const Sentence& x, const Sentence& y,
                                               const Sentence& y_hat, StyleId s, StyleId s_hat,
                                               DiscVariant variant, bool drop_real,
                                               bool drop_generated) {
  if (s == s_hat) throw std::invalid_argument("disc batch: target style equals source style");
  std::vector<LabeledExample> out;
  if (variant == DiscVariant::kConditional) {
    if (!drop_real) out.push_back({x, s, 1});
    if (!drop_generated) out.push_back({y, s, 1});
    if (!drop_real) out.push_back({x, s_hat, 0});
    out.push_back({y_hat, s_hat, 0});
  } else {
    if (!drop_real) out.push_back({x, 0, s});
    if (!drop_generated) out.push_back({y, 0, s});
    out.push_back({y_hat, 0, 0});
  }
  return out;
}

Tensor loss_discriminator(Tape& tape, const Discriminator& disc,
                          const std::vector<LabeledExample>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_discriminator: empty batch");
  Tensor sum;
  for (const auto& ex : batch) {
    std::optional<StyleId> proposal;
    if (disc.variant() == DiscVariant::kConditional) proposal = ex.proposal;
    Tensor logits = disc.class_logits(tape, ex.sent.ids, proposal);
    Tensor ce = tape.cross_entropy(logits, {ex.label});
    sum = sum.defined() ? tape.add(sum, ce) : ce;
  }
  return tape.scale(sum, 1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const RunConfig& cfg, std::vector<StyleCorpus> corpora, Vocabulary vocab)
    : cfg_(cfg),
      corpora_(std::move(corpora)),
      vocab_(std::move(vocab)),
      gen_opt_(cfg.training.lr, cfg.training.beta1, cfg.training.beta2, cfg.training.adam_eps),
      disc_opt_(cfg.training.lr, cfg.training.beta1, cfg.training.beta2, cfg.training.adam_eps),
      rng_(cfg.training.seed, /*stream=*/0x7472) {
  cfg_.validate();
  if (corpora_.size() < 2) throw std::invalid_argument("trainer: at least two datasets required");
  if (corpora_.size() != cfg_.styles.size())
    throw std::invalid_argument("trainer: corpus count does not match the style list");
  for (const auto& c : corpora_)
    if (c.train.empty())
      throw std::invalid_argument("trainer: dataset '" + c.name + "' has no training sentences");
  cfg_.model.vocab_size = vocab_.size();
  cfg_.model.num_styles = static_cast<int>(corpora_.size());

  gen_ = std::make_unique<Generator>(cfg_.model, cfg_.training.seed);
  disc_ = std::make_unique<Discriminator>(cfg_.model, cfg_.variant, cfg_.training.seed);

  int64_t longest = 1;
  for (const auto& c : corpora_)
    longest = std::max<int64_t>(longest, static_cast<int64_t>(c.train.size()));
  iters_per_epoch_ = std::max<int64_t>(1, (longest + cfg_.training.batch - 1) / cfg_.training.batch);

  artifacts_ = build_eval_artifacts(corpora_, vocab_.size());
}

double Trainer::temperature_at(int64_t iteration) const {
  const auto& t = cfg_.training;
  const auto epoch = static_cast<double>(iteration / iters_per_epoch_);
  return std::max(t.temp_floor, t.temp_init * std::pow(t.temp_decay, epoch));
}

StyleId Trainer::sample_target_style(StyleId s) {
  const int k = static_cast<int>(corpora_.size());
  if (k == 2) return s == 1 ? 2 : 1;
  const int pick = static_cast<int>(rng_.bounded(static_cast<uint64_t>(k - 1)));
  return pick + 1 >= s ? pick + 2 : pick + 1;
}

const Sentence& Trainer::sample_sentence(const StyleCorpus& corpus) {
  return corpus.train[rng_.bounded(corpus.train.size())];
}

Sentence Trainer::detached_transfer(const Sentence& x, StyleId target, double temperature) const {
  Tape tape(/*record=*/false);
  Tensor soft = gen_->transfer_soft(tape, x, target, temperature, /*frozen=*/true);
  return hard_from_rows(soft);
}

StepMetrics Trainer::discriminator_step() {
  const double temp = temperature();
  const auto& t = cfg_.training;
  std::vector<LabeledExample> examples;
  for (const auto& corpus : corpora_) {
    for (int j = 0; j < t.batch; ++j) {
      const Sentence& x = sample_sentence(corpus);
      const StyleId s_hat = sample_target_style(corpus.style);
      const Sentence y = detached_transfer(x, corpus.style, temp);
      const Sentence y_hat = detached_transfer(x, s_hat, temp);
      auto ex = make_disc_examples(x, y, y_hat, corpus.style, s_hat, cfg_.variant,
                                   /*drop_real=*/t.disc_generated_only,
                                   /*drop_generated=*/t.disc_real_only);
      examples.insert(examples.end(), ex.begin(), ex.end());
    }
  }

  StepMetrics m;
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  for (const auto& ex : examples) {
    Tape tape;
    std::optional<StyleId> proposal;
    if (cfg_.variant == DiscVariant::kConditional) proposal = ex.proposal;
    Tensor logits = disc_->class_logits(tape, ex.sent.ids, proposal);
    Tensor ce = tape.cross_entropy(logits, {ex.label});
    m.d_loss += ce.scalar() * inv_n;
    m.d_acc += (argmax(logits.data(), disc_->num_classes()) == ex.label ? 1.0 : 0.0) * inv_n;
    tape.backward(tape.scale(ce, inv_n));
  }
  disc_opt_.step(disc_->params());
  disc_->params().zero_grad();
  return m;
}

StepMetrics Trainer::generator_step() {
  const double temp = temperature();
  const auto& t = cfg_.training;
  const bool use_self = !t.disable_self && t.w_self > 0.0;
  const bool use_cycle = !t.disable_cycle && t.w_cycle > 0.0;
  const bool use_style = !t.disable_style && t.w_style > 0.0;

  StepMetrics m;
  const double inv_n = 1.0 / static_cast<double>(corpora_.size() * t.batch);
  for (const auto& corpus : corpora_) {
    for (int j = 0; j < t.batch; ++j) {
      const Sentence& x = sample_sentence(corpus);
      const StyleId s_hat = sample_target_style(corpus.style);

      Tape tape;
      Tensor total;
      auto add_component = [&](Tensor term, double weight, double* logged) {
        *logged += term.scalar() * inv_n;
        Tensor weighted = tape.scale(term, weight);
        total = total.defined() ? tape.add(total, weighted) : weighted;
      };
      if (use_self)
        add_component(loss_self(tape, *gen_, x, corpus.style, t.word_dropout, rng_), t.w_self,
                      &m.g_self);
      if (use_cycle || use_style) {
        Tensor soft = gen_->transfer_soft(tape, x, s_hat, temp);
        if (use_cycle) {
          Tensor lc = t.cycle_hard
                          ? loss_cycle_from_hard(tape, *gen_, hard_from_rows(soft), x,
                                                 corpus.style)
                          : loss_cycle_from(tape, *gen_, soft, x, corpus.style);
          add_component(lc, t.w_cycle, &m.g_cycle);
        }
        if (use_style)
          add_component(loss_style(tape, *disc_, soft, s_hat, cfg_.variant), t.w_style,
                        &m.g_style);
      }
      if (!total.defined()) continue;
      m.g_loss += total.scalar() * inv_n;
      tape.backward(tape.scale(total, inv_n));
    }
  }
  gen_opt_.step(gen_->params());
  gen_->params().zero_grad();
  return m;
}

DevMetrics Trainer::evaluate_dev(int limit_per_style) const {
  EvalReport rep =
      evaluate_system(*gen_, corpora_, "dev", artifacts_, nullptr, limit_per_style, 0);
  return {rep.acc, rep.self_bleu, rep.ppl};
}

void Trainer::log_line(const std::string& line) {
  log_lines_.push_back(line);
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app);
    out << line << "\n";
  }
}

void Trainer::write_checkpoint(const std::string& name) const {
  save_checkpoint(cfg_.out_dir + "/" + name, snapshot());
}

void Trainer::train() {
  std::filesystem::create_directories(cfg_.out_dir);
  if (cfg_.vocab_file.empty()) cfg_.vocab_file = cfg_.out_dir + "/vocab.txt";
  vocab_.save(cfg_.vocab_file);
  log_path_ = cfg_.out_dir + "/metrics.log";

  const auto& t = cfg_.training;
  while (iteration_ < t.max_iters) {
    StepMetrics dm, gm;
    for (int r = 0; r < t.n_d; ++r) {
      const StepMetrics s = discriminator_step();
      dm.d_loss += s.d_loss / t.n_d;
      dm.d_acc += s.d_acc / t.n_d;
    }
    for (int r = 0; r < t.n_f; ++r) {
      const StepMetrics s = generator_step();
      gm.g_loss += s.g_loss / t.n_f;
      gm.g_self += s.g_self / t.n_f;
      gm.g_cycle += s.g_cycle / t.n_f;
      gm.g_style += s.g_style / t.n_f;
    }
    ++iteration_;
    log_line("iter=" + std::to_string(iteration_) + " d_loss=" + fmt(dm.d_loss) +
             " d_acc=" + fmt(dm.d_acc) + " g_loss=" + fmt(gm.g_loss) + " g_self=" +
             fmt(gm.g_self) + " g_cycle=" + fmt(gm.g_cycle) + " g_style=" + fmt(gm.g_style) +
             " temp=" + fmt(temperature_at(iteration_ - 1)));

    if (iteration_ % t.eval_every == 0 || iteration_ == t.max_iters) {
      const DevMetrics dev = evaluate_dev(cfg_.eval_limit);
      log_line("iter=" + std::to_string(iteration_) + " dev_acc=" + fmt(dev.acc) +
               " dev_self_bleu=" + fmt(dev.self_bleu) + " dev_ppl=" + fmt(dev.ppl) +
               " dev_score=" + fmt(dev.score()));
      write_checkpoint("latest.stfm");
      if (dev.score() > best_score_) {
        best_score_ = dev.score();
        write_checkpoint("best.stfm");
      }
    }
  }
  write_checkpoint("final.stfm");
}

CheckpointData Trainer::snapshot() const {
  CheckpointData data;
  data.config_text = serialize_config(cfg_);
  data.iteration = static_cast<uint64_t>(iteration_);
  data.rng_state = rng_.state();
  data.add_store("gen.", gen_->params());
  data.add_store("disc.", disc_->params());
  auto add_moments = [&](const std::string& prefix, const AdamOptimizer& opt) {
    for (const auto& [name, m] : opt.first_moments())
      data.add_tensor(prefix + ".m." + name, {static_cast<int>(m.size())}, m);
    for (const auto& [name, v] : opt.second_moments())
      data.add_tensor(prefix + ".v." + name, {static_cast<int>(v.size())}, v);
    data.add_tensor(prefix + ".step", {1}, {static_cast<double>(opt.step_count())});
  };
  add_moments("opt_g", gen_opt_);
  add_moments("opt_d", disc_opt_);
  data.add_tensor("meta.best_score", {1}, {best_score_});
  return data;
}

void Trainer::restore(const CheckpointData& data) {
  data.restore_store("gen.", gen_->params());
  data.restore_store("disc.", disc_->params());
  auto load_moments = [&](const std::string& prefix, AdamOptimizer& opt) {
    opt.set_step_count(static_cast<int64_t>(data.tensor(prefix + ".step").values[0]));
    opt.first_moments().clear();
    opt.second_moments().clear();
    for (const auto& rec : data.tensors) {
      const std::string m_prefix = prefix + ".m.";
      const std::string v_prefix = prefix + ".v.";
      if (rec.name.rfind(m_prefix, 0) == 0)
        opt.first_moments()[rec.name.substr(m_prefix.size())] = rec.values;
      else if (rec.name.rfind(v_prefix, 0) == 0)
        opt.second_moments()[rec.name.substr(v_prefix.size())] = rec.values;
    }
  };
  load_moments("opt_g", gen_opt_);
  load_moments("opt_d", disc_opt_);
  iteration_ = static_cast<int64_t>(data.iteration);
  rng_.set_state(data.rng_state);
  if (data.has_tensor("meta.best_score")) best_score_ = data.tensor("meta.best_score").values[0];
}

}  // namespace stf
