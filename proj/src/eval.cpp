#include "stf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <stdexcept>
#include <thread>

namespace stf {

namespace {

constexpr double kBleuEpsilon = 1e-9;

std::vector<TokenId> content_ids(const Sentence& s) {
  std::vector<TokenId> out;
  out.reserve(s.ids.size());
  for (TokenId t : s.ids)
    if (t != kBosId && t != kEosId && t != kPadId) out.push_back(t);
  return out;
}

std::string ngram_key(const TokenId* ids, int n) {
  std::string k(sizeof(TokenId) * n, '\0');
  std::memcpy(k.data(), ids, sizeof(TokenId) * n);
  return k;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// BLEU

void BleuAccumulator::add(const Sentence& candidate, const std::vector<Sentence>& references) {
  if (references.empty()) throw std::invalid_argument("bleu: empty reference list");
  const std::vector<TokenId> cand = content_ids(candidate);
  std::vector<std::vector<TokenId>> refs;
  refs.reserve(references.size());
  long shortest = std::numeric_limits<long>::max();
  for (const auto& r : references) {
    refs.push_back(content_ids(r));
    shortest = std::min(shortest, static_cast<long>(refs.back().size()));
  }
  cand_len += static_cast<long>(cand.size());
  ref_len += shortest;

  for (int n = 1; n <= 4; ++n) {
    const int cand_ngrams = static_cast<int>(cand.size()) - n + 1;
    if (cand_ngrams <= 0) continue;
    std::map<std::string, long> cand_counts;
    for (int i = 0; i < cand_ngrams; ++i) ++cand_counts[ngram_key(cand.data() + i, n)];
    std::map<std::string, long> max_ref;
    for (const auto& r : refs) {
      std::map<std::string, long> rc;
      for (int i = 0; i + n <= static_cast<int>(r.size()); ++i)
        ++rc[ngram_key(r.data() + i, n)];
      for (auto& [g, c] : rc) max_ref[g] = std::max(max_ref[g], c);
    }
    for (auto& [g, c] : cand_counts) {
      auto it = max_ref.find(g);
      match[n - 1] += it == max_ref.end() ? 0 : std::min(c, it->second);
    }
    total[n - 1] += cand_ngrams;
  }
}

double BleuAccumulator::score() const {
  if (cand_len == 0) return 0.0;
  double log_precision = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) continue;  // candidate shorter than n+1 everywhere
    ++orders;
    const double numer = match[n] > 0 ? static_cast<double>(match[n]) : kBleuEpsilon;
    log_precision += std::log(numer / static_cast<double>(total[n]));
  }
  if (orders == 0) return 0.0;
  const double bp = cand_len > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  return 100.0 * bp * std::exp(log_precision / orders);
}

double sentence_bleu(const Sentence& candidate, const std::vector<Sentence>& references) {
  BleuAccumulator acc;
  acc.add(candidate, references);
  return acc.score();
}

double corpus_bleu(const std::vector<Sentence>& candidates,
                   const std::vector<std::vector<Sentence>>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("bleu: candidate/reference count mismatch");
  BleuAccumulator acc;
  for (size_t i = 0; i < candidates.size(); ++i) acc.add(candidates[i], references[i]);
  return acc.score();
}

// ---------------------------------------------------------------------------
// NgramLM

NgramLM::NgramLM(int order, Smoothing mode, double discount, int vocab_size)
    : order_(order), mode_(mode), discount_(discount), vocab_size_(vocab_size) {
  if (order < 1) throw std::invalid_argument("lm: order must be >= 1");
  if (vocab_size < 1) throw std::invalid_argument("lm: vocabulary must be nonempty");
  if (mode == Smoothing::kKneserNey && (discount <= 0.0 || discount >= 1.0))
    throw std::invalid_argument("lm: discount must be in (0, 1)");
  levels_.resize(order);
}

std::string NgramLM::key(const TokenId* ids, int n) { return ngram_key(ids, n); }

void NgramLM::pad_stream(const Sentence& s, std::vector<TokenId>* stream) const {
  stream->clear();
  stream->insert(stream->end(), order_ - 1, kBosId);
  for (TokenId t : s.ids) {
    if (t == kBosId || t == kPadId) continue;
    stream->push_back(t);
  }
  // EOS is already the final sentence token and is predicted like any other.
}

void NgramLM::fit(const std::vector<Sentence>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("lm: empty training corpus");
  // Raw counts for every order over the padded streams.
  std::vector<std::unordered_map<std::string, long>> raw(order_);
  std::vector<TokenId> stream;
  for (const auto& s : corpus) {
    pad_stream(s, &stream);
    const int len = static_cast<int>(stream.size());
    for (int n = 1; n <= order_; ++n)
      for (int i = 0; i + n <= len; ++i) ++raw[n - 1][key(stream.data() + i, n)];
  }
  // Highest order uses raw counts; lower orders use continuation counts
  // (distinct one-token left extensions of the order-above types).
  levels_.assign(order_, Level{});
  levels_[order_ - 1].count = raw[order_ - 1];
  for (int n = order_ - 1; n >= 1; --n) {
    auto& lvl = levels_[n - 1];
    for (const auto& [g, c] : raw[n]) {  // (n+1)-grams as bytes
      (void)c;
      lvl.count[std::string(g, sizeof(TokenId), std::string::npos)] += 1;
    }
  }
  for (int n = 1; n <= order_; ++n) {
    auto& lvl = levels_[n - 1];
    for (const auto& [g, c] : lvl.count) {
      const std::string ctx(g, 0, g.size() - sizeof(TokenId));
      lvl.ctx_total[ctx] += c;
      lvl.ctx_types[ctx] += 1;
    }
  }
  fitted_ = true;
}

double NgramLM::prob(const std::vector<TokenId>& context, TokenId token) const {
  if (!fitted_) throw std::logic_error("lm: prob() before fit()");
  if (static_cast<int>(context.size()) != order_ - 1)
    throw std::invalid_argument("lm: context must hold order-1 tokens");

  if (mode_ == Smoothing::kNone) {
    const auto& lvl = levels_[order_ - 1];
    std::vector<TokenId> g(context);
    g.push_back(token);
    auto it = lvl.count.find(key(g.data(), order_));
    if (it == lvl.count.end()) return 0.0;
    const auto ctx_it = lvl.ctx_total.find(key(context.data(), order_ - 1));
    return static_cast<double>(it->second) / static_cast<double>(ctx_it->second);
  }

  // Interpolated Kneser-Ney, evaluated bottom-up.
  double p = 1.0 / vocab_size_;
  for (int n = 1; n <= order_; ++n) {
    const auto& lvl = levels_[n - 1];
    const TokenId* ctx_ids = context.data() + (order_ - n);
    const std::string ctx = key(ctx_ids, n - 1);
    auto total_it = lvl.ctx_total.find(ctx);
    if (total_it == lvl.ctx_total.end()) continue;  // unseen context: back off
    const double total = static_cast<double>(total_it->second);
    const double types = static_cast<double>(lvl.ctx_types.at(ctx));
    std::vector<TokenId> g(ctx_ids, ctx_ids + (n - 1));
    g.push_back(token);
    auto cit = lvl.count.find(key(g.data(), n));
    const double c = cit == lvl.count.end() ? 0.0 : static_cast<double>(cit->second);
    p = std::max(c - discount_, 0.0) / total + (discount_ * types / total) * p;
  }
  return p;
}

double NgramLM::sentence_logprob(const Sentence& s, long* predictions) const {
  std::vector<TokenId> stream;
  pad_stream(s, &stream);
  double lp = 0.0;
  long n_pred = 0;
  std::vector<TokenId> ctx(order_ - 1);
  for (int i = order_ - 1; i < static_cast<int>(stream.size()); ++i) {
    std::copy(stream.begin() + (i - order_ + 1), stream.begin() + i, ctx.begin());
    const double p = prob(ctx, stream[i]);
    lp += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    ++n_pred;
  }
  if (predictions) *predictions += n_pred;
  return lp;
}

NgramLM train_lm(const std::vector<Sentence>& corpus, int vocab_size, int order,
                 NgramLM::Smoothing mode, double discount) {
  NgramLM lm(order, mode, discount, vocab_size);
  lm.fit(corpus);
  return lm;
}

double perplexity(const NgramLM& lm, const std::vector<Sentence>& sentences) {
  double lp = 0.0;
  long n = 0;
  for (const auto& s : sentences) lp += lm.sentence_logprob(s, &n);
  if (n == 0) return 1.0;
  if (std::isinf(lp)) return std::numeric_limits<double>::infinity();
  return std::exp(-lp / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// StyleClassifier

StyleClassifier::StyleClassifier(int num_classes, int hash_bits)
    : num_classes_(num_classes), bucket_mask_((1u << hash_bits) - 1) {
  if (num_classes < 2) throw std::invalid_argument("classifier: need at least two classes");
  weights_.assign(num_classes, std::vector<double>(1u << hash_bits, 0.0));
  bias_.assign(num_classes, 0.0);
}

std::vector<std::pair<uint32_t, double>> StyleClassifier::features(const Sentence& s) const {
  const std::vector<TokenId> ids = content_ids(s);
  std::vector<std::pair<uint32_t, double>> feats;
  if (ids.empty()) return feats;
  auto hash1 = [](uint64_t a) {
    a ^= a >> 33;
    a *= 0xff51afd7ed558ccdULL;
    a ^= a >> 33;
    a *= 0xc4ceb9fe1a85ec53ULL;
    a ^= a >> 33;
    return a;
  };
  const double w = 1.0 / static_cast<double>(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    feats.emplace_back(static_cast<uint32_t>(hash1(ids[i] + 1)) & bucket_mask_, w);
    if (i + 1 < ids.size()) {
      const uint64_t pair = (static_cast<uint64_t>(ids[i] + 1) << 21) ^
                            static_cast<uint64_t>(ids[i + 1] + 1) ^ 0x517cc1b727220a95ULL;
      feats.emplace_back(static_cast<uint32_t>(hash1(pair)) & bucket_mask_, w);
    }
  }
  return feats;
}

void StyleClassifier::fit(const std::vector<std::vector<Sentence>>& per_class, int epochs,
                          double learning_rate) {
  if (static_cast<int>(per_class.size()) != num_classes_)
    throw std::invalid_argument("classifier: class count mismatch");
  size_t total = 0;
  int nonempty = 0;
  struct Example {
    std::vector<std::pair<uint32_t, double>> feats;
    int label;
  };
  std::vector<Example> examples;
  for (int c = 0; c < num_classes_; ++c) {
    nonempty += per_class[c].empty() ? 0 : 1;
    for (const auto& s : per_class[c]) examples.push_back({features(s), c});
    total += per_class[c].size();
  }
  if (nonempty < 2) throw std::invalid_argument("classifier: training data covers a single class");
  const double inv_total = 1.0 / static_cast<double>(total);

  std::vector<double> logits(num_classes_);
  std::vector<std::vector<double>> wgrad(num_classes_,
                                         std::vector<double>(weights_[0].size(), 0.0));
  std::vector<double> bgrad(num_classes_);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (auto& g : wgrad) std::fill(g.begin(), g.end(), 0.0);
    std::fill(bgrad.begin(), bgrad.end(), 0.0);
    for (const auto& ex : examples) {
      for (int c = 0; c < num_classes_; ++c) {
        double z = bias_[c];
        for (auto& [b, v] : ex.feats) z += weights_[c][b] * v;
        logits[c] = z;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (int c = 0; c < num_classes_; ++c) {
        logits[c] = std::exp(logits[c] - mx);
        sum += logits[c];
      }
      for (int c = 0; c < num_classes_; ++c) {
        const double err = logits[c] / sum - (c == ex.label ? 1.0 : 0.0);
        bgrad[c] += err;
        for (auto& [b, v] : ex.feats) wgrad[c][b] += err * v;
      }
    }
    for (int c = 0; c < num_classes_; ++c) {
      bias_[c] -= learning_rate * inv_total * bgrad[c];
      for (size_t b = 0; b < weights_[c].size(); ++b)
        weights_[c][b] -= learning_rate * inv_total * wgrad[c][b];
    }
  }
}

std::vector<double> StyleClassifier::scores(const Sentence& s) const {
  std::vector<double> out(num_classes_);
  const auto feats = features(s);
  for (int c = 0; c < num_classes_; ++c) {
    double z = bias_[c];
    for (auto& [b, v] : feats) z += weights_[c][b] * v;
    out[c] = z;
  }
  return out;
}

int StyleClassifier::predict(const Sentence& s) const {
  const auto sc = scores(s);
  int best = 0;
  for (int c = 1; c < num_classes_; ++c)
    if (sc[c] > sc[best]) best = c;
  return best;
}

StyleClassifier train_classifier(const std::vector<StyleCorpus>& corpora, int epochs) {
  if (corpora.size() < 2) throw std::invalid_argument("classifier: need at least two styles");
  StyleClassifier clf(static_cast<int>(corpora.size()));
  std::vector<std::vector<Sentence>> per_class;
  for (const auto& c : corpora) per_class.push_back(c.train);
  clf.fit(per_class, epochs);
  return clf;
}

double transfer_accuracy(const StyleClassifier& clf, const std::vector<Sentence>& transferred,
                         const std::vector<StyleId>& targets) {
  if (transferred.size() != targets.size())
    throw std::invalid_argument("accuracy: size mismatch");
  if (transferred.empty()) return 0.0;
  long hits = 0;
  for (size_t i = 0; i < transferred.size(); ++i)
    hits += clf.predict(transferred[i]) == targets[i] - 1 ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(transferred.size());
}

// ---------------------------------------------------------------------------
// System evaluation

std::string EvalReport::to_text() const {
  std::string out;
  out += "acc: " + fmt(acc) + "\n";
  if (ref_bleu) out += "ref_bleu: " + fmt(*ref_bleu) + "\n";
  out += "self_bleu: " + fmt(self_bleu) + "\n";
  out += "ppl: " + fmt(ppl) + "\n";
  return out;
}

std::string EvalReport::to_record() const {
  std::string out = "acc=" + fmt(acc);
  if (ref_bleu) out += " ref_bleu=" + fmt(*ref_bleu);
  out += " self_bleu=" + fmt(self_bleu) + " ppl=" + fmt(ppl);
  return out;
}

EvalArtifacts build_eval_artifacts(const std::vector<StyleCorpus>& corpora, int vocab_size) {
  EvalArtifacts art;
  art.lm = NgramLM(5, NgramLM::Smoothing::kKneserNey, 0.75, vocab_size);
  art.classifier = train_classifier(corpora);
  std::vector<Sentence> pooled;
  for (const auto& c : corpora) pooled.insert(pooled.end(), c.train.begin(), c.train.end());
  art.lm.fit(pooled);

  long hits = 0, n = 0;
  for (const auto& c : corpora)
    for (const auto& s : c.dev) {
      hits += art.classifier.predict(s) == c.style - 1 ? 1 : 0;
      ++n;
    }
  art.classifier_dev_acc = n == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / n;
  return art;
}

int eval_thread_count(int requested, size_t work_items) {
  int threads = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  if (const char* env = std::getenv("STFM_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) threads = std::min<long>(threads, cap);
  }
  return static_cast<int>(std::min<size_t>(threads, std::max<size_t>(work_items, 1)));
}

std::vector<TransferCase> collect_transfers(const Generator& gen,
                                            const std::vector<StyleCorpus>& corpora,
                                            const std::string& split,
                                            const std::vector<std::vector<Sentence>>* refs,
                                            int limit_per_style, int threads) {
  std::vector<TransferCase> cases;
  for (size_t ci = 0; ci < corpora.size(); ++ci) {
    const auto& sents = corpora[ci].split(split);
    const size_t n =
        limit_per_style > 0 ? std::min<size_t>(sents.size(), limit_per_style) : sents.size();
    for (size_t i = 0; i < n; ++i)
      for (size_t cj = 0; cj < corpora.size(); ++cj) {
        if (ci == cj) continue;
        TransferCase tc;
        tc.input = sents[i];
        tc.target = corpora[cj].style;
        if (refs && ci < refs->size() && i < (*refs)[ci].size()) tc.reference = (*refs)[ci][i];
        cases.push_back(std::move(tc));
      }
  }

  const int workers = eval_thread_count(threads, cases.size());
  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i)
      cases[i].output = gen.transfer_greedy(cases[i].input, cases[i].target);
  };
  if (workers <= 1) {
    run_range(0, cases.size());
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (cases.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const size_t b = std::min(cases.size(), w * chunk);
      const size_t e = std::min(cases.size(), b + chunk);
      if (b < e) pool.emplace_back(run_range, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return cases;
}

EvalReport evaluate_outputs(const EvalArtifacts& artifacts,
                            const std::vector<TransferCase>& cases) {
  EvalReport rep;
  if (cases.empty()) return rep;
  long hits = 0;
  BleuAccumulator self_acc, ref_acc;
  bool any_ref = false;
  std::vector<Sentence> outputs;
  outputs.reserve(cases.size());
  for (const auto& c : cases) {
    hits += artifacts.classifier.predict(c.output) == c.target - 1 ? 1 : 0;
    self_acc.add(c.output, {c.input});
    if (c.reference) {
      ref_acc.add(c.output, {*c.reference});
      any_ref = true;
    }
    outputs.push_back(c.output);
  }
  rep.acc = 100.0 * static_cast<double>(hits) / static_cast<double>(cases.size());
  rep.self_bleu = self_acc.score();
  if (any_ref) rep.ref_bleu = ref_acc.score();
  rep.ppl = perplexity(artifacts.lm, outputs);
  return rep;
}

EvalReport evaluate_system(const Generator& gen, const std::vector<StyleCorpus>& corpora,
                           const std::string& split, const EvalArtifacts& artifacts,
                           const std::vector<std::vector<Sentence>>* refs, int limit_per_style,
                           int threads) {
  return evaluate_outputs(artifacts,
                          collect_transfers(gen, corpora, split, refs, limit_per_style, threads));
}

}  // namespace stf
