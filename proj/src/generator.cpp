#include "stf/generator.hpp"

#include <algorithm>
#include <stdexcept>

namespace stf {

namespace {

TransformerConfig validated(TransformerConfig cfg) {
  cfg.validate();
  return cfg;
}

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

Generator::Generator(const TransformerConfig& cfg, uint64_t init_seed)
    : cfg_(validated(cfg)),
      params_(),
      init_rng_(init_seed, /*stream=*/0x67656e),
      encoder_(params_, "enc", cfg_, init_rng_),
      decoder_(params_, "dec", cfg_, encoder_.embeddings(), init_rng_) {}

Tensor Generator::encode(Tape& tape, const std::vector<TokenId>& ids, StyleId style,
                         bool frozen) const {
  return encoder_.forward_hard(tape, const_cast<ParamStore&>(params_), ids, style, frozen);
}

Tensor Generator::encode_soft(Tape& tape, Tensor dists, StyleId style, bool frozen) const {
  return encoder_.forward_soft(tape, const_cast<ParamStore&>(params_), dists, style, frozen);
}

Tensor Generator::decode(Tape& tape, Tensor z, const std::vector<TokenId>& prefix,
                         bool frozen) const {
  return decoder_.forward_hard(tape, const_cast<ParamStore&>(params_), z, prefix, frozen);
}

Tensor Generator::decode_soft(Tape& tape, Tensor z, Tensor prefix_dists, bool frozen) const {
  return decoder_.forward_soft(tape, const_cast<ParamStore&>(params_), z, prefix_dists, frozen);
}

double Generator::log_prob(const Sentence& y, const Sentence& x, StyleId style) const {
  validate_sentence(x, cfg_.vocab_size);
  validate_sentence(y, cfg_.vocab_size);
  Tape tape(/*record=*/false);
  Tensor z = encode(tape, x.ids, style, /*frozen=*/true);
  std::vector<TokenId> prefix(y.ids.begin(), y.ids.end() - 1);
  std::vector<TokenId> targets(y.ids.begin() + 1, y.ids.end());
  Tensor ce = tape.cross_entropy(decode(tape, z, prefix, /*frozen=*/true), targets);
  return -ce.scalar() * static_cast<double>(targets.size());
}

int Generator::decode_cap(int input_len) const {
  return std::min(input_len + 4, cfg_.max_len - 1);
}

Sentence Generator::transfer_greedy(const Sentence& x, StyleId target, int max_len) const {
  if (max_len < 2) throw std::invalid_argument("transfer: max_len must be >= 2");
  validate_sentence(x, cfg_.vocab_size);
  Tape tape(/*record=*/false);
  Tensor z = encode(tape, x.ids, target, /*frozen=*/true);
  Sentence out;
  out.ids = {kBosId};
  while (true) {
    if (out.length() == max_len - 1) {
      out.ids.push_back(kEosId);
      break;
    }
    Tensor logits = decode(tape, z, out.ids, /*frozen=*/true);
    const int last = logits.shape()[0] - 1;
    const TokenId next = argmax_row(logits.data() + static_cast<size_t>(last) * cfg_.vocab_size,
                                    cfg_.vocab_size);
    out.ids.push_back(next);
    if (next == kEosId) break;
  }
  return out;
}

Sentence Generator::transfer_greedy(const Sentence& x, StyleId target) const {
  return transfer_greedy(x, target, decode_cap(x.length()));
}

Tensor Generator::transfer_soft(Tape& tape, const Sentence& x, StyleId target, int max_len,
                                double temperature, bool frozen) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("transfer: temperature must be > 0");
  if (max_len < 2) throw std::invalid_argument("transfer: max_len must be >= 2");
  validate_sentence(x, cfg_.vocab_size);
  const int v = cfg_.vocab_size;
  Tensor z = encode(tape, x.ids, target, frozen);

  auto one_hot = [&](TokenId t) {
    std::vector<double> row(v, 0.0);
    row[t] = 1.0;
    return tape.constant({1, v}, std::move(row));
  };

  std::vector<Tensor> rows;
  rows.push_back(one_hot(kBosId));
  while (true) {
    if (static_cast<int>(rows.size()) == max_len - 1) {
      rows.push_back(one_hot(kEosId));
      break;
    }
    Tensor prefix = rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
    Tensor logits = decode_soft(tape, z, prefix, frozen);
    Tensor last = tape.slice_rows(logits, logits.shape()[0] - 1, 1);
    Tensor dist = tape.softmax(last, temperature);
    rows.push_back(dist);
    if (argmax_row(dist.data(), v) == kEosId) break;
  }
  return tape.concat_rows(rows);
}

Tensor Generator::transfer_soft(Tape& tape, const Sentence& x, StyleId target, double temperature,
                                bool frozen) const {
  return transfer_soft(tape, x, target, decode_cap(x.length()), temperature, frozen);
}

}  // namespace stf
