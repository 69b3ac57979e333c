#pragma once

#include "stf/tensor.hpp"
#include "stf/transformer.hpp"
#include "stf/types.hpp"

namespace stf {

// The style transfer network f(x, s): a style-conditioned transformer
// encoder-decoder over a shared vocabulary.
class Generator {
 public:
  Generator(const TransformerConfig& cfg, uint64_t init_seed);

  const TransformerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Encoder output z for a hard sentence (all ids, BOS/EOS included) or a
  // soft one ([L x V] rows on the tape). z has length + 1 rows: the style
  // slot is prepended.
  Tensor encode(Tape& tape, const std::vector<TokenId>& ids, StyleId style,
                bool frozen = false) const;
  Tensor encode_soft(Tape& tape, Tensor dists, StyleId style, bool frozen = false) const;

  // Teacher-forced next-token logits [len(prefix) x V].
  Tensor decode(Tape& tape, Tensor z, const std::vector<TokenId>& prefix,
                bool frozen = false) const;
  Tensor decode_soft(Tape& tape, Tensor z, Tensor prefix_dists, bool frozen = false) const;

  // Sum over positions of log p(y_t | z(x, s), y_<t). Always <= 0.
  double log_prob(const Sentence& y, const Sentence& x, StyleId style) const;

  // Deterministic argmax decoding; ties break toward the lower token id.
  // The result is a well-formed sentence of at most max_len ids.
  Sentence transfer_greedy(const Sentence& x, StyleId target, int max_len) const;
  Sentence transfer_greedy(const Sentence& x, StyleId target) const;

  // Continuous decoding: each step feeds back the full softmax distribution
  // (with the given temperature) as a weighted-average embedding. The
  // returned [T x V] tensor starts with a one-hot BOS row and ends with the
  // step whose argmax is EOS; it is differentiable w.r.t. the parameters.
  Tensor transfer_soft(Tape& tape, const Sentence& x, StyleId target, int max_len,
                       double temperature, bool frozen = false) const;
  Tensor transfer_soft(Tape& tape, const Sentence& x, StyleId target, double temperature,
                       bool frozen = false) const;

  // Default decode cap for an input of `input_len` ids: input_len + 4,
  // clamped so the result still fits the encoder on a cycle pass.
  int decode_cap(int input_len) const;

 private:
  TransformerConfig cfg_;
  ParamStore params_;
  Rng init_rng_;  // consumed during construction only
  TransformerEncoder encoder_;
  TransformerDecoder decoder_;
};

}  // namespace stf
