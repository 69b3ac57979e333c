#pragma once

#include <optional>

#include "stf/tensor.hpp"
#include "stf/transformer.hpp"
#include "stf/types.hpp"

namespace stf {

enum class DiscVariant { kConditional, kMulticlass };

const char* to_string(DiscVariant v);
DiscVariant disc_variant_from_string(const std::string& s);

// Transformer-encoder discriminator with a <cls> readout token. The
// conditional variant scores (sentence, proposal style) pairs as real/fake;
// the multi-class variant assigns one of K+1 classes where class 0 means
// "generated". Embedding tables are its own, not shared with the generator.
class Discriminator {
 public:
  Discriminator(const TransformerConfig& cfg, DiscVariant variant, uint64_t init_seed);

  DiscVariant variant() const { return variant_; }
  int num_classes() const { return num_classes_; }
  const TransformerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Class logits [1 x C]. The proposal style is required for the conditional
  // variant and rejected for the multi-class one. Input is a hard sentence
  // or an on-tape [L x V] distribution tensor.
  Tensor class_logits(Tape& tape, const std::vector<TokenId>& ids,
                      std::optional<StyleId> proposal, bool frozen = false) const;
  Tensor class_logits_soft(Tape& tape, Tensor dists, std::optional<StyleId> proposal,
                           bool frozen = false) const;

  // p(class = 1 | sentence, proposal style). Conditional variant only.
  double score_conditional(const Sentence& sent, StyleId proposal) const;
  double score_conditional(const SoftSentence& sent, StyleId proposal) const;

  // Distribution over K+1 classes. Multi-class variant only.
  std::vector<double> score_multiclass(const Sentence& sent) const;
  std::vector<double> score_multiclass(const SoftSentence& sent) const;

 private:
  Tensor run(Tape& tape, Tensor input_rows, bool frozen) const;
  Tensor prefix_rows(Tape& tape, std::optional<StyleId> proposal, bool frozen) const;
  Tensor soft_to_tensor(Tape& tape, const SoftSentence& s) const;

  TransformerConfig cfg_;
  DiscVariant variant_;
  int num_classes_;
  ParamStore params_;
  Rng init_rng_;
  std::vector<EncoderLayer> layers_;
  LayerNormRef final_ln_;
};

}  // namespace stf
