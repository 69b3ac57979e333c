#include "stf/discriminator.hpp"

#include <stdexcept>

namespace stf {

namespace {

Tensor pget(Tape& tape, ParamStore& store, const std::string& name, bool frozen) {
  return frozen ? tape.frozen(store.at(name)) : tape.param(store.at(name));
}

TransformerConfig validated(TransformerConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

const char* to_string(DiscVariant v) {
  return v == DiscVariant::kConditional ? "conditional" : "multiclass";
}

DiscVariant disc_variant_from_string(const std::string& s) {
  if (s == "conditional") return DiscVariant::kConditional;
  if (s == "multiclass") return DiscVariant::kMulticlass;
  throw std::invalid_argument("unknown discriminator variant '" + s + "'");
}

Discriminator::Discriminator(const TransformerConfig& cfg, DiscVariant variant,
                             uint64_t init_seed)
    : cfg_(validated(cfg)),
      variant_(variant),
      num_classes_(variant == DiscVariant::kConditional ? 2 : cfg.num_styles + 1),
      params_(),
      init_rng_(init_seed, /*stream=*/0x64697363),
      final_ln_(params_, "d.ln", cfg_.model_dim) {
  const int d = cfg_.model_dim;
  params_.create("d.tok", {cfg_.vocab_size, d}, d, init_rng_);
  params_.create("d.pos", {cfg_.max_len, d}, d, init_rng_);
  params_.create("d.cls", {1, d}, d, init_rng_);
  if (variant_ == DiscVariant::kConditional)
    params_.create("d.style", {cfg_.num_styles, d}, d, init_rng_);
  for (int i = 0; i < cfg_.num_layers; ++i)
    layers_.emplace_back(params_, "d.layer" + std::to_string(i), cfg_, init_rng_);
  params_.create("d.head_w", {d, num_classes_}, d, init_rng_);
  params_.create_const("d.head_b", {num_classes_}, 0.0);
}

Tensor Discriminator::prefix_rows(Tape& tape, std::optional<StyleId> proposal,
                                  bool frozen) const {
  auto& store = const_cast<ParamStore&>(params_);
  Tensor cls = pget(tape, store, "d.cls", frozen);
  if (variant_ == DiscVariant::kConditional) {
    if (!proposal)
      throw std::invalid_argument("discriminator: conditional variant needs a proposal style");
    if (*proposal < 1 || *proposal > cfg_.num_styles)
      throw std::invalid_argument("discriminator: style id " + std::to_string(*proposal) +
                                  " outside 1.." + std::to_string(cfg_.num_styles));
    Tensor style =
        tape.embedding_lookup({*proposal - 1}, pget(tape, store, "d.style", frozen));
    return tape.concat_rows({cls, style});
  }
  if (proposal)
    throw std::invalid_argument("discriminator: multi-class variant takes no proposal style");
  return cls;
}

Tensor Discriminator::run(Tape& tape, Tensor input_rows, bool frozen) const {
  auto& store = const_cast<ParamStore&>(params_);
  Tensor x = input_rows;
  for (const auto& layer : layers_) x = layer.forward(tape, store, x, std::nullopt, frozen);
  x = final_ln_.forward(tape, store, x, frozen);
  Tensor readout = tape.slice_rows(x, 0, 1);
  return tape.linear(readout, pget(tape, store, "d.head_w", frozen),
                     pget(tape, store, "d.head_b", frozen));
}

Tensor Discriminator::class_logits(Tape& tape, const std::vector<TokenId>& ids,
                                   std::optional<StyleId> proposal, bool frozen) const {
  auto& store = const_cast<ParamStore&>(params_);
  Tensor prefix = prefix_rows(tape, proposal, frozen);
  const int extra = prefix.shape()[0];
  if (static_cast<int>(ids.size()) + extra > cfg_.max_len)
    throw std::invalid_argument("discriminator: input length " + std::to_string(ids.size()) +
                                " exceeds max_len - " + std::to_string(extra));
  // The <cls> and style rows carry no positional encoding; token positions
  // start at 0.
  Tensor tok = tape.embedding_lookup(ids, pget(tape, store, "d.tok", frozen));
  Tensor pos = tape.slice_rows(pget(tape, store, "d.pos", frozen), 0, static_cast<int>(ids.size()));
  Tensor x = tape.concat_rows({prefix, tape.add(tok, pos)});
  return run(tape, x, frozen);
}

Tensor Discriminator::class_logits_soft(Tape& tape, Tensor dists, std::optional<StyleId> proposal,
                                        bool frozen) const {
  auto& store = const_cast<ParamStore&>(params_);
  Tensor prefix = prefix_rows(tape, proposal, frozen);
  const int extra = prefix.shape()[0];
  const int len = dists.shape()[0];
  if (len + extra > cfg_.max_len)
    throw std::invalid_argument("discriminator: input length " + std::to_string(len) +
                                " exceeds max_len - " + std::to_string(extra));
  Tensor tok = tape.embedding_mix(dists, pget(tape, store, "d.tok", frozen));
  Tensor pos = tape.slice_rows(pget(tape, store, "d.pos", frozen), 0, len);
  Tensor x = tape.concat_rows({prefix, tape.add(tok, pos)});
  return run(tape, x, frozen);
}

Tensor Discriminator::soft_to_tensor(Tape& tape, const SoftSentence& s) const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(s.length()) * cfg_.vocab_size);
  for (const auto& row : s.dists) {
    if (static_cast<int>(row.size()) != cfg_.vocab_size)
      throw std::invalid_argument("discriminator: soft sentence vocab mismatch");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return tape.constant({s.length(), cfg_.vocab_size}, std::move(flat));
}

double Discriminator::score_conditional(const Sentence& sent, StyleId proposal) const {
  if (variant_ != DiscVariant::kConditional)
    throw std::invalid_argument("discriminator: score_conditional on multi-class variant");
  validate_sentence(sent, cfg_.vocab_size);
  Tape tape(/*record=*/false);
  Tensor probs = tape.softmax(class_logits(tape, sent.ids, proposal, /*frozen=*/true), 1.0);
  return probs.data()[1];
}

double Discriminator::score_conditional(const SoftSentence& sent, StyleId proposal) const {
  if (variant_ != DiscVariant::kConditional)
    throw std::invalid_argument("discriminator: score_conditional on multi-class variant");
  Tape tape(/*record=*/false);
  Tensor probs = tape.softmax(
      class_logits_soft(tape, soft_to_tensor(tape, sent), proposal, /*frozen=*/true), 1.0);
  return probs.data()[1];
}

std::vector<double> Discriminator::score_multiclass(const Sentence& sent) const {
  if (variant_ != DiscVariant::kMulticlass)
    throw std::invalid_argument("discriminator: score_multiclass on conditional variant");
  validate_sentence(sent, cfg_.vocab_size);
  Tape tape(/*record=*/false);
  Tensor probs = tape.softmax(class_logits(tape, sent.ids, std::nullopt, /*frozen=*/true), 1.0);
  return probs.values();
}

std::vector<double> Discriminator::score_multiclass(const SoftSentence& sent) const {
  if (variant_ != DiscVariant::kMulticlass)
    throw std::invalid_argument("discriminator: score_multiclass on conditional variant");
  Tape tape(/*record=*/false);
  Tensor probs = tape.softmax(
      class_logits_soft(tape, soft_to_tensor(tape, sent), std::nullopt, /*frozen=*/true), 1.0);
  return probs.values();
}

}  // namespace stf
