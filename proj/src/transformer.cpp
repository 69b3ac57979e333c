#include "stf/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace stf {

namespace {

constexpr double kMaskNegInf = -1e30;

Tensor pget(Tape& tape, ParamStore& store, const std::string& name, bool frozen) {
  return frozen ? tape.frozen(store.at(name)) : tape.param(store.at(name));
}

}  // namespace

void TransformerConfig::validate() const {
  if (num_layers <= 0 || num_heads <= 0 || model_dim <= 0 || ff_dim <= 0 || max_len <= 0 ||
      vocab_size <= 0 || num_styles <= 0)
    throw std::invalid_argument("transformer config: all extents must be positive");
  if (model_dim % num_heads != 0)
    throw std::invalid_argument("transformer config: model_dim " + std::to_string(model_dim) +
                                " not divisible by num_heads " + std::to_string(num_heads));
}

AttentionMask AttentionMask::full(int query_len, int key_len) {
  AttentionMask m;
  m.query_len = query_len;
  m.key_len = key_len;
  m.visible.assign(static_cast<size_t>(query_len) * key_len, 1);
  return m;
}

AttentionMask AttentionMask::causal(int len) {
  AttentionMask m;
  m.query_len = len;
  m.key_len = len;
  m.visible.assign(static_cast<size_t>(len) * len, 0);
  for (int q = 0; q < len; ++q)
    for (int k = 0; k <= q; ++k) m.visible[static_cast<size_t>(q) * len + k] = 1;
  return m;
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& prefix,
                                       const TransformerConfig& cfg, Rng& rng)
    : prefix_(prefix), num_heads_(cfg.num_heads), model_dim_(cfg.model_dim) {
  const int d = cfg.model_dim;
  store.create(prefix + ".wq", {d, d}, d, rng);
  store.create(prefix + ".wk", {d, d}, d, rng);
  store.create(prefix + ".wv", {d, d}, d, rng);
  store.create(prefix + ".wo", {d, d}, d, rng);
  store.create_const(prefix + ".bq", {d}, 0.0);
  store.create_const(prefix + ".bk", {d}, 0.0);
  store.create_const(prefix + ".bv", {d}, 0.0);
  store.create_const(prefix + ".bo", {d}, 0.0);
}

Tensor MultiHeadAttention::forward(Tape& tape, ParamStore& store, Tensor q, Tensor k, Tensor v,
                                   const std::optional<AttentionMask>& mask, bool frozen) const {
  const int qlen = q.shape()[0];
  const int klen = k.shape()[0];
  if (mask && (mask->query_len != qlen || mask->key_len != klen))
    throw std::invalid_argument("attention: mask " + std::to_string(mask->query_len) + "x" +
                                std::to_string(mask->key_len) + " does not match " +
                                std::to_string(qlen) + "x" + std::to_string(klen));
  Tensor qp = tape.linear(q, pget(tape, store, prefix_ + ".wq", frozen),
                          pget(tape, store, prefix_ + ".bq", frozen));
  Tensor kp = tape.linear(k, pget(tape, store, prefix_ + ".wk", frozen),
                          pget(tape, store, prefix_ + ".bk", frozen));
  Tensor vp = tape.linear(v, pget(tape, store, prefix_ + ".wv", frozen),
                          pget(tape, store, prefix_ + ".bv", frozen));

  Tensor mask_add;
  if (mask) {
    std::vector<double> mv(static_cast<size_t>(qlen) * klen, 0.0);
    for (int i = 0; i < qlen; ++i)
      for (int j = 0; j < klen; ++j)
        if (!mask->at(i, j)) mv[static_cast<size_t>(i) * klen + j] = kMaskNegInf;
    mask_add = tape.constant({qlen, klen}, std::move(mv));
  }

  const int head_dim = model_dim_ / num_heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> contexts;
  contexts.reserve(num_heads_);
  for (int h = 0; h < num_heads_; ++h) {
    Tensor qh = tape.slice_cols(qp, h * head_dim, head_dim);
    Tensor kh = tape.slice_cols(kp, h * head_dim, head_dim);
    Tensor vh = tape.slice_cols(vp, h * head_dim, head_dim);
    Tensor scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = tape.add(scores, mask_add);
    Tensor attn = tape.softmax(scores, 1.0);
    contexts.push_back(tape.matmul(attn, vh));
  }
  Tensor ctx = num_heads_ == 1 ? contexts[0] : tape.concat_cols(contexts);
  return tape.linear(ctx, pget(tape, store, prefix_ + ".wo", frozen),
                     pget(tape, store, prefix_ + ".bo", frozen));
}

// ---------------------------------------------------------------------------
// FeedForward

FeedForward::FeedForward(ParamStore& store, const std::string& prefix,
                         const TransformerConfig& cfg, Rng& rng)
    : prefix_(prefix) {
  store.create(prefix + ".w1", {cfg.model_dim, cfg.ff_dim}, cfg.model_dim, rng);
  store.create_const(prefix + ".b1", {cfg.ff_dim}, 0.0);
  store.create(prefix + ".w2", {cfg.ff_dim, cfg.model_dim}, cfg.ff_dim, rng);
  store.create_const(prefix + ".b2", {cfg.model_dim}, 0.0);
}

Tensor FeedForward::forward(Tape& tape, ParamStore& store, Tensor x, bool frozen) const {
  Tensor h = tape.gelu(tape.linear(x, pget(tape, store, prefix_ + ".w1", frozen),
                                   pget(tape, store, prefix_ + ".b1", frozen)));
  return tape.linear(h, pget(tape, store, prefix_ + ".w2", frozen),
                     pget(tape, store, prefix_ + ".b2", frozen));
}

LayerNormRef::LayerNormRef(ParamStore& store, const std::string& p, int dim) : prefix(p) {
  store.create_const(p + ".gain", {dim}, 1.0);
  store.create_const(p + ".bias", {dim}, 0.0);
}

Tensor LayerNormRef::forward(Tape& tape, ParamStore& store, Tensor x, bool frozen) const {
  return tape.layer_norm(x, pget(tape, store, prefix + ".gain", frozen),
                         pget(tape, store, prefix + ".bias", frozen));
}

// ---------------------------------------------------------------------------
// Layers

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& prefix,
                           const TransformerConfig& cfg, Rng& rng)
    : self_attn_(store, prefix + ".attn", cfg, rng),
      ff_(store, prefix + ".ff", cfg, rng),
      ln1_(store, prefix + ".ln1", cfg.model_dim),
      ln2_(store, prefix + ".ln2", cfg.model_dim) {}

Tensor EncoderLayer::forward(Tape& tape, ParamStore& store, Tensor x,
                             const std::optional<AttentionMask>& mask, bool frozen) const {
  Tensor h = ln1_.forward(tape, store, x, frozen);
  x = tape.add(x, self_attn_.forward(tape, store, h, h, h, mask, frozen));
  x = tape.add(x, ff_.forward(tape, store, ln2_.forward(tape, store, x, frozen), frozen));
  return x;
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& prefix,
                           const TransformerConfig& cfg, Rng& rng)
    : self_attn_(store, prefix + ".attn", cfg, rng),
      cross_attn_(store, prefix + ".xattn", cfg, rng),
      ff_(store, prefix + ".ff", cfg, rng),
      ln1_(store, prefix + ".ln1", cfg.model_dim),
      ln2_(store, prefix + ".ln2", cfg.model_dim),
      ln3_(store, prefix + ".ln3", cfg.model_dim) {}

Tensor DecoderLayer::forward(Tape& tape, ParamStore& store, Tensor x, Tensor memory,
                             bool frozen) const {
  const int len = x.shape()[0];
  Tensor h = ln1_.forward(tape, store, x, frozen);
  x = tape.add(x, self_attn_.forward(tape, store, h, h, h, AttentionMask::causal(len), frozen));
  h = ln2_.forward(tape, store, x, frozen);
  x = tape.add(x, cross_attn_.forward(tape, store, h, memory, memory, std::nullopt, frozen));
  x = tape.add(x, ff_.forward(tape, store, ln3_.forward(tape, store, x, frozen), frozen));
  return x;
}

// ---------------------------------------------------------------------------
// EmbeddingSet

EmbeddingSet::EmbeddingSet(ParamStore& store, const std::string& prefix,
                           const TransformerConfig& cfg, Rng& rng)
    : token_name_(prefix + ".tok"),
      pos_name_(prefix + ".pos"),
      style_name_(prefix + ".style"),
      num_styles_(cfg.num_styles),
      max_len_(cfg.max_len) {
  store.create(token_name_, {cfg.vocab_size, cfg.model_dim}, cfg.model_dim, rng);
  store.create(pos_name_, {cfg.max_len, cfg.model_dim}, cfg.model_dim, rng);
  store.create(style_name_, {cfg.num_styles, cfg.model_dim}, cfg.model_dim, rng);
}

Tensor EmbeddingSet::add_positions(Tape& tape, ParamStore& store, Tensor tok, bool frozen) const {
  const int len = tok.shape()[0];
  if (len > max_len_)
    throw std::invalid_argument("embedding: sequence length " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(max_len_));
  Tensor pos = tape.slice_rows(pget(tape, store, pos_name_, frozen), 0, len);
  return tape.add(tok, pos);
}

Tensor EmbeddingSet::embed_hard(Tape& tape, ParamStore& store, const std::vector<TokenId>& ids,
                                bool frozen) const {
  Tensor tok = tape.embedding_lookup(ids, pget(tape, store, token_name_, frozen));
  return add_positions(tape, store, tok, frozen);
}

Tensor EmbeddingSet::embed_soft(Tape& tape, ParamStore& store, Tensor dists, bool frozen) const {
  Tensor tok = tape.embedding_mix(dists, pget(tape, store, token_name_, frozen));
  return add_positions(tape, store, tok, frozen);
}

Tensor EmbeddingSet::style_row(Tape& tape, ParamStore& store, StyleId style, bool frozen) const {
  if (style < 1 || style > num_styles_)
    throw std::invalid_argument("style id " + std::to_string(style) + " outside 1.." +
                                std::to_string(num_styles_));
  return tape.embedding_lookup({style - 1}, pget(tape, store, style_name_, frozen));
}

// ---------------------------------------------------------------------------
// Encoder / Decoder stacks

TransformerEncoder::TransformerEncoder(ParamStore& store, const std::string& prefix,
                                       const TransformerConfig& cfg, Rng& rng)
    : cfg_(cfg), embed_(store, prefix + ".emb", cfg, rng), final_ln_(store, prefix + ".ln", cfg.model_dim) {
  for (int i = 0; i < cfg.num_layers; ++i)
    layers_.emplace_back(store, prefix + ".layer" + std::to_string(i), cfg, rng);
}

Tensor TransformerEncoder::run(Tape& tape, ParamStore& store, Tensor x, bool frozen) const {
  for (const auto& layer : layers_) x = layer.forward(tape, store, x, std::nullopt, frozen);
  return final_ln_.forward(tape, store, x, frozen);
}

Tensor TransformerEncoder::forward_hard(Tape& tape, ParamStore& store,
                                        const std::vector<TokenId>& ids, StyleId style,
                                        bool frozen) const {
  if (static_cast<int>(ids.size()) > cfg_.max_len - 1)
    throw std::invalid_argument("encoder: input length " + std::to_string(ids.size()) +
                                " exceeds max_len - 1 = " + std::to_string(cfg_.max_len - 1));
  Tensor x = tape.concat_rows(
      {embed_.style_row(tape, store, style, frozen), embed_.embed_hard(tape, store, ids, frozen)});
  return run(tape, store, x, frozen);
}

Tensor TransformerEncoder::forward_soft(Tape& tape, ParamStore& store, Tensor dists, StyleId style,
                                        bool frozen) const {
  if (dists.shape()[0] > cfg_.max_len - 1)
    throw std::invalid_argument("encoder: input length " + std::to_string(dists.shape()[0]) +
                                " exceeds max_len - 1 = " + std::to_string(cfg_.max_len - 1));
  Tensor x = tape.concat_rows({embed_.style_row(tape, store, style, frozen),
                               embed_.embed_soft(tape, store, dists, frozen)});
  return run(tape, store, x, frozen);
}

TransformerDecoder::TransformerDecoder(ParamStore& store, const std::string& prefix,
                                       const TransformerConfig& cfg,
                                       const EmbeddingSet& shared_embed, Rng& rng)
    : cfg_(cfg), embed_(&shared_embed), final_ln_(store, prefix + ".ln", cfg.model_dim) {
  for (int i = 0; i < cfg.num_layers; ++i)
    layers_.emplace_back(store, prefix + ".layer" + std::to_string(i), cfg, rng);
  out_w_ = prefix + ".out_w";
  out_b_ = prefix + ".out_b";
  store.create(out_w_, {cfg.model_dim, cfg.vocab_size}, cfg.model_dim, rng);
  store.create_const(out_b_, {cfg.vocab_size}, 0.0);
}

Tensor TransformerDecoder::run(Tape& tape, ParamStore& store, Tensor memory, Tensor x,
                               bool frozen) const {
  for (const auto& layer : layers_) x = layer.forward(tape, store, x, memory, frozen);
  x = final_ln_.forward(tape, store, x, frozen);
  return tape.linear(x, pget(tape, store, out_w_, frozen), pget(tape, store, out_b_, frozen));
}

Tensor TransformerDecoder::forward_hard(Tape& tape, ParamStore& store, Tensor memory,
                                        const std::vector<TokenId>& prefix, bool frozen) const {
  if (prefix.empty() || prefix.front() != kBosId)
    throw std::invalid_argument("decoder: prefix must begin with the begin-of-sentence marker");
  return run(tape, store, memory, embed_->embed_hard(tape, store, prefix, frozen), frozen);
}

Tensor TransformerDecoder::forward_soft(Tape& tape, ParamStore& store, Tensor memory,
                                        Tensor prefix_dists, bool frozen) const {
  const double* row0 = prefix_dists.data();
  const int v = prefix_dists.shape()[1];
  int best = 0;
  for (int j = 1; j < v; ++j)
    if (row0[j] > row0[best]) best = j;
  if (best != kBosId)
    throw std::invalid_argument("decoder: soft prefix must begin with the begin-of-sentence marker");
  return run(tape, store, memory, embed_->embed_soft(tape, store, prefix_dists, frozen), frozen);
}

}  // namespace stf
