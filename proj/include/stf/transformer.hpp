#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stf/tensor.hpp"
#include "stf/types.hpp"

namespace stf {

struct TransformerConfig {
  int num_layers = 2;
  int num_heads = 2;
  int model_dim = 64;
  int ff_dim = 128;
  int max_len = 32;
  int vocab_size = 0;  // set from the vocabulary
  int num_styles = 2;

  void validate() const;
};

// Boolean visibility mask for attention: entry (q, k) true means query q may
// attend to key k. Row-major [query_len x key_len].
struct AttentionMask {
  int query_len = 0;
  int key_len = 0;
  std::vector<char> visible;

  static AttentionMask full(int query_len, int key_len);
  static AttentionMask causal(int len);
  bool at(int q, int k) const { return visible[static_cast<size_t>(q) * key_len + k] != 0; }
};

// Multi-head scaled dot-product attention. Owns its projection parameters.
class MultiHeadAttention {
 public:
  MultiHeadAttention(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
                     Rng& rng);

  // q/k/v are [len x model_dim]; mask must be (q rows) x (k rows).
  Tensor forward(Tape& tape, ParamStore& store, Tensor q, Tensor k, Tensor v,
                 const std::optional<AttentionMask>& mask, bool frozen) const;

 private:
  std::string prefix_;
  int num_heads_;
  int model_dim_;
};

class FeedForward {
 public:
  FeedForward(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
              Rng& rng);
  Tensor forward(Tape& tape, ParamStore& store, Tensor x, bool frozen) const;

 private:
  std::string prefix_;
};

struct LayerNormRef {
  LayerNormRef(ParamStore& store, const std::string& prefix, int dim);
  Tensor forward(Tape& tape, ParamStore& store, Tensor x, bool frozen) const;
  std::string prefix;
};

// Pre-norm encoder layer: x += MHA(LN(x)); x += FF(LN(x)).
class EncoderLayer {
 public:
  EncoderLayer(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
               Rng& rng);
  Tensor forward(Tape& tape, ParamStore& store, Tensor x, const std::optional<AttentionMask>& mask,
                 bool frozen) const;

 private:
  MultiHeadAttention self_attn_;
  FeedForward ff_;
  LayerNormRef ln1_, ln2_;
};

// Pre-norm decoder layer with causal self-attention and encoder-decoder
// attention over the full memory.
class DecoderLayer {
 public:
  DecoderLayer(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
               Rng& rng);
  Tensor forward(Tape& tape, ParamStore& store, Tensor x, Tensor memory, bool frozen) const;

 private:
  MultiHeadAttention self_attn_;
  MultiHeadAttention cross_attn_;
  FeedForward ff_;
  LayerNormRef ln1_, ln2_, ln3_;
};

// Token/positional/style embedding tables. Style rows are indexed by
// StyleId - 1; the style token never receives positional encoding.
class EmbeddingSet {
 public:
  EmbeddingSet(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
               Rng& rng);

  // Token embeddings plus positional encoding for positions [0, len).
  // `tokens` is either hard ids or an on-tape [len x V] distribution tensor.
  Tensor embed_hard(Tape& tape, ParamStore& store, const std::vector<TokenId>& ids,
                    bool frozen) const;
  Tensor embed_soft(Tape& tape, ParamStore& store, Tensor dists, bool frozen) const;
  // Single style row [1 x d], no positional encoding.
  Tensor style_row(Tape& tape, ParamStore& store, StyleId style, bool frozen) const;

  const std::string& token_table() const { return token_name_; }

 private:
  Tensor add_positions(Tape& tape, ParamStore& store, Tensor tok, bool frozen) const;
  std::string token_name_, pos_name_, style_name_;
  int num_styles_;
  int max_len_;
};

// Encoder stack: embeds [style] ++ tokens and runs the layers plus a final
// norm. Output has one extra leading position holding the style slot.
class TransformerEncoder {
 public:
  TransformerEncoder(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
                     Rng& rng);

  Tensor forward_hard(Tape& tape, ParamStore& store, const std::vector<TokenId>& ids,
                      StyleId style, bool frozen) const;
  Tensor forward_soft(Tape& tape, ParamStore& store, Tensor dists, StyleId style,
                      bool frozen) const;

  const EmbeddingSet& embeddings() const { return embed_; }

 private:
  Tensor run(Tape& tape, ParamStore& store, Tensor x, bool frozen) const;
  TransformerConfig cfg_;
  EmbeddingSet embed_;
  std::vector<EncoderLayer> layers_;
  LayerNormRef final_ln_;
};

// Decoder stack with an output projection to vocabulary logits.
class TransformerDecoder {
 public:
  TransformerDecoder(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
                     const EmbeddingSet& shared_embed, Rng& rng);

  // prefix must start with BOS; returns next-token logits [len x V].
  Tensor forward_hard(Tape& tape, ParamStore& store, Tensor memory,
                      const std::vector<TokenId>& prefix, bool frozen) const;
  Tensor forward_soft(Tape& tape, ParamStore& store, Tensor memory, Tensor prefix_dists,
                      bool frozen) const;

 private:
  Tensor run(Tape& tape, ParamStore& store, Tensor memory, Tensor x, bool frozen) const;
  TransformerConfig cfg_;
  const EmbeddingSet* embed_;
  std::vector<DecoderLayer> layers_;
  LayerNormRef final_ln_;
  std::string out_w_, out_b_;
};

}  // namespace stf
