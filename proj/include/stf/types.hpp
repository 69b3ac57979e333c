#pragma once

#include <string>
#include <vector>

namespace stf {

using TokenId = int;

// Reserved vocabulary slots. Every corpus shares these.
constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 1;
constexpr TokenId kEosId = 2;
constexpr TokenId kUnkId = 3;
constexpr int kNumReserved = 4;

// A token sequence bounded by begin/end markers: ids.front() == BOS,
// ids.back() == EOS, no interior EOS.
struct Sentence {
  std::vector<TokenId> ids;

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const Sentence& o) const { return ids == o.ids; }
};

// A sequence of probability distributions over the vocabulary, used when a
// generated sentence must stay differentiable. Each row sums to 1.
struct SoftSentence {
  int vocab_size = 0;
  std::vector<std::vector<double>> dists;

  int length() const { return static_cast<int>(dists.size()); }
};

// Styles are 1-based; 0 is reserved for the "fake" class of the multi-class
// discriminator.
using StyleId = int;

// Throws std::invalid_argument when the sentence violates its invariants.
void validate_sentence(const Sentence& s, int vocab_size);

// One-hot encodes a sentence. Exact: each row is 0 everywhere except a 1.
SoftSentence to_soft(const Sentence& s, int vocab_size);

// Argmax-discretizes a soft sentence; ties break toward the lower id.
Sentence to_hard(const SoftSentence& s);

}  // namespace stf
