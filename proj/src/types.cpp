#include "stf/types.hpp"

#include <stdexcept>

namespace stf {

void validate_sentence(const Sentence& s, int vocab_size) {
  if (s.ids.size() < 2) throw std::invalid_argument("sentence: fewer than 2 tokens");
  if (s.ids.front() != kBosId) throw std::invalid_argument("sentence: missing begin marker");
  if (s.ids.back() != kEosId) throw std::invalid_argument("sentence: missing end marker");
  for (size_t i = 0; i + 1 < s.ids.size(); ++i) {
    const TokenId t = s.ids[i];
    if (i > 0 && t == kEosId) throw std::invalid_argument("sentence: interior end marker");
    if (t < 0 || t >= vocab_size)
      throw std::invalid_argument("sentence: id " + std::to_string(t) + " out of range [0, " +
                                  std::to_string(vocab_size) + ")");
  }
}

SoftSentence to_soft(const Sentence& s, int vocab_size) {
  SoftSentence out;
  out.vocab_size = vocab_size;
  out.dists.reserve(s.ids.size());
  for (TokenId t : s.ids) {
    std::vector<double> row(vocab_size, 0.0);
    row.at(t) = 1.0;
    out.dists.push_back(std::move(row));
  }
  return out;
}

Sentence to_hard(const SoftSentence& s) {
  Sentence out;
  out.ids.reserve(s.dists.size());
  for (const auto& row : s.dists) {
    int best = 0;
    for (size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out.ids.push_back(best);
  }
  return out;
}

}  // namespace stf
