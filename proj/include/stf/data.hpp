#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "stf/rng.hpp"
#include "stf/types.hpp"

namespace stf {

// Token <-> id bijection with reserved slots 0..3 (PAD, BOS, EOS, UNK).
// Non-reserved ids are assigned by (frequency desc, lexicographic asc), so a
// vocabulary is a pure function of its corpora.
class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId token_id(const std::string& token) const;  // UNK for unknown tokens
  const std::string& token(TokenId id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  Sentence encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const Sentence& s) const;  // markers stripped

  void add(const std::string& token);  // appends with the next id

  // One non-reserved token per line; line number = id - 4.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, TokenId> token_to_id_;
};

std::vector<std::string> split_words(const std::string& line);
std::string join_words(const std::vector<std::string>& words);

// One style's data: train/dev/test splits under a shared vocabulary.
struct StyleCorpus {
  StyleId style = 0;
  std::string name;
  std::vector<Sentence> train, dev, test;

  const std::vector<Sentence>& split(const std::string& which) const;
};

// Tokens with frequency >= min_freq get ids; everything else maps to UNK.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpora_lines, int min_freq);

// Reads one sentence per line, whitespace tokenized, BOS/EOS wrapped.
// Overlength lines are truncated to max_tokens words; empty lines skipped.
std::vector<Sentence> load_lines(const std::string& path, const Vocabulary& vocab,
                                 int max_tokens);
StyleCorpus load_corpus(const std::string& dir, const std::string& style_name, StyleId style,
                        const Vocabulary& vocab, int max_tokens);

void save_lines(const std::string& path, const std::vector<std::string>& lines);

// ---------------------------------------------------------------------------
// Synthetic two-style task.
//
// Sentences are built from subject/verb/object templates over a shared
// content lexicon plus one or two style-marked words. The style lexicons are
// disjoint and pairwise aligned, so the exact transfer is known: swap each
// style-marked word for its partner and leave everything else alone.

struct SyntheticTaskSpec {
  uint64_t seed = 1;
  int train_size = 2000;
  int dev_size = 200;
  int test_size = 200;
  int min_words = 5;
  int max_words = 12;
  std::vector<std::string> style_names = {"pos", "neg"};
  // Aligned pairs: pairs[i][0] belongs to style 1, pairs[i][1] to style 2.
  std::vector<std::array<std::string, 2>> style_pairs;  // empty -> default set

  void validate() const;
};

struct SyntheticTask {
  SyntheticTaskSpec spec;
  std::vector<StyleCorpus> corpora;  // size 2, encoded under `vocab`
  Vocabulary vocab;                  // built from the train splits
  std::map<std::string, std::string> swap;        // style word -> partner
  std::map<std::string, StyleId> style_of_word;   // style word -> owning style
  std::vector<std::array<std::vector<std::string>, 3>> raw;  // [style][train,dev,test] lines

  // Lexicon-membership oracle: swaps style-marked words, involution.
  std::vector<std::string> oracle_transfer(const std::vector<std::string>& words) const;
  Sentence oracle_transfer(const Sentence& s) const;

  // Majority vote over style-marked words; 0 when no marker or tied.
  StyleId oracle_style(const std::vector<std::string>& words) const;
  StyleId oracle_style(const Sentence& s) const;

  // Raw text lines per (style index 0/1, split).
  std::vector<std::string> lines(int style_index, const std::string& split) const;
};

SyntheticTask generate_synthetic(const SyntheticTaskSpec& spec);

// Writes <style>.<split>.txt files plus oracle references
// <style>.test.ref.txt into dir.
void write_synthetic(const SyntheticTask& task, const std::string& dir);

}  // namespace stf
