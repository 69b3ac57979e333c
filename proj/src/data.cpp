#include "stf/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stf {

namespace {

const char* kReservedTokens[kNumReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumReserved; ++i) {
    id_to_token_.emplace_back(kReservedTokens[i]);
    token_to_id_[kReservedTokens[i]] = i;
  }
}

TokenId Vocabulary::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) fail("vocab: id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

void Vocabulary::add(const std::string& token) {
  if (token_to_id_.count(token)) fail("vocab: duplicate token '" + token + "'");
  token_to_id_[token] = size();
  id_to_token_.push_back(token);
}

Sentence Vocabulary::encode(const std::vector<std::string>& words) const {
  Sentence s;
  s.ids.reserve(words.size() + 2);
  s.ids.push_back(kBosId);
  for (const auto& w : words) s.ids.push_back(token_id(w));
  s.ids.push_back(kEosId);
  return s;
}

std::vector<std::string> Vocabulary::decode(const Sentence& s) const {
  std::vector<std::string> words;
  for (TokenId id : s.ids) {
    if (id == kBosId || id == kEosId || id == kPadId) continue;
    words.push_back(token(id));
  }
  return words;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("vocab: cannot write '" + path + "'");
  for (int i = kNumReserved; i < size(); ++i) out << id_to_token_[i] << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("vocab: cannot read '" + path + "'");
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream is(line);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

const std::vector<Sentence>& StyleCorpus::split(const std::string& which) const {
  if (which == "train") return train;
  if (which == "dev") return dev;
  if (which == "test") return test;
  fail("corpus: unknown split '" + which + "'");
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpora_lines, int min_freq) {
  if (corpora_lines.empty()) fail("build_vocab: no corpora given");
  size_t total_lines = 0;
  std::map<std::string, long> freq;
  for (const auto& lines : corpora_lines) {
    total_lines += lines.size();
    for (const auto& line : lines)
      for (const auto& w : split_words(line)) ++freq[w];
  }
  if (total_lines == 0) fail("build_vocab: corpora are empty");
  // (frequency desc, token asc); reserved names can never be re-added.
  std::vector<std::pair<long, std::string>> order;
  order.reserve(freq.size());
  for (auto& [tok, f] : freq) {
    if (f < min_freq) continue;
    bool reserved = false;
    for (const char* r : kReservedTokens) reserved |= tok == r;
    if (!reserved) order.emplace_back(-f, tok);
  }
  std::sort(order.begin(), order.end());
  Vocabulary v;
  for (auto& [negf, tok] : order) v.add(tok);
  return v;
}

std::vector<Sentence> load_lines(const std::string& path, const Vocabulary& vocab,
                                 int max_tokens) {
  std::ifstream in(path);
  if (!in) fail("corpus: cannot read '" + path + "'");
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto words = split_words(line);
    if (words.empty()) continue;
    if (static_cast<int>(words.size()) > max_tokens) words.resize(max_tokens);
    out.push_back(vocab.encode(words));
  }
  return out;
}

StyleCorpus load_corpus(const std::string& dir, const std::string& style_name, StyleId style,
                        const Vocabulary& vocab, int max_tokens) {
  StyleCorpus c;
  c.style = style;
  c.name = style_name;
  c.train = load_lines(dir + "/" + style_name + ".train.txt", vocab, max_tokens);
  c.dev = load_lines(dir + "/" + style_name + ".dev.txt", vocab, max_tokens);
  c.test = load_lines(dir + "/" + style_name + ".test.txt", vocab, max_tokens);
  return c;
}

void save_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) fail("corpus: cannot write '" + path + "'");
  for (const auto& line : lines) out << line << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic task

namespace {

const std::vector<std::string> kSubjects = {
    "food",    "service", "staff",   "room",    "coffee",  "pizza",   "soup",
    "bread",   "music",   "place",   "patio",   "menu",    "waiter",  "salad",
    "decor",   "parking", "dessert", "wifi",    "bar",     "garden",  "lobby",
    "burger",  "steak",   "pasta",   "cake",    "tea",     "juice",   "chef",
    "host",    "booth",   "table",   "kitchen", "porch",   "hallway", "bakery",
    "diner",   "market",  "store",   "pool",    "gym"};

const std::vector<std::string> kVerbs = {"is",     "was",    "looks", "seems", "feels",
                                         "tastes", "smells", "stays", "turns", "sounds",
                                         "appears", "remains"};

const std::vector<std::string> kDegrees = {"really", "very",   "quite",  "so",
                                           "rather", "pretty", "fairly", "truly"};

const std::vector<std::string> kTails = {"today",   "again",   "honestly", "overall",
                                         "somehow", "lately",  "tonight",  "inside",
                                         "upstairs", "downtown"};

const std::vector<std::array<std::string, 2>> kDefaultPairs = {
    {"good", "bad"},       {"great", "terrible"}, {"fresh", "stale"},
    {"friendly", "rude"},  {"clean", "dirty"},    {"tasty", "bland"},
    {"lovely", "awful"},   {"quick", "slow"},     {"cheap", "pricey"},
    {"cozy", "noisy"},     {"bright", "gloomy"},  {"crisp", "soggy"},
    {"warm", "cold"},      {"calm", "hectic"},    {"neat", "messy"},
    {"smooth", "rough"}};

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (train_size <= 0 || dev_size <= 0 || test_size <= 0)
    fail("synthetic spec: split sizes must be positive");
  if (style_names.size() != 2) fail("synthetic spec: exactly two styles supported");
  if (min_words < 5 || max_words > 12 || min_words > max_words)
    fail("synthetic spec: word range must lie within [5, 12]");
  const auto& pairs = style_pairs.empty() ? kDefaultPairs : style_pairs;
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    if (p[0] == p[1]) fail("synthetic spec: style lexicons overlap on '" + p[0] + "'");
    for (const auto& w : p)
      if (!seen.insert(w).second) fail("synthetic spec: style lexicons overlap on '" + w + "'");
  }
}

std::vector<std::string> SyntheticTask::oracle_transfer(
    const std::vector<std::string>& words) const {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    auto it = swap.find(w);
    out.push_back(it == swap.end() ? w : it->second);
  }
  return out;
}

Sentence SyntheticTask::oracle_transfer(const Sentence& s) const {
  return vocab.encode(oracle_transfer(vocab.decode(s)));
}

StyleId SyntheticTask::oracle_style(const std::vector<std::string>& words) const {
  int votes[3] = {0, 0, 0};
  for (const auto& w : words) {
    auto it = style_of_word.find(w);
    if (it != style_of_word.end()) ++votes[it->second];
  }
  if (votes[1] > votes[2]) return 1;
  if (votes[2] > votes[1]) return 2;
  return 0;
}

StyleId SyntheticTask::oracle_style(const Sentence& s) const {
  return oracle_style(vocab.decode(s));
}

std::vector<std::string> SyntheticTask::lines(int style_index, const std::string& split) const {
  int idx;
  if (split == "train")
    idx = 0;
  else if (split == "dev")
    idx = 1;
  else if (split == "test")
    idx = 2;
  else
    fail("synthetic: unknown split '" + split + "'");
  return raw.at(style_index)[idx];
}

SyntheticTask generate_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  const auto& pairs = spec.style_pairs.empty() ? kDefaultPairs : spec.style_pairs;

  SyntheticTask task;
  task.spec = spec;
  task.spec.style_pairs = pairs;
  for (const auto& p : pairs) {
    task.swap[p[0]] = p[1];
    task.swap[p[1]] = p[0];
    task.style_of_word[p[0]] = 1;
    task.style_of_word[p[1]] = 2;
  }

  Rng rng(spec.seed, /*stream=*/0x73796e);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.bounded(v.size())]; };

  // One clause: "the SUBJ VERB [DEG] STYLE" (4-5 words).
  auto clause = [&](int side, bool with_degree) {
    std::vector<std::string> w = {"the", pick(kSubjects), pick(kVerbs)};
    if (with_degree) w.push_back(pick(kDegrees));
    w.push_back(pairs[rng.bounded(pairs.size())][side]);
    return w;
  };

  auto make_sentence = [&](int side) {
    std::vector<std::string> w;
    switch (rng.bounded(4)) {
      case 0: {  // single clause padded to >= 5 words
        w = clause(side, true);
        if (rng.bounded(2) == 0 || w.size() < 5) w.push_back(pick(kTails));
        break;
      }
      case 1: {  // two clauses joined by a conjunction
        w = clause(side, rng.bounded(2) == 0);
        w.push_back(rng.bounded(2) == 0 ? "and" : "but");
        auto w2 = clause(side, rng.bounded(2) == 0);
        w.insert(w.end(), w2.begin(), w2.end());
        break;
      }
      case 2: {  // attributive: "the STYLE SUBJ VERB [DEG] STYLE [TAIL]"
        w = {"the", pairs[rng.bounded(pairs.size())][side], pick(kSubjects), pick(kVerbs)};
        if (rng.bounded(2) == 0) w.push_back(pick(kDegrees));
        w.push_back(pairs[rng.bounded(pairs.size())][side]);
        if (w.size() < 6 && rng.bounded(2) == 0) w.push_back(pick(kTails));
        if (w.size() < 5) w.push_back(pick(kTails));
        break;
      }
      default: {  // coordinated subjects: "SUBJ and SUBJ VERB [DEG] STYLE [TAIL]"
        w = {pick(kSubjects), "and", pick(kSubjects), pick(kVerbs)};
        if (rng.bounded(2) == 0) w.push_back(pick(kDegrees));
        w.push_back(pairs[rng.bounded(pairs.size())][side]);
        if (rng.bounded(2) == 0) w.push_back(pick(kTails));
        if (w.size() < 5) w.push_back(pick(kTails));
        break;
      }
    }
    return w;
  };

  const int total = spec.train_size + spec.dev_size + spec.test_size;
  std::vector<std::vector<std::string>> all_lines(2);
  for (int side = 0; side < 2; ++side) {
    std::set<std::string> seen;
    std::vector<std::string> lines;
    long attempts = 0;
    while (static_cast<int>(lines.size()) < total) {
      if (++attempts > 200L * total)
        fail("synthetic: cannot generate enough distinct sentences; enlarge the grammar");
      auto w = make_sentence(side);
      if (static_cast<int>(w.size()) < spec.min_words ||
          static_cast<int>(w.size()) > spec.max_words)
        continue;
      std::string line = join_words(w);
      if (seen.insert(line).second) lines.push_back(std::move(line));
    }
    all_lines[side] = std::move(lines);
  }

  task.raw.resize(2);
  std::vector<std::vector<std::string>> train_lines(2);
  for (int side = 0; side < 2; ++side) {
    const auto& lines = all_lines[side];
    for (int i = 0; i < total; ++i) {
      const int split = i < spec.train_size ? 0 : (i < spec.train_size + spec.dev_size ? 1 : 2);
      task.raw[side][split].push_back(lines[i]);
    }
    train_lines[side] = task.raw[side][0];
  }
  task.vocab = build_vocab(train_lines, /*min_freq=*/1);

  for (int side = 0; side < 2; ++side) {
    StyleCorpus c;
    c.style = side + 1;
    c.name = spec.style_names[side];
    for (int split = 0; split < 3; ++split) {
      auto& dst = split == 0 ? c.train : (split == 1 ? c.dev : c.test);
      for (const auto& line : task.raw[side][split])
        dst.push_back(task.vocab.encode(split_words(line)));
    }
    task.corpora.push_back(std::move(c));
  }
  return task;
}

void write_synthetic(const SyntheticTask& task, const std::string& dir) {
  for (int side = 0; side < 2; ++side) {
    const std::string& name = task.spec.style_names[side];
    for (const char* split : {"train", "dev", "test"})
      save_lines(dir + "/" + name + "." + split + ".txt", task.lines(side, split));
    // Oracle transfers double as references for the test split.
    std::vector<std::string> refs;
    for (const auto& line : task.lines(side, "test"))
      refs.push_back(join_words(task.oracle_transfer(split_words(line))));
    save_lines(dir + "/" + name + ".test.ref.txt", refs);
  }
}

}  // namespace stf
