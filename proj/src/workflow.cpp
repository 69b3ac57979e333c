#include "stf/workflow.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace stf {

int max_corpus_words(const RunConfig& cfg) { return cfg.model.max_len - 4; }

namespace {

std::vector<std::string> read_raw_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("corpus: cannot read '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!split_words(line).empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

Workspace load_workspace(RunConfig cfg) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw std::invalid_argument("config: data_dir is required");
  Workspace ws;
  if (!cfg.vocab_file.empty()) {
    ws.vocab = Vocabulary::load(cfg.vocab_file);
  } else {
    std::vector<std::vector<std::string>> train_lines;
    for (const auto& name : cfg.styles)
      train_lines.push_back(read_raw_lines(cfg.data_dir + "/" + name + ".train.txt"));
    ws.vocab = build_vocab(train_lines, cfg.min_freq);
  }
  const int max_words = max_corpus_words(cfg);
  for (size_t i = 0; i < cfg.styles.size(); ++i)
    ws.corpora.push_back(load_corpus(cfg.data_dir, cfg.styles[i], static_cast<StyleId>(i + 1),
                                     ws.vocab, max_words));
  cfg.model.vocab_size = ws.vocab.size();
  ws.cfg = std::move(cfg);
  return ws;
}

std::unique_ptr<Trainer> make_trainer(const Workspace& ws) {
  return std::make_unique<Trainer>(ws.cfg, ws.corpora, ws.vocab);
}

LoadedSystem load_system(const std::string& checkpoint_path) {
  LoadedSystem sys;
  sys.data = load_checkpoint(checkpoint_path);
  sys.cfg = parse_config_text(sys.data.config_text);
  if (sys.cfg.vocab_file.empty())
    throw std::runtime_error("checkpoint: config snapshot has no vocab_file");
  sys.vocab = Vocabulary::load(sys.cfg.vocab_file);
  sys.cfg.model.vocab_size = sys.vocab.size();
  sys.generator = std::make_unique<Generator>(sys.cfg.model, sys.cfg.training.seed);
  sys.data.restore_store("gen.", sys.generator->params());
  return sys;
}

std::vector<std::pair<std::string, std::function<void(TrainingConfig&)>>> ablation_grid() {
  return {
      {"full", [](TrainingConfig&) {}},
      {"disable_self", [](TrainingConfig& t) { t.disable_self = true; }},
      {"disable_cycle", [](TrainingConfig& t) { t.disable_cycle = true; }},
      {"disable_style", [](TrainingConfig& t) { t.disable_style = true; }},
      {"disc_real_only", [](TrainingConfig& t) { t.disc_real_only = true; }},
      {"disc_generated_only", [](TrainingConfig& t) { t.disc_generated_only = true; }},
  };
}

std::optional<std::vector<std::vector<Sentence>>> load_test_references(const Workspace& ws) {
  std::vector<std::vector<Sentence>> refs;
  for (const auto& name : ws.cfg.styles) {
    const std::string path = ws.cfg.data_dir + "/" + name + ".test.ref.txt";
    if (!std::filesystem::exists(path)) return std::nullopt;
    refs.push_back(load_lines(path, ws.vocab, max_corpus_words(ws.cfg)));
  }
  return refs;
}

}  // namespace stf
