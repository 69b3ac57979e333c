#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stf/config.hpp"
#include "stf/training.hpp"

namespace stf {

// Widest sentence the full pipeline accepts: the encoder prepends a style
// slot and the discriminator prepends <cls> plus a style slot, so surface
// words are capped at max_len - 4.
int max_corpus_words(const RunConfig& cfg);

struct Workspace {
  RunConfig cfg;
  Vocabulary vocab;
  std::vector<StyleCorpus> corpora;
};

// Loads corpora for every configured style; the vocabulary comes from
// cfg.vocab_file when set, otherwise it is built from the train splits.
Workspace load_workspace(RunConfig cfg);

std::unique_ptr<Trainer> make_trainer(const Workspace& ws);

struct LoadedSystem {
  RunConfig cfg;
  Vocabulary vocab;
  std::unique_ptr<Generator> generator;
  CheckpointData data;
};

// Rebuilds a generator from a checkpoint's embedded config and vocab file.
LoadedSystem load_system(const std::string& checkpoint_path);

// The ablation rows: (row name, switch setter), full model first.
std::vector<std::pair<std::string, std::function<void(TrainingConfig&)>>> ablation_grid();

// Per-style oracle references for the test split when present on disk
// (<style>.test.ref.txt), else nullopt.
std::optional<std::vector<std::vector<Sentence>>> load_test_references(const Workspace& ws);

}  // namespace stf
