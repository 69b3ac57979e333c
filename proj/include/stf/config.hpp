#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stf/data.hpp"
#include "stf/discriminator.hpp"
#include "stf/transformer.hpp"

namespace stf {

struct TrainingConfig {
  int n_d = 1;
  int n_f = 1;
  double w_self = 1.0;
  double w_cycle = 1.0;
  double w_style = 1.0;
  double word_dropout = 0.1;
  double temp_init = 1.0;
  double temp_decay = 1.0;  // multiplicative, applied per epoch
  double temp_floor = 0.5;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 16;
  int64_t max_iters = 400;
  int64_t eval_every = 50;
  uint64_t seed = 1;

  // Ablation switches (one per ablation-table row).
  bool disable_self = false;
  bool disable_cycle = false;
  bool disable_style = false;
  bool disc_real_only = false;
  bool disc_generated_only = false;

  // Cycle pass input: the soft distributions (default) or their argmax
  // re-embedded as hard tokens, which cuts the gradient into the first pass.
  bool cycle_hard = false;

  void validate() const;
};

struct RunConfig {
  TransformerConfig model;
  TrainingConfig training;
  DiscVariant variant = DiscVariant::kMulticlass;
  std::vector<std::string> styles = {"pos", "neg"};  // order defines StyleIds
  std::string data_dir;
  std::string out_dir = "out";
  std::string vocab_file;  // written by training when empty
  int min_freq = 1;
  int eval_limit = 0;  // dev sentences per style during training evals; 0 = all
  SyntheticTaskSpec synth;

  void validate() const;
};

// Flat UTF-8 key=value format, '#' comments, unknown keys rejected with the
// offending key named.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);
std::string serialize_config(const RunConfig& cfg);

StyleId style_id_by_name(const RunConfig& cfg, const std::string& name);

}  // namespace stf
