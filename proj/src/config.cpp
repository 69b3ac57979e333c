#include "stf/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stf {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

long to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainingConfig::validate() const {
  if (n_d < 1 || n_f < 1) fail("config: n_d and n_f must be >= 1");
  if (w_self < 0 || w_cycle < 0 || w_style < 0) fail("config: loss weights must be >= 0");
  if (word_dropout < 0.0 || word_dropout >= 1.0) fail("config: word_dropout must be in [0, 1)");
  if (!(temp_init > 0.0) || !(temp_floor > 0.0) || !(temp_decay > 0.0))
    fail("config: temperature schedule values must be > 0");
  if (!(lr > 0.0)) fail("config: lr must be > 0");
  if (batch < 1) fail("config: batch must be >= 1");
  if (max_iters < 1) fail("config: max_iters must be >= 1");
  if (eval_every < 1) fail("config: eval_every must be >= 1");
}

void RunConfig::validate() const {
  training.validate();
  if (styles.size() < 2) fail("config: at least two styles required");
  if (static_cast<int>(styles.size()) != model.num_styles)
    fail("config: styles list has " + std::to_string(styles.size()) + " names but num_styles is " +
         std::to_string(model.num_styles));
  if (min_freq < 1) fail("config: min_freq must be >= 1");
  if (eval_limit < 0) fail("config: eval_limit must be >= 0");
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto& m = cfg.model;
  auto& t = cfg.training;
  if (key == "layers") m.num_layers = static_cast<int>(to_int(key, value));
  else if (key == "heads") m.num_heads = static_cast<int>(to_int(key, value));
  else if (key == "model_dim") m.model_dim = static_cast<int>(to_int(key, value));
  else if (key == "ff_dim") m.ff_dim = static_cast<int>(to_int(key, value));
  else if (key == "max_len") m.max_len = static_cast<int>(to_int(key, value));
  else if (key == "styles") {
    cfg.styles = split_csv(value);
    m.num_styles = static_cast<int>(cfg.styles.size());
    if (cfg.styles.empty()) fail("config: key 'styles' expects a comma-separated list");
  } else if (key == "variant") cfg.variant = disc_variant_from_string(value);
  else if (key == "n_d") t.n_d = static_cast<int>(to_int(key, value));
  else if (key == "n_f") t.n_f = static_cast<int>(to_int(key, value));
  else if (key == "w_self") t.w_self = to_double(key, value);
  else if (key == "w_cycle") t.w_cycle = to_double(key, value);
  else if (key == "w_style") t.w_style = to_double(key, value);
  else if (key == "word_dropout") t.word_dropout = to_double(key, value);
  else if (key == "temp_init") t.temp_init = to_double(key, value);
  else if (key == "temp_decay") t.temp_decay = to_double(key, value);
  else if (key == "temp_floor") t.temp_floor = to_double(key, value);
  else if (key == "lr") t.lr = to_double(key, value);
  else if (key == "beta1") t.beta1 = to_double(key, value);
  else if (key == "beta2") t.beta2 = to_double(key, value);
  else if (key == "adam_eps") t.adam_eps = to_double(key, value);
  else if (key == "batch") t.batch = static_cast<int>(to_int(key, value));
  else if (key == "max_iters") t.max_iters = to_int(key, value);
  else if (key == "eval_every") t.eval_every = to_int(key, value);
  else if (key == "seed") t.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "disable_self") t.disable_self = to_bool(key, value);
  else if (key == "disable_cycle") t.disable_cycle = to_bool(key, value);
  else if (key == "disable_style") t.disable_style = to_bool(key, value);
  else if (key == "disc_real_only") t.disc_real_only = to_bool(key, value);
  else if (key == "disc_generated_only") t.disc_generated_only = to_bool(key, value);
  else if (key == "cycle_hard") t.cycle_hard = to_bool(key, value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "vocab_file") cfg.vocab_file = value;
  else if (key == "min_freq") cfg.min_freq = static_cast<int>(to_int(key, value));
  else if (key == "eval_limit") cfg.eval_limit = static_cast<int>(to_int(key, value));
  else if (key == "synth_seed") cfg.synth.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "synth_train") cfg.synth.train_size = static_cast<int>(to_int(key, value));
  else if (key == "synth_dev") cfg.synth.dev_size = static_cast<int>(to_int(key, value));
  else if (key == "synth_test") cfg.synth.test_size = static_cast<int>(to_int(key, value));
  else if (key == "synth_min_words") cfg.synth.min_words = static_cast<int>(to_int(key, value));
  else if (key == "synth_max_words") cfg.synth.max_words = static_cast<int>(to_int(key, value));
  else fail("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.synth.style_names = cfg.styles;
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  const auto& m = cfg.model;
  const auto& t = cfg.training;
  out << "layers=" << m.num_layers << "\n";
  out << "heads=" << m.num_heads << "\n";
  out << "model_dim=" << m.model_dim << "\n";
  out << "ff_dim=" << m.ff_dim << "\n";
  out << "max_len=" << m.max_len << "\n";
  std::string styles;
  for (const auto& s : cfg.styles) styles += (styles.empty() ? "" : ",") + s;
  out << "styles=" << styles << "\n";
  out << "variant=" << to_string(cfg.variant) << "\n";
  out << "n_d=" << t.n_d << "\n";
  out << "n_f=" << t.n_f << "\n";
  out << "w_self=" << fmt(t.w_self) << "\n";
  out << "w_cycle=" << fmt(t.w_cycle) << "\n";
  out << "w_style=" << fmt(t.w_style) << "\n";
  out << "word_dropout=" << fmt(t.word_dropout) << "\n";
  out << "temp_init=" << fmt(t.temp_init) << "\n";
  out << "temp_decay=" << fmt(t.temp_decay) << "\n";
  out << "temp_floor=" << fmt(t.temp_floor) << "\n";
  out << "lr=" << fmt(t.lr) << "\n";
  out << "beta1=" << fmt(t.beta1) << "\n";
  out << "beta2=" << fmt(t.beta2) << "\n";
  out << "adam_eps=" << fmt(t.adam_eps) << "\n";
  out << "batch=" << t.batch << "\n";
  out << "max_iters=" << t.max_iters << "\n";
  out << "eval_every=" << t.eval_every << "\n";
  out << "seed=" << t.seed << "\n";
  out << "disable_self=" << (t.disable_self ? "true" : "false") << "\n";
  out << "disable_cycle=" << (t.disable_cycle ? "true" : "false") << "\n";
  out << "disable_style=" << (t.disable_style ? "true" : "false") << "\n";
  out << "disc_real_only=" << (t.disc_real_only ? "true" : "false") << "\n";
  out << "disc_generated_only=" << (t.disc_generated_only ? "true" : "false") << "\n";
  out << "cycle_hard=" << (t.cycle_hard ? "true" : "false") << "\n";
  out << "data_dir=" << cfg.data_dir << "\n";
  out << "out_dir=" << cfg.out_dir << "\n";
  out << "vocab_file=" << cfg.vocab_file << "\n";
  out << "min_freq=" << cfg.min_freq << "\n";
  out << "eval_limit=" << cfg.eval_limit << "\n";
  out << "synth_seed=" << cfg.synth.seed << "\n";
  out << "synth_train=" << cfg.synth.train_size << "\n";
  out << "synth_dev=" << cfg.synth.dev_size << "\n";
  out << "synth_test=" << cfg.synth.test_size << "\n";
  out << "synth_min_words=" << cfg.synth.min_words << "\n";
  out << "synth_max_words=" << cfg.synth.max_words << "\n";
  return out.str();
}

StyleId style_id_by_name(const RunConfig& cfg, const std::string& name) {
  for (size_t i = 0; i < cfg.styles.size(); ++i)
    if (cfg.styles[i] == name) return static_cast<StyleId>(i + 1);
  fail("config: unknown style '" + name + "'");
}

}  // namespace stf
