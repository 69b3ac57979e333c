// Command line entry points for the style transfer workflow:
//   synth     generate the synthetic two-style corpus
//   train     adversarial training (fresh or resumed from a checkpoint)
//   transfer  rewrite an input file into a target style
//   eval      score a checkpoint or a directory of transferred outputs
//   ablate    retrain with each loss/data switch disabled and report

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "stf/eval.hpp"
#include "stf/workflow.hpp"

namespace {

using namespace stf;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  std::string style;
  std::string variant;
  std::optional<long> seed;
  bool disable_self = false;
  bool disable_cycle = false;
  bool disable_style = false;
  bool disc_real_only = false;
  bool disc_generated_only = false;
};

void apply_overrides(RunConfig& cfg, const CommonArgs& args) {
  if (args.seed) cfg.training.seed = static_cast<uint64_t>(*args.seed);
  if (!args.variant.empty()) cfg.variant = disc_variant_from_string(args.variant);
  cfg.training.disable_self |= args.disable_self;
  cfg.training.disable_cycle |= args.disable_cycle;
  cfg.training.disable_style |= args.disable_style;
  cfg.training.disc_real_only |= args.disc_real_only;
  cfg.training.disc_generated_only |= args.disc_generated_only;
}

int cmd_synth(const CommonArgs& args) {
  RunConfig cfg = load_config_file(args.config_path);
  apply_overrides(cfg, args);
  if (!args.out.empty()) cfg.data_dir = args.out;
  if (cfg.data_dir.empty()) throw std::invalid_argument("config: data_dir is required");
  SyntheticTaskSpec spec = cfg.synth;
  spec.style_names = cfg.styles;
  SyntheticTask task = generate_synthetic(spec);
  std::filesystem::create_directories(cfg.data_dir);
  write_synthetic(task, cfg.data_dir);
  std::cout << "wrote " << cfg.data_dir << ": " << spec.train_size << "/" << spec.dev_size << "/"
            << spec.test_size << " sentences per style, vocab " << task.vocab.size() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg;
  std::optional<CheckpointData> resume;
  if (!args.checkpoint.empty()) {
    resume = load_checkpoint(args.checkpoint);
    cfg = parse_config_text(resume->config_text);
    if (!args.config_path.empty()) {
      // Resume keeps the trained model's config; the file may only extend
      // the schedule or move the output.
      const RunConfig file_cfg = load_config_file(args.config_path);
      cfg.training.max_iters = file_cfg.training.max_iters;
      cfg.training.eval_every = file_cfg.training.eval_every;
      cfg.out_dir = file_cfg.out_dir;
    }
  } else {
    cfg = load_config_file(args.config_path);
    apply_overrides(cfg, args);
    if (!args.out.empty()) cfg.out_dir = args.out;
  }
  Workspace ws = load_workspace(cfg);
  auto trainer = make_trainer(ws);
  if (resume) trainer->restore(*resume);
  trainer->train();
  const DevMetrics dev = trainer->evaluate_dev(0);
  std::cout << "trained " << trainer->iteration() << " iterations; dev acc " << dev.acc
            << " self-BLEU " << dev.self_bleu << " ppl " << dev.ppl << "\n";
  std::cout << "checkpoints in " << trainer->config().out_dir << "\n";
  return 0;
}

int cmd_transfer(const CommonArgs& args, const std::string& input) {
  if (args.checkpoint.empty()) throw std::invalid_argument("transfer: --checkpoint is required");
  if (args.style.empty()) throw std::invalid_argument("transfer: --style is required");
  LoadedSystem sys = load_system(args.checkpoint);
  const StyleId target = style_id_by_name(sys.cfg, args.style);
  const auto sentences = load_lines(input, sys.vocab, max_corpus_words(sys.cfg));
  std::string out_path = args.out;
  if (out_path.empty())
    out_path = input + "." + args.style + ".out.txt";
  std::vector<std::string> lines;
  lines.reserve(sentences.size());
  for (const auto& s : sentences) {
    const Sentence t = sys.generator->transfer_greedy(s, target);
    lines.push_back(join_words(sys.vocab.decode(t)));
  }
  save_lines(out_path, lines);
  std::cout << "wrote " << lines.size() << " transferred sentences to " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& outputs_dir) {
  RunConfig cfg;
  std::optional<LoadedSystem> sys;
  if (!args.checkpoint.empty()) {
    sys = load_system(args.checkpoint);
    cfg = sys->cfg;
    if (!args.config_path.empty()) {
      RunConfig file_cfg = load_config_file(args.config_path);
      cfg.data_dir = file_cfg.data_dir;
      cfg.out_dir = file_cfg.out_dir;
      cfg.eval_limit = file_cfg.eval_limit;
    }
  } else {
    if (args.config_path.empty())
      throw std::invalid_argument("eval: --config is required without a checkpoint");
    cfg = load_config_file(args.config_path);
    cfg.vocab_file.clear();  // scored against a fresh train-split vocabulary
  }
  apply_overrides(cfg, args);
  Workspace ws = load_workspace(cfg);
  const EvalArtifacts artifacts = build_eval_artifacts(ws.corpora, ws.vocab.size());
  const auto refs = load_test_references(ws);

  std::vector<TransferCase> cases;
  if (sys) {
    cases = collect_transfers(*sys->generator, ws.corpora, "test",
                              refs ? &*refs : nullptr, 0, 0);
  } else {
    if (outputs_dir.empty())
      throw std::invalid_argument("eval: either --checkpoint or an outputs directory is required");
    for (size_t i = 0; i < ws.corpora.size(); ++i)
      for (size_t j = 0; j < ws.corpora.size(); ++j) {
        if (i == j) continue;
        const std::string path = outputs_dir + "/" + ws.cfg.styles[i] + ".to." +
                                 ws.cfg.styles[j] + ".txt";
        const auto outputs = load_lines(path, ws.vocab, max_corpus_words(ws.cfg));
        const auto& inputs = ws.corpora[i].test;
        if (outputs.size() != inputs.size())
          throw std::runtime_error("eval: " + path + " has " + std::to_string(outputs.size()) +
                                   " lines but the test split has " +
                                   std::to_string(inputs.size()));
        for (size_t k = 0; k < outputs.size(); ++k) {
          TransferCase tc;
          tc.input = inputs[k];
          tc.output = outputs[k];
          tc.target = ws.corpora[j].style;
          if (refs && k < (*refs)[i].size()) tc.reference = (*refs)[i][k];
          cases.push_back(std::move(tc));
        }
      }
  }

  const EvalReport report = evaluate_outputs(artifacts, cases);
  std::cout << report.to_text();
  std::filesystem::create_directories(cfg.out_dir);
  const std::string record_path =
      args.out.empty() ? cfg.out_dir + "/eval.record" : args.out;
  std::ofstream rec(record_path, std::ios::app);
  rec << report.to_record() << "\n";
  if (!rec) throw std::runtime_error("eval: cannot write record to " + record_path);
  std::cout << "record appended to " << record_path << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  RunConfig base = load_config_file(args.config_path);
  apply_overrides(base, args);
  if (!args.out.empty()) base.out_dir = args.out;
  std::filesystem::create_directories(base.out_dir);
  std::ofstream report(base.out_dir + "/ablation.report");
  for (const auto& [name, apply] : ablation_grid()) {
    RunConfig cfg = base;
    apply(cfg.training);
    cfg.out_dir = base.out_dir + "/" + name;
    Workspace ws = load_workspace(cfg);
    auto trainer = make_trainer(ws);
    trainer->train();
    const EvalReport rep = evaluate_system(trainer->generator(), ws.corpora, "test",
                                           trainer->eval_artifacts(), nullptr, 0, 0);
    const std::string line = name + " " + rep.to_record();
    report << line << "\n";
    report.flush();
    std::cout << line << "\n";
  }
  std::cout << "ablation grid written to " << base.out_dir << "/ablation.report\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unpaired text style transfer: training, transfer, and evaluation"};
  app.require_subcommand(1);
  CommonArgs args;
  std::string input_file;
  std::string outputs_dir;

  auto add_common = [&](CLI::App* sub, bool with_ablations) {
    sub->add_option("--config", args.config_path, "flat key=value config file");
    sub->add_option("--seed", args.seed, "override the training seed");
    sub->add_option("--checkpoint", args.checkpoint, "checkpoint file");
    sub->add_option("--style", args.style, "target style name");
    sub->add_option("--out", args.out, "output path");
    sub->add_option("--variant", args.variant, "discriminator variant")
        ->check(CLI::IsMember({"conditional", "multiclass"}));
    if (with_ablations) {
      sub->add_flag("--disable-self", args.disable_self, "drop the self reconstruction loss");
      sub->add_flag("--disable-cycle", args.disable_cycle, "drop the cycle reconstruction loss");
      sub->add_flag("--disable-style", args.disable_style, "drop the discriminator loss");
      sub->add_flag("--disc-real-only", args.disc_real_only,
                    "train the discriminator without generated positives");
      sub->add_flag("--disc-generated-only", args.disc_generated_only,
                    "train the discriminator without real positives");
    }
  };

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_common(synth, false);
  synth->callback([&] { cmd_synth(args); });

  CLI::App* train = app.add_subcommand("train", "train a style transfer model");
  add_common(train, true);
  train->callback([&] { cmd_train(args); });

  CLI::App* transfer = app.add_subcommand("transfer", "transfer an input file");
  add_common(transfer, false);
  transfer->add_option("input", input_file, "input file, one sentence per line")->required();
  transfer->callback([&] { cmd_transfer(args, input_file); });

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint or output files");
  add_common(eval, false);
  eval->add_option("outputs", outputs_dir, "directory of <src>.to.<tgt>.txt output files");
  eval->callback([&] { cmd_eval(args, outputs_dir); });

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_common(ablate, false);
  ablate->callback([&] { cmd_ablate(args); });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
