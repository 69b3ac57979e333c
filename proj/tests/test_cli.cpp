#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = STF_CLI_PATH;

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stf_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& cmd) {
  const std::string full = cmd + " >> " + (work_dir() / "cli.log").string() + " 2>&1";
  const int status = std::system(full.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

long count_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  long n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

std::string config_path() {
  static const std::string path = [] {
    const fs::path p = work_dir() / "run.cfg";
    std::ofstream f(p);
    f << "layers=1\nheads=2\nmodel_dim=16\nff_dim=24\nmax_len=16\n";
    f << "styles=pos,neg\nvariant=multiclass\n";
    f << "batch=2\nmax_iters=3\neval_every=3\nseed=5\neval_limit=4\n";
    f << "data_dir=" << (work_dir() / "data").string() << "\n";
    f << "out_dir=" << (work_dir() / "out").string() << "\n";
    f << "synth_train=40\nsynth_dev=8\nsynth_test=6\nsynth_max_words=8\n";
    return p.string();
  }();
  return path;
}

}  // namespace

TEST_CASE("cli end-to-end: synth, train, transfer, eval") {
  const fs::path data = work_dir() / "data";
  const fs::path out = work_dir() / "out";

  REQUIRE(run(kCli + " synth --config " + config_path()) == 0);
  for (const char* name : {"pos", "neg"}) {
    CHECK(count_lines(data / (std::string(name) + ".train.txt")) == 40);
    CHECK(count_lines(data / (std::string(name) + ".dev.txt")) == 8);
    CHECK(count_lines(data / (std::string(name) + ".test.txt")) == 6);
    CHECK(fs::exists(data / (std::string(name) + ".test.ref.txt")));
  }

  REQUIRE(run(kCli + " train --config " + config_path()) == 0);
  CHECK(fs::exists(out / "final.stfm"));
  CHECK(fs::exists(out / "best.stfm"));
  CHECK(fs::exists(out / "latest.stfm"));
  CHECK(fs::exists(out / "vocab.txt"));
  CHECK(count_lines(out / "metrics.log") >= 4);  // 3 train lines + 1 dev line

  const std::string ck = (out / "final.stfm").string();
  const std::string t1 = (out / "pos.to.neg.txt").string();
  const std::string t2 = (out / "pos.to.neg.again.txt").string();
  REQUIRE(run(kCli + " transfer --checkpoint " + ck + " --style neg --out " + t1 + " " +
              (data / "pos.test.txt").string()) == 0);
  CHECK(count_lines(t1) == 6);
  REQUIRE(run(kCli + " transfer --checkpoint " + ck + " --style neg --out " + t2 + " " +
              (data / "pos.test.txt").string()) == 0);
  CHECK(read_file(t1) == read_file(t2));  // idempotent under identical inputs

  REQUIRE(run(kCli + " eval --checkpoint " + ck) == 0);
  CHECK(fs::exists(out / "eval.record"));
}

TEST_CASE("cli eval scores copied inputs at self-BLEU 100") {
  const fs::path data = work_dir() / "data";
  const fs::path copies = work_dir() / "copies";
  fs::create_directories(copies);
  fs::copy_file(data / "pos.test.txt", copies / "pos.to.neg.txt",
                fs::copy_options::overwrite_existing);
  fs::copy_file(data / "neg.test.txt", copies / "neg.to.pos.txt",
                fs::copy_options::overwrite_existing);
  const std::string record = (work_dir() / "copy.record").string();
  REQUIRE(run(kCli + " eval --config " + config_path() + " --out " + record + " " +
              copies.string()) == 0);
  const std::string rec = read_file(record);
  CHECK(rec.find("self_bleu=100") != std::string::npos);
}

TEST_CASE("cli resume extends a finished run") {
  const fs::path out = work_dir() / "out";
  const fs::path cfg5 = work_dir() / "run5.cfg";
  {
    std::ofstream f(cfg5);
    f << read_file(config_path());
  }
  // Bump the schedule in a copy of the config.
  {
    std::string text = read_file(cfg5);
    const auto pos = text.find("max_iters=3");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 11, "max_iters=5");
    std::ofstream f(cfg5);
    f << text;
  }
  REQUIRE(run(kCli + " train --checkpoint " + (out / "latest.stfm").string() + " --config " +
              cfg5.string()) == 0);
  CHECK(count_lines(out / "metrics.log") >= 7);
}

TEST_CASE("cli rejects malformed configs and foreign checkpoints") {
  const fs::path bad_cfg = work_dir() / "bad.cfg";
  {
    std::ofstream f(bad_cfg);
    f << "no_such_key=1\n";
  }
  CHECK(run(kCli + " train --config " + bad_cfg.string()) != 0);

  const fs::path bad_ck = work_dir() / "bad.stfm";
  {
    std::string bytes = read_file(work_dir() / "out" / "final.stfm");
    bytes[4] = static_cast<char>(0x77);  // corrupt the version field
    std::ofstream f(bad_ck, std::ios::binary);
    f << bytes;
  }
  CHECK(run(kCli + " transfer --checkpoint " + bad_ck.string() + " --style neg " +
            (work_dir() / "data" / "pos.test.txt").string()) != 0);

  CHECK(run(kCli + " eval") != 0);  // neither checkpoint nor config
}
