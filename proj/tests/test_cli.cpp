#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fssl/gradcheck.hpp"
#include "fssl/report.hpp"
#include "fssl/run_io.hpp"
#include "test_util.hpp"

using namespace fssl;
using fssl::test::error_kind_of;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  // small enough to finish in about a second
  "seed": 3,
  "data": {"classes": 4, "dim": 8, "per_class": 30, "probe_per_class": 20, "test_per_class": 10},
  "model": {"hidden": [8], "embedding": 4},
  "train": {"rounds": 2, "local_epochs": 1, "batch_size": 8, "lr": 0.01, "queue_size": 32},
  "federation": {"clients": 3, "malicious": [0]},
  "attack": {"mu": 0.5, "top_k": 16, "prototypes": 4, "poison_ratio": 0.1,
             "trigger": {"coords": [6, 7], "values": [2, 2]}, "target_class": 0},
  "defense": {"fltrust_root": 8},
  "eval": {"probe_epochs": 20, "clean_loss_samples": 16}
})";

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FSSL_LAB_BINARY) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << kTinyConfig;
  return p;
}

}  // namespace

TEST_CASE("cli run: missing config, bad override, success") {
  fssl::test::TempDir dir("cli");
  const fs::path log = dir.path / "log.txt";
  CHECK(run_cli("run --config " + (dir.path / "missing.json").string(), log) == 2);
  CHECK(slurp(log).find("missing.json") != std::string::npos);
  CHECK(run_cli("run", log) == 2);
  CHECK(run_cli("frobnicate", log) == 2);

  const fs::path cfg = write_config(dir.path);
  CHECK(run_cli("run -q --config " + cfg.string() + " --set attack.mu=7", log) == 2);
  CHECK(slurp(log).find("attack.mu") != std::string::npos);

  const fs::path out = dir.path / "run";
  REQUIRE(run_cli("run -q --config " + cfg.string() + " --set attack.mu=0.3 --out " + out.string(), log) == 0);
  const RunRecord rec = load_run(out);
  CHECK(rec.summary["config"]["attack"]["mu"] == 0.3);
  CHECK(rec.rounds == std::vector<std::size_t>{0, 1, 2});
  CHECK(fs::exists(out / "checkpoints" / "final.ckpt"));
  CHECK(load_checkpoint(out / "checkpoints" / "final.ckpt").layout.input_dim() == 8);

  const fs::path zero = dir.path / "zero";
  REQUIRE(run_cli("run -q --config " + cfg.string() + " --set train.rounds=0 --out " + zero.string(), log) == 0);
  std::ifstream csv(zero / "metrics.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 2);  // header plus round 0
}

TEST_CASE("metrics csv is byte-stable across thread counts") {
  ExperimentConfig cfg = config_from_json(nlohmann::json::parse(kTinyConfig, nullptr, true, true));
  const std::string a = metrics_csv(run_experiment(cfg, 1).metrics);
  const std::string b = metrics_csv(run_experiment(cfg, 3).metrics);
  CHECK(a == b);
  CHECK(a.rfind("round,acc,asr,", 0) == 0);
}

TEST_CASE("report sorts rows by mu and rejects empty input") {
  fssl::test::TempDir dir("report");
  ExperimentConfig cfg = config_from_json(nlohmann::json::parse(kTinyConfig, nullptr, true, true));
  cfg.train.rounds = 1;
  cfg.attack.mu = 0.7;
  write_run(run_experiment(cfg, 1), dir.path / "runs" / "a");
  cfg.attack.mu = 0.2;
  write_run(run_experiment(cfg, 1), dir.path / "runs" / "b");

  const Report one = build_report({dir.path / "runs" / "a"});
  CHECK(one.rows.size() == 1);

  const Report rep = build_report({dir.path / "runs"});
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].mu == 0.2);
  CHECK(rep.rows[1].mu == 0.7);
  write_report(rep, dir.path / "out");
  for (const char* f : {"table.txt", "table.csv", "acc.svg", "asr.svg"}) CHECK(fs::exists(dir.path / "out" / f));
  CHECK(slurp(dir.path / "out" / "acc.svg").rfind("<svg", 0) == 0);

  fs::create_directories(dir.path / "empty");
  CHECK(error_kind_of([&] { build_report({dir.path / "empty"}); }) == ErrorKind::MissingMetrics);
  CHECK(error_kind_of([&] { load_run(dir.path / "empty"); }) == ErrorKind::MissingMetrics);

  const fs::path log = dir.path / "log.txt";
  CHECK(run_cli("report " + (dir.path / "empty").string() + " --out " + (dir.path / "r2").string(), log) == 1);
  CHECK(run_cli("report " + (dir.path / "runs").string() + " --out " + (dir.path / "r3").string(), log) == 0);
}

TEST_CASE("gradcheck passes and catches a corrupted gradient") {
  GradCheckOptions opts;
  opts.instances = 20;
  const GradCheckReport ok = run_gradcheck(opts);
  CHECK(ok.passed());
  REQUIRE(ok.groups.size() == 4);
  CHECK(ok.groups[0].name == "encoder");

  opts.corrupt = [](const std::string& group, Vector& g) {
    if (group == "loss_bfe") g[0] += 0.5;
  };
  const GradCheckReport bad = run_gradcheck(opts);
  CHECK(!bad.passed());
  for (const auto& grp : bad.groups) CHECK(grp.passed == (grp.name != "loss_bfe"));
  CHECK(bad.format().find("FAIL") != std::string::npos);
}
