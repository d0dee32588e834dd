// fssl_lab: run experiments, compare runs, check gradients.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fssl/config.hpp"
#include "fssl/error.hpp"
#include "fssl/federation.hpp"
#include "fssl/gradcheck.hpp"
#include "fssl/report.hpp"
#include "fssl/run_io.hpp"

namespace fs = std::filesystem;

namespace {

std::string default_out_dir(std::uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  return "runs/" + std::string(stamp) + "-seed" + std::to_string(seed);
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
            std::string out, std::size_t threads, bool quiet) {
  fssl::ExperimentConfig cfg;
  try {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot read config '" << config_path << "'\n";
      return 2;
    }
    nlohmann::json j = nlohmann::json::parse(f, nullptr, true, true);
    for (const auto& o : overrides) fssl::apply_override(j, o);
    if (seed) j["seed"] = *seed;
    cfg = fssl::config_from_json(j);
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << config_path << ": " << e.what() << "\n";
    return 2;
  } catch (const fssl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (out.empty()) out = default_out_dir(cfg.seed);

  fssl::RoundObserver observer;
  if (!quiet) {
    observer = [](const fssl::RoundMetrics& m, const fssl::ModelParams&) {
      std::fprintf(stderr, "round %3zu  acc %.3f  asr %.3f  l_cl %.4f  clean %.4f\n", m.round, m.acc, m.asr, m.l_cl,
                   m.clean_loss);
    };
  }
  try {
    const fssl::ExperimentResult result = fssl::run_experiment(cfg, threads, observer);
    fssl::write_run(result, out);
    const auto& last = result.metrics.back();
    std::printf("%s: final acc %.4f asr %.4f\n", out.c_str(), last.acc, last.asr);
  } catch (const fssl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == fssl::ErrorKind::ConfigInvalid ? 2 : 1;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  try {
    std::vector<fs::path> paths(dirs.begin(), dirs.end());
    const fssl::Report rep = fssl::build_report(paths);
    const fs::path dest = out.empty() ? fs::path("report") : fs::path(out);
    fssl::write_report(rep, dest);
    std::cout << rep.table_text();
    std::cout << "wrote " << dest.string() << "/{table.txt,table.csv,acc.svg,asr.svg}\n";
  } catch (const fssl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated self-supervised learning backdoor simulator"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one experiment");
  std::string config_path, out;
  std::vector<std::string> overrides;
  std::uint64_t seed_value = 0;
  std::size_t threads = 0;
  bool quiet = false;
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory");
  run->add_option("--set", overrides, "Override, e.g. attack.mu=0.3 (repeatable)");
  auto* seed_opt = run->add_option("--seed", seed_value, "Seed override");
  run->add_option("--threads", threads, "Worker threads (default FSSL_LAB_THREADS or all cores)");
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* report = app.add_subcommand("report", "Compare finished runs");
  std::vector<std::string> dirs;
  std::string report_out;
  report->add_option("runs", dirs, "Run directories or directories of runs")->required();
  report->add_option("--out", report_out, "Report directory (default ./report)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  fssl::GradCheckOptions gopts;
  grad->add_option("--seed", gopts.seed, "Seed");
  grad->add_option("--instances", gopts.instances, "Instances per group");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // Usage errors share the config-error exit code.
    return code == 0 ? 0 : 2;
  }

  if (*run) {
    std::optional<std::uint64_t> seed;
    if (*seed_opt) seed = seed_value;
    return cmd_run(config_path, overrides, seed, out, threads, quiet);
  }
  if (*report) return cmd_report(dirs, report_out);
  if (*grad) {
    const fssl::GradCheckReport rep = fssl::run_gradcheck(gopts);
    std::cout << rep.format();
    return rep.passed() ? 0 : 1;
  }
  return 0;
}
