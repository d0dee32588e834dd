#include "fssl/run_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fssl/error.hpp"

namespace fssl {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string join(std::span<const std::size_t> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

double window_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

double as_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  return std::stod(s);
}

}  // namespace

std::string metrics_csv(std::span<const RoundMetrics> metrics) {
  std::string out =
      "round,acc,asr,l_cl,l_he,l_bfe,clean_loss,dist_to_global,mal_dist,attack_steps,g_sel,participants,defense,"
      "excluded,fallback\n";
  for (const auto& m : metrics) {
    out += std::to_string(m.round) + ',' + num(m.acc) + ',' + num(m.asr) + ',' + num(m.l_cl) + ',' + num(m.l_he) +
           ',' + num(m.l_bfe) + ',' + num(m.clean_loss) + ',' + num(m.dist_to_global) + ',' + num(m.mal_dist) + ',' +
           std::to_string(m.attack_steps) + ',' + num(m.g_sel) + ',' + join(m.participants) + ',' + m.defense.name +
           ',' + join(m.defense.excluded) + ',' + (m.defense.fallback ? "1" : "0") + '\n';
  }
  return out;
}

nlohmann::json summary_json(const ExperimentResult& result) {
  nlohmann::json j;
  j["config"] = to_json(result.config);
  j["rounds"] = result.metrics.empty() ? 0 : result.metrics.back().round;
  if (!result.metrics.empty()) {
    const RoundMetrics& last = result.metrics.back();
    j["final"] = {{"acc", nullable(last.acc)}, {"asr", nullable(last.asr)}, {"clean_loss", last.clean_loss}};
  }
  j["eps"] = result.eps;
  j["poisoned_samples"] = result.poisoned;

  const std::vector<double> trace = clean_loss_series(result.metrics);
  // Round 0 is the untrained model; the trace covers trained rounds only.
  std::span<const double> trained(trace);
  if (!trained.empty()) trained = trained.subspan(1);
  if (trained.size() >= 20) {
    j["clean_loss"] = {{"first20", window_mean(trained.first(20))},
                       {"last20", window_mean(trained.last(20))},
                       {"non_divergent", non_divergent(trained, 20)}};
  }

  const std::size_t stop = result.config.attack.stop_round;
  if (result.config.attack.enabled && stop > 0) {
    const std::vector<double> asr = asr_series(result.metrics);
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : persistence_curve(asr, stop, result.config.eval.persistence_delta)) {
      curve.push_back({{"round", p.round},
                       {"asr", p.asr},
                       {"retention", p.retention ? nlohmann::json(*p.retention) : nlohmann::json(nullptr)}});
    }
    j["persistence"] = curve;
  }
  return j;
}

void write_run(const ExperimentResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "checkpoints", ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  auto write_text = [](const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + p.string());
    f << text;
    if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
  };
  write_text(dir / "metrics.csv", metrics_csv(result.metrics));
  write_text(dir / "summary.json", summary_json(result).dump(2) + "\n");
  for (const auto& [round, params] : result.checkpoints) {
    char name[32];
    std::snprintf(name, sizeof name, "round_%04zu.ckpt", round);
    save_checkpoint(params, dir / "checkpoints" / name);
  }
  save_checkpoint(result.final_global, dir / "checkpoints" / "final.ckpt");
}

RunRecord load_run(const fs::path& dir) {
  RunRecord rec;
  rec.dir = dir;
  std::ifstream sf(dir / "summary.json");
  std::ifstream mf(dir / "metrics.csv");
  if (!sf || !mf) throw Error(ErrorKind::MissingMetrics, "no metrics.csv/summary.json in " + dir.string());
  try {
    rec.summary = nlohmann::json::parse(sf);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MissingMetrics, dir.string() + "/summary.json: " + e.what());
  }
  std::string line;
  if (!std::getline(mf, line)) throw Error(ErrorKind::MissingMetrics, dir.string() + "/metrics.csv is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorKind::MissingMetrics, dir.string() + "/metrics.csv lacks column " + name);
  };
  const std::size_t c_round = column("round"), c_acc = column("acc"), c_asr = column("asr"),
                    c_loss = column("clean_loss");
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    cells.resize(header.size());
    try {
      rec.rounds.push_back(std::stoul(cells[c_round]));
      rec.acc.push_back(as_double(cells[c_acc]));
      rec.asr.push_back(as_double(cells[c_asr]));
      rec.clean_loss.push_back(as_double(cells[c_loss]));
    } catch (const std::exception&) {
      throw Error(ErrorKind::MissingMetrics, dir.string() + "/metrics.csv: bad row '" + line + "'");
    }
  }
  if (rec.rounds.empty()) throw Error(ErrorKind::MissingMetrics, dir.string() + "/metrics.csv has no rows");
  return rec;
}

}  // namespace fssl
