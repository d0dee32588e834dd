#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fssl/federation.hpp"

namespace fssl {

// One CSV row per round; fixed formatting so equal runs give equal bytes.
std::string metrics_csv(std::span<const RoundMetrics> metrics);

// Resolved config, final metrics, persistence and loss-trace summaries.
// Contains nothing time- or host-dependent.
nlohmann::json summary_json(const ExperimentResult& result);

// Writes metrics.csv, summary.json and checkpoints/ under `dir`.
void write_run(const ExperimentResult& result, const std::filesystem::path& dir);

struct RunRecord {
  std::filesystem::path dir;
  nlohmann::json summary;
  std::vector<std::size_t> rounds;
  std::vector<double> acc;
  std::vector<double> asr;
  std::vector<double> clean_loss;
};

// MissingMetrics when either file is absent or unreadable.
RunRecord load_run(const std::filesystem::path& dir);

}  // namespace fssl
