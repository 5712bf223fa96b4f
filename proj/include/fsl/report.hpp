#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fsl/format.hpp"
#include "fsl/sim.hpp"

namespace fsl {

struct RunManifest {
  std::string config_hash;  // SHA-256 of the canonical config text
  std::uint64_t seed = 0;
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;
  std::string code_version;
  std::vector<std::filesystem::path> outputs;
};

std::string config_hash(const std::string& canonical_text);
std::string code_version();
std::string utc_timestamp();

// round,test_error,all_acc,src_acc,asr,agg_wall_time_s,gamma_0..gamma_{K-1}
void write_rounds_csv(std::ostream& out, std::span<const RoundMetrics> rounds, std::size_t num_workers,
                      bool record_timing = true);
std::vector<RoundMetrics> read_rounds_csv(std::istream& in);

std::string summary_json(const ExperimentSummary& summary, std::size_t rounds);
std::string manifest_json(const RunManifest& manifest);

struct MetricsPaths {
  std::filesystem::path rounds_csv;
  std::filesystem::path summary_json;
};

// Fails with IoError when `dir` cannot be created or written; call before
// round 0 so a bad output path never costs a run.
void preflight_output_dir(const std::filesystem::path& dir);

MetricsPaths write_metrics(const std::filesystem::path& dir, const std::string& prefix,
                           std::span<const RoundMetrics> rounds, const ExperimentSummary& summary,
                           std::size_t num_workers, bool record_timing = true);

}  // namespace fsl
