#include "fsl/report.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "fsl/errors.hpp"
#include "json.hpp"

#ifndef FSL_VERSION
#define FSL_VERSION "0.0.0"
#endif

namespace fsl {

namespace {

double rounded(double v) { return std::stod(format_number(v)); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string format_number(double value) {
  if (value == 0.0) return "0";  // also folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string config_hash(const std::string& canonical_text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(canonical_text.data(), canonical_text.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw InternalError("SHA-256 digest failed");
  }
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string code_version() { return FSL_VERSION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_rounds_csv(std::ostream& out, std::span<const RoundMetrics> rounds, std::size_t num_workers,
                      bool record_timing) {
  out << "round,test_error,all_acc,src_acc,asr,agg_wall_time_s";
  for (std::size_t k = 0; k < num_workers; ++k) out << ",gamma_" << k;
  out << '\n';
  for (const auto& r : rounds) {
    out << r.round << ',' << format_number(r.test_error) << ',' << format_number(r.all_acc) << ','
        << format_number(r.src_acc) << ',' << format_number(r.asr) << ','
        << format_number(record_timing ? r.agg_wall_time_s : 0.0);
    for (std::size_t k = 0; k < num_workers; ++k) out << ',' << format_number(k < r.gamma.size() ? r.gamma[k] : 0.0);
    out << '\n';
  }
}

std::vector<RoundMetrics> read_rounds_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseError::Kind::kTruncated, "metrics CSV is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 6 || header[0] != "round" || header[5] != "agg_wall_time_s") {
    throw ParseError(ParseError::Kind::kSyntax, "unexpected metrics CSV header", 1);
  }
  const std::size_t k = header.size() - 6;
  std::vector<RoundMetrics> rounds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(ParseError::Kind::kSyntax, "line " + std::to_string(line_no) + ": wrong column count", line_no);
    }
    RoundMetrics r;
    try {
      r.round = std::stoul(cells[0]);
      r.test_error = std::stod(cells[1]);
      r.all_acc = std::stod(cells[2]);
      r.src_acc = std::stod(cells[3]);
      r.asr = std::stod(cells[4]);
      r.agg_wall_time_s = std::stod(cells[5]);
      for (std::size_t i = 0; i < k; ++i) r.gamma.push_back(std::stod(cells[6 + i]));
    } catch (const std::exception&) {
      throw ParseError(ParseError::Kind::kType, "line " + std::to_string(line_no) + ": non-numeric cell", line_no);
    }
    rounds.push_back(std::move(r));
  }
  return rounds;
}

std::string summary_json(const ExperimentSummary& summary, std::size_t rounds) {
  nlohmann::ordered_json j;
  j["rounds"] = rounds;
  j["window"] = summary.window;
  j["test_error"] = rounded(summary.test_error);
  j["all_acc"] = rounded(summary.all_acc);
  j["src_acc"] = rounded(summary.src_acc);
  j["asr"] = rounded(summary.asr);
  j["agg_wall_time_s"] = rounded(summary.agg_wall_time_s);
  return j.dump(2) + "\n";
}

std::string manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["code_version"] = m.code_version;
  j["outputs"] = nlohmann::json::array();
  for (const auto& p : m.outputs) j["outputs"].push_back(p.string());
  return j.dump(2) + "\n";
}

void preflight_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".fsl_write_probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    if (!out) throw IoError("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

MetricsPaths write_metrics(const std::filesystem::path& dir, const std::string& prefix,
                           std::span<const RoundMetrics> rounds, const ExperimentSummary& summary,
                           std::size_t num_workers, bool record_timing) {
  if (rounds.empty()) throw InputError("no rounds to write");
  preflight_output_dir(dir);
  MetricsPaths paths{dir / (prefix + "_rounds.csv"), dir / (prefix + "_summary.json")};

  auto csv = open_for_write(paths.rounds_csv);
  write_rounds_csv(csv, rounds, num_workers, record_timing);

  ExperimentSummary s = summary;
  if (!record_timing) s.agg_wall_time_s = 0.0;
  auto json = open_for_write(paths.summary_json);
  json << summary_json(s, rounds.size());
  if (!csv || !json) throw IoError("write failed in " + dir.string());
  return paths;
}

}  // namespace fsl
