#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fsl/cli.hpp"

namespace fs = std::filesystem;

namespace {

int cli(const std::vector<std::string>& args) { return fsl::cli_main(args); }

const fs::path kConfig = fs::path(FSL_SOURCE_DIR) / "configs" / "synth_quick.cfg";

fs::path scratch(const std::string& name) {
  auto dir = fs::path(FSL_BINARY_DIR) / "test_scratch" / ("cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}) == 1);
  CHECK(cli({"run"}) == 1);
  CHECK(cli({"run", "--config", kConfig.string(), "--bogus"}) == 1);
  CHECK(cli({"frobnicate"}) == 1);
  CHECK(cli({"--help"}) == 0);
}

TEST_CASE("bad configs exit 1") {
  const auto dir = scratch("bad");
  fs::create_directories(dir);
  const auto cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "[federation]\nworkers = 4\nworkers = 5\n";
  CHECK(cli({"run", "--config", cfg.string()}) == 1);
  CHECK(cli({"run", "--config", (dir / "missing.cfg").string()}) == 1);
  CHECK(cli({"diagnose", "--config", kConfig.string(), "--mode", "nonsense"}) == 1);
  CHECK(cli({"sweep", "--config", kConfig.string(), "--defenses", "krum"}) == 1);
}

TEST_CASE("run writes metrics, features and a manifest") {
  const auto dir = scratch("run");
  REQUIRE(cli({"run", "--config", kConfig.string(), "--out", dir.string()}) == 0);
  CHECK(line_count(dir / "synth_quick_rounds.csv") == 21);
  CHECK(fs::exists(dir / "synth_quick_summary.json"));
  CHECK(fs::exists(dir / "synth_quick_manifest.json"));
  // Four modes times ten workers plus a header.
  CHECK(line_count(dir / "synth_quick_features.csv") == 41);
  const auto manifest = slurp(dir / "synth_quick_manifest.json");
  CHECK(manifest.find("\"seed\": 7") != std::string::npos);

  const auto other = scratch("run_seed");
  REQUIRE(cli({"run", "--config", kConfig.string(), "--out", other.string(), "--seed", "8"}) == 0);
  CHECK(slurp(dir / "synth_quick_rounds.csv") != slurp(other / "synth_quick_rounds.csv"));
}

TEST_CASE("sweep writes one metrics set per defense and a comparison table") {
  const auto dir = scratch("sweep");
  REQUIRE(cli({"sweep", "--config", kConfig.string(), "--out", dir.string()}) == 0);
  for (const char* d : {"fedavg", "median", "tmean", "mkrum", "fgold", "fl_defender"}) {
    CHECK(fs::exists(dir / ("synth_quick_" + std::string(d) + "_rounds.csv")));
    CHECK(fs::exists(dir / ("synth_quick_" + std::string(d) + "_summary.json")));
  }
  const auto table = slurp(dir / "synth_quick_comparison.csv");
  CHECK(table.rfind("defense,test_error,all_acc,src_acc,asr,agg_wall_time_s\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);
}

TEST_CASE("diagnose writes the requested modes at one round") {
  const auto dir = scratch("diagnose");
  REQUIRE(cli({"diagnose", "--config", kConfig.string(), "--mode", "last,engineered", "--round", "3",
               "--out", dir.string()}) == 0);
  const auto path = dir / "synth_quick_features_r3.csv";
  CHECK(line_count(path) == 21);
  CHECK(slurp(path).find("engineered,") != std::string::npos);
  CHECK(cli({"diagnose", "--config", kConfig.string(), "--round", "20"}) == 1);
}

TEST_CASE("reference prints and exits 0") {
  CHECK(cli({"reference"}) == 0);
}
