#pragma once

// Experiment configuration files: flat key = value pairs grouped into
// [federation], [model], [data], [attack], [attack.trigger], [defense] and
// [output] sections. '#' starts a comment. Unknown sections or keys,
// duplicate keys and malformed values are ParseErrors naming the line.

#include <filesystem>
#include <string>
#include <vector>

#include "fsl/diagnostics.hpp"
#include "fsl/sim.hpp"

namespace fsl {

struct OutputConfig {
  std::filesystem::path dir = "results";
  std::string prefix = "run";
  bool record_timing = true;  // false writes 0 in agg_wall_time_s for byte-stable files
  bool diagnostics = false;
  std::size_t diagnostics_round = 0;
  std::vector<FeatureMode> diagnostics_modes = {FeatureMode::kAll, FeatureMode::kLast, FeatureMode::kLastPca,
                                                FeatureMode::kEngineered};
};

struct RunConfig {
  ExperimentConfig experiment;
  OutputConfig output;
  std::string canonical;  // sorted section.key=value lines, one per entry
};

RunConfig parse_config(const std::filesystem::path& path);

// Relative paths in `text` resolve against `base_dir`.
RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = ".");

// Markdown page listing every section, key, type, default and meaning.
std::string config_reference();

}  // namespace fsl
