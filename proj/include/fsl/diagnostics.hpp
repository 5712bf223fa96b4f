#pragma once

// Feature studies over a round's worker updates: each pipeline maps every
// worker to a (magnitude, angle-to-centroid) pair so the separation between
// honest and poisoned updates can be inspected or plotted.

#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fsl/aggregation.hpp"

namespace fsl {

enum class FeatureMode {
  kAll,         // PCA2 of the full pseudo-gradients
  kLast,        // raw last-layer pseudo-gradients
  kLastPca,     // PCA2 of the last-layer pseudo-gradients
  kEngineered,  // cosine matrix of last-layer pseudo-gradients, then PCA2
};

std::string to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& text);

struct WorkerFeature {
  std::size_t worker_id = 0;
  bool is_attacker = false;
  double magnitude = 0.0;
  double angle_deg = 0.0;
};

struct FeatureReport {
  FeatureMode mode = FeatureMode::kEngineered;
  std::vector<WorkerFeature> workers;
  Matrix features;                        // the featured vector of each worker, one per row
  std::vector<double> centroid;
  std::optional<double> separation_margin;  // min attacker angle - max honest angle
};

// Angle in degrees in [0, 180]; 0 when either vector has zero norm.
double angle_degrees(std::span<const double> a, std::span<const double> b);

// Runs `mode` on per-worker gradient vectors: full pseudo-gradients for kAll,
// last-layer ones otherwise.
FeatureReport analyze_gradients(FeatureMode mode, std::span<const std::vector<double>> gradients,
                                std::span<const std::size_t> worker_ids,
                                const std::optional<std::set<std::size_t>>& attackers = std::nullopt);

FeatureReport feature_pipeline(std::span<const WorkerUpdate> updates, const ParameterSet& global, FeatureMode mode,
                               const std::optional<std::set<std::size_t>>& attackers = std::nullopt);

// Plot-ready CSV: mode,worker_id,is_attacker,magnitude,angle_deg
void write_feature_csv(std::ostream& out, std::span<const FeatureReport> reports);

}  // namespace fsl
