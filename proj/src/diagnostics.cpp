#include "fsl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fsl/errors.hpp"
#include "fsl/format.hpp"

namespace fsl {

namespace {

Matrix stack_rows(std::span<const std::vector<double>> vectors) {
  Matrix m(vectors.size(), vectors.front().size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != m.cols) throw InputError("gradients have different lengths");
    std::copy(vectors[i].begin(), vectors[i].end(), m.row(i).begin());
  }
  return m;
}

std::vector<double> columnwise_median(const Matrix& rows) {
  std::vector<double> out(rows.cols), column(rows.rows);
  for (std::size_t j = 0; j < rows.cols; ++j) {
    for (std::size_t i = 0; i < rows.rows; ++i) column[i] = rows(i, j);
    out[j] = median(column);
  }
  return out;
}

}  // namespace

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kAll: return "all";
    case FeatureMode::kLast: return "last";
    case FeatureMode::kLastPca: return "lastpca";
    case FeatureMode::kEngineered: return "engineered";
  }
  return "?";
}

FeatureMode parse_feature_mode(const std::string& text) {
  if (text == "all") return FeatureMode::kAll;
  if (text == "last") return FeatureMode::kLast;
  if (text == "lastpca") return FeatureMode::kLastPca;
  if (text == "engineered") return FeatureMode::kEngineered;
  throw ConfigError("unknown feature mode '" + text + "' (all, last, lastpca, engineered)");
}

double angle_degrees(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("angle between vectors of different lengths");
  const double na = norm2(a), nb = norm2(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  // 2 atan2(|u - v|, |u + v|) on unit vectors: exact 0 for parallel inputs
  // and no acos cancellation near 0 or 180 degrees.
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = a[i] / na, v = b[i] / nb;
    diff += (u - v) * (u - v);
    sum += (u + v) * (u + v);
  }
  const double radians = 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
  return std::clamp(radians * 180.0 / std::numbers::pi, 0.0, 180.0);
}

FeatureReport analyze_gradients(FeatureMode mode, std::span<const std::vector<double>> gradients,
                                std::span<const std::size_t> worker_ids,
                                const std::optional<std::set<std::size_t>>& attackers) {
  if (gradients.size() < 3) throw InputError("feature analysis needs at least 3 updates");
  if (worker_ids.size() != gradients.size()) throw InputError("one worker id per gradient required");

  FeatureReport report;
  report.mode = mode;
  switch (mode) {
    case FeatureMode::kLast:
      report.features = stack_rows(gradients);
      report.centroid = columnwise_median(report.features);
      break;
    case FeatureMode::kAll:
    case FeatureMode::kLastPca: {
      CompressedFeatures pcs = pca2(stack_rows(gradients));
      const auto c = centroid_median(pcs.components);
      report.features = std::move(pcs.components);
      report.centroid = {c[0], c[1]};
      break;
    }
    case FeatureMode::kEngineered: {
      CompressedFeatures pcs = engineered_features(gradients);
      report.features = std::move(pcs.components);
      report.centroid = {pcs.centroid[0], pcs.centroid[1]};
      break;
    }
  }

  double min_attacker = std::numeric_limits<double>::infinity();
  double max_honest = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    WorkerFeature w;
    w.worker_id = worker_ids[i];
    w.is_attacker = attackers && attackers->contains(worker_ids[i]);
    w.magnitude = norm2(report.features.row(i));
    w.angle_deg = angle_degrees(report.features.row(i), report.centroid);
    if (w.is_attacker) {
      min_attacker = std::min(min_attacker, w.angle_deg);
    } else {
      max_honest = std::max(max_honest, w.angle_deg);
    }
    report.workers.push_back(w);
  }
  // Reported only when ground truth names both groups.
  if (attackers && std::isfinite(min_attacker) && std::isfinite(max_honest)) {
    report.separation_margin = min_attacker - max_honest;
  }
  return report;
}

FeatureReport feature_pipeline(std::span<const WorkerUpdate> updates, const ParameterSet& global, FeatureMode mode,
                               const std::optional<std::set<std::size_t>>& attackers) {
  if (updates.size() < 3) throw InputError("feature analysis needs at least 3 updates");
  std::vector<std::vector<double>> grads;
  std::vector<std::size_t> ids;
  const std::vector<double> global_flat = mode == FeatureMode::kAll ? global.flatten() : std::vector<double>{};
  for (const auto& u : updates) {
    ids.push_back(u.worker_id);
    if (mode == FeatureMode::kAll) {
      if (!u.params.same_architecture(global)) throw InputError("update architecture differs from the global model");
      auto local = u.params.flatten();
      for (std::size_t i = 0; i < local.size(); ++i) local[i] = global_flat[i] - local[i];
      grads.push_back(std::move(local));
    } else {
      grads.push_back(last_layer_pseudo_gradient(global, u.params));
    }
  }
  return analyze_gradients(mode, grads, ids, attackers);
}

void write_feature_csv(std::ostream& out, std::span<const FeatureReport> reports) {
  out << "mode,worker_id,is_attacker,magnitude,angle_deg\n";
  for (const auto& r : reports) {
    for (const auto& w : r.workers) {
      out << to_string(r.mode) << ',' << w.worker_id << ',' << (w.is_attacker ? 1 : 0) << ','
          << format_number(w.magnitude) << ',' << format_number(w.angle_deg) << '\n';
    }
  }
}

}  // namespace fsl
