#pragma once

// Server-side aggregation rules: FL-Defender and the baselines it is compared
// against, plus the numerics they share.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fsl/matrix.hpp"
#include "fsl/nn.hpp"

namespace fsl {

struct WorkerUpdate {
  std::size_t worker_id = 0;
  ParameterSet params;
  std::size_t num_samples = 0;
};

// Norms below this count as zero for cosine computations.
inline constexpr double kZeroNorm = 1e-12;

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// m x m matrix of pairwise cosines. Rows of zero-norm vectors are all zero,
// including the diagonal entry.
Matrix cosine_similarity_matrix(std::span<const std::vector<double>> grads);

struct CompressedFeatures {
  Matrix components;                 // m x 2 projections onto the top-2 principal axes
  std::array<double, 2> centroid{};  // filled by callers that need one
  std::array<double, 2> variances{}; // eigenvalues of the sample covariance
};

// Two-component PCA of the rows (observations) of `rows`. Columns are mean
// centered; each principal axis is oriented so that its largest-magnitude
// coordinate is positive. A second axis carrying less than 1e-12 of the first
// one's variance is dropped (zero column). Requires at least 3 rows.
CompressedFeatures pca2(const Matrix& rows);

// The FL-Defender front end: pairwise cosine of the last-layer
// pseudo-gradients, PCA2 of that matrix, component-wise median centroid.
CompressedFeatures engineered_features(std::span<const std::vector<double>> last_layer_grads);

// Component-wise median of an m x 2 matrix.
std::array<double, 2> centroid_median(const Matrix& pcs);

// Linear-interpolation sample quantile (Hyndman-Fan type 7).
double quantile_type7(std::vector<double> values, double q);

double median(std::vector<double> values);

struct TrustState {
  std::vector<double> history;     // H, accumulated centroid similarity per worker
  std::vector<double> gamma;       // normalized trust per worker
  std::vector<bool> ever_selected;
  std::size_t round = 0;
  bool last_fallback = false;      // the uniform fallback fired on the latest update

  TrustState() = default;
  explicit TrustState(std::size_t num_workers)
      : history(num_workers, 0.0), gamma(num_workers, 0.0), ever_selected(num_workers, false) {}

  std::size_t num_workers() const { return history.size(); }
};

// Shift by the first quartile of the ever-selected workers' history, clamp at
// zero and normalize by the maximum. Falls back to 1 for every selected worker
// when nothing is left above the quartile. Writes state.gamma and returns the
// entries for `selected`.
std::vector<double> trust_from_history(std::span<const std::size_t> selected, TrustState& state);

// One FL-Defender trust update from the compressed similarity vectors of the
// selected workers (row i of `pcs` belongs to selected[i]).
std::vector<double> fl_defender_trust(const Matrix& pcs, const std::array<double, 2>& centroid,
                                      std::span<const std::size_t> selected, TrustState& state);

// sum_k gamma_k W_k / sum_k gamma_k
ParameterSet aggregate_weighted(std::span<const WorkerUpdate> updates, std::span<const double> gamma);

ParameterSet fedavg(std::span<const WorkerUpdate> updates);
ParameterSet coordinate_median(std::span<const WorkerUpdate> updates);
ParameterSet trimmed_mean(std::span<const WorkerUpdate> updates, double beta = 0.2);

struct KrumResult {
  ParameterSet params;
  std::vector<double> scores;          // per input position
  std::vector<std::size_t> selected;   // input positions, ascending score
};

std::size_t default_krum_f(std::size_t m);

// f defaults to ceil(0.2 m); n_select defaults to m - f.
KrumResult multi_krum(std::span<const WorkerUpdate> updates, std::optional<std::size_t> f = std::nullopt,
                      std::optional<std::size_t> n_select = std::nullopt);

// FoolsGold learning-rate weights in [0, 1] from per-worker accumulated
// last-layer update histories.
std::vector<double> foolsgold(std::span<const std::vector<double>> histories);

}  // namespace fsl
