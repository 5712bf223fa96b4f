#pragma once

// Independent reference implementations the library is checked against.
// Deliberately naive: plain loops, full sorts, brute-force enumeration and
// Eigen's dense solvers.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "fsl/aggregation.hpp"
#include "fsl/nn.hpp"

namespace oracle {

inline std::vector<std::vector<double>> flats(std::span<const fsl::WorkerUpdate> updates) {
  std::vector<std::vector<double>> out;
  for (const auto& u : updates) out.push_back(u.params.flatten());
  return out;
}

inline std::vector<double> coordinate_median(std::span<const fsl::WorkerUpdate> updates) {
  const auto f = flats(updates);
  std::vector<double> out(f[0].size());
  for (std::size_t d = 0; d < out.size(); ++d) {
    std::vector<double> col;
    for (const auto& v : f) col.push_back(v[d]);
    std::sort(col.begin(), col.end());
    const std::size_t m = col.size();
    out[d] = m % 2 == 1 ? col[m / 2] : (col[m / 2 - 1] + col[m / 2]) / 2.0;
  }
  return out;
}

inline std::vector<double> trimmed_mean(std::span<const fsl::WorkerUpdate> updates, double beta) {
  const auto f = flats(updates);
  const std::size_t m = f.size();
  const auto t = static_cast<std::size_t>(std::floor(beta * static_cast<double>(m)));
  std::vector<double> out(f[0].size());
  for (std::size_t d = 0; d < out.size(); ++d) {
    std::vector<double> col;
    for (const auto& v : f) col.push_back(v[d]);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (std::size_t i = t; i < m - t; ++i) s += col[i];
    out[d] = s / static_cast<double>(m - 2 * t);
  }
  return out;
}

struct Krum {
  std::vector<double> scores;
  std::vector<std::size_t> selected;
  std::vector<double> params;
};

// Score = the smallest sum of squared distances to any (m - f - 2) other
// updates, found by enumerating every subset.
inline Krum krum_exhaustive(std::span<const fsl::WorkerUpdate> updates, std::size_t f, std::size_t n_select) {
  const auto v = flats(updates);
  const std::size_t m = v.size();
  const std::size_t k = m - f - 2;
  auto sq = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t d = 0; d < v[a].size(); ++d) s += (v[a][d] - v[b][d]) * (v[a][d] - v[b][d]);
    return s;
  };
  Krum out;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) others.push_back(j);
    }
    double best = INFINITY;
    for (unsigned mask = 0; mask < (1u << others.size()); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
      std::vector<double> parts;
      for (std::size_t b = 0; b < others.size(); ++b) {
        if (mask & (1u << b)) parts.push_back(sq(i, others[b]));
      }
      std::sort(parts.begin(), parts.end());  // same summation order as a sorted scan
      double s = 0.0;
      for (double p : parts) s += p;
      best = std::min(best, s);
    }
    out.scores.push_back(best);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.scores[a] != out.scores[b] ? out.scores[a] < out.scores[b] : a < b;
  });
  out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_select));
  auto chosen = out.selected;
  std::sort(chosen.begin(), chosen.end());
  out.params.assign(v[0].size(), 0.0);
  for (std::size_t c : chosen) {
    for (std::size_t d = 0; d < out.params.size(); ++d) out.params[d] += v[c][d];
  }
  for (auto& x : out.params) x /= static_cast<double>(n_select);
  return out;
}

inline Eigen::MatrixXd to_eigen(const fsl::Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  }
  return e;
}

// Projections of the centered rows onto the top-2 covariance eigenvectors.
inline Eigen::MatrixXd pca2_scores(const fsl::Matrix& rows) {
  const Eigen::MatrixXd x = to_eigen(rows);
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto n = cov.cols();
  Eigen::MatrixXd v(n, 2);
  v.col(0) = es.eigenvectors().col(n - 1);
  v.col(1) = es.eigenvectors().col(n - 2);
  return c * v;
}

// Largest principal angle (radians) between the column spans of a and b.
inline double principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                             Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ() *
                             Eigen::MatrixXd::Identity(b.rows(), b.cols());
  const Eigen::MatrixXd residual = qb - qa * (qa.transpose() * qb);
  const double s = Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues()(0);
  return std::asin(std::min(1.0, s));
}

// Max relative error between the analytic mean-loss gradient and central
// finite differences over every parameter. Relative error is
// |a - n| / max(|a|, |n|, floor). The floor sits well above the rounding
// noise of the difference quotient, about 1e-16 * loss / h.
inline double gradient_check(const fsl::ParameterSet& model, const fsl::Batch& batch, double h = 1e-5,
                             double floor = 1e-6) {
  const auto cache = fsl::forward(model, batch);
  const auto analytic = fsl::backward(model, cache, batch.labels).flatten();
  auto flat = model.flatten();
  fsl::ParameterSet probe = model;
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + h;
    probe.assign_flat(flat);
    const double up = fsl::mean_loss(probe, batch);
    flat[i] = keep - h;
    probe.assign_flat(flat);
    const double down = fsl::mean_loss(probe, batch);
    flat[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// Direct port of the reference FoolsGold weighting (Fung et al.), numpy
// semantics kept: log of 0 gives -inf which is clipped to 0. Sets
// *zero_division when pardoning divides by a zero max similarity, where the
// reference produces infinities the library guards against.
inline std::vector<double> foolsgold(const std::vector<std::vector<double>>& h, bool* zero_division = nullptr) {
  const std::size_t n = h.size();
  std::vector<std::vector<double>> cs(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t d = 0; d < h[i].size(); ++d) {
        ab += h[i][d] * h[j][d];
        aa += h[i][d] * h[i][d];
        bb += h[j][d] * h[j][d];
      }
      cs[i][j] = ab / (std::sqrt(aa) * std::sqrt(bb)) - (i == j ? 1.0 : 0.0);
    }
  }
  std::vector<double> maxcs(n);
  for (std::size_t i = 0; i < n; ++i) maxcs[i] = *std::max_element(cs[i].begin(), cs[i].end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && maxcs[i] < maxcs[j]) {
        if (maxcs[j] == 0.0 && zero_division) *zero_division = true;
        cs[i][j] = cs[i][j] * maxcs[i] / maxcs[j];
      }
    }
  }
  std::vector<double> wv(n);
  for (std::size_t i = 0; i < n; ++i) {
    wv[i] = std::clamp(1.0 - *std::max_element(cs[i].begin(), cs[i].end()), 0.0, 1.0);
  }
  const double top = *std::max_element(wv.begin(), wv.end());
  for (auto& w : wv) {
    w /= top;
    if (w == 1.0) w = 0.99;
    w = std::log(w / (1.0 - w)) + 0.5;
    if ((std::isinf(w) ? 1.0 : 0.0) + w > 1.0) w = 1.0;  // numpy: (isinf(wv) + wv) > 1
    if (w < 0.0) w = 0.0;
  }
  return wv;
}

inline fsl::ParameterSet random_model(std::mt19937_64& rng, std::size_t in, std::vector<std::size_t> hidden,
                                      std::size_t classes) {
  fsl::Architecture arch;
  arch.input_dim = in;
  arch.hidden = std::move(hidden);
  arch.num_classes = classes;
  return fsl::make_model(arch, rng());
}

inline fsl::Batch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  fsl::Batch b{fsl::Matrix(n, dim), {}};
  for (auto& x : b.inputs.data) x = u(rng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(label(rng));
  return b;
}

}  // namespace oracle
