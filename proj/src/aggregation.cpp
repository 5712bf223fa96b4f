#include "fsl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fsl/errors.hpp"

namespace fsl {

namespace {

constexpr int kJacobiMaxSweeps = 100;
constexpr double kSecondComponentRatio = 1e-12;
constexpr double kFoolsGoldEps = 1e-5;

struct Eigen2 {
  std::array<double, 2> values{};
  std::array<std::vector<double>, 2> vectors;
};

// Cyclic Jacobi rotations on a symmetric matrix (overwritten). Returns the
// two largest eigenpairs; ties keep the lower original index first.
Eigen2 top2_symmetric(Matrix a) {
  const std::size_t n = a.rows;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.data) total += x * x;
  auto off_diagonal = [&a, n] {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    }
    return s;
  };

  const double stop = total * 1e-28;
  int sweep = 0;
  for (; sweep < kJacobiMaxSweeps; ++sweep) {
    if (off_diagonal() <= stop) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == kJacobiMaxSweeps && off_diagonal() > stop) {
    const double residual = std::sqrt(off_diagonal());
    throw NumericError("pca2: eigen-decomposition did not converge (off-diagonal norm " +
                           std::to_string(residual) + ")",
                       residual);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&a](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  Eigen2 out;
  for (std::size_t k = 0; k < 2; ++k) {
    if (k >= n) {
      out.vectors[k].assign(n, 0.0);
      continue;
    }
    out.values[k] = std::max(0.0, a(order[k], order[k]));
    out.vectors[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) out.vectors[k][i] = v(i, order[k]);
  }
  return out;
}

void orient(std::vector<double>& axis) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < axis.size(); ++i) {
    if (std::fabs(axis[i]) > std::fabs(axis[best])) best = i;
  }
  if (axis[best] < 0.0) {
    for (auto& x : axis) x = -x;
  }
}

void normalize(std::vector<double>& v) {
  const double n = norm2(v);
  if (n > 0.0) {
    for (auto& x : v) x /= n;
  }
}

std::vector<std::vector<double>> flat_views(std::span<const WorkerUpdate> updates) {
  if (updates.empty()) throw InputError("no updates to aggregate");
  std::vector<std::vector<double>> flats;
  flats.reserve(updates.size());
  for (const auto& u : updates) {
    if (!u.params.same_architecture(updates.front().params)) {
      throw InputError("worker " + std::to_string(u.worker_id) + " sent a model with a different architecture");
    }
    flats.push_back(u.params.flatten());
  }
  return flats;
}

template <typename Reduce>
ParameterSet coordinatewise(std::span<const WorkerUpdate> updates, Reduce reduce) {
  const auto flats = flat_views(updates);
  const std::size_t dim = flats.front().size();
  std::vector<double> out(dim), column(flats.size());
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t k = 0; k < flats.size(); ++k) column[k] = flats[k][i];
    out[i] = reduce(column);
  }
  return ParameterSet::unflatten(updates.front().params, out);
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine of vectors with different lengths");
  const double na = norm2(a), nb = norm2(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Matrix cosine_similarity_matrix(std::span<const std::vector<double>> grads) {
  const std::size_t m = grads.size();
  for (const auto& g : grads) {
    if (g.size() != grads.front().size()) throw InputError("gradients have different lengths");
  }
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) norms[i] = norm2(grads[i]);

  Matrix cs(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    if (norms[i] < kZeroNorm) continue;
    cs(i, i) = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      if (norms[j] < kZeroNorm) continue;
      const double c = std::clamp(dot(grads[i], grads[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      cs(i, j) = c;
      cs(j, i) = c;
    }
  }
  return cs;
}

CompressedFeatures pca2(const Matrix& rows) {
  const std::size_t m = rows.rows, n = rows.cols;
  if (m < 3) throw InputError("pca2 needs at least 3 rows, got " + std::to_string(m));
  if (n == 0) throw InputError("pca2 of zero-width rows");

  // Mean as offset from the first row, so identical rows center to exact zeros.
  Matrix centered = rows;
  double scale = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double shift = 0.0;
    for (std::size_t i = 0; i < m; ++i) shift += rows(i, j) - rows(0, j);
    const double mean = rows(0, j) + shift / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      centered(i, j) = rows(i, j) - mean;
      scale = std::max(scale, std::fabs(rows(i, j)));
    }
  }

  const double denom = static_cast<double>(m - 1);
  std::array<std::vector<double>, 2> axes;
  std::array<double, 2> variances{};
  if (n <= m) {
    Matrix cov(n, n);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += centered(i, a) * centered(i, b);
        cov(a, b) = cov(b, a) = s / denom;
      }
    }
    const Eigen2 eig = top2_symmetric(std::move(cov));
    axes = eig.vectors;
    variances = eig.values;
  } else {
    // Wide data: diagonalize the m x m Gram matrix and map back to feature space.
    Matrix gram(m, m);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a; b < m; ++b) {
        gram(a, b) = gram(b, a) = dot(centered.row(a), centered.row(b)) / denom;
      }
    }
    const Eigen2 eig = top2_symmetric(std::move(gram));
    variances = eig.values;
    for (std::size_t k = 0; k < 2; ++k) {
      axes[k].assign(n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double u = eig.vectors[k][i];
        const auto x = centered.row(i);
        for (std::size_t j = 0; j < n; ++j) axes[k][j] += u * x[j];
      }
      normalize(axes[k]);
    }
  }

  CompressedFeatures out;
  out.components = Matrix(m, 2);
  const bool degenerate = !(variances[0] > 1e-30 * std::max(scale * scale, 1e-300));
  if (degenerate) return out;

  for (std::size_t k = 0; k < 2; ++k) {
    if (k == 1 && variances[1] < kSecondComponentRatio * variances[0]) {
      variances[1] = 0.0;
      break;
    }
    orient(axes[k]);
    out.variances[k] = variances[k];
    for (std::size_t i = 0; i < m; ++i) out.components(i, k) = dot(centered.row(i), axes[k]);
  }
  return out;
}

CompressedFeatures engineered_features(std::span<const std::vector<double>> last_layer_grads) {
  CompressedFeatures features = pca2(cosine_similarity_matrix(last_layer_grads));
  features.centroid = centroid_median(features.components);
  return features;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / 2.0;
}

std::array<double, 2> centroid_median(const Matrix& pcs) {
  if (pcs.rows == 0 || pcs.cols != 2) throw InputError("centroid_median expects a non-empty m x 2 matrix");
  std::vector<double> first(pcs.rows), second(pcs.rows);
  for (std::size_t i = 0; i < pcs.rows; ++i) {
    first[i] = pcs(i, 0);
    second[i] = pcs(i, 1);
  }
  return {median(std::move(first)), median(std::move(second))};
}

double quantile_type7(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> trust_from_history(std::span<const std::size_t> selected, TrustState& state) {
  const std::size_t k = state.num_workers();
  std::vector<double> population;
  for (std::size_t w = 0; w < k; ++w) {
    if (state.ever_selected[w]) population.push_back(state.history[w]);
  }
  if (population.empty()) throw InputError("trust update without any selected worker");
  const double q1 = quantile_type7(std::move(population), 0.25);

  double max = 0.0;
  for (std::size_t w = 0; w < k; ++w) {
    state.gamma[w] = state.ever_selected[w] ? std::max(state.history[w] - q1, 0.0) : 0.0;
    max = std::max(max, state.gamma[w]);
  }
  state.last_fallback = !(max > 0.0);
  if (state.last_fallback) {
    std::fill(state.gamma.begin(), state.gamma.end(), 0.0);
    for (std::size_t id : selected) state.gamma[id] = 1.0;
  } else {
    for (auto& g : state.gamma) g /= max;
  }

  std::vector<double> out;
  out.reserve(selected.size());
  for (std::size_t id : selected) out.push_back(state.gamma[id]);
  return out;
}

std::vector<double> fl_defender_trust(const Matrix& pcs, const std::array<double, 2>& centroid,
                                      std::span<const std::size_t> selected, TrustState& state) {
  if (pcs.cols != 2 || pcs.rows != selected.size()) {
    throw InputError("fl_defender_trust: need one PC pair per selected worker");
  }
  if (selected.size() > state.num_workers()) throw InputError("more selected workers than the trust state holds");
  std::vector<bool> seen(state.num_workers(), false);
  for (std::size_t id : selected) {
    if (id >= state.num_workers() || seen[id]) throw InputError("invalid or repeated selected worker id");
    seen[id] = true;
  }

  for (std::size_t i = 0; i < selected.size(); ++i) {
    const double cs = cosine_similarity(pcs.row(i), centroid);
    state.history[selected[i]] += cs;
    state.ever_selected[selected[i]] = true;
  }
  ++state.round;
  return trust_from_history(selected, state);
}

ParameterSet aggregate_weighted(std::span<const WorkerUpdate> updates, std::span<const double> gamma) {
  if (gamma.size() != updates.size()) throw InputError("one weight per update required");
  double total = 0.0;
  for (double g : gamma) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw InputError("aggregation weights must be finite and >= 0");
    total += g;
  }
  if (!(total > 0.0)) throw InternalError("aggregation reached with all-zero weights");

  const auto flats = flat_views(updates);
  std::vector<double> out(flats.front().size(), 0.0);
  for (std::size_t k = 0; k < flats.size(); ++k) {
    const double w = gamma[k] / total;
    if (w == 0.0) continue;
    const auto& f = flats[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * f[i];
  }
  return ParameterSet::unflatten(updates.front().params, out);
}

ParameterSet fedavg(std::span<const WorkerUpdate> updates) {
  std::vector<double> weights;
  weights.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.num_samples == 0) throw InputError("worker " + std::to_string(u.worker_id) + " reported zero samples");
    weights.push_back(static_cast<double>(u.num_samples));
  }
  return aggregate_weighted(updates, weights);
}

ParameterSet coordinate_median(std::span<const WorkerUpdate> updates) {
  return coordinatewise(updates, [](std::vector<double>& column) { return median(column); });
}

ParameterSet trimmed_mean(std::span<const WorkerUpdate> updates, double beta) {
  const std::size_t m = updates.size();
  if (!(beta >= 0.0 && beta < 0.5)) throw InputError("trimmed_mean: beta must lie in [0, 0.5)");
  const auto trim = static_cast<std::size_t>(std::floor(beta * static_cast<double>(m)));
  if (m <= 2 * trim) {
    throw InputError("trimmed_mean: trimming " + std::to_string(trim) + " from each end of " + std::to_string(m) +
                     " values leaves nothing");
  }
  return coordinatewise(updates, [trim](std::vector<double>& column) {
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (std::size_t i = trim; i < column.size() - trim; ++i) sum += column[i];
    return sum / static_cast<double>(column.size() - 2 * trim);
  });
}

std::size_t default_krum_f(std::size_t m) {
  return static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(m) - 1e-9));
}

KrumResult multi_krum(std::span<const WorkerUpdate> updates, std::optional<std::size_t> f_opt,
                      std::optional<std::size_t> n_select_opt) {
  const std::size_t m = updates.size();
  const std::size_t f = f_opt.value_or(default_krum_f(m));
  if (m < f + 3) {
    throw InputError("multi_krum needs m >= f + 3 (m = " + std::to_string(m) + ", f = " + std::to_string(f) + ")");
  }
  const std::size_t n_select = n_select_opt.value_or(m - f);
  if (n_select == 0 || n_select > m) throw InputError("multi_krum: n_select must lie in [1, m]");

  const auto flats = flat_views(updates);
  Matrix dist(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      const auto& a = flats[i];
      const auto& b = flats[j];
      for (std::size_t d = 0; d < a.size(); ++d) {
        const double diff = a[d] - b[d];
        s += diff * diff;
      }
      dist(i, j) = dist(j, i) = s;
    }
  }

  const std::size_t neighbours = m - f - 2;
  KrumResult result;
  result.scores.resize(m);
  std::vector<double> others;
  for (std::size_t i = 0; i < m; ++i) {
    others.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) others.push_back(dist(i, j));
    }
    std::sort(others.begin(), others.end());
    double s = 0.0;
    for (std::size_t k = 0; k < neighbours; ++k) s += others[k];
    result.scores[i] = s;
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&result](std::size_t a, std::size_t b) { return result.scores[a] < result.scores[b]; });
  result.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_select));

  std::vector<std::size_t> chosen = result.selected;
  std::sort(chosen.begin(), chosen.end());
  std::vector<double> out(flats.front().size(), 0.0);
  for (std::size_t k : chosen) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += flats[k][d];
  }
  for (auto& x : out) x /= static_cast<double>(n_select);
  result.params = ParameterSet::unflatten(updates.front().params, out);
  return result;
}

std::vector<double> foolsgold(std::span<const std::vector<double>> histories) {
  const std::size_t n = histories.size();
  if (n == 0) throw InputError("foolsgold of zero histories");
  if (n == 1) return {1.0};

  Matrix cs = cosine_similarity_matrix(histories);
  for (std::size_t i = 0; i < n; ++i) cs(i, i) -= 1.0;

  std::vector<double> max_cs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = cs.row(i);
    max_cs[i] = *std::max_element(r.begin(), r.end());
  }

  // Pardoning: damp similarity to a worker that is itself more similar to someone else.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !(max_cs[i] < max_cs[j]) || max_cs[j] == 0.0) continue;
      cs(i, j) *= max_cs[i] / max_cs[j];
    }
  }

  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = cs.row(i);
    w[i] = std::clamp(1.0 - *std::max_element(r.begin(), r.end()), 0.0, 1.0);
  }
  const double top = *std::max_element(w.begin(), w.end());
  if (!(top > 0.0)) return std::vector<double>(n, 0.0);

  for (auto& x : w) {
    const double scaled = std::clamp(x / top, kFoolsGoldEps, 1.0 - kFoolsGoldEps);
    x = std::clamp(std::log(scaled / (1.0 - scaled)) + 0.5, 0.0, 1.0);
  }
  return w;
}

}  // namespace fsl
