// ERZ dependency graphs: absolute Pearson correlation, thresholded, with a
// top-k fallback so no node is left isolated; symmetric degree normalization.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "craf/fragility.hpp"
#include "craf/matrix.hpp"

namespace craf::graphs {

struct ErzGraph {
  Matrix adjacency;   // M x M, symmetric, zero diagonal, entries in [0,1]
  Matrix normalized;  // D^{-1/2} (A + I) D^{-1/2}
  double threshold = 0.0;
  int zones() const { return static_cast<int>(adjacency.rows()); }
};

inline Matrix normalize_adjacency(const Matrix& a) {
  const std::size_t m = a.rows();
  Matrix ai = a;
  for (std::size_t i = 0; i < m; ++i) ai(i, i) += 1.0;
  std::vector<double> dinv(m);
  for (std::size_t i = 0; i < m; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < m; ++j) d += ai(i, j);
    dinv[i] = 1.0 / std::sqrt(d);
  }
  Matrix out(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = dinv[i] * ai(i, j) * dinv[j];
  return out;
}

namespace detail {

// |Pearson correlation| per zone pair over samples (rows = samples, cols = zones);
// zero-variance columns correlate with nothing
inline Matrix abs_correlation(const Matrix& samples) {
  const std::size_t n = samples.rows(), m = samples.cols();
  std::vector<double> mean(m, 0.0), var(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) mean[j] += samples(i, j);
    mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = samples(i, j) - mean[j];
      var[j] += d * d;
    }
  }
  // columns constant up to rounding count as zero variance (corr 0, no edge)
  constexpr double kVarFloor = 1e-18;
  Matrix corr(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (var[i] <= kVarFloor || var[j] <= kVarFloor) continue;
      double cov = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        cov += (samples(s, i) - mean[i]) * (samples(s, j) - mean[j]);
      const double c = std::min(1.0, std::abs(cov) / std::sqrt(var[i] * var[j]));
      corr(i, j) = c;
      corr(j, i) = c;
    }
  }
  return corr;
}

inline ErzGraph threshold_graph(const Matrix& corr, double threshold, int top_k) {
  const std::size_t m = corr.rows();
  ErzGraph g;
  g.threshold = threshold;
  g.adjacency = Matrix(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j && corr(i, j) >= threshold) g.adjacency(i, j) = corr(i, j);

  // isolated nodes keep their top-k strongest correlations regardless
  for (std::size_t i = 0; i < m; ++i) {
    bool isolated = true;
    for (std::size_t j = 0; j < m; ++j)
      if (g.adjacency(i, j) > 0.0) {
        isolated = false;
        break;
      }
    if (!isolated) continue;
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i && corr(i, j) > 0.0) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (corr(i, a) != corr(i, b)) return corr(i, a) > corr(i, b);
      return a < b;
    });
    const std::size_t k = std::min<std::size_t>(top_k, order.size());
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = order[r];
      g.adjacency(i, j) = corr(i, j);
      g.adjacency(j, i) = corr(i, j);
    }
  }
  g.normalized = normalize_adjacency(g.adjacency);
  return g;
}

}  // namespace detail

inline constexpr int kIsolationTopK = 3;

// G1: inter-zone co-variation across individual snapshots
inline ErzGraph build_sa_graph(const std::vector<fragility::ZflSnapshot>& snapshots,
                               double threshold, int top_k = kIsolationTopK) {
  if (snapshots.size() < 2)
    throw std::invalid_argument("build_sa_graph: need at least 2 snapshots");
  const std::size_t m = snapshots.front().z.size();
  Matrix samples(snapshots.size(), m);
  for (std::size_t s = 0; s < snapshots.size(); ++s) {
    if (snapshots[s].z.size() != m)
      throw std::invalid_argument("build_sa_graph: inconsistent zone counts");
    for (std::size_t j = 0; j < m; ++j) samples(s, j) = snapshots[s].z[j];
  }
  return detail::threshold_graph(detail::abs_correlation(samples), threshold, top_k);
}

// G2: co-variation over all (scenario, hour) samples concatenated
inline ErzGraph build_stf_graph(const std::vector<fragility::ZflTrajectory>& trajectories,
                                double threshold, int top_k = kIsolationTopK) {
  if (trajectories.empty())
    throw std::invalid_argument("build_stf_graph: need at least 1 trajectory");
  const std::size_t m = trajectories.front().z.cols();
  std::size_t total = 0;
  for (const auto& t : trajectories) total += t.z.rows();
  Matrix samples(total, m);
  std::size_t row = 0;
  for (const auto& t : trajectories) {
    if (t.z.cols() != m)
      throw std::invalid_argument("build_stf_graph: inconsistent zone counts");
    for (std::size_t h = 0; h < t.z.rows(); ++h, ++row)
      for (std::size_t j = 0; j < m; ++j) samples(row, j) = t.z(h, j);
  }
  return detail::threshold_graph(detail::abs_correlation(samples), threshold, top_k);
}

inline int degree(const ErzGraph& g, int node) {
  int d = 0;
  for (std::size_t j = 0; j < g.adjacency.cols(); ++j)
    if (g.adjacency(node, j) > 0.0) ++d;
  return d;
}

}  // namespace craf::graphs
