// Depth to seven-level building functionality states (lognormal exceedance
// curves per archetype) and aggregation to zone functionality loss.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/matrix.hpp"
#include "craf/worldgen.hpp"

namespace craf::fragility {

inline constexpr int kStateCount = 7;  // functionality states I..VII
inline constexpr int kCapacityCount = 6;  // medians for states II..VII

struct FragilityParams {
  // capacity medians mu_2..mu_7 in meters, strictly increasing, per archetype
  std::array<std::array<double, kCapacityCount>, worldgen::kArchetypeCount> median_m{};
  double beta = 0.4;  // shared lognormal dispersion

  static FragilityParams defaults() {
    FragilityParams p;
    const double mu2[worldgen::kArchetypeCount] = {0.4, 0.3, 0.25, 0.2};
    for (int a = 0; a < worldgen::kArchetypeCount; ++a) {
      double m = mu2[a];
      for (int k = 0; k < kCapacityCount; ++k) {
        p.median_m[a][k] = m;
        m *= 1.6;
      }
    }
    return p;
  }

  void validate() const {
    if (beta <= 0.0) throw std::invalid_argument("fragility: beta must be > 0");
    for (int a = 0; a < worldgen::kArchetypeCount; ++a) {
      double prev = 0.0;
      for (int k = 0; k < kCapacityCount; ++k) {
        if (median_m[a][k] <= prev)
          throw std::invalid_argument("fragility: medians must be strictly increasing");
        prev = median_m[a][k];
      }
    }
  }
};

using BuildingStateProbs = std::array<double, kStateCount>;

struct ZflSnapshot {
  std::vector<double> z;  // length M, zone functionality loss in [0,1]
  int t = 0;              // hours
};

struct ZflTrajectory {
  Matrix z;  // T x M
  std::string scenario_id;
  int hours() const { return static_cast<int>(z.rows()); }
  int zones() const { return static_cast<int>(z.cols()); }
  ZflSnapshot snapshot(int hour) const {
    ZflSnapshot s;
    s.t = hour;
    s.z.resize(z.cols());
    for (std::size_t m = 0; m < z.cols(); ++m) s.z[m] = z(hour, m);
    return s;
  }
};

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// exceedance G_k(d) = Phi((ln d - ln mu_k)/beta), zero at d = 0
inline double exceedance(double depth_m, double median_m, double beta) {
  if (depth_m <= 0.0) return 0.0;
  return std_normal_cdf((std::log(depth_m) - std::log(median_m)) / beta);
}

inline BuildingStateProbs depth_to_state_probs(double depth_m, int archetype,
                                               const FragilityParams& params) {
  if (depth_m < 0.0) throw std::invalid_argument("depth_to_state_probs: negative depth");
  if (archetype < 0 || archetype >= worldgen::kArchetypeCount)
    throw std::invalid_argument("depth_to_state_probs: archetype " + std::to_string(archetype));

  std::array<double, kCapacityCount> g;
  for (int k = 0; k < kCapacityCount; ++k)
    g[k] = exceedance(depth_m, params.median_m[archetype][k], params.beta);

  BuildingStateProbs p;
  p[0] = 1.0 - g[0];                                  // state I
  for (int k = 1; k < kCapacityCount; ++k) p[k] = g[k - 1] - g[k];  // states II..VI
  p[kStateCount - 1] = g[kCapacityCount - 1];         // state VII
  return p;
}

// probability of the non-functional set L = {III..VII}; equals G_3 by construction
inline double nonfunctional_prob(const BuildingStateProbs& probs) {
  double s = 0.0;
  for (int k = 2; k < kStateCount; ++k) s += probs[k];
  return s;
}

inline double zone_nonfunctional(double depth_m, int archetype, const FragilityParams& params) {
  return nonfunctional_prob(depth_to_state_probs(depth_m, archetype, params));
}

// z_m = mean over the zone's buildings of their non-functional probability (Eq. 1)
inline double aggregate_zfl(const std::vector<double>& building_nonfunctional) {
  if (building_nonfunctional.empty())
    throw std::invalid_argument("aggregate_zfl: empty zone");
  double s = 0.0;
  for (double v : building_nonfunctional) s += v;
  return s / static_cast<double>(building_nonfunctional.size());
}

// hourly building-level depths -> zone functionality loss series
inline ZflTrajectory trajectory_from_depths(const worldgen::CityModel& city,
                                            const worldgen::DepthField& depths,
                                            const FragilityParams& params,
                                            std::string scenario_id = "") {
  ZflTrajectory traj;
  traj.scenario_id = std::move(scenario_id);
  traj.z = Matrix(depths.hours, city.zone_count);

  const std::vector<int> sizes = city.zone_sizes();
  for (int h = 0; h < depths.hours; ++h) {
    for (const worldgen::Building& b : city.buildings) {
      if (!city.in_grid(b.cell.row, b.cell.col))
        throw std::invalid_argument("trajectory_from_depths: building cell outside grid");
      const double d = depths.at(h, city.idx(b.cell.row, b.cell.col));
      traj.z(h, b.zone - 1) += zone_nonfunctional(d, b.archetype, params);
    }
    for (int m = 0; m < city.zone_count; ++m) traj.z(h, m) /= sizes[m];
  }
  return traj;
}

}  // namespace craf::fragility
