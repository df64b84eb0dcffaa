// Seeded synthetic city, design-storm ensemble, and a mass-conserving
// cellular-automaton flood simulator that supplies supervisory depth fields.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/matrix.hpp"
#include "craf/rng.hpp"

namespace craf::worldgen {

struct Cell {
  int row = 0;
  int col = 0;
};

struct Building {
  Cell cell;
  int archetype = 0;  // 0 high-rise, 1 multi-story, 2 detached villa, 3 overlay villa
  int zone = 0;       // 1-based ERZ id
};

inline constexpr int kArchetypeCount = 4;

// Zone ids are 1-based everywhere; matrix row m-1 holds zone m.
struct CityModel {
  int rows = 0;
  int cols = 0;
  double cell_m = 10.0;
  int zone_count = 0;
  std::vector<double> elevation;       // rows*cols, meters
  std::vector<std::uint8_t> river;     // rows*cols, 0/1
  std::vector<double> drain_mm_h;      // rows*cols, per-cell drainage capacity
  std::vector<Cell> outlets;
  std::vector<Building> buildings;

  int idx(int r, int c) const { return r * cols + c; }
  bool in_grid(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }
  double elev(int r, int c) const { return elevation[idx(r, c)]; }

  std::vector<int> zone_sizes() const {
    std::vector<int> n(zone_count, 0);
    for (const Building& b : buildings) n[b.zone - 1]++;
    return n;
  }

  // mean building coordinates per zone, meters (cell centers)
  std::vector<std::pair<double, double>> zone_centroids() const {
    std::vector<std::pair<double, double>> c(zone_count, {0.0, 0.0});
    std::vector<int> n(zone_count, 0);
    for (const Building& b : buildings) {
      c[b.zone - 1].first += (b.cell.col + 0.5) * cell_m;
      c[b.zone - 1].second += (b.cell.row + 0.5) * cell_m;
      n[b.zone - 1]++;
    }
    for (int z = 0; z < zone_count; ++z) {
      c[z].first /= n[z];
      c[z].second /= n[z];
    }
    return c;
  }

  // archetype proportions per zone, rows sum to 1
  Matrix archetype_proportions() const {
    Matrix e(zone_count, kArchetypeCount);
    std::vector<int> n(zone_count, 0);
    for (const Building& b : buildings) {
      e(b.zone - 1, b.archetype) += 1.0;
      n[b.zone - 1]++;
    }
    for (int z = 0; z < zone_count; ++z)
      for (int a = 0; a < kArchetypeCount; ++a) e(z, a) /= n[z];
    return e;
  }

  std::string zone_name(int zone) const {
    static const char* kLandmarks[] = {"Market", "Plaza",  "School", "Bridge", "Garden", "Temple",
                                       "Station", "Wharf", "Park",   "Mill",   "Tower",  "Court"};
    return "Zone-" + std::to_string(zone) + " " + kLandmarks[zone % 12];
  }
};

struct Hyetograph {
  std::vector<double> mm_per_h;  // one entry per hour
  int duration() const { return static_cast<int>(mm_per_h.size()); }
  double total_mm() const {
    double s = 0.0;
    for (double v : mm_per_h) s += v;
    return s;
  }
  double peak_mm_h() const {
    double p = 0.0;
    for (double v : mm_per_h) p = std::max(p, v);
    return p;
  }
};

struct DepthField {
  int hours = 0;
  int cells = 0;
  std::vector<double> depth_m;  // hours * cells, hourly snapshots
  double at(int hour, int cell) const { return depth_m[hour * cells + cell]; }
  double& at(int hour, int cell) { return depth_m[hour * cells + cell]; }
};

struct WorldParams {
  int rows = 64;
  int cols = 64;
  double cell_m = 10.0;
  int zones = 50;
  int buildings = 500;
  double drain_base_mm_h = 18.0;
  double drain_noise_mm_h = 10.0;
  double river_drain_mm_h = 250.0;
  double outlet_drain_mm_h = 1000.0;
  int outlet_count = 8;
};

namespace detail {

// smooth lattice noise in [-1, 1]
inline double value_noise(Rng& lattice_rng, std::vector<double>& lattice, int lw, int lh, double x,
                          double y) {
  const auto at = [&](int i, int j) { return lattice[(j % lh) * lw + (i % lw)]; };
  const int xi = static_cast<int>(std::floor(x));
  const int yi = static_cast<int>(std::floor(y));
  const double fx = x - xi, fy = y - yi;
  const double sx = fx * fx * (3.0 - 2.0 * fx);
  const double sy = fy * fy * (3.0 - 2.0 * fy);
  const double v00 = at(xi, yi), v10 = at(xi + 1, yi);
  const double v01 = at(xi, yi + 1), v11 = at(xi + 1, yi + 1);
  const double a = v00 + (v10 - v00) * sx;
  const double b = v01 + (v11 - v01) * sx;
  (void)lattice_rng;
  return a + (b - a) * sy;
}

}  // namespace detail

inline void assign_zones(CityModel& city, Rng rng);

inline CityModel generate_city(std::uint64_t seed, const WorldParams& wp) {
  if (wp.zones < 2) throw std::invalid_argument("generate_city: need at least 2 zones");
  if (wp.buildings < wp.zones)
    throw std::invalid_argument("generate_city: building count below zone count");
  if (wp.rows < 16 || wp.cols < 16) throw std::invalid_argument("generate_city: grid below 16x16");

  CityModel city;
  city.rows = wp.rows;
  city.cols = wp.cols;
  city.cell_m = wp.cell_m;
  city.zone_count = wp.zones;
  city.elevation.assign(wp.rows * wp.cols, 0.0);
  city.river.assign(wp.rows * wp.cols, 0);
  city.drain_mm_h.assign(wp.rows * wp.cols, 0.0);

  Rng rng(seed);

  // two-octave value noise plus a valley profile; river follows the valley
  Rng noise_rng = rng.fork(1);
  const int lw = 9, lh = 9;
  std::vector<double> lat1(lw * lh), lat2(lw * lh);
  for (double& v : lat1) v = noise_rng.uniform(-1.0, 1.0);
  for (double& v : lat2) v = noise_rng.uniform(-1.0, 1.0);
  const double phase = noise_rng.uniform(0.0, 6.28);

  std::vector<double> valley_col(wp.rows);
  for (int r = 0; r < wp.rows; ++r)
    valley_col[r] =
        wp.cols * (0.5 + 0.2 * std::sin(phase + 1.7 * 3.14159 * r / wp.rows));

  for (int r = 0; r < wp.rows; ++r) {
    for (int c = 0; c < wp.cols; ++c) {
      const double n1 =
          detail::value_noise(noise_rng, lat1, lw, lh, 8.0 * c / wp.cols, 8.0 * r / wp.rows);
      const double n2 =
          detail::value_noise(noise_rng, lat2, lw, lh, 4.0 * c / wp.cols, 4.0 * r / wp.rows);
      const double across = std::abs(c - valley_col[r]) / wp.cols;
      double z = 16.0 * std::pow(across, 1.2)   // valley walls
                 + 2.0 * static_cast<double>(r) / wp.rows  // gentle downstream slope
                 + 2.2 * n2 + 1.1 * n1;
      city.elevation[city.idx(r, c)] = z;
    }
  }

  for (int r = 0; r < wp.rows; ++r) {
    const int cc = std::clamp(static_cast<int>(std::lround(valley_col[r])), 1, wp.cols - 2);
    for (int c = cc - 1; c <= cc + 1; ++c) {
      city.river[city.idx(r, c)] = 1;
      city.elevation[city.idx(r, c)] -= 1.5;
    }
  }

  Rng drain_rng = rng.fork(2);
  for (double& d : city.drain_mm_h)
    d = wp.drain_base_mm_h + wp.drain_noise_mm_h * drain_rng.uniform();

  // outlets sit on land next to the river, spaced down the valley
  for (int k = 0; k < wp.outlet_count; ++k) {
    const int r = std::clamp((k * wp.rows) / wp.outlet_count + wp.rows / (2 * wp.outlet_count), 0,
                             wp.rows - 1);
    const int cc = std::clamp(static_cast<int>(std::lround(valley_col[r])), 2, wp.cols - 3);
    city.outlets.push_back({r, cc + 2});
  }

  std::vector<int> land;
  for (int i = 0; i < wp.rows * wp.cols; ++i)
    if (!city.river[i]) land.push_back(i);
  if (static_cast<int>(land.size()) < wp.buildings)
    throw std::invalid_argument("generate_city: only " + std::to_string(land.size()) +
                                " land cells for " + std::to_string(wp.buildings) + " buildings");

  Rng bld_rng = rng.fork(3);
  bld_rng.shuffle(land);
  // archetype mix: high-rise, multi-story, detached villa, overlay villa
  const double arch_cdf[kArchetypeCount] = {0.25, 0.60, 0.80, 1.0};
  for (int b = 0; b < wp.buildings; ++b) {
    const int cell = land[b];
    const double u = bld_rng.uniform();
    int a = 0;
    while (a < kArchetypeCount - 1 && u > arch_cdf[a]) ++a;
    city.buildings.push_back({{cell / wp.cols, cell % wp.cols}, a, 0});
  }
  std::sort(city.buildings.begin(), city.buildings.end(), [&](const Building& x, const Building& y) {
    return city.idx(x.cell.row, x.cell.col) < city.idx(y.cell.row, y.cell.col);
  });

  assign_zones(city, rng.fork(4));
  return city;
}

// k-means over building coordinates; zones relabeled 1..M by centroid order so
// ids are stable for a given seed
inline void assign_zones(CityModel& city, Rng rng) {
  const int m = city.zone_count;
  const int n = static_cast<int>(city.buildings.size());
  std::vector<std::pair<double, double>> pts(n);
  for (int i = 0; i < n; ++i)
    pts[i] = {static_cast<double>(city.buildings[i].cell.col),
              static_cast<double>(city.buildings[i].cell.row)};

  const auto d2 = [&](const std::pair<double, double>& a, const std::pair<double, double>& b) {
    const double dx = a.first - b.first, dy = a.second - b.second;
    return dx * dx + dy * dy;
  };

  // k-means++ seeding
  std::vector<std::pair<double, double>> centers;
  centers.push_back(pts[rng.uniform_int(n)]);
  std::vector<double> best(n, 0.0);
  while (static_cast<int>(centers.size()) < m) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double b = d2(pts[i], centers[0]);
      for (std::size_t k = 1; k < centers.size(); ++k) b = std::min(b, d2(pts[i], centers[k]));
      best[i] = b;
      total += b;
    }
    double pick = rng.uniform() * total;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      pick -= best[i];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(pts[chosen]);
  }

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 30; ++iter) {
    bool moved = false;
    for (int i = 0; i < n; ++i) {
      int bk = 0;
      double bd = d2(pts[i], centers[0]);
      for (int k = 1; k < m; ++k) {
        const double dd = d2(pts[i], centers[k]);
        if (dd < bd) {
          bd = dd;
          bk = k;
        }
      }
      if (assign[i] != bk) {
        assign[i] = bk;
        moved = true;
      }
    }
    // refill any empty cluster with the point farthest from its center
    std::vector<int> count(m, 0);
    for (int i = 0; i < n; ++i) count[assign[i]]++;
    for (int k = 0; k < m; ++k) {
      if (count[k] > 0) continue;
      int far_i = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (count[assign[i]] <= 1) continue;
        const double dd = d2(pts[i], centers[assign[i]]);
        if (dd > far_d) {
          far_d = dd;
          far_i = i;
        }
      }
      count[assign[far_i]]--;
      assign[far_i] = k;
      count[k] = 1;
      moved = true;
    }
    std::vector<std::pair<double, double>> sum(m, {0.0, 0.0});
    for (int i = 0; i < n; ++i) {
      sum[assign[i]].first += pts[i].first;
      sum[assign[i]].second += pts[i].second;
    }
    for (int k = 0; k < m; ++k)
      centers[k] = {sum[k].first / count[k], sum[k].second / count[k]};
    if (!moved && iter > 0) break;
  }

  // relabel clusters by centroid row-major order
  std::vector<int> order(m);
  for (int k = 0; k < m; ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (centers[a].second != centers[b].second) return centers[a].second < centers[b].second;
    return centers[a].first < centers[b].first;
  });
  std::vector<int> label(m);
  for (int rank = 0; rank < m; ++rank) label[order[rank]] = rank + 1;
  for (int i = 0; i < n; ++i) city.buildings[i].zone = label[assign[i]];
}

// Per-ERZ flood-conditioning matrix, d_w = 7 columns:
// mean elevation, slope, curvature, aspect, TWI, river distance, outlet distance.
inline Matrix derive_conditioning(const CityModel& city) {
  const int rows = city.rows, cols = city.cols;
  const double h = city.cell_m;
  const int n = rows * cols;

  std::vector<double> gx(n), gy(n), slope(n), aspect(n), curv(n);
  const auto z = [&](int r, int c) { return city.elev(r, c); };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // central differences inside, one-sided at the grid edge
      double dzdx, dzdy;
      if (c == 0)
        dzdx = (z(r, 1) - z(r, 0)) / h;
      else if (c == cols - 1)
        dzdx = (z(r, cols - 1) - z(r, cols - 2)) / h;
      else
        dzdx = (z(r, c + 1) - z(r, c - 1)) / (2.0 * h);
      if (r == 0)
        dzdy = (z(1, c) - z(0, c)) / h;
      else if (r == rows - 1)
        dzdy = (z(rows - 1, c) - z(rows - 2, c)) / h;
      else
        dzdy = (z(r + 1, c) - z(r - 1, c)) / (2.0 * h);

      const int i = city.idx(r, c);
      gx[i] = dzdx;
      gy[i] = dzdy;
      slope[i] = std::sqrt(dzdx * dzdx + dzdy * dzdy);
      aspect[i] = (dzdx == 0.0 && dzdy == 0.0) ? 0.0 : std::atan2(dzdy, dzdx);

      const int rc = std::clamp(r, 1, rows - 2);
      const int cc = std::clamp(c, 1, cols - 2);
      curv[i] = (z(rc + 1, cc) + z(rc - 1, cc) + z(rc, cc + 1) + z(rc, cc - 1) -
                 4.0 * z(rc, cc)) /
                (h * h);
    }
  }

  // D8 flow accumulation for the wetness index
  std::vector<int> dest(n, -1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double bd = 0.0;
      int bi = -1;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr, cc2 = c + dc;
          if (!city.in_grid(rr, cc2)) continue;
          const double drop = (z(r, c) - z(rr, cc2)) / std::sqrt(double(dr * dr + dc * dc));
          if (drop > bd) {
            bd = drop;
            bi = city.idx(rr, cc2);
          }
        }
      }
      dest[city.idx(r, c)] = bi;
    }
  }
  std::vector<double> accum(n, 1.0);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return city.elevation[a] > city.elevation[b]; });
  for (int i : order)
    if (dest[i] >= 0) accum[dest[i]] += accum[i];

  std::vector<double> twi(n);
  for (int i = 0; i < n; ++i)
    twi[i] = std::log(accum[i] / std::max(slope[i], 1e-4) + 1e-6);

  // nearest river / outlet distances in meters, per cell on demand
  std::vector<Cell> river_cells;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (city.river[city.idx(r, c)]) river_cells.push_back({r, c});
  const auto nearest_m = [&](const Cell& from, const std::vector<Cell>& to) {
    double best = 1e300;
    for (const Cell& t : to) {
      const double dr = (from.row - t.row) * h, dc = (from.col - t.col) * h;
      best = std::min(best, dr * dr + dc * dc);
    }
    return std::sqrt(best);
  };

  Matrix w(city.zone_count, 7);
  std::vector<int> zn(city.zone_count, 0);
  for (const Building& b : city.buildings) {
    if (!city.in_grid(b.cell.row, b.cell.col))
      throw std::invalid_argument("derive_conditioning: building cell outside grid");
    const int i = city.idx(b.cell.row, b.cell.col);
    const int zrow = b.zone - 1;
    w(zrow, 0) += city.elevation[i];
    w(zrow, 1) += slope[i];
    w(zrow, 2) += curv[i];
    w(zrow, 3) += aspect[i];
    w(zrow, 4) += twi[i];
    w(zrow, 5) += nearest_m(b.cell, river_cells);
    w(zrow, 6) += nearest_m(b.cell, city.outlets);
    zn[zrow]++;
  }
  for (int zrow = 0; zrow < city.zone_count; ++zrow)
    for (int j = 0; j < 7; ++j) w(zrow, j) /= zn[zrow];
  return w;
}

struct RainfallParams {
  int count = 64;
  int duration_h = 24;
  double min_total_mm = 350.0;
  double peak_lo_mm_h = 50.0;
  double peak_hi_mm_h = 200.0;
  int retry_cap = 200;
};

// Random-peak gamma-shaped design storms with multiplicative jitter.
// Peaks are stratified across the ensemble so intensities span a wide range.
inline std::vector<Hyetograph> generate_rainfall_ensemble(std::uint64_t seed,
                                                          const RainfallParams& rp) {
  if (rp.count < 1) throw std::invalid_argument("rainfall: count must be >= 1");
  if (rp.min_total_mm < 0.0) throw std::invalid_argument("rainfall: negative threshold");

  std::vector<Hyetograph> out;
  out.reserve(rp.count);

  std::vector<int> strata(rp.count);
  for (int i = 0; i < rp.count; ++i) strata[i] = i;
  Rng strat_rng(seed ^ 0x5151);
  strat_rng.shuffle(strata);

  for (int s = 0; s < rp.count; ++s) {
    Rng storm_rng = Rng(seed).fork(100 + s);
    Hyetograph hy;
    bool ok = false;
    for (int attempt = 0; attempt < rp.retry_cap; ++attempt) {
      const double u = (strata[s] + storm_rng.uniform()) / rp.count;
      const double peak =
          rp.peak_lo_mm_h * std::pow(rp.peak_hi_mm_h / rp.peak_lo_mm_h, u);
      const double peak_hour = storm_rng.uniform(5.0, rp.duration_h - 5.0);
      // width chosen so the expected accumulation clears the threshold
      const double target_total =
          std::max(rp.min_total_mm, 1.0) * storm_rng.uniform(1.15, 2.2);
      const double width = std::max(1.5, target_total / (peak * 1.1));

      // gamma bump x^(k-1) e^-x, shifted so its mode lands on peak_hour
      hy.mm_per_h.assign(rp.duration_h, 0.0);
      const double shape = 2.5;
      const double mode = shape - 1.0;
      for (int t = 0; t < rp.duration_h; ++t) {
        const double x = mode + shape * (t + 0.5 - peak_hour) / width;
        hy.mm_per_h[t] = x > 0.0 ? std::pow(x, shape - 1.0) * std::exp(-x) : 0.0;
      }
      const double gmax = hy.peak_mm_h();
      for (double& v : hy.mm_per_h) v = peak * v / gmax;
      for (double& v : hy.mm_per_h) v *= std::exp(0.18 * storm_rng.normal());
      if (rp.min_total_mm <= 0.0 || hy.total_mm() > rp.min_total_mm) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw std::runtime_error("rainfall: accumulation threshold " +
                               std::to_string(rp.min_total_mm) + " mm unreachable");
    out.push_back(std::move(hy));
  }
  return out;
}

struct FloodTotals {
  double rained_m_cells = 0.0;   // depth-equivalent volume, meters x cells
  double drained_m_cells = 0.0;  // removed by per-cell drainage, river, outlets
};

// Explicit CA step: rain in, linear drainage out, then excess routed to strictly
// lower-head 4-neighbors proportionally to head difference; at most half a
// cell's water moves per substep. Heads use elevation + depth.
inline DepthField simulate_flood(const CityModel& city, const Hyetograph& rain, int substeps,
                                 const WorldParams& wp, std::vector<FloodTotals>* hourly = nullptr) {
  if (substeps < 1) throw std::invalid_argument("simulate_flood: substeps must be >= 1");
  const int n = city.rows * city.cols;
  const double dt = 1.0 / substeps;

  DepthField df;
  df.hours = rain.duration();
  df.cells = n;
  df.depth_m.assign(static_cast<std::size_t>(df.hours) * n, 0.0);

  std::vector<double> depth(n, 0.0), inflow(n, 0.0), outflow(n, 0.0);
  std::vector<std::uint8_t> is_outlet(n, 0);
  for (const Cell& o : city.outlets) is_outlet[city.idx(o.row, o.col)] = 1;

  FloodTotals tot;
  for (int hour = 0; hour < df.hours; ++hour) {
    const double rain_m = rain.mm_per_h[hour] / 1000.0;
    for (int s = 0; s < substeps; ++s) {
      // rainfall
      for (int i = 0; i < n; ++i) depth[i] += rain_m * dt;
      tot.rained_m_cells += rain_m * dt * n;

      // drainage: per-cell capacity, elevated on river cells and outlets
      for (int i = 0; i < n; ++i) {
        double cap_m = city.drain_mm_h[i] / 1000.0;
        if (city.river[i]) cap_m = std::max(cap_m, wp.river_drain_mm_h / 1000.0);
        if (is_outlet[i]) cap_m = std::max(cap_m, wp.outlet_drain_mm_h / 1000.0);
        const double removed = std::min(depth[i], cap_m * dt);
        depth[i] -= removed;
        tot.drained_m_cells += removed;
      }

      // synchronous routing
      std::fill(inflow.begin(), inflow.end(), 0.0);
      std::fill(outflow.begin(), outflow.end(), 0.0);
      for (int r = 0; r < city.rows; ++r) {
        for (int c = 0; c < city.cols; ++c) {
          const int i = city.idx(r, c);
          if (depth[i] <= 0.0) continue;
          const double head = city.elevation[i] + depth[i];
          constexpr int dr[4] = {-1, 1, 0, 0};
          constexpr int dc[4] = {0, 0, -1, 1};
          double diff[4];
          int tgt[4];
          int cnt = 0;
          double sum = 0.0;
          for (int k = 0; k < 4; ++k) {
            const int rr = r + dr[k], cc = c + dc[k];
            if (!city.in_grid(rr, cc)) continue;
            const int j = city.idx(rr, cc);
            const double hd = head - (city.elevation[j] + depth[j]);
            if (hd > 0.0) {
              diff[cnt] = hd;
              tgt[cnt] = j;
              sum += hd;
              ++cnt;
            }
          }
          if (cnt == 0) continue;
          const double movable = 0.5 * depth[i];
          for (int k = 0; k < cnt; ++k) {
            const double want = movable * diff[k] / sum;
            const double amount = std::min(want, 0.5 * diff[k]);
            outflow[i] += amount;
            inflow[tgt[k]] += amount;
          }
        }
      }
      for (int i = 0; i < n; ++i) depth[i] += inflow[i] - outflow[i];
    }
    for (int i = 0; i < n; ++i) df.at(hour, i) = depth[i];
    if (hourly) hourly->push_back(tot);
  }
  return df;
}

// water accounting residual: |rained - drained - stored| / max(rained, eps)
inline double mass_balance_residual(const DepthField& df, const FloodTotals& totals_at_hour,
                                    int hour) {
  double stored = 0.0;
  for (int i = 0; i < df.cells; ++i) stored += df.at(hour, i);
  const double rained = totals_at_hour.rained_m_cells;
  const double closed = totals_at_hour.drained_m_cells + stored;
  return std::abs(rained - closed) / std::max(rained, 1e-12);
}

}  // namespace craf::worldgen
