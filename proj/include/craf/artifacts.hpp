// On-disk artifact formats: the structured city file, storm / trajectory /
// depth-field CSVs, graph edge lists, and the run manifest. Every writer uses
// 17-digit floats so a reload reproduces values bit for bit.
#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "craf/fragility.hpp"
#include "craf/graphs.hpp"
#include "craf/textio.hpp"
#include "craf/worldgen.hpp"

namespace craf::pipeline {

namespace fs = std::filesystem;

// ---- city: key-value sections plus CSV blocks ----

inline std::string city_to_text(const worldgen::CityModel& city) {
  std::ostringstream out;
  out << "[meta]\n";
  out << "rows=" << city.rows << "\n";
  out << "cols=" << city.cols << "\n";
  out << "cell_m=" << io::fmt_g17(city.cell_m) << "\n";
  out << "zones=" << city.zone_count << "\n";
  const auto grid_block = [&](const char* name, auto get) {
    out << "[" << name << "]\n";
    for (int r = 0; r < city.rows; ++r) {
      for (int c = 0; c < city.cols; ++c) {
        if (c) out << ",";
        out << get(r, c);
      }
      out << "\n";
    }
  };
  grid_block("elevation", [&](int r, int c) { return io::fmt_g17(city.elev(r, c)); });
  grid_block("river", [&](int r, int c) { return std::to_string(int(city.river[city.idx(r, c)])); });
  grid_block("drainage_mm_h",
             [&](int r, int c) { return io::fmt_g17(city.drain_mm_h[city.idx(r, c)]); });
  out << "[outlets]\n";
  out << "row,col\n";
  for (const auto& o : city.outlets) out << o.row << "," << o.col << "\n";
  out << "[buildings]\n";
  out << "row,col,archetype,zone\n";
  for (const auto& b : city.buildings)
    out << b.cell.row << "," << b.cell.col << "," << b.archetype << "," << b.zone << "\n";
  return out.str();
}

inline worldgen::CityModel city_from_text(const std::string& text) {
  worldgen::CityModel city;
  std::istringstream in(text);
  std::string line, section;
  int grid_row = 0;
  while (std::getline(in, line)) {
    line = io::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      grid_row = 0;
      if (section == "elevation") {
        city.elevation.assign(city.rows * city.cols, 0.0);
        city.river.assign(city.rows * city.cols, 0);
        city.drain_mm_h.assign(city.rows * city.cols, 0.0);
      }
      continue;
    }
    if (section == "meta") {
      const auto kv = io::split(line, '=');
      if (kv[0] == "rows") city.rows = std::stoi(kv[1]);
      if (kv[0] == "cols") city.cols = std::stoi(kv[1]);
      if (kv[0] == "cell_m") city.cell_m = io::parse_double(kv[1]);
      if (kv[0] == "zones") city.zone_count = std::stoi(kv[1]);
    } else if (section == "elevation" || section == "river" || section == "drainage_mm_h") {
      const auto vals = io::split(line, ',');
      for (int c = 0; c < city.cols; ++c) {
        const int i = grid_row * city.cols + c;
        if (section == "elevation") city.elevation[i] = io::parse_double(vals[c]);
        if (section == "river") city.river[i] = static_cast<std::uint8_t>(std::stoi(vals[c]));
        if (section == "drainage_mm_h") city.drain_mm_h[i] = io::parse_double(vals[c]);
      }
      ++grid_row;
    } else if (section == "outlets") {
      if (line == "row,col") continue;
      const auto f = io::split(line, ',');
      city.outlets.push_back({std::stoi(f[0]), std::stoi(f[1])});
    } else if (section == "buildings") {
      if (line == "row,col,archetype,zone") continue;
      const auto f = io::split(line, ',');
      city.buildings.push_back({{std::stoi(f[0]), std::stoi(f[1])}, std::stoi(f[2]), std::stoi(f[3])});
    }
  }
  return city;
}

// ---- storms: long-format CSV ----

inline std::string storms_to_csv(const std::vector<worldgen::Hyetograph>& storms) {
  std::string s = "storm,hour,intensity_mm_h\n";
  for (std::size_t k = 0; k < storms.size(); ++k)
    for (int h = 0; h < storms[k].duration(); ++h)
      s += std::to_string(k) + "," + std::to_string(h) + "," +
           io::fmt_g17(storms[k].mm_per_h[h]) + "\n";
  return s;
}

inline std::vector<worldgen::Hyetograph> storms_from_csv(const std::string& text) {
  std::vector<worldgen::Hyetograph> storms;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line, ',');
    const std::size_t k = std::stoul(f[0]);
    if (storms.size() <= k) storms.resize(k + 1);
    storms[k].mm_per_h.push_back(io::parse_double(f[2]));
  }
  return storms;
}

// ---- trajectories: hour,zone_1..zone_M ----

inline std::string trajectory_to_csv(const fragility::ZflTrajectory& traj) {
  std::string s = "hour";
  for (int m = 1; m <= traj.zones(); ++m) s += ",zone_" + std::to_string(m);
  s += "\n";
  for (int h = 0; h < traj.hours(); ++h) {
    s += std::to_string(h);
    for (int m = 0; m < traj.zones(); ++m) s += "," + io::fmt_g17(traj.z(h, m));
    s += "\n";
  }
  return s;
}

inline fragility::ZflTrajectory trajectory_from_csv(const std::string& text,
                                                    std::string scenario_id) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const std::size_t zones = io::split(line, ',').size() - 1;
  std::vector<double> vals;
  std::size_t hours = 0;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line, ',');
    for (std::size_t m = 1; m < f.size(); ++m) vals.push_back(io::parse_double(f[m]));
    ++hours;
  }
  fragility::ZflTrajectory traj;
  traj.scenario_id = std::move(scenario_id);
  traj.z = Matrix(hours, zones, std::move(vals));
  return traj;
}

// ---- depth fields: sparse long CSV (zero cells implied) ----

inline std::string depth_field_to_csv(const worldgen::DepthField& df, int cols) {
  std::string s = "hour,row,col,depth_m\n";
  for (int h = 0; h < df.hours; ++h)
    for (int i = 0; i < df.cells; ++i)
      if (df.at(h, i) > 0.0)
        s += std::to_string(h) + "," + std::to_string(i / cols) + "," + std::to_string(i % cols) +
             "," + io::fmt_g17(df.at(h, i)) + "\n";
  return s;
}

// ---- graphs: edge list with a header carrying M and the threshold ----

inline std::string graph_to_csv(const graphs::ErzGraph& g) {
  std::string s = "# erz-graph M=" + std::to_string(g.zones()) +
                  " threshold=" + io::fmt_g17(g.threshold) + "\n";
  s += "i,j,weight\n";
  for (int i = 0; i < g.zones(); ++i)
    for (int j = i + 1; j < g.zones(); ++j)
      if (g.adjacency(i, j) > 0.0)
        s += std::to_string(i + 1) + "," + std::to_string(j + 1) + "," +
             io::fmt_g17(g.adjacency(i, j)) + "\n";
  return s;
}

inline graphs::ErzGraph graph_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  int m = 0;
  graphs::ErzGraph g;
  {
    std::istringstream hs(line);
    std::string tok;
    while (hs >> tok) {
      if (tok.rfind("M=", 0) == 0) m = std::stoi(tok.substr(2));
      if (tok.rfind("threshold=", 0) == 0) g.threshold = io::parse_double(tok.substr(10));
    }
  }
  if (m <= 0) throw std::runtime_error("graph csv: missing M in header");
  g.adjacency = Matrix(m, m);
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line, ',');
    const int i = std::stoi(f[0]) - 1, j = std::stoi(f[1]) - 1;
    const double w = io::parse_double(f[2]);
    g.adjacency(i, j) = w;
    g.adjacency(j, i) = w;
  }
  g.normalized = graphs::normalize_adjacency(g.adjacency);
  return g;
}

// ---- zone-level conditioning / attribute tables ----

inline std::string zone_matrix_to_csv(const Matrix& m, const std::vector<std::string>& cols) {
  std::string s = "zone";
  for (const auto& c : cols) s += "," + c;
  s += "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    s += std::to_string(i + 1);
    for (std::size_t j = 0; j < m.cols(); ++j) s += "," + io::fmt_g17(m(i, j));
    s += "\n";
  }
  return s;
}

inline Matrix zone_matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const std::size_t cols = io::split(line, ',').size() - 1;
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line, ',');
    for (std::size_t j = 1; j < f.size(); ++j) vals.push_back(io::parse_double(f[j]));
    ++rows;
  }
  return Matrix(rows, cols, std::move(vals));
}

// ---- manifest ----

struct Manifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  int loso_storm = -1;
  std::map<std::string, std::string> stages;  // name -> running | complete
  std::vector<std::string> artifacts;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["loso_storm"] = loso_storm;
    j["stages"] = stages;
    j["artifacts"] = artifacts;
    return j;
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    m.config_hash = j.value("config_hash", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.loso_storm = j.value("loso_storm", -1);
    if (j.contains("stages"))
      m.stages = j["stages"].get<std::map<std::string, std::string>>();
    if (j.contains("artifacts"))
      m.artifacts = j["artifacts"].get<std::vector<std::string>>();
    return m;
  }

  bool stage_stale(const std::string& name) const {
    auto it = stages.find(name);
    return it != stages.end() && it->second != "complete";
  }
};

inline void save_manifest(const Manifest& m, const fs::path& dir) {
  io::write_file((dir / "manifest.json").string(), m.to_json().dump(2) + "\n");
}

inline Manifest load_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) return Manifest{};
  return Manifest::from_json(nlohmann::json::parse(io::read_file(p.string())));
}

}  // namespace craf::pipeline
