// Run configuration: one JSON document covering every stage, with defaults
// matching the desk-scale setup. The canonical dump is hashed into the
// manifest so reruns can prove they used the same configuration.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "craf/cim.hpp"
#include "craf/fragility.hpp"
#include "craf/sa.hpp"
#include "craf/stf.hpp"
#include "craf/textio.hpp"
#include "craf/worldgen.hpp"

namespace craf::pipeline {

enum class Regime { stf_ol_fr, stf_ol_ur, craf };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::stf_ol_fr: return "STF-OL-FR";
    case Regime::stf_ol_ur: return "STF-OL-UR";
    case Regime::craf: return "CRAF";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "fr" || s == "STF-OL-FR") return Regime::stf_ol_fr;
  if (s == "ur" || s == "STF-OL-UR") return Regime::stf_ol_ur;
  if (s == "craf" || s == "CRAF") return Regime::craf;
  throw std::invalid_argument("unknown regime: " + s);
}

enum class AssimilationMode { escalation, always, never };

struct EventConfig {
  Regime regime = Regime::craf;
  double bias_factor = 0.363;  // forecast rainfall divided by observed, Haikui-style
  int loso_storm = -1;         // -1: heaviest storm by accumulation
  AssimilationMode assimilation = AssimilationMode::escalation;
  int horizon = 24;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int substeps_per_hour = 4;
  worldgen::WorldParams world;
  worldgen::RainfallParams rainfall;
  fragility::FragilityParams fragility_params = fragility::FragilityParams::defaults();
  double sa_graph_threshold = 0.7;
  double stf_graph_threshold = 0.7;
  int graph_top_k = 3;
  sa::SaHyperParams sa_params;
  std::vector<double> sa_ratios = {0.1, 0.2, 0.3, 0.4, 0.5};
  stf::StfHyperParams stf_params;
  cim::InterpolationParams cim_params;
  cim::CrowdParams crowd;
  EventConfig event;
  int jobs = 2;  // worker threads for independent trainings/simulations
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["substeps_per_hour"] = c.substeps_per_hour;
  j["world"] = {{"rows", c.world.rows},
                {"cols", c.world.cols},
                {"cell_m", c.world.cell_m},
                {"zones", c.world.zones},
                {"buildings", c.world.buildings},
                {"drain_base_mm_h", c.world.drain_base_mm_h},
                {"drain_noise_mm_h", c.world.drain_noise_mm_h},
                {"river_drain_mm_h", c.world.river_drain_mm_h},
                {"outlet_drain_mm_h", c.world.outlet_drain_mm_h},
                {"outlet_count", c.world.outlet_count}};
  j["rainfall"] = {{"count", c.rainfall.count},
                   {"duration_h", c.rainfall.duration_h},
                   {"min_total_mm", c.rainfall.min_total_mm},
                   {"peak_lo_mm_h", c.rainfall.peak_lo_mm_h},
                   {"peak_hi_mm_h", c.rainfall.peak_hi_mm_h},
                   {"retry_cap", c.rainfall.retry_cap}};
  nlohmann::json mu = nlohmann::json::array();
  for (int a = 0; a < worldgen::kArchetypeCount; ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < fragility::kCapacityCount; ++k) row.push_back(c.fragility_params.median_m[a][k]);
    mu.push_back(row);
  }
  j["fragility"] = {{"median_m", mu}, {"beta", c.fragility_params.beta}};
  j["graphs"] = {{"sa_threshold", c.sa_graph_threshold},
                 {"stf_threshold", c.stf_graph_threshold},
                 {"top_k", c.graph_top_k}};
  j["sa"] = {{"hidden_layers", c.sa_params.hidden_layers},
             {"heads", c.sa_params.heads},
             {"hidden", c.sa_params.hidden},
             {"lr", c.sa_params.lr},
             {"max_epochs", c.sa_params.max_epochs},
             {"patience", c.sa_params.patience},
             {"batch", c.sa_params.batch},
             {"val_fraction", c.sa_params.val_fraction},
             {"clip_norm", c.sa_params.clip_norm},
             {"ratios", c.sa_ratios}};
  j["stf"] = {{"history", c.stf_params.history},
              {"kernel_t", c.stf_params.kernel_t},
              {"channels", c.stf_params.channels},
              {"rain_channels", c.stf_params.rain_channels},
              {"lr", c.stf_params.lr},
              {"max_epochs", c.stf_params.max_epochs},
              {"patience", c.stf_params.patience},
              {"batch", c.stf_params.batch},
              {"val_fraction", c.stf_params.val_fraction},
              {"clip_norm", c.stf_params.clip_norm}};
  j["cim"] = {{"radius_m", c.cim_params.radius_m},
              {"max_elev_diff_m", c.cim_params.max_elev_diff_m}};
  j["crowd"] = {{"base_rate", c.crowd.base_rate},
                {"depth_mid_m", c.crowd.depth_mid_m},
                {"depth_scale_m", c.crowd.depth_scale_m},
                {"min_depth_m", c.crowd.min_depth_m},
                {"max_posts_per_zone", c.crowd.max_posts_per_zone}};
  std::string regime;
  switch (c.event.regime) {
    case Regime::stf_ol_fr: regime = "fr"; break;
    case Regime::stf_ol_ur: regime = "ur"; break;
    case Regime::craf: regime = "craf"; break;
  }
  std::string assim = c.event.assimilation == AssimilationMode::escalation ? "escalation"
                      : c.event.assimilation == AssimilationMode::always   ? "always"
                                                                           : "never";
  j["event"] = {{"regime", regime},
                {"bias_factor", c.event.bias_factor},
                {"loso_storm", c.event.loso_storm},
                {"assimilation", assim},
                {"horizon", c.event.horizon}};
  j["jobs"] = c.jobs;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  const auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).template get<std::decay_t<decltype(dst)>>();
  };
  get("seed", c.seed);
  get("substeps_per_hour", c.substeps_per_hour);
  get("jobs", c.jobs);
  if (j.contains("world")) {
    const auto& w = j["world"];
    const auto gw = [&](const char* key, auto& dst) {
      if (w.contains(key)) dst = w.at(key).template get<std::decay_t<decltype(dst)>>();
    };
    gw("rows", c.world.rows);
    gw("cols", c.world.cols);
    gw("cell_m", c.world.cell_m);
    gw("zones", c.world.zones);
    gw("buildings", c.world.buildings);
    gw("drain_base_mm_h", c.world.drain_base_mm_h);
    gw("drain_noise_mm_h", c.world.drain_noise_mm_h);
    gw("river_drain_mm_h", c.world.river_drain_mm_h);
    gw("outlet_drain_mm_h", c.world.outlet_drain_mm_h);
    gw("outlet_count", c.world.outlet_count);
  }
  if (j.contains("rainfall")) {
    const auto& r = j["rainfall"];
    const auto gr = [&](const char* key, auto& dst) {
      if (r.contains(key)) dst = r.at(key).template get<std::decay_t<decltype(dst)>>();
    };
    gr("count", c.rainfall.count);
    gr("duration_h", c.rainfall.duration_h);
    gr("min_total_mm", c.rainfall.min_total_mm);
    gr("peak_lo_mm_h", c.rainfall.peak_lo_mm_h);
    gr("peak_hi_mm_h", c.rainfall.peak_hi_mm_h);
    gr("retry_cap", c.rainfall.retry_cap);
  }
  if (j.contains("fragility")) {
    const auto& f = j["fragility"];
    if (f.contains("beta")) c.fragility_params.beta = f["beta"].get<double>();
    if (f.contains("median_m")) {
      const auto& mu = f["median_m"];
      for (int a = 0; a < worldgen::kArchetypeCount; ++a)
        for (int k = 0; k < fragility::kCapacityCount; ++k)
          c.fragility_params.median_m[a][k] = mu.at(a).at(k).get<double>();
    }
    c.fragility_params.validate();
  }
  if (j.contains("graphs")) {
    const auto& g = j["graphs"];
    if (g.contains("sa_threshold")) c.sa_graph_threshold = g["sa_threshold"].get<double>();
    if (g.contains("stf_threshold")) c.stf_graph_threshold = g["stf_threshold"].get<double>();
    if (g.contains("top_k")) c.graph_top_k = g["top_k"].get<int>();
  }
  if (j.contains("sa")) {
    const auto& s = j["sa"];
    const auto gs = [&](const char* key, auto& dst) {
      if (s.contains(key)) dst = s.at(key).template get<std::decay_t<decltype(dst)>>();
    };
    gs("hidden_layers", c.sa_params.hidden_layers);
    gs("heads", c.sa_params.heads);
    gs("hidden", c.sa_params.hidden);
    gs("lr", c.sa_params.lr);
    gs("max_epochs", c.sa_params.max_epochs);
    gs("patience", c.sa_params.patience);
    gs("batch", c.sa_params.batch);
    gs("val_fraction", c.sa_params.val_fraction);
    gs("clip_norm", c.sa_params.clip_norm);
    gs("ratios", c.sa_ratios);
  }
  if (j.contains("stf")) {
    const auto& s = j["stf"];
    const auto gs = [&](const char* key, auto& dst) {
      if (s.contains(key)) dst = s.at(key).template get<std::decay_t<decltype(dst)>>();
    };
    gs("history", c.stf_params.history);
    gs("kernel_t", c.stf_params.kernel_t);
    gs("channels", c.stf_params.channels);
    gs("rain_channels", c.stf_params.rain_channels);
    gs("lr", c.stf_params.lr);
    gs("max_epochs", c.stf_params.max_epochs);
    gs("patience", c.stf_params.patience);
    gs("batch", c.stf_params.batch);
    gs("val_fraction", c.stf_params.val_fraction);
    gs("clip_norm", c.stf_params.clip_norm);
  }
  if (j.contains("cim")) {
    const auto& s = j["cim"];
    if (s.contains("radius_m")) c.cim_params.radius_m = s["radius_m"].get<double>();
    if (s.contains("max_elev_diff_m"))
      c.cim_params.max_elev_diff_m = s["max_elev_diff_m"].get<double>();
  }
  if (j.contains("crowd")) {
    const auto& s = j["crowd"];
    const auto gs = [&](const char* key, auto& dst) {
      if (s.contains(key)) dst = s.at(key).template get<std::decay_t<decltype(dst)>>();
    };
    gs("base_rate", c.crowd.base_rate);
    gs("depth_mid_m", c.crowd.depth_mid_m);
    gs("depth_scale_m", c.crowd.depth_scale_m);
    gs("min_depth_m", c.crowd.min_depth_m);
    gs("max_posts_per_zone", c.crowd.max_posts_per_zone);
  }
  if (j.contains("event")) {
    const auto& e = j["event"];
    if (e.contains("regime")) c.event.regime = regime_from_string(e["regime"].get<std::string>());
    if (e.contains("bias_factor")) c.event.bias_factor = e["bias_factor"].get<double>();
    if (c.event.bias_factor <= 0.0)
      throw std::invalid_argument("config: bias_factor must be > 0");
    if (e.contains("loso_storm")) c.event.loso_storm = e["loso_storm"].get<int>();
    if (e.contains("horizon")) c.event.horizon = e["horizon"].get<int>();
    if (e.contains("assimilation")) {
      const std::string a = e["assimilation"].get<std::string>();
      if (a == "escalation")
        c.event.assimilation = AssimilationMode::escalation;
      else if (a == "always")
        c.event.assimilation = AssimilationMode::always;
      else if (a == "never")
        c.event.assimilation = AssimilationMode::never;
      else
        throw std::invalid_argument("config: unknown assimilation mode " + a);
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  return config_from_json(nlohmann::json::parse(io::read_file(path)));
}

// FNV-1a over the canonical (key-sorted) dump
inline std::string config_hash(const RunConfig& c) {
  const std::string dump = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace craf::pipeline
