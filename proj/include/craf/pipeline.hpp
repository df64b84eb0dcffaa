// Offline build orchestration (world -> simulate -> graphs -> train), the
// rolling online update cycle under the three information regimes, metrics,
// and report files.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "craf/artifacts.hpp"
#include "craf/cim.hpp"
#include "craf/config.hpp"
#include "craf/fragility.hpp"
#include "craf/graphs.hpp"
#include "craf/posts_io.hpp"
#include "craf/sa.hpp"
#include "craf/stf.hpp"
#include "craf/textio.hpp"
#include "craf/worldgen.hpp"

namespace craf::pipeline {

// ---- metrics ----

inline double mae(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("mae: size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("rmse: size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

// masked variants: only entries with mask != 0 enter the mean
inline double masked_mae(const std::vector<double>& a, const std::vector<double>& b,
                         const std::vector<std::uint8_t>& mask) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) {
      s += std::abs(a[i] - b[i]);
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

// ---- rainfall bias ----

inline worldgen::Hyetograph inject_forecast_bias(const worldgen::Hyetograph& truth,
                                                 double factor) {
  if (factor <= 0.0) throw std::invalid_argument("inject_forecast_bias: factor must be > 0");
  worldgen::Hyetograph out = truth;
  for (double& v : out.mm_per_h) v *= factor;
  return out;
}

// assimilation window: hours whose rainfall exceeds the storm median
inline std::vector<bool> escalation_hours(const worldgen::Hyetograph& rain) {
  std::vector<double> sorted = rain.mm_per_h;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<bool> win(n, false);
  for (std::size_t h = 0; h < n; ++h) win[h] = rain.mm_per_h[h] > median;
  return win;
}

// ---- run directory layout ----

struct OutPaths {
  fs::path dir;
  explicit OutPaths(fs::path d) : dir(std::move(d)) {}
  fs::path city() const { return dir / "city.txt"; }
  fs::path conditioning() const { return dir / "conditioning.csv"; }
  fs::path attributes() const { return dir / "attributes.csv"; }
  fs::path storms() const { return dir / "storms.csv"; }
  fs::path traj_dir() const { return dir / "trajectories"; }
  fs::path traj(int k) const { return traj_dir() / ("traj_" + std::to_string(k) + ".csv"); }
  fs::path g1() const { return dir / "g1.csv"; }
  fs::path g2() const { return dir / "g2.csv"; }
  fs::path sa_model(double ratio) const {
    return dir / ("sa_r" + std::to_string(static_cast<int>(std::lround(ratio * 100))) + ".ckpt");
  }
  fs::path stf_model() const { return dir / "stf.ckpt"; }
  fs::path stf_nr_model() const { return dir / "stf_nr.ckpt"; }
  fs::path forecast_log(const std::string& regime) const {
    return dir / ("forecast_log_" + regime + ".jsonl");
  }
  fs::path timings(const std::string& regime) const {
    return dir / ("timings_" + regime + ".csv");
  }
  fs::path posts(const std::string& regime) const { return dir / ("posts_" + regime + ".jsonl"); }
};

inline std::string regime_slug(Regime r) {
  switch (r) {
    case Regime::stf_ol_fr: return "fr";
    case Regime::stf_ol_ur: return "ur";
    case Regime::craf: return "craf";
  }
  return "?";
}

// ---- offline stages ----
// Each stage reads its inputs from the run directory, writes its artifacts,
// and flips its manifest entry from running to complete.

namespace detail {

inline void begin_stage(Manifest& man, const std::string& name, const fs::path& dir) {
  man.stages[name] = "running";
  save_manifest(man, dir);
}

inline void end_stage(Manifest& man, const std::string& name, const fs::path& dir,
                      const std::vector<std::string>& artifacts) {
  for (const auto& a : artifacts)
    if (std::find(man.artifacts.begin(), man.artifacts.end(), a) == man.artifacts.end())
      man.artifacts.push_back(a);
  man.stages[name] = "complete";
  save_manifest(man, dir);
}

// run jobs with at most `workers` threads; each job owns its slot, so results
// land at fixed indices and the merge order is deterministic
inline void parallel_for(int count, int workers, const std::function<void(int)>& job) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(count);
  for (int w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline int pick_loso_storm(const std::vector<worldgen::Hyetograph>& storms, int configured) {
  if (configured >= 0) {
    if (configured >= static_cast<int>(storms.size()))
      throw std::invalid_argument("loso storm " + std::to_string(configured) + " out of range");
    return configured;
  }
  int best = 0;
  for (std::size_t k = 1; k < storms.size(); ++k)
    if (storms[k].total_mm() > storms[best].total_mm()) best = static_cast<int>(k);
  return best;
}

inline void stage_worldgen(const RunConfig& cfg, const OutPaths& out) {
  Manifest man = load_manifest(out.dir);
  man.config_hash = config_hash(cfg);
  man.seed = cfg.seed;
  detail::begin_stage(man, "worldgen", out.dir);

  const auto city = worldgen::generate_city(cfg.seed, cfg.world);
  const Matrix w = worldgen::derive_conditioning(city);
  const Matrix e = city.archetype_proportions();
  io::write_file(out.city().string(), city_to_text(city));
  io::write_file(out.conditioning().string(),
                 zone_matrix_to_csv(w, {"elevation_m", "slope", "curvature", "aspect", "twi",
                                        "river_dist_m", "outlet_dist_m"}));
  io::write_file(out.attributes().string(),
                 zone_matrix_to_csv(e, {"high_rise", "multi_story", "detached_villa",
                                        "overlay_villa"}));
  detail::end_stage(man, "worldgen", out.dir,
                    {"city.txt", "conditioning.csv", "attributes.csv"});
}

inline void stage_simulate(const RunConfig& cfg, const OutPaths& out,
                           const std::vector<int>& dump_depth_storms = {}) {
  Manifest man = load_manifest(out.dir);
  detail::begin_stage(man, "simulate", out.dir);

  const auto city = city_from_text(io::read_file(out.city().string()));
  const auto storms = worldgen::generate_rainfall_ensemble(cfg.seed, cfg.rainfall);
  io::write_file(out.storms().string(), storms_to_csv(storms));

  fs::create_directories(out.traj_dir());
  std::vector<std::string> artifacts = {"storms.csv"};
  std::vector<fragility::ZflTrajectory> trajs(storms.size());
  detail::parallel_for(static_cast<int>(storms.size()), cfg.jobs, [&](int k) {
    const auto df = worldgen::simulate_flood(city, storms[k], cfg.substeps_per_hour, cfg.world);
    trajs[k] = fragility::trajectory_from_depths(city, df, cfg.fragility_params,
                                                 "storm_" + std::to_string(k));
  });
  for (std::size_t k = 0; k < storms.size(); ++k) {
    io::write_file(out.traj(static_cast<int>(k)).string(), trajectory_to_csv(trajs[k]));
    artifacts.push_back("trajectories/traj_" + std::to_string(k) + ".csv");
  }
  for (int k : dump_depth_storms) {
    const auto df = worldgen::simulate_flood(city, storms[k], cfg.substeps_per_hour, cfg.world);
    const std::string name = "depth_" + std::to_string(k) + ".csv";
    io::write_file((out.dir / name).string(), depth_field_to_csv(df, city.cols));
    artifacts.push_back(name);
  }

  man.loso_storm = pick_loso_storm(storms, cfg.event.loso_storm);
  detail::end_stage(man, "simulate", out.dir, artifacts);
}

inline std::vector<fragility::ZflTrajectory> load_trajectories(const OutPaths& out, int count) {
  std::vector<fragility::ZflTrajectory> trajs;
  trajs.reserve(count);
  for (int k = 0; k < count; ++k)
    trajs.push_back(trajectory_from_csv(io::read_file(out.traj(k).string()),
                                        "storm_" + std::to_string(k)));
  return trajs;
}

inline void stage_graphs(const RunConfig& cfg, const OutPaths& out) {
  Manifest man = load_manifest(out.dir);
  detail::begin_stage(man, "graphs", out.dir);

  auto trajs = load_trajectories(out, cfg.rainfall.count);
  // the held-out storm stays out of everything trained offline
  std::vector<fragility::ZflTrajectory> train;
  for (std::size_t k = 0; k < trajs.size(); ++k)
    if (static_cast<int>(k) != man.loso_storm) train.push_back(trajs[k]);

  std::vector<fragility::ZflSnapshot> snaps;
  for (const auto& t : train)
    for (int h = 0; h < t.hours(); ++h) snaps.push_back(t.snapshot(h));

  auto g1 = graphs::build_sa_graph(snaps, cfg.sa_graph_threshold, cfg.graph_top_k);
  auto g2 = graphs::build_stf_graph(train, cfg.stf_graph_threshold, cfg.graph_top_k);
  io::write_file(out.g1().string(), graph_to_csv(g1));
  io::write_file(out.g2().string(), graph_to_csv(g2));
  detail::end_stage(man, "graphs", out.dir, {"g1.csv", "g2.csv"});
}

inline void stage_train_sa(const RunConfig& cfg, const OutPaths& out) {
  Manifest man = load_manifest(out.dir);
  detail::begin_stage(man, "train-sa", out.dir);

  const auto city = city_from_text(io::read_file(out.city().string()));
  const Matrix w = zone_matrix_from_csv(io::read_file(out.conditioning().string()));
  const Matrix e = zone_matrix_from_csv(io::read_file(out.attributes().string()));
  const Matrix w_star = sa::select_conditioning(w);
  const auto centroids = city.zone_centroids();
  auto g1 = graph_from_csv(io::read_file(out.g1().string()));

  auto trajs = load_trajectories(out, cfg.rainfall.count);
  std::vector<fragility::ZflTrajectory> train;
  for (std::size_t k = 0; k < trajs.size(); ++k)
    if (static_cast<int>(k) != man.loso_storm) train.push_back(trajs[k]);

  std::vector<std::string> artifacts;
  std::vector<sa::SaModel> models(cfg.sa_ratios.size());
  std::vector<sa::SaTrainReport> reports(cfg.sa_ratios.size());
  detail::parallel_for(static_cast<int>(cfg.sa_ratios.size()), cfg.jobs, [&](int i) {
    const double ratio = cfg.sa_ratios[i];
    models[i] = sa::sa_train(train, ratio, g1, w_star, e, centroids, cfg.sa_params,
                             cfg.seed ^ (0x5a00 + static_cast<std::uint64_t>(i)), &reports[i]);
  });
  for (std::size_t i = 0; i < cfg.sa_ratios.size(); ++i) {
    ckpt::save(sa::to_checkpoint(models[i]), out.sa_model(cfg.sa_ratios[i]).string());
    artifacts.push_back(out.sa_model(cfg.sa_ratios[i]).filename().string());
    std::string curve = "epoch,train_loss,val_mae\n";
    for (std::size_t ep = 0; ep < reports[i].epoch_train_loss.size(); ++ep)
      curve += std::to_string(ep) + "," + io::fmt_g17(reports[i].epoch_train_loss[ep]) + "," +
               io::fmt_g17(reports[i].epoch_val_mae[ep]) + "\n";
    const std::string name =
        out.sa_model(cfg.sa_ratios[i]).stem().string() + "_curve.csv";
    io::write_file((out.dir / name).string(), curve);
    artifacts.push_back(name);
  }
  detail::end_stage(man, "train-sa", out.dir, artifacts);
}

inline void stage_train_stf(const RunConfig& cfg, const OutPaths& out) {
  Manifest man = load_manifest(out.dir);
  detail::begin_stage(man, "train-stf", out.dir);

  auto g2 = graph_from_csv(io::read_file(out.g2().string()));
  const auto storms = storms_from_csv(io::read_file(out.storms().string()));
  auto trajs = load_trajectories(out, cfg.rainfall.count);

  std::vector<stf::Window> windows;
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    if (static_cast<int>(k) == man.loso_storm) continue;  // LOSO protocol
    auto w = stf::make_training_windows(trajs[k], storms[k], cfg.stf_params.history);
    windows.insert(windows.end(), w.begin(), w.end());
  }

  stf::StfModel model, model_nr;
  stf::StfTrainReport rep, rep_nr;
  detail::parallel_for(2, cfg.jobs, [&](int i) {
    if (i == 0)
      model = stf::stf_train(windows, g2, cfg.stf_params, cfg.seed ^ 0xf100, false, &rep);
    else
      model_nr = stf::ablate_rainfall(windows, g2, cfg.stf_params, cfg.seed ^ 0xf100, &rep_nr);
  });
  ckpt::save(stf::to_checkpoint(model), out.stf_model().string());
  ckpt::save(stf::to_checkpoint(model_nr), out.stf_nr_model().string());
  const auto curve_csv = [](const stf::StfTrainReport& r) {
    std::string s = "epoch,train_loss,val_loss\n";
    for (std::size_t ep = 0; ep < r.epoch_train_loss.size(); ++ep)
      s += std::to_string(ep) + "," + io::fmt_g17(r.epoch_train_loss[ep]) + "," +
           io::fmt_g17(r.epoch_val_loss[ep]) + "\n";
    return s;
  };
  io::write_file((out.dir / "stf_curve.csv").string(), curve_csv(rep));
  io::write_file((out.dir / "stf_nr_curve.csv").string(), curve_csv(rep_nr));
  detail::end_stage(man, "train-stf", out.dir,
                    {"stf.ckpt", "stf_nr.ckpt", "stf_curve.csv", "stf_nr_curve.csv"});
}

// the whole offline build; aborts carry the failing stage's name
inline void run_offline(const RunConfig& cfg, const fs::path& dir) {
  const OutPaths out(dir);
  fs::create_directories(dir);
  const auto guard = [&](const char* stage, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& ex) {
      throw std::runtime_error(std::string(stage) + ": " + ex.what());
    }
  };
  guard("worldgen", [&] { stage_worldgen(cfg, out); });
  guard("simulate", [&] { stage_simulate(cfg, out); });
  guard("graphs", [&] { stage_graphs(cfg, out); });
  guard("train-sa", [&] { stage_train_sa(cfg, out); });
  guard("train-stf", [&] { stage_train_stf(cfg, out); });
}

// ---- online event machinery ----

struct EventArtifacts {
  worldgen::CityModel city;
  Matrix conditioning;  // M x 7
  Matrix w_star;        // M x 4
  Matrix attributes;    // M x 4
  std::vector<std::pair<double, double>> centroids;
  graphs::ErzGraph g1, g2;
  std::vector<sa::SaModel> sa_models;
  stf::StfModel stf_model;
  stf::StfModel stf_nr;
  int loso_storm = -1;
  worldgen::Hyetograph true_rain;
  worldgen::Hyetograph biased_rain;
  fragility::ZflTrajectory truth;
  worldgen::DepthField truth_depths;
  std::optional<std::map<int, std::vector<cim::Post>>> posts_override;
};

inline EventArtifacts load_event_artifacts(const RunConfig& cfg, const fs::path& dir) {
  const OutPaths out(dir);
  Manifest man = load_manifest(dir);
  for (const char* stage : {"worldgen", "simulate", "graphs", "train-sa", "train-stf"})
    if (!man.stages.count(stage) || man.stages.at(stage) != "complete")
      throw std::runtime_error(std::string("missing offline artifacts: stage ") + stage +
                               " has not completed");

  EventArtifacts a;
  a.city = city_from_text(io::read_file(out.city().string()));
  a.conditioning = zone_matrix_from_csv(io::read_file(out.conditioning().string()));
  a.w_star = sa::select_conditioning(a.conditioning);
  a.attributes = zone_matrix_from_csv(io::read_file(out.attributes().string()));
  a.centroids = a.city.zone_centroids();
  a.g1 = graph_from_csv(io::read_file(out.g1().string()));
  a.g2 = graph_from_csv(io::read_file(out.g2().string()));
  for (double ratio : cfg.sa_ratios)
    a.sa_models.push_back(sa::from_checkpoint(ckpt::load(out.sa_model(ratio).string())));
  a.stf_model = stf::from_checkpoint(ckpt::load(out.stf_model().string()));
  a.stf_nr = stf::from_checkpoint(ckpt::load(out.stf_nr_model().string()));

  a.loso_storm = man.loso_storm;
  const auto storms = storms_from_csv(io::read_file(out.storms().string()));
  a.true_rain = storms.at(a.loso_storm);
  a.biased_rain = inject_forecast_bias(a.true_rain, cfg.event.bias_factor);
  a.truth = trajectory_from_csv(io::read_file(out.traj(a.loso_storm).string()),
                                "storm_" + std::to_string(a.loso_storm));
  a.truth_depths =
      worldgen::simulate_flood(a.city, a.true_rain, cfg.substeps_per_hour, cfg.world);
  return a;
}

// the SA model whose training ratio sits nearest the realized coverage
inline const sa::SaModel& select_sa_model(const std::vector<sa::SaModel>& models,
                                          double coverage) {
  if (models.empty()) throw std::invalid_argument("select_sa_model: no models");
  std::size_t best = 0;
  for (std::size_t i = 1; i < models.size(); ++i)
    if (std::abs(models[i].ratio_tag - coverage) < std::abs(models[best].ratio_tag - coverage))
      best = i;
  return models[best];
}

struct CycleRecord {
  int t = 0;
  Regime regime = Regime::stf_ol_fr;
  double coverage = 0.0;
  bool assimilated = false;
  bool degraded = false;  // CRAF cycle that fell back to UR behavior
  std::vector<int> observed_zones;
  std::vector<double> y_tau;                  // SA-completed state when assimilated
  std::vector<std::vector<double>> forecast;  // horizon x M
  std::vector<std::vector<double>> truth;     // horizon x M
  std::vector<double> mae_h;
  std::vector<double> rmse_h;
  double duration_ms = 0.0;
};

// One rolling update cycle (Fig. 2): advance the history by the model's own
// one-step prediction, assimilate crowd evidence when the regime allows it,
// then roll the forecast out over the horizon.
inline CycleRecord update_cycle(stf::HistoryBuffer& buffer, const EventArtifacts& art,
                                const RunConfig& cfg, Regime regime, int t,
                                const std::vector<cim::Post>& posts,
                                const std::vector<bool>& escalation) {
  const auto t_start = std::chrono::steady_clock::now();
  const int m = art.city.zone_count;
  const int total_hours = art.truth.hours();

  CycleRecord rec;
  rec.t = t;
  rec.regime = regime;

  // rain actually measured for the hour just elapsed (FR keeps the fixed forecast)
  const double rain_t =
      regime == Regime::stf_ol_fr ? art.biased_rain.mm_per_h[t] : art.true_rain.mm_per_h[t];
  const stf::StfModel& model = art.stf_model;
  std::vector<double> zhat = stf::stf_step(buffer, rain_t, art.g2, model, m);
  buffer.push({zhat, stf::SourceTag::model_predicted, t, rain_t});

  if (regime == Regime::craf) {
    const sa::Observation obs = cim::cim_observe(posts, art.city, art.conditioning,
                                                 cfg.fragility_params, cfg.cim_params, t);
    const bool in_window = cfg.event.assimilation == AssimilationMode::always ||
                           (cfg.event.assimilation == AssimilationMode::escalation &&
                            escalation[t]);
    rec.coverage = obs.coverage(m);
    for (const auto& [zone, v] : obs.entries) rec.observed_zones.push_back(zone);
    if (!obs.empty() && in_window) {
      const sa::SaModel& sa_model = select_sa_model(art.sa_models, rec.coverage);
      fragility::ZflSnapshot y =
          sa::sa_infer(obs, art.w_star, art.attributes, art.centroids, art.g1, sa_model);
      buffer.replace(t, y.z, stf::SourceTag::sa_inferred);
      rec.assimilated = true;
      rec.y_tau = y.z;
    } else {
      rec.degraded = true;  // no usable observation: this cycle behaves like UR
    }
  }

  const int horizon = std::min(cfg.event.horizon, total_hours - 1 - t);
  if (horizon >= 1) {
    // rollout rain: model history rains (zero-padded) then forecast rain
    std::vector<double> rain;
    const int have = static_cast<int>(buffer.entries.size());
    for (int s = 0; s < model.history - have; ++s) rain.push_back(0.0);
    for (const auto& e : buffer.entries) rain.push_back(e.rain_mm_h);
    for (int h = t + 1; h <= t + horizon; ++h) rain.push_back(art.biased_rain.mm_per_h[h]);

    std::vector<std::vector<double>> hist;
    for (int s = 0; s < model.history - have; ++s) hist.emplace_back(m, 0.0);
    for (const auto& e : buffer.entries) hist.push_back(e.z);

    rec.forecast = stf::stf_rollout(rain, hist, horizon, art.g2, model);
    for (int h = 1; h <= horizon; ++h) {
      std::vector<double> row(m);
      for (int j = 0; j < m; ++j) row[j] = art.truth.z(t + h, j);
      rec.truth.push_back(std::move(row));
    }
    for (int h = 0; h < horizon; ++h) {
      rec.mae_h.push_back(mae(rec.forecast[h], rec.truth[h]));
      rec.rmse_h.push_back(rmse(rec.forecast[h], rec.truth[h]));
    }
  }

  rec.duration_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t_start)
                        .count();
  return rec;
}

struct EventResult {
  std::vector<CycleRecord> cycles;
  std::map<int, std::vector<cim::Post>> posts_by_hour;
};

inline EventResult run_event(const EventArtifacts& art, const RunConfig& cfg, Regime regime) {
  const int total_hours = art.truth.hours();
  const auto escalation = escalation_hours(art.true_rain);

  stf::HistoryBuffer buffer;
  buffer.capacity = art.stf_model.history;

  EventResult result;
  for (int t = 0; t + 1 < total_hours; ++t) {
    std::vector<cim::Post> posts;
    if (regime == Regime::craf) {
      if (art.posts_override) {
        auto it = art.posts_override->find(t);
        if (it != art.posts_override->end()) posts = it->second;
      } else {
        posts = cim::synth_crowd(art.truth_depths, art.city, cfg.crowd, cfg.seed, t);
      }
      result.posts_by_hour[t] = posts;
    }
    result.cycles.push_back(update_cycle(buffer, art, cfg, regime, t, posts, escalation));
  }
  return result;
}

// ---- forecast log persistence ----
// The jsonl is deterministic; wall-clock timings go to a separate csv.

inline std::string forecast_log_to_jsonl(const std::vector<CycleRecord>& cycles) {
  std::ostringstream out;
  for (const CycleRecord& c : cycles) {
    nlohmann::json j;
    j["t"] = c.t;
    j["regime"] = to_string(c.regime);
    j["coverage"] = c.coverage;
    j["assimilated"] = c.assimilated;
    j["degraded"] = c.degraded;
    j["observed_zones"] = c.observed_zones;
    if (!c.y_tau.empty()) j["y"] = c.y_tau;
    j["forecast"] = c.forecast;
    j["truth"] = c.truth;
    j["mae"] = c.mae_h;
    j["rmse"] = c.rmse_h;
    out << j.dump() << "\n";
  }
  return out.str();
}

inline std::vector<CycleRecord> forecast_log_from_jsonl(const std::string& text) {
  std::vector<CycleRecord> cycles;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (io::trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CycleRecord c;
    c.t = j.at("t").get<int>();
    c.regime = regime_from_string(j.at("regime").get<std::string>());
    c.coverage = j.value("coverage", 0.0);
    c.assimilated = j.value("assimilated", false);
    c.degraded = j.value("degraded", false);
    if (j.contains("observed_zones"))
      c.observed_zones = j["observed_zones"].get<std::vector<int>>();
    if (j.contains("y")) c.y_tau = j["y"].get<std::vector<double>>();
    c.forecast = j.at("forecast").get<std::vector<std::vector<double>>>();
    c.truth = j.at("truth").get<std::vector<std::vector<double>>>();
    c.mae_h = j.at("mae").get<std::vector<double>>();
    c.rmse_h = j.at("rmse").get<std::vector<double>>();
    cycles.push_back(std::move(c));
  }
  return cycles;
}

inline std::string timings_to_csv(const std::vector<CycleRecord>& cycles) {
  std::string s = "t,duration_ms\n";
  for (const CycleRecord& c : cycles)
    s += std::to_string(c.t) + "," + io::fmt_g17(c.duration_ms) + "\n";
  return s;
}

// ---- evaluation over logs ----

struct HorizonMetrics {
  std::vector<double> mae;   // indexed by horizon-1
  std::vector<double> rmse;
};

inline HorizonMetrics evaluate_log(const std::vector<CycleRecord>& cycles, int max_horizon) {
  HorizonMetrics hm;
  hm.mae.assign(max_horizon, 0.0);
  hm.rmse.assign(max_horizon, 0.0);
  std::vector<int> counts(max_horizon, 0);
  for (const CycleRecord& c : cycles) {
    for (std::size_t h = 0; h < c.mae_h.size() && h < static_cast<std::size_t>(max_horizon); ++h) {
      hm.mae[h] += c.mae_h[h];
      hm.rmse[h] += c.rmse_h[h] * c.rmse_h[h];
      counts[h]++;
    }
  }
  for (int h = 0; h < max_horizon; ++h) {
    if (!counts[h]) continue;
    hm.mae[h] /= counts[h];
    hm.rmse[h] = std::sqrt(hm.rmse[h] / counts[h]);
  }
  return hm;
}

// mean MAE over forecast hours 1-3 of one cycle, the decision-window statistic
inline double short_horizon_mae(const CycleRecord& c) {
  if (c.mae_h.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  return (c.mae_h[0] + c.mae_h[1] + c.mae_h[2]) / 3.0;
}

struct RegimeComparison {
  std::vector<int> cycle_hours;
  std::vector<double> fr_mae13, ur_mae13, craf_mae13;
  std::vector<double> reduction_vs_fr_pct, reduction_vs_ur_pct;
  std::vector<double> truth_mean, truth_std;
  std::vector<bool> craf_assimilated;
  int best_consecutive(double min_fr_pct, double min_ur_pct) const {
    int best = 0, run = 0;
    for (std::size_t i = 0; i < cycle_hours.size(); ++i) {
      if (reduction_vs_fr_pct[i] >= min_fr_pct && reduction_vs_ur_pct[i] >= min_ur_pct)
        best = std::max(best, ++run);
      else
        run = 0;
    }
    return best;
  }
};

inline RegimeComparison compare_regimes(const std::vector<CycleRecord>& fr,
                                        const std::vector<CycleRecord>& ur,
                                        const std::vector<CycleRecord>& craf) {
  if (fr.size() != ur.size() || fr.size() != craf.size())
    throw std::invalid_argument("compare_regimes: cycle counts differ");
  RegimeComparison cmp;
  for (std::size_t i = 0; i < fr.size(); ++i) {
    const double a = short_horizon_mae(fr[i]);
    const double b = short_horizon_mae(ur[i]);
    const double c = short_horizon_mae(craf[i]);
    if (std::isnan(a) || std::isnan(b) || std::isnan(c)) continue;
    cmp.cycle_hours.push_back(fr[i].t);
    cmp.fr_mae13.push_back(a);
    cmp.ur_mae13.push_back(b);
    cmp.craf_mae13.push_back(c);
    cmp.reduction_vs_fr_pct.push_back(a > 0.0 ? 100.0 * (1.0 - c / a) : 0.0);
    cmp.reduction_vs_ur_pct.push_back(b > 0.0 ? 100.0 * (1.0 - c / b) : 0.0);
    cmp.craf_assimilated.push_back(craf[i].assimilated);
    // spread of the reference state across zones at this cycle's init time
    double mean = 0.0, var = 0.0;
    const auto& row0 = craf[i].truth.front();
    for (double v : row0) mean += v;
    mean /= row0.size();
    for (double v : row0) var += (v - mean) * (v - mean);
    cmp.truth_mean.push_back(mean);
    cmp.truth_std.push_back(std::sqrt(var / row0.size()));
  }
  return cmp;
}

// ---- report files ----

inline std::string horizon_metrics_csv(const HorizonMetrics& hm) {
  std::string s = "horizon_h,mae,rmse\n";
  for (std::size_t h = 0; h < hm.mae.size(); ++h)
    s += std::to_string(h + 1) + "," + io::fmt_g17(hm.mae[h]) + "," + io::fmt_g17(hm.rmse[h]) +
         "\n";
  return s;
}

inline std::string zone_errors_csv(const std::vector<CycleRecord>& cycles, int zones) {
  std::vector<double> err(zones, 0.0);
  std::vector<int> n(zones, 0);
  for (const CycleRecord& c : cycles)
    for (std::size_t h = 0; h < c.forecast.size(); ++h)
      for (int j = 0; j < zones; ++j) {
        err[j] += std::abs(c.forecast[h][j] - c.truth[h][j]);
        n[j]++;
      }
  std::string s = "zone,mae\n";
  for (int j = 0; j < zones; ++j)
    s += std::to_string(j + 1) + "," + io::fmt_g17(n[j] ? err[j] / n[j] : 0.0) + "\n";
  return s;
}

inline std::string regime_comparison_csv(const RegimeComparison& cmp) {
  std::string s =
      "cycle_t,assimilated,fr_mae_1_3h,ur_mae_1_3h,craf_mae_1_3h,"
      "reduction_vs_fr_pct,reduction_vs_ur_pct,truth_mean,truth_std\n";
  for (std::size_t i = 0; i < cmp.cycle_hours.size(); ++i) {
    s += std::to_string(cmp.cycle_hours[i]) + "," +
         (cmp.craf_assimilated[i] ? "1" : "0") + "," + io::fmt_g17(cmp.fr_mae13[i]) + "," +
         io::fmt_g17(cmp.ur_mae13[i]) + "," + io::fmt_g17(cmp.craf_mae13[i]) + "," +
         io::fmt_g17(cmp.reduction_vs_fr_pct[i]) + "," +
         io::fmt_g17(cmp.reduction_vs_ur_pct[i]) + "," + io::fmt_g17(cmp.truth_mean[i]) + "," +
         io::fmt_g17(cmp.truth_std[i]) + "\n";
  }
  return s;
}

inline std::string plot_long_csv(
    const std::map<std::string, std::vector<CycleRecord>>& logs) {
  std::string s = "regime,cycle_t,horizon_h,mae,rmse\n";
  for (const auto& [name, cycles] : logs)
    for (const CycleRecord& c : cycles)
      for (std::size_t h = 0; h < c.mae_h.size(); ++h)
        s += name + "," + std::to_string(c.t) + "," + std::to_string(h + 1) + "," +
             io::fmt_g17(c.mae_h[h]) + "," + io::fmt_g17(c.rmse_h[h]) + "\n";
  return s;
}

}  // namespace craf::pipeline
