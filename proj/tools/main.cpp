// craf: desk-scale closed-loop flood-impact forecasting.
//
// Offline: worldgen -> simulate -> graphs -> train-sa -> train-stf (or the
// `offline` shortcut). Online: run-event under fr / ur / craf, then evaluate
// and report. Outputs land in --out with a manifest keyed by the config hash.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "craf/config.hpp"
#include "craf/pipeline.hpp"
#include "craf/posts_io.hpp"

namespace fs = std::filesystem;
using namespace craf;
using pipeline::OutPaths;
using pipeline::Regime;
using pipeline::RunConfig;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const GlobalArgs& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = pipeline::load_config(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  return cfg;
}

void write_event_outputs(const OutPaths& out, Regime regime,
                         const pipeline::EventResult& result) {
  const std::string slug = pipeline::regime_slug(regime);
  io::write_file(out.forecast_log(slug).string(),
                 pipeline::forecast_log_to_jsonl(result.cycles));
  io::write_file(out.timings(slug).string(), pipeline::timings_to_csv(result.cycles));
  if (regime == Regime::craf) {
    std::vector<cim::Post> all;
    for (const auto& [t, posts] : result.posts_by_hour)
      all.insert(all.end(), posts.begin(), posts.end());
    io::write_file(out.posts(slug).string(), cim::posts_to_jsonl(all));
  }
}

std::map<std::string, std::vector<pipeline::CycleRecord>> load_available_logs(
    const OutPaths& out) {
  std::map<std::string, std::vector<pipeline::CycleRecord>> logs;
  for (const char* slug : {"fr", "ur", "craf"}) {
    const fs::path p = out.forecast_log(slug);
    if (fs::exists(p))
      logs[slug] = pipeline::forecast_log_from_jsonl(io::read_file(p.string()));
  }
  return logs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"craf: closed-loop flood impact forecasting at desk scale"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file (defaults used when absent)");
  app.add_option("--out", g.out_dir, "run directory for artifacts")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", g.seed, "override the config seed");

  auto* cmd_worldgen = app.add_subcommand("worldgen", "generate the synthetic city");
  auto* cmd_simulate =
      app.add_subcommand("simulate", "generate the storm ensemble and ZFL trajectories");
  std::vector<int> dump_depths;
  cmd_simulate->add_option("--depths", dump_depths,
                           "also write depth-field CSVs for these storm ids");
  auto* cmd_graphs = app.add_subcommand("graphs", "build the G1/G2 dependency graphs");
  auto* cmd_train_sa = app.add_subcommand("train-sa", "train the ratio-tagged SA models");
  auto* cmd_train_stf = app.add_subcommand("train-stf", "train the STF and STF-NR models");
  auto* cmd_offline = app.add_subcommand("offline", "run the whole offline pipeline");

  auto* cmd_run = app.add_subcommand("run-event", "roll the held-out storm under one regime");
  std::string regime_arg = "craf";
  cmd_run->add_option("--regime", regime_arg, "fr | ur | craf")
      ->check(CLI::IsMember({"fr", "ur", "craf"}))
      ->capture_default_str();
  std::string posts_path;
  cmd_run->add_option("--posts", posts_path, "external posts jsonl (craf regime only)");

  auto* cmd_evaluate =
      app.add_subcommand("evaluate", "per-horizon MAE/RMSE for every recorded regime log");
  auto* cmd_report = app.add_subcommand("report", "write report tables and the summary");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  std::string stage = "setup";
  try {
    RunConfig cfg = resolve_config(g);
    const OutPaths out{fs::path(g.out_dir)};
    fs::create_directories(out.dir);

    if (*cmd_worldgen) {
      stage = "worldgen";
      pipeline::stage_worldgen(cfg, out);
      std::cout << "worldgen: city with " << cfg.world.zones << " zones written to "
                << out.city().string() << "\n";
    } else if (*cmd_simulate) {
      stage = "simulate";
      pipeline::stage_simulate(cfg, out, dump_depths);
      std::cout << "simulate: " << cfg.rainfall.count << " storms, LOSO storm "
                << pipeline::load_manifest(out.dir).loso_storm << "\n";
    } else if (*cmd_graphs) {
      stage = "graphs";
      pipeline::stage_graphs(cfg, out);
      std::cout << "graphs: wrote " << out.g1().string() << " and " << out.g2().string() << "\n";
    } else if (*cmd_train_sa) {
      stage = "train-sa";
      pipeline::stage_train_sa(cfg, out);
      std::cout << "train-sa: " << cfg.sa_ratios.size() << " checkpoints written\n";
    } else if (*cmd_train_stf) {
      stage = "train-stf";
      pipeline::stage_train_stf(cfg, out);
      std::cout << "train-stf: wrote " << out.stf_model().string() << " and "
                << out.stf_nr_model().string() << "\n";
    } else if (*cmd_offline) {
      stage = "offline";
      pipeline::run_offline(cfg, out.dir);
      std::cout << "offline: all stages complete, config hash "
                << pipeline::config_hash(cfg) << "\n";
    } else if (*cmd_run) {
      stage = "run-event";
      const Regime regime = pipeline::regime_from_string(regime_arg);
      auto art = pipeline::load_event_artifacts(cfg, out.dir);
      if (!posts_path.empty()) {
        std::map<int, std::vector<cim::Post>> by_hour;
        for (auto& p : cim::posts_from_jsonl(io::read_file(posts_path)))
          by_hour[p.t].push_back(p);
        art.posts_override = std::move(by_hour);
      }
      const auto result = pipeline::run_event(art, cfg, regime);
      write_event_outputs(out, regime, result);
      double total_ms = 0.0;
      for (const auto& c : result.cycles) total_ms = std::max(total_ms, c.duration_ms);
      std::cout << "run-event " << pipeline::to_string(regime) << ": "
                << result.cycles.size() << " cycles on storm " << art.loso_storm
                << ", slowest cycle " << io::fmt_g17(total_ms) << " ms\n";
    } else if (*cmd_evaluate) {
      stage = "evaluate";
      const auto logs = load_available_logs(out);
      if (logs.empty()) throw std::runtime_error("no forecast logs in " + g.out_dir);
      for (const auto& [slug, cycles] : logs) {
        const auto hm = pipeline::evaluate_log(cycles, cfg.event.horizon);
        const fs::path p = out.dir / ("metrics_" + slug + ".csv");
        io::write_file(p.string(), pipeline::horizon_metrics_csv(hm));
        std::cout << "evaluate " << slug << ": +1h MAE " << io::fmt_g17(hm.mae.front())
                  << " -> " << p.string() << "\n";
      }
    } else if (*cmd_report) {
      stage = "report";
      const auto logs = load_available_logs(out);
      if (logs.empty()) throw std::runtime_error("no forecast logs in " + g.out_dir);
      const auto man = pipeline::load_manifest(out.dir);
      std::ostringstream summary;
      summary << "craf run summary\n";
      summary << "config_hash: " << man.config_hash << "\n";
      summary << "seed: " << man.seed << "\n";
      summary << "loso_storm: " << man.loso_storm << "\n";

      for (const auto& [slug, cycles] : logs) {
        const auto hm = pipeline::evaluate_log(cycles, cfg.event.horizon);
        io::write_file((out.dir / ("report_horizons_" + slug + ".csv")).string(),
                       pipeline::horizon_metrics_csv(hm));
        const int zones = cycles.front().truth.front().size();
        io::write_file((out.dir / ("report_zones_" + slug + ".csv")).string(),
                       pipeline::zone_errors_csv(cycles, zones));
        double mae13 = 0.0;
        int n13 = 0;
        for (const auto& c : cycles) {
          const double v = pipeline::short_horizon_mae(c);
          if (!std::isnan(v)) {
            mae13 += v;
            ++n13;
          }
        }
        summary << slug << ": mean 1-3h MAE " << io::fmt_g17(n13 ? mae13 / n13 : 0.0) << " over "
                << n13 << " cycles\n";
      }
      io::write_file((out.dir / "plot_long.csv").string(), pipeline::plot_long_csv(logs));

      if (logs.count("fr") && logs.count("ur") && logs.count("craf")) {
        const auto cmp =
            pipeline::compare_regimes(logs.at("fr"), logs.at("ur"), logs.at("craf"));
        io::write_file((out.dir / "report_regimes.csv").string(),
                       pipeline::regime_comparison_csv(cmp));
        summary << "regime comparison: best consecutive cycles at (>=50% vs FR, >=30% vs UR): "
                << cmp.best_consecutive(50.0, 30.0) << "\n";
      }
      io::write_file((out.dir / "summary.txt").string(), summary.str());
      std::cout << "report: files written to " << g.out_dir << "\n";
    }
  } catch (const std::exception& ex) {
    std::cerr << "error [" << stage << "]: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
