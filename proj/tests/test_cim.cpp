#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "craf/cim.hpp"
#include "craf/posts_io.hpp"

using namespace craf;
using namespace craf::cim;

namespace {

worldgen::CityModel small_city(std::uint64_t seed = 5) {
  worldgen::WorldParams wp;
  wp.rows = 32;
  wp.cols = 32;
  wp.zones = 8;
  wp.buildings = 80;
  return worldgen::generate_city(seed, wp);
}

}  // namespace

TEST_CASE("keyword filter accepts flood-related text in both scripts") {
  REQUIRE(filter_relevant("knee-deep water on Main St"));
  REQUIRE(filter_relevant("台风海葵来了"));
  REQUIRE(filter_relevant("heavy RAIN all night"));
  REQUIRE(filter_relevant("街道积水严重"));
  REQUIRE_FALSE(filter_relevant("lovely sunset tonight"));
  REQUIRE_FALSE(filter_relevant(""));
}

TEST_CASE("depth cues reproduce the mapping table bit-exactly") {
  struct Case {
    const char* text;
    double depth;
  };
  const Case cases[] = {
      {"water is waist-deep", 0.85},  {"up to the knee", 0.45},
      {"flooded to the car door handle", 0.8}, {"water at my ankle", 0.1},
      {"calf deep", 0.3},             {"up to the thigh", 0.64},
      {"chest-high water", 1.28},     {"water up to the neck", 1.49},
      {"bike saddle underwater", 0.6}, {"top of the wheel submerged", 0.5},
      {"center of the wheel gone", 0.3}, {"top of the tire covered", 0.66},
      {"center of the tire line", 0.33},
  };
  for (const Case& c : cases) {
    auto cue = extract_depth_cue(c.text);
    REQUIRE(cue.has_value());
    REQUIRE(cue->depth_m == c.depth);
  }
}

TEST_CASE("every mapping table entry round-trips through its own phrase") {
  for (const CueRule& r : default_cue_rules()) {
    auto cue = extract_depth_cue("water reached the " + r.phrase + " here");
    REQUIRE(cue.has_value());
    REQUIRE(cue->depth_m == r.depth_m);
    REQUIRE(cue->object == r.object);
    REQUIRE(cue->level == r.level);
  }
}

TEST_CASE("numeric depth phrases map directly") {
  auto cue = extract_depth_cue("about 0.5 m of water in the street");
  REQUIRE(cue.has_value());
  REQUIRE(cue->depth_m == 0.5);
  auto cjk = extract_depth_cue("街上有1.2米积水");
  REQUIRE(cjk.has_value());
  REQUIRE(cjk->depth_m == 1.2);
}

TEST_CASE("parser returns absence on arbitrary text") {
  REQUIRE_FALSE(extract_depth_cue("nothing to see here").has_value());
  REQUIRE_FALSE(extract_depth_cue("").has_value());
  REQUIRE_FALSE(extract_depth_cue("\xff\xfe garbage \x01").has_value());
}

TEST_CASE("localize prefers explicit zone, then coordinates, then gazetteer") {
  auto city = small_city();
  Post p;
  p.text = "water";
  p.zone = 3;
  REQUIRE(localize(p, city) == 3);

  Post q;
  q.text = "water";
  const auto centroids = city.zone_centroids();
  q.x = centroids[4].first;
  q.y = centroids[4].second;
  REQUIRE(localize(q, city) == 5);

  Post r;
  r.text = "Flooding near " + city.zone_name(7) + " now";
  REQUIRE(localize(r, city) == 7);

  Post none;
  none.text = "no cues at all";
  REQUIRE_FALSE(localize(none, city).has_value());

  Post bad;
  bad.text = "water";
  bad.zone = 999;
  REQUIRE_FALSE(localize(bad, city).has_value());
}

TEST_CASE("interpolation keeps direct estimates as medians") {
  auto city = small_city();
  Matrix cond = worldgen::derive_conditioning(city);
  std::vector<std::pair<int, double>> est = {{1, 0.4}, {1, 0.8}, {1, 0.6}, {2, 0.3}, {2, 0.5}};
  InterpolationParams ip;
  ip.radius_m = 0.0;  // no growth
  auto depth = interpolate_depths(est, city, cond, ip);
  REQUIRE(depth.size() == 2);
  REQUIRE(depth.at(1) == 0.6);
  REQUIRE(depth.at(2) == Catch::Approx(0.4));
}

TEST_CASE("empty input interpolates to nothing") {
  auto city = small_city();
  Matrix cond = worldgen::derive_conditioning(city);
  REQUIRE(interpolate_depths({}, city, cond).empty());
}

TEST_CASE("radius and elevation constraints gate the growth") {
  auto city = small_city();
  Matrix cond = worldgen::derive_conditioning(city);
  // force a flat world so only the radius gates
  for (std::size_t i = 0; i < cond.rows(); ++i) cond(i, 0) = 5.0;
  std::vector<std::pair<int, double>> est = {{1, 0.5}};
  InterpolationParams wide;
  wide.radius_m = 1e6;
  auto all = interpolate_depths(est, city, cond, wide);
  REQUIRE(all.size() == static_cast<std::size_t>(city.zone_count));
  for (const auto& [z, d] : all) REQUIRE(d == Catch::Approx(0.5));

  // a huge elevation gap blocks everything beyond the donor
  for (std::size_t i = 1; i < cond.rows(); ++i) cond(i, 0) = 100.0;
  auto gated = interpolate_depths(est, city, cond, wide);
  REQUIRE(gated.size() == 1);
}

TEST_CASE("observe_zfl matches the fragility module exactly") {
  auto city = small_city();
  auto fp = fragility::FragilityParams::defaults();
  std::map<int, double> depth = {{1, 0.0}, {2, 0.7}, {3, 10.0 * fp.median_m[0][5]}};
  auto obs = observe_zfl(depth, city, fp, 4);
  REQUIRE(obs.t == 4);
  REQUIRE(obs.entries.at(1) == 0.0);
  REQUIRE(obs.entries.at(3) > 0.99);

  // uniform-depth consistency with trajectory_from_depths
  worldgen::DepthField df;
  df.hours = 1;
  df.cells = city.rows * city.cols;
  df.depth_m.assign(df.cells, 0.7);
  auto traj = fragility::trajectory_from_depths(city, df, fp);
  REQUIRE(obs.entries.at(2) == Catch::Approx(traj.z(0, 1)).margin(1e-12));
}

TEST_CASE("synthetic crowd is silent when dry or rate is zero") {
  auto city = small_city();
  worldgen::DepthField dry;
  dry.hours = 2;
  dry.cells = city.rows * city.cols;
  dry.depth_m.assign(dry.hours * dry.cells, 0.0);
  CrowdParams cp;
  REQUIRE(synth_crowd(dry, city, cp, 1, 0).empty());

  worldgen::DepthField wet = dry;
  wet.depth_m.assign(wet.hours * wet.cells, 0.6);
  cp.base_rate = 0.0;
  REQUIRE(synth_crowd(wet, city, cp, 1, 0).empty());
}

TEST_CASE("synth_crowd round trip recovers the nearest table depth for every post") {
  auto city = small_city(11);
  worldgen::DepthField df;
  df.hours = 1;
  df.cells = city.rows * city.cols;
  df.depth_m.assign(df.cells, 0.0);
  Rng rng(3);
  for (double& d : df.depth_m) d = rng.uniform(0.0, 1.6);

  // true zone depths for the nearest-level oracle
  std::vector<double> zone_depth(city.zone_count, 0.0);
  std::vector<int> zone_n(city.zone_count, 0);
  for (const auto& b : city.buildings) {
    zone_depth[b.zone - 1] += df.at(0, city.idx(b.cell.row, b.cell.col));
    zone_n[b.zone - 1]++;
  }
  for (int z = 0; z < city.zone_count; ++z) zone_depth[z] /= zone_n[z];

  CrowdParams cp;
  cp.base_rate = 1.0;
  cp.min_depth_m = 0.0;
  auto posts = synth_crowd(df, city, cp, 42, 0);
  REQUIRE_FALSE(posts.empty());
  for (const Post& post : posts) {
    REQUIRE(filter_relevant(post.text));
    auto cue = extract_depth_cue(post.text);
    REQUIRE(cue.has_value());
    auto zone = localize(post, city);
    REQUIRE(zone.has_value());
    // nearest table depth to the true zone depth
    double best = 1e300;
    for (const CueRule& r : default_cue_rules())
      best = std::min(best, std::abs(r.depth_m - zone_depth[*zone - 1]));
    REQUIRE(std::abs(cue->depth_m - zone_depth[*zone - 1]) == Catch::Approx(best));
  }

  auto again = synth_crowd(df, city, cp, 42, 0);
  REQUIRE(again.size() == posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) REQUIRE(again[i].text == posts[i].text);
}

TEST_CASE("posts survive a jsonl round trip") {
  std::vector<Post> posts(3);
  posts[0].id = "a";
  posts[0].t = 5;
  posts[0].text = "knee-deep at Zone-3 School";
  posts[1].id = "b";
  posts[1].t = 6;
  posts[1].text = "水深0.5米";
  posts[1].x = 123.5;
  posts[1].y = 88.25;
  posts[2].id = "c";
  posts[2].t = 7;
  posts[2].text = "dry";
  posts[2].zone = 4;
  posts[2].source = "weibo";

  const std::string jsonl = posts_to_jsonl(posts);
  auto back = posts_from_jsonl(jsonl);
  REQUIRE(back.size() == 3);
  REQUIRE(back[0].id == "a");
  REQUIRE(back[1].x.has_value());
  REQUIRE(*back[1].x == 123.5);
  REQUIRE_FALSE(back[0].zone.has_value());
  REQUIRE(back[2].zone == 4);
  REQUIRE(back[2].source == "weibo");
}

TEST_CASE("cue and keyword tables round trip through their csv data files") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "craf_cim_test";
  fs::create_directories(dir);
  const std::string kw_path = (dir / "keywords.csv").string();
  const std::string cue_path = (dir / "cues.csv").string();
  io::write_file(kw_path, keywords_csv(default_keywords()));
  io::write_file(cue_path, cue_rules_csv(default_cue_rules()));

  auto kw = load_keywords(kw_path);
  REQUIRE(kw == default_keywords());
  auto rules = load_cue_rules(cue_path);
  REQUIRE(rules.size() == default_cue_rules().size());
  for (std::size_t i = 0; i < rules.size(); ++i) {
    REQUIRE(rules[i].phrase == default_cue_rules()[i].phrase);
    REQUIRE(rules[i].depth_m == default_cue_rules()[i].depth_m);
    REQUIRE(rules[i].level == default_cue_rules()[i].level);
  }
  fs::remove_all(dir);
}

TEST_CASE("cim_observe composes the full observation operator") {
  auto city = small_city(13);
  Matrix cond = worldgen::derive_conditioning(city);
  auto fp = fragility::FragilityParams::defaults();

  std::vector<Post> posts;
  Post p;
  p.id = "x1";
  p.t = 9;
  p.text = "Flooding at " + city.zone_name(2) + ", water up to the waist";
  posts.push_back(p);
  Post dup = p;  // duplicate id ignored
  posts.push_back(dup);
  Post irrelevant;
  irrelevant.id = "x2";
  irrelevant.t = 9;
  irrelevant.text = "nice day at " + city.zone_name(3);
  posts.push_back(irrelevant);

  InterpolationParams ip;
  ip.radius_m = 0.0;
  auto obs = cim_observe(posts, city, cond, fp, ip, 9);
  REQUIRE(obs.t == 9);
  REQUIRE(obs.entries.size() == 1);
  const Matrix e = city.archetype_proportions();
  double expect = 0.0;
  for (int a = 0; a < worldgen::kArchetypeCount; ++a)
    expect += e(1, a) * fragility::zone_nonfunctional(0.85, a, fp);
  REQUIRE(obs.entries.at(2) == Catch::Approx(expect).margin(1e-12));
}
