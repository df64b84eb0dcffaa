// Crowdsourced impact monitoring: keyword relevance filter, depth-cue and
// location extraction from post text, constrained spatial interpolation, and
// conversion of observed depths to zone-level functionality loss. Also the
// synthetic post generator that drives closed-loop experiments.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "craf/fragility.hpp"
#include "craf/matrix.hpp"
#include "craf/rng.hpp"
#include "craf/sa.hpp"
#include "craf/textio.hpp"
#include "craf/worldgen.hpp"

namespace craf::cim {

struct Post {
  std::string id;
  int t = 0;  // hour
  std::string text;
  std::optional<double> x;  // meters in the city frame
  std::optional<double> y;
  std::optional<int> zone;  // 1-based, when the author tagged one
  std::string source = "synthetic";
};

enum class RefObject { human_body, shared_bicycle, car };

inline std::string to_string(RefObject o) {
  switch (o) {
    case RefObject::human_body: return "human-body";
    case RefObject::shared_bicycle: return "shared-bicycle";
    case RefObject::car: return "car";
  }
  return "?";
}

struct DepthCue {
  RefObject object = RefObject::human_body;
  char level = 'A';
  double depth_m = 0.0;
  std::string phrase;
};

// depth mapping entry: phrase pattern -> (object, level, depth)
struct CueRule {
  std::string phrase;  // matched case-insensitively anywhere in the text
  RefObject object;
  char level;
  double depth_m;
};

// Hierarchical reference mapping. Entries are ordered most-specific first;
// extract_depth_cue takes the first hit.
inline const std::vector<CueRule>& default_cue_rules() {
  static const std::vector<CueRule> rules = {
      {"neck", RefObject::human_body, 'G', 1.49},
      {"chest", RefObject::human_body, 'F', 1.28},
      {"waist", RefObject::human_body, 'E', 0.85},
      {"齐腰", RefObject::human_body, 'E', 0.85},
      {"thigh", RefObject::human_body, 'D', 0.64},
      {"knee", RefObject::human_body, 'C', 0.45},
      {"齐膝", RefObject::human_body, 'C', 0.45},
      {"calf", RefObject::human_body, 'B', 0.3},
      {"ankle", RefObject::human_body, 'A', 0.1},
      {"saddle", RefObject::shared_bicycle, 'C', 0.6},
      {"top of the wheel", RefObject::shared_bicycle, 'B', 0.5},
      {"center of the wheel", RefObject::shared_bicycle, 'A', 0.3},
      {"door handle", RefObject::car, 'C', 0.8},
      {"top of the tire", RefObject::car, 'B', 0.66},
      {"center of the tire", RefObject::car, 'A', 0.33},
  };
  return rules;
}

inline const std::vector<std::string>& default_keywords() {
  static const std::vector<std::string> kw = {
      // rainfall
      "rainstorm", "暴雨", "heavy rain", "大雨",
      // typhoon
      "typhoon", "台风", "haikui", "海葵",
      // flooding
      "flood", "洪涝", "inundation", "淹", "waterlogging", "积水",
      "waist-deep", "齐腰深", "knee-deep", "齐膝深",
  };
  return kw;
}

inline std::string lower_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// CSV data files so new phrases need no code change:
//   keywords.csv    one keyword per line, header "keyword"
//   depth_cues.csv  header "phrase,object,level,depth_m"
inline std::vector<std::string> load_keywords(const std::string& path) {
  std::vector<std::string> out;
  auto lines = io::read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string kw = io::trim(lines[i]);
    if (!kw.empty()) out.push_back(kw);
  }
  return out;
}

inline std::vector<CueRule> load_cue_rules(const std::string& path) {
  std::vector<CueRule> out;
  auto lines = io::read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (io::trim(lines[i]).empty()) continue;
    auto f = io::split(lines[i], ',');
    if (f.size() != 4) throw std::runtime_error("depth cue csv: bad line " + lines[i]);
    CueRule r;
    r.phrase = io::trim(f[0]);
    const std::string obj = io::trim(f[1]);
    if (obj == "human-body")
      r.object = RefObject::human_body;
    else if (obj == "shared-bicycle")
      r.object = RefObject::shared_bicycle;
    else if (obj == "car")
      r.object = RefObject::car;
    else
      throw std::runtime_error("depth cue csv: unknown object " + obj);
    r.level = io::trim(f[2]).at(0);
    r.depth_m = io::parse_double(f[3]);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string keywords_csv(const std::vector<std::string>& kw) {
  std::string s = "keyword\n";
  for (const auto& k : kw) s += k + "\n";
  return s;
}

inline std::string cue_rules_csv(const std::vector<CueRule>& rules) {
  std::string s = "phrase,object,level,depth_m\n";
  for (const auto& r : rules)
    s += r.phrase + "," + to_string(r.object) + "," + std::string(1, r.level) + "," +
         io::fmt_shortest(r.depth_m) + "\n";
  return s;
}

// true iff the text contains any configured keyword (Latin matched
// case-insensitively, CJK byte-exact)
inline bool filter_relevant(const std::string& text,
                            const std::vector<std::string>& keywords = default_keywords()) {
  const std::string low = lower_ascii(text);
  for (const std::string& kw : keywords)
    if (low.find(lower_ascii(kw)) != std::string::npos) return true;
  return false;
}

// first matching phrase wins; numeric "<x> m of water" style reports map
// directly to their stated depth
inline std::optional<DepthCue> extract_depth_cue(
    const std::string& text, const std::vector<CueRule>& rules = default_cue_rules()) {
  const std::string low = lower_ascii(text);
  for (const CueRule& r : rules) {
    if (low.find(lower_ascii(r.phrase)) != std::string::npos) {
      DepthCue cue;
      cue.object = r.object;
      cue.level = r.level;
      cue.depth_m = r.depth_m;
      cue.phrase = r.phrase;
      return cue;
    }
  }
  static const std::regex numeric(R"((\d+(?:\.\d+)?)\s*(?:m|meter|meters|米)\s*(?:of\s+)?(?:water|深|积水))",
                                  std::regex::icase);
  std::smatch m;
  if (std::regex_search(text, m, numeric)) {
    DepthCue cue;
    cue.object = RefObject::human_body;
    cue.level = '#';
    cue.depth_m = io::parse_double(m[1].str());
    cue.phrase = m[0].str();
    if (cue.depth_m > 0.0) return cue;
  }
  return std::nullopt;
}

// explicit zone tag, then coordinates to the nearest centroid, then gazetteer
// name lookup; unresolvable posts yield nothing
inline std::optional<int> localize(const Post& post, const worldgen::CityModel& city) {
  if (post.zone) {
    if (*post.zone >= 1 && *post.zone <= city.zone_count) return *post.zone;
    return std::nullopt;
  }
  if (post.x && post.y) {
    const auto centroids = city.zone_centroids();
    int best = -1;
    double bd = 1e300;
    for (int z = 0; z < city.zone_count; ++z) {
      const double dx = *post.x - centroids[z].first;
      const double dy = *post.y - centroids[z].second;
      const double d2 = dx * dx + dy * dy;
      if (d2 < bd) {
        bd = d2;
        best = z;
      }
    }
    if (best >= 0) return best + 1;
  }
  const std::string low = lower_ascii(post.text);
  for (int z = 1; z <= city.zone_count; ++z) {
    if (low.find(lower_ascii(city.zone_name(z))) != std::string::npos) return z;
  }
  return std::nullopt;
}

struct InterpolationParams {
  double radius_m = 300.0;     // donor search radius
  double max_elev_diff_m = 1.0;  // constrained growth: elevation gate
};

// Zones with direct reports keep the median of their estimates; zones within
// the radius of a donor and inside the elevation gate get the IDW (power 2)
// of in-radius donors; everything else stays unobserved.
inline std::map<int, double> interpolate_depths(
    const std::vector<std::pair<int, double>>& estimates, const worldgen::CityModel& city,
    const Matrix& conditioning, const InterpolationParams& ip = {}) {
  std::map<int, double> out;
  if (estimates.empty()) return out;

  std::map<int, std::vector<double>> per_zone;
  for (const auto& [zone, depth] : estimates) per_zone[zone].push_back(depth);
  for (auto& [zone, depths] : per_zone) {
    std::sort(depths.begin(), depths.end());
    const std::size_t n = depths.size();
    out[zone] = n % 2 ? depths[n / 2] : 0.5 * (depths[n / 2 - 1] + depths[n / 2]);
  }

  const auto centroids = city.zone_centroids();
  for (int z = 1; z <= city.zone_count; ++z) {
    if (out.count(z)) continue;
    double num = 0.0, den = 0.0;
    bool eligible = false;
    for (const auto& [dz, depth] : out) {
      if (per_zone.find(dz) == per_zone.end()) continue;  // only direct donors
      const double dx = centroids[z - 1].first - centroids[dz - 1].first;
      const double dy = centroids[z - 1].second - centroids[dz - 1].second;
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist > ip.radius_m) continue;
      if (std::abs(conditioning(z - 1, 0) - conditioning(dz - 1, 0)) > ip.max_elev_diff_m)
        continue;
      const double w = 1.0 / std::max(dist * dist, 1e-6);
      num += w * depth;
      den += w;
      eligible = true;
    }
    if (eligible) out[z] = num / den;
  }
  return out;
}

// observed depth -> zone functionality loss through the same fragility curves
// as the supervisory generator, under a uniform-depth-per-zone assumption
inline sa::Observation observe_zfl(const std::map<int, double>& depth_by_zone,
                                   const worldgen::CityModel& city,
                                   const fragility::FragilityParams& params, int timestamp) {
  const Matrix e = city.archetype_proportions();
  sa::Observation obs;
  obs.t = timestamp;
  for (const auto& [zone, depth] : depth_by_zone) {
    double z = 0.0;
    for (int a = 0; a < worldgen::kArchetypeCount; ++a) {
      if (e(zone - 1, a) == 0.0) continue;
      z += e(zone - 1, a) * fragility::zone_nonfunctional(depth, a, params);
    }
    obs.entries[zone] = z;
  }
  return obs;
}

struct CrowdParams {
  double base_rate = 0.2;     // per zone-hour post probability scale
  double depth_mid_m = 0.35;  // logistic midpoint
  double depth_scale_m = 0.15;
  double min_depth_m = 0.05;  // below this nobody reports
  int max_posts_per_zone = 2;
};

// Posts arrive per zone with probability increasing in the zone's mean
// building-cell depth; each post carries the cue phrase nearest the true depth
// plus the zone's gazetteer name.
inline std::vector<Post> synth_crowd(const worldgen::DepthField& depths,
                                     const worldgen::CityModel& city, const CrowdParams& cp,
                                     std::uint64_t seed, int hour) {
  if (hour < 0 || hour >= depths.hours)
    throw std::invalid_argument("synth_crowd: hour " + std::to_string(hour) + " outside field");
  Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(hour) + 7770);

  // mean depth over each zone's building cells
  std::vector<double> zone_depth(city.zone_count, 0.0);
  std::vector<int> zone_n(city.zone_count, 0);
  for (const worldgen::Building& b : city.buildings) {
    zone_depth[b.zone - 1] += depths.at(hour, city.idx(b.cell.row, b.cell.col));
    zone_n[b.zone - 1]++;
  }
  for (int z = 0; z < city.zone_count; ++z) zone_depth[z] /= zone_n[z];

  const auto& rules = default_cue_rules();
  std::vector<Post> posts;
  for (int z = 1; z <= city.zone_count; ++z) {
    const double d = zone_depth[z - 1];
    if (d < cp.min_depth_m) continue;
    const double p =
        cp.base_rate / (1.0 + std::exp(-(d - cp.depth_mid_m) / cp.depth_scale_m));
    for (int k = 0; k < cp.max_posts_per_zone; ++k) {
      if (rng.uniform() >= p) continue;
      // phrase whose mapped depth is nearest the true zone depth
      const CueRule* best = &rules.front();
      for (const CueRule& r : rules)
        if (std::abs(r.depth_m - d) < std::abs(best->depth_m - d)) best = &r;
      Post post;
      post.t = hour;
      post.id = "p" + std::to_string(hour) + "_" + std::to_string(z) + "_" + std::to_string(k);
      post.text = "Flooding at " + city.zone_name(z) + ", water up to the " + best->phrase;
      post.source = "synthetic";
      posts.push_back(std::move(post));
    }
  }
  return posts;
}

// CIM observation operator end to end: filter, parse, localize, median-reduce,
// interpolate, convert to ZFL
inline sa::Observation cim_observe(const std::vector<Post>& posts,
                                   const worldgen::CityModel& city, const Matrix& conditioning,
                                   const fragility::FragilityParams& fparams,
                                   const InterpolationParams& ip, int timestamp,
                                   const std::vector<std::string>& keywords = default_keywords(),
                                   const std::vector<CueRule>& rules = default_cue_rules()) {
  std::vector<std::pair<int, double>> estimates;
  std::vector<std::string> seen_ids;
  for (const Post& post : posts) {
    if (std::find(seen_ids.begin(), seen_ids.end(), post.id) != seen_ids.end()) continue;
    seen_ids.push_back(post.id);
    if (!filter_relevant(post.text, keywords)) continue;
    const auto cue = extract_depth_cue(post.text, rules);
    if (!cue) continue;
    const auto zone = localize(post, city);
    if (!zone) continue;
    estimates.push_back({*zone, cue->depth_m});
  }
  const auto depth_map = interpolate_depths(estimates, city, conditioning, ip);
  return observe_zfl(depth_map, city, fparams, timestamp);
}

}  // namespace craf::cim
