// JSON-lines serialization for crowd posts:
//   {"id":str,"t":int,"text":str,"x":float?,"y":float?,"zone":int?,"source":str}
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "craf/cim.hpp"

namespace craf::cim {

inline std::string posts_to_jsonl(const std::vector<Post>& posts) {
  std::ostringstream out;
  for (const Post& p : posts) {
    nlohmann::json j;
    j["id"] = p.id;
    j["t"] = p.t;
    j["text"] = p.text;
    if (p.x) j["x"] = *p.x;
    if (p.y) j["y"] = *p.y;
    if (p.zone) j["zone"] = *p.zone;
    j["source"] = p.source;
    out << j.dump() << "\n";
  }
  return out.str();
}

inline std::vector<Post> posts_from_jsonl(const std::string& text) {
  std::vector<Post> posts;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Post p;
    p.id = j.at("id").get<std::string>();
    p.t = j.at("t").get<int>();
    p.text = j.at("text").get<std::string>();
    if (j.contains("x") && !j["x"].is_null()) p.x = j["x"].get<double>();
    if (j.contains("y") && !j["y"].is_null()) p.y = j["y"].get<double>();
    if (j.contains("zone") && !j["zone"].is_null()) p.zone = j["zone"].get<int>();
    if (j.contains("source")) p.source = j["source"].get<std::string>();
    posts.push_back(std::move(p));
  }
  return posts;
}

}  // namespace craf::cim
