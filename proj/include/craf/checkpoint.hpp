// Versioned text checkpoints: header key/value lines, then parameter matrices
// at 17 significant digits so a save/load cycle is lossless.
#pragma once

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "craf/matrix.hpp"
#include "craf/textio.hpp"

namespace craf::ckpt {

inline constexpr const char* kFormatId = "craf-checkpoint v1";

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Matrix>> params;

  std::string header_at(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw std::runtime_error("checkpoint: missing header " + key);
    return it->second;
  }
};

inline std::string serialize(const Checkpoint& ck) {
  std::ostringstream out;
  out << kFormatId << "\n";
  for (const auto& [k, v] : ck.header) out << k << " " << v << "\n";
  for (const auto& [name, m] : ck.params) {
    out << "param " << name << " " << m.rows() << " " << m.cols() << "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        if (c) out << " ";
        out << io::fmt_g17(m(r, c));
      }
      out << "\n";
    }
  }
  return out.str();
}

inline Checkpoint parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || io::trim(line) != kFormatId)
    throw std::runtime_error("checkpoint: bad format id");
  Checkpoint ck;
  while (std::getline(in, line)) {
    line = io::trim(line);
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "param") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      ls >> name >> rows >> cols;
      Matrix m(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated " + name);
        std::istringstream vs(line);
        for (std::size_t c = 0; c < cols; ++c)
          if (!(vs >> m(r, c))) throw std::runtime_error("checkpoint: short row in " + name);
      }
      ck.params.emplace_back(name, std::move(m));
    } else {
      std::string rest;
      std::getline(ls, rest);
      ck.header[key] = io::trim(rest);
    }
  }
  return ck;
}

inline void save(const Checkpoint& ck, const std::string& path) {
  io::write_file(path, serialize(ck));
}

inline Checkpoint load(const std::string& path) { return parse(io::read_file(path)); }

inline std::string vec_to_str(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += io::fmt_g17(v[i]);
  }
  return s;
}

inline std::vector<double> str_to_vec(const std::string& s) {
  std::vector<double> out;
  for (const std::string& part : io::split(s, ','))
    if (!io::trim(part).empty()) out.push_back(io::parse_double(part));
  return out;
}

}  // namespace craf::ckpt
