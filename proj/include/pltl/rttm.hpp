#pragma once

// RTTM reading and writing, restricted to SPEAKER records:
//   SPEAKER <file> <chnl> <tbeg> <tdur> <NA> <NA> <name> <NA> <NA>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pltl/common.hpp"

namespace pltl {

struct RttmTurn {
  std::string file;
  int channel = 1;
  double start = 0.0;
  double duration = 0.0;
  std::string name;

  double end() const { return start + duration; }
};

inline std::vector<RttmTurn> parse_rttm(std::istream& in, const std::string& source) {
  std::vector<RttmTurn> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string tok; ls >> tok;) f.push_back(tok);
    if (f.empty() || f[0].rfind(";;", 0) == 0) continue;
    if (f[0] != "SPEAKER") continue;
    if (f.size() < 8) throw ParseError(source, lineno, "SPEAKER record needs at least 8 fields, got " + std::to_string(f.size()));
    RttmTurn t;
    t.file = f[1];
    try {
      std::size_t used = 0;
      t.channel = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("channel");
      t.start = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("tbeg");
      t.duration = std::stod(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("tdur");
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "bad channel or time field");
    }
    if (!std::isfinite(t.start) || !std::isfinite(t.duration) || t.start < 0.0 || t.duration < 0.0)
      throw ParseError(source, lineno, "negative or non-finite time");
    t.name = f[7];
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<RttmTurn> load_rttm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open RTTM " + path.string());
  return parse_rttm(in, path.string());
}

inline std::string format_rttm(const std::vector<RttmTurn>& turns) {
  std::string out;
  char buf[64];
  for (const auto& t : turns) {
    out += "SPEAKER " + t.file + " " + std::to_string(t.channel) + " ";
    std::snprintf(buf, sizeof buf, "%.3f %.3f", t.start, t.duration);
    out += buf;
    out += " <NA> <NA> " + t.name + " <NA> <NA>\n";
  }
  return out;
}

// Turns for each maximal run of equal, named frame labels. `name_of` maps a
// label to its speaker name, or to an empty string for frames to skip.
template <class Label, class NameOf>
std::vector<RttmTurn> runs_to_turns(const std::vector<Label>& labels, const std::string& file, int channel,
                                    NameOf name_of) {
  std::vector<RttmTurn> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    const std::string name = name_of(labels[i]);
    if (!name.empty()) {
      const double a = frame_cell_start(i);
      out.push_back({file, channel, a, frame_cell_start(j) - a, name});
    }
    i = j;
  }
  return out;
}

// Last frame index + 1 whose midpoint lies before the end of some turn.
inline std::size_t frames_covering(const std::vector<RttmTurn>& turns) {
  double end = 0.0;
  for (const auto& t : turns) end = std::max(end, t.end());
  if (end <= frame_midpoint(0)) return 0;
  return std::size_t(std::ceil((end - frame_midpoint(0)) / kHopSeconds - 1e-9));
}

}  // namespace pltl
