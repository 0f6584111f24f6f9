#pragma once

// Turn counts and participation shares, with CSV, JSON and SVG output.

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pltl/change_detection.hpp"
#include "pltl/common.hpp"
#include "pltl/primary_id.hpp"

namespace pltl {

struct ChannelTurns {
  int channel_id = 0;
  std::string member;
  std::size_t change_points = 0;
  std::size_t member_turns = 0;  // changes into the wearer's own speech
};

struct TurnReport {
  std::vector<ChannelTurns> channels;
  double session_average = 0.0;
};

// A change on a channel counts for its wearer when the frame after it is
// primary on that channel.
inline TurnReport count_turns(const std::vector<ChangePointList>& changes,
                              const std::vector<ChannelDiarization>& tracks, const std::vector<std::string>& members) {
  if (changes.size() != tracks.size() || members.size() != tracks.size())
    throw Error("count_turns: changes, tracks and members must align");
  TurnReport r;
  std::size_t total = 0;
  for (std::size_t c = 0; c < changes.size(); ++c) {
    ChannelTurns t;
    t.channel_id = tracks[c].channel_id;
    t.member = members[c];
    t.change_points = changes[c].size();
    for (std::size_t k : changes[c].frames)
      if (k < tracks[c].labels.size() && tracks[c].labels[k] == FrameLabel::primary) ++t.member_turns;
    total += t.change_points;
    r.channels.push_back(t);
  }
  if (!changes.empty()) r.session_average = double(total) / double(changes.size());
  return r;
}

struct MemberShare {
  std::string member;
  std::size_t frames = 0;
  double seconds = 0.0;
  double proportion = 0.0;           // of all detected speech
  double share_of_attributed = 0.0;  // of speech assigned to some member
};

struct ParticipationReport {
  std::vector<MemberShare> members;
  std::size_t unattributed_frames = 0;
  double unattributed_seconds = 0.0;
  double unattributed_proportion = 0.0;
  std::size_t speech_frames = 0;
  bool undefined = false;  // no speech at all; proportions left at zero
};

inline ParticipationReport participation(const SessionDiarization& d) {
  ParticipationReport r;
  for (const auto& m : d.members) r.members.push_back({m});
  std::size_t attributed = 0;
  for (int s : d.speaker) {
    if (s == kNonspeech) continue;
    ++r.speech_frames;
    if (s == kUnattributed) {
      ++r.unattributed_frames;
    } else {
      ++r.members[std::size_t(s)].frames;
      ++attributed;
    }
  }
  r.unattributed_seconds = double(r.unattributed_frames) * kHopSeconds;
  for (auto& m : r.members) m.seconds = double(m.frames) * kHopSeconds;
  if (r.speech_frames == 0) {
    r.undefined = true;
    return r;
  }
  for (auto& m : r.members) {
    m.proportion = double(m.frames) / double(r.speech_frames);
    if (attributed > 0) m.share_of_attributed = double(m.frames) / double(attributed);
  }
  r.unattributed_proportion = double(r.unattributed_frames) / double(r.speech_frames);
  return r;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string fmt12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  return buf;
}

}  // namespace detail

inline std::string turns_csv(const TurnReport& r) {
  std::string out = "channel_id,member,change_points,member_turns\n";
  for (const auto& c : r.channels)
    out += std::to_string(c.channel_id) + "," + c.member + "," + std::to_string(c.change_points) + "," +
           std::to_string(c.member_turns) + "\n";
  return out;
}

inline std::string participation_csv(const ParticipationReport& r) {
  std::string out = "member,frames,seconds,proportion,share_of_attributed\n";
  for (const auto& m : r.members)
    out += m.member + "," + std::to_string(m.frames) + "," + detail::fmt12(m.seconds) + "," +
           detail::fmt12(m.proportion) + "," + detail::fmt12(m.share_of_attributed) + "\n";
  out += "unattributed," + std::to_string(r.unattributed_frames) + "," + detail::fmt12(r.unattributed_seconds) + "," +
         detail::fmt12(r.unattributed_proportion) + ",\n";
  return out;
}

// Reads participation_csv output back.
inline ParticipationReport parse_participation_csv(const std::string& text) {
  ParticipationReport r;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "member,frames,seconds,proportion,share_of_attributed")
    throw ParseError("participation.csv", 1, "unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.push_back("");
    if (f.size() != 5) throw ParseError("participation.csv", lineno, "expected 5 fields");
    try {
      if (f[0] == "unattributed") {
        r.unattributed_frames = std::stoul(f[1]);
        r.unattributed_seconds = std::stod(f[2]);
        r.unattributed_proportion = std::stod(f[3]);
      } else {
        r.members.push_back({f[0], std::stoul(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
      }
    } catch (const std::exception&) {
      throw ParseError("participation.csv", lineno, "bad number");
    }
  }
  r.speech_frames = r.unattributed_frames;
  for (const auto& m : r.members) r.speech_frames += m.frames;
  r.undefined = r.speech_frames == 0;
  return r;
}

inline nlohmann::ordered_json to_json(const TurnReport& r) {
  nlohmann::ordered_json ch = nlohmann::ordered_json::array();
  for (const auto& c : r.channels)
    ch.push_back({{"channel_id", c.channel_id},
                  {"member", c.member},
                  {"change_points", c.change_points},
                  {"member_turns", c.member_turns}});
  return {{"channels", ch}, {"session_average", r.session_average}};
}

inline nlohmann::ordered_json to_json(const ParticipationReport& r) {
  nlohmann::ordered_json m = nlohmann::ordered_json::array();
  for (const auto& x : r.members)
    m.push_back({{"member", x.member},
                 {"frames", x.frames},
                 {"seconds", x.seconds},
                 {"proportion", x.proportion},
                 {"share_of_attributed", x.share_of_attributed}});
  return {{"members", m},
          {"unattributed", {{"frames", r.unattributed_frames},
                            {"seconds", r.unattributed_seconds},
                            {"proportion", r.unattributed_proportion}}},
          {"speech_frames", r.speech_frames},
          {"undefined", r.undefined}};
}

// Pie chart of member proportions (plus unattributed speech when present).
// Each wedge carries its sweep in degrees as data-angle.
inline std::string participation_svg(const ParticipationReport& r, const std::string& title = "Participation") {
  static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                  "#edc948", "#b07aa1", "#ff9da7", "#9c755f"};
  struct Wedge {
    std::string label;
    double share;
    std::string colour;
  };
  std::vector<Wedge> wedges;
  for (std::size_t i = 0; i < r.members.size(); ++i)
    if (r.members[i].proportion > 0.0)
      wedges.push_back({r.members[i].member, r.members[i].proportion, palette[i % std::size(palette)]});
  if (r.unattributed_proportion > 0.0) wedges.push_back({"unattributed", r.unattributed_proportion, "#bab0ac"});

  const double cx = 160, cy = 170, rad = 120;
  char buf[512];
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"340\" viewBox=\"0 0 480 340\">\n";
  out += "<title>" + title + "</title>\n";
  out += "<text x=\"160\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + title +
         "</text>\n";
  if (wedges.empty()) {
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" fill=\"#eeeeee\" data-angle=\"0.000000\"/>\n", cx, cy,
                  rad);
    out += buf;
  }
  double at = 0.0;  // degrees clockwise from 12 o'clock
  for (std::size_t i = 0; i < wedges.size(); ++i) {
    const auto& w = wedges[i];
    const double sweep = 360.0 * w.share;
    if (wedges.size() == 1) {
      std::snprintf(buf, sizeof buf,
                    "<circle class=\"wedge\" cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" fill=\"%s\" data-label=\"%s\" "
                    "data-angle=\"%.6f\"/>\n",
                    cx, cy, rad, w.colour.c_str(), w.label.c_str(), sweep);
    } else {
      const double a0 = at * std::numbers::pi / 180.0, a1 = (at + sweep) * std::numbers::pi / 180.0;
      std::snprintf(buf, sizeof buf,
                    "<path class=\"wedge\" d=\"M %.3f %.3f L %.3f %.3f A %.3f %.3f 0 %d 1 %.3f %.3f Z\" fill=\"%s\" "
                    "stroke=\"white\" data-label=\"%s\" data-angle=\"%.6f\"/>\n",
                    cx, cy, cx + rad * std::sin(a0), cy - rad * std::cos(a0), rad, rad, sweep > 180.0 ? 1 : 0,
                    cx + rad * std::sin(a1), cy - rad * std::cos(a1), w.colour.c_str(), w.label.c_str(), sweep);
    }
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"310\" y=\"%.0f\" width=\"14\" height=\"14\" fill=\"%s\"/>"
                  "<text x=\"330\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"13\">%s %.1f%%</text>\n",
                  60.0 + 22.0 * double(i), w.colour.c_str(), 72.0 + 22.0 * double(i), w.label.c_str(),
                  100.0 * w.share);
    out += buf;
    at += sweep;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace pltl
