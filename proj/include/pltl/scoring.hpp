#pragma once

// Frame-level diarization error rate and turn-count error.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pltl/common.hpp"
#include "pltl/primary_id.hpp"
#include "pltl/rttm.hpp"

namespace pltl {

struct DerBreakdown {
  std::size_t l_fa = 0;
  std::size_t l_miss = 0;
  std::size_t l_err = 0;
  std::size_t l_total = 0;

  double der() const {
    if (l_total == 0) throw UndefinedResult("der: reference has no speech");
    return double(l_fa + l_miss + l_err) / double(l_total);
  }
};

// One 10 ms frame is the scoring unit; the three classes are fixed, so no
// speaker mapping is searched.
inline DerBreakdown der(const std::vector<FrameLabel>& hyp, const std::vector<FrameLabel>& ref) {
  if (hyp.size() != ref.size()) throw Error("der: hypothesis and reference lengths differ");
  DerBreakdown b;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const bool rs = ref[i] != FrameLabel::nonspeech;
    const bool hs = hyp[i] != FrameLabel::nonspeech;
    b.l_total += rs;
    if (!rs && hs) ++b.l_fa;
    if (rs && !hs) ++b.l_miss;
    if (rs && hs && ref[i] != hyp[i]) ++b.l_err;
  }
  if (b.l_total == 0) throw UndefinedResult("der: reference has no speech");
  return b;
}

inline DerBreakdown der(const ChannelDiarization& hyp, const ChannelDiarization& ref) {
  return der(hyp.labels, ref.labels);
}

// Unweighted mean of per-channel DER, in percent.
inline double average_der(const std::vector<DerBreakdown>& b) {
  if (b.empty()) throw Error("average_der: no channels");
  double s = 0.0;
  for (const auto& x : b) s += x.der();
  return 100.0 * s / double(b.size());
}

inline double turn_error(double estimated, double truth) {
  if (truth == 0.0) throw UndefinedResult("turn_error: true turn count is zero");
  return 100.0 * std::abs(estimated - truth) / truth;
}

// Rasterizes "primary"/"secondary" turns of one channel by frame midpoint;
// primary wins where the two overlap.
inline std::vector<FrameLabel> rasterize_channel(const std::vector<RttmTurn>& turns, int channel,
                                                 std::size_t num_frames) {
  std::vector<FrameLabel> out(num_frames, FrameLabel::nonspeech);
  for (const auto& t : turns) {
    if (t.channel != channel) continue;
    FrameLabel l;
    if (t.name == "primary")
      l = FrameLabel::primary;
    else if (t.name == "secondary")
      l = FrameLabel::secondary;
    else
      throw Error("rasterize_channel: channel " + std::to_string(channel) + " has speaker '" + t.name +
                  "'; expected primary or secondary");
    for (std::size_t i = 0; i < num_frames; ++i) {
      const double m = frame_midpoint(i);
      if (m >= t.start && m < t.end() && out[i] != FrameLabel::primary) out[i] = l;
    }
  }
  return out;
}

struct ScoreReport {
  std::map<int, DerBreakdown> channels;
  double average_der = 0.0;  // percent
};

// Scores every channel present in the reference.
inline ScoreReport score_rttm(const std::vector<RttmTurn>& hyp, const std::vector<RttmTurn>& ref,
                              std::size_t num_frames = 0) {
  if (num_frames == 0) num_frames = std::max(frames_covering(hyp), frames_covering(ref));
  std::set<int> chans;
  for (const auto& t : ref) chans.insert(t.channel);
  if (chans.empty()) throw UndefinedResult("score: reference has no turns");
  ScoreReport r;
  std::vector<DerBreakdown> all;
  for (int c : chans) {
    const auto b = der(rasterize_channel(hyp, c, num_frames), rasterize_channel(ref, c, num_frames));
    r.channels[c] = b;
    all.push_back(b);
  }
  r.average_der = average_der(all);
  return r;
}

inline nlohmann::ordered_json to_json(const DerBreakdown& b) {
  return {{"l_fa", b.l_fa}, {"l_miss", b.l_miss}, {"l_err", b.l_err}, {"l_total", b.l_total}, {"der", b.der()}};
}

inline nlohmann::ordered_json to_json(const ScoreReport& r) {
  nlohmann::ordered_json ch = nlohmann::ordered_json::array();
  for (const auto& [c, b] : r.channels) {
    auto j = to_json(b);
    j["channel_id"] = c;
    ch.push_back(j);
  }
  return {{"channels", ch}, {"average_der_percent", r.average_der}};
}

}  // namespace pltl
