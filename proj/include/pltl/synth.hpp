#pragma once

// Deterministic synthetic multi-channel sessions with exact ground truth.
// Each member has a close-talk channel: their own voice at 0 dB, every other
// voice at the cross-channel gain, plus independent white noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pltl/audio_io.hpp"
#include "pltl/common.hpp"
#include "pltl/rttm.hpp"

namespace pltl {

struct SyntheticSpeaker {
  std::string label;
  Role role = Role::student;
  double f0 = 120.0;         // Hz
  double f1 = 600.0;         // Hz, first formant of the neutral vowel
  double f2 = 1300.0;        // Hz
  double bw1 = 80.0;         // Hz
  double bw2 = 110.0;        // Hz
  double tilt = 0.9;         // one-pole source low-pass coefficient in [0, 0.99]
  double level_db = 0.0;     // relative to the -20 dBFS reference
};

struct Utterance {
  int speaker = 0;  // index into SessionScript::speakers
  double start = 0.0;
  double end = 0.0;
};

struct ScheduleSpec {
  int turns = 30;                 // speaker switches; utterances = turns + 1
  double leader_share = 0.6;      // target fraction of speech time for the leader
  double min_utterance = 1.5;
  double max_utterance = 3.5;
  double min_gap = 0.1;
  double max_gap = 0.4;
  double lead_in = 0.5;
  double tail = 0.5;
  double overlap_fraction = 0.0;  // fraction of turn changes that overlap, <= 0.1
};

struct SessionScript {
  std::string session_id = "synthetic";
  double duration = 0.0;  // seconds; 0 = derived from the schedule
  std::uint64_t seed = 42;
  double snr_db = 20.0;
  double cross_gain_db = -6.0;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<Utterance> utterances;
  std::optional<ScheduleSpec> schedule;
};

// Well separated voices: distinct pitch, vocal-tract scale and source tilt.
inline std::vector<SyntheticSpeaker> easy_speakers(std::size_t n) {
  static constexpr double kF0[] = {105, 165, 225, 285, 135, 195, 255, 120};
  static constexpr double kScale[] = {0.86, 1.00, 1.16, 1.32, 0.93, 1.08, 1.24, 1.40};
  static constexpr double kTilt[] = {0.94, 0.80, 0.90, 0.70, 0.86, 0.75, 0.92, 0.82};
  if (n > 8) throw ConfigError("easy preset supports at most 8 speakers");
  std::vector<SyntheticSpeaker> out;
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticSpeaker s;
    s.label = i == 0 ? "Leader" : "Student" + std::to_string(i);
    s.role = i == 0 ? Role::leader : Role::student;
    s.f0 = kF0[i];
    s.f1 = 560.0 * kScale[i];
    s.f2 = 1250.0 * kScale[i];
    s.bw1 = 70.0 * kScale[i];
    s.bw2 = 100.0 * kScale[i];
    s.tilt = kTilt[i];
    out.push_back(s);
  }
  return out;
}

inline void validate(const SessionScript& s) {
  if (s.speakers.empty()) throw ConfigError("script: no speakers");
  int leaders = 0;
  for (const auto& sp : s.speakers) {
    if (sp.f0 < 80.0 || sp.f0 > 300.0) throw ConfigError("script: speaker '" + sp.label + "' f0 outside [80, 300] Hz");
    if (!(sp.f1 < sp.f2 && sp.f2 * 1.3 < 3500.0))
      throw ConfigError("script: speaker '" + sp.label + "' formants must satisfy F1 < F2 and vowel F2 < 3500 Hz");
    if (sp.tilt < 0.0 || sp.tilt > 0.99) throw ConfigError("script: speaker '" + sp.label + "' tilt outside [0, 0.99]");
    if (sp.role == Role::leader) ++leaders;
  }
  if (leaders != 1) throw ConfigError("script: exactly one leader required");
  if (s.duration < 0.0) throw ConfigError("script: negative duration");
  double prev_end = -1.0;
  for (const auto& u : s.utterances) {
    if (u.speaker < 0 || std::size_t(u.speaker) >= s.speakers.size()) throw ConfigError("script: bad utterance speaker");
    if (!(u.end > u.start) || u.start < 0.0 || u.end > s.duration + 1e-9)
      throw ConfigError("script: utterance [" + std::to_string(u.start) + ", " + std::to_string(u.end) +
                        ") outside session");
    if (u.start < prev_end - 0.3 - 1e-9) throw ConfigError("script: utterances out of order");
    prev_end = std::max(prev_end, u.end);
  }
}

inline double quantize_10ms(double t) { return std::round(t * 100.0) / 100.0; }

// Alternates the leader with randomly chosen students; leader utterances are
// stretched so the leader's share of speech approaches leader_share.
// With a positive limit, generation stops before an utterance would end past it.
inline std::vector<Utterance> generate_schedule(const ScheduleSpec& spec, std::size_t num_speakers,
                                                std::size_t leader, std::uint64_t seed, double* end_time,
                                                double limit = 0.0) {
  Rng rng(Rng::derive(seed, 999));
  std::vector<Utterance> out;
  // Leader takes every other turn; stretch factor solves share = s*L/(s*L + L).
  const double share = std::clamp(spec.leader_share, 0.05, 0.95);
  const double stretch = share / (1.0 - share);
  double t = spec.lead_in;
  std::size_t current = leader;
  for (int i = 0; i <= spec.turns; ++i) {
    if (i > 0) {
      if (num_speakers == 1) throw ConfigError("schedule: turns need at least 2 speakers");
      if (current != leader) {
        current = leader;
      } else {
        std::size_t pick = rng.index(num_speakers - 1);
        if (pick >= leader) ++pick;
        current = pick;
      }
    }
    double len = rng.uniform(spec.min_utterance, spec.max_utterance);
    if (current == leader) len = std::clamp(len * stretch, spec.min_utterance, 3.0 * spec.max_utterance);
    double start = t;
    if (i > 0 && rng.uniform() < spec.overlap_fraction) start = t - rng.uniform(0.1, 0.3);
    start = quantize_10ms(start);
    const double end = quantize_10ms(start + len);
    if (limit > 0.0 && end > limit) break;
    out.push_back({int(current), start, end});
    t = end + rng.uniform(spec.min_gap, spec.max_gap);
  }
  if (end_time) *end_time = quantize_10ms(out.empty() ? spec.lead_in : out.back().end + spec.tail);
  return out;
}

// ---------------------------------------------------------------------------
// Voice model

namespace detail {

// Two-pole resonator with unit DC gain.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;
  double step(double x, double freq, double bw) {
    const double r = std::exp(-std::numbers::pi * bw / kSampleRate);
    const double c = -r * r;
    const double b = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / kSampleRate);
    const double a = 1.0 - b - c;
    const double y = a * x + b * y1 + c * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Vowel targets relative to the neutral formants.
inline constexpr double kVowelF1[] = {1.00, 0.94, 1.06};
inline constexpr double kVowelF2[] = {1.00, 1.05, 0.95};

}  // namespace detail

// Renders one utterance of `sp` (n samples); syllables of 120-280 ms cycle
// through three vowels with a raised envelope and a slow pitch contour.
inline std::vector<double> synthesize_utterance(const SyntheticSpeaker& sp, std::size_t n, Rng& rng) {
  std::vector<double> y(n, 0.0);
  if (n == 0) return y;
  detail::Resonator r1, r2, r3;
  double phase = rng.uniform();
  double src_lp = 0.0;
  double f1 = sp.f1, f2 = sp.f2;
  const double f3 = 2500.0 * (sp.f2 / 1250.0);
  const double smooth = 1.0 - std::exp(-1.0 / (0.015 * kSampleRate));

  std::size_t syl_start = 0, syl_len = 0;
  int vowel = 0;
  const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= syl_start + syl_len) {
      syl_start = i;
      syl_len = std::size_t(rng.uniform(0.12, 0.28) * kSampleRate);
      vowel = int(rng.index(3));
    }
    const double t = double(i) / kSampleRate;
    const double f0 = sp.f0 * (1.0 + 0.015 * std::sin(2.0 * std::numbers::pi * 5.5 * t + vib_phase));
    phase += f0 / kSampleRate;
    double pulse = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulse = 1.0;
    }
    src_lp = pulse + sp.tilt * src_lp;
    const double source = src_lp + 0.03 * rng.normal();
    f1 += smooth * (sp.f1 * detail::kVowelF1[vowel] - f1);
    f2 += smooth * (sp.f2 * detail::kVowelF2[vowel] - f2);
    double v = r1.step(source, f1, sp.bw1);
    v = r2.step(v, f2, sp.bw2);
    v = r3.step(v, f3, 150.0);
    const double u = double(i - syl_start) / double(std::max<std::size_t>(syl_len, 1));
    const double env = 0.45 + 0.55 * std::sin(std::numbers::pi * std::clamp(u, 0.0, 1.0));
    y[i] = v * env;
  }
  // 40 ms onset/offset ramps
  const std::size_t ramp = std::min<std::size_t>(n / 2, std::size_t(0.04 * kSampleRate));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = double(i) / double(ramp);
    y[i] *= g;
    y[n - 1 - i] *= g;
  }
  double energy = 0.0;
  for (double v : y) energy += v * v;
  const double rms = std::sqrt(energy / double(n));
  const double target = 0.1 * std::pow(10.0, sp.level_db / 20.0);
  if (rms > 0.0)
    for (double& v : y) v *= target / rms;
  return y;
}

// ---------------------------------------------------------------------------
// Generation

struct SpeakerTruth {
  std::string label;
  Role role = Role::student;
  std::int64_t speech_ms = 0;
  int utterances = 0;
  int turns = 0;  // turns begun by this member (switches into them)
};

struct SessionTruth {
  std::string session_id;
  double duration = 0.0;
  std::size_t num_frames = 0;
  int turns_per_channel = 0;  // speaker switches audible on every channel
  std::int64_t speech_ms_total = 0;
  double leader_share = 0.0;
  std::vector<SpeakerTruth> speakers;
};

struct GeneratedSession {
  SessionScript script;  // schedule resolved
  std::vector<Waveform> channels;
  std::vector<std::vector<double>> sources;  // each speaker's clean voice track
  SessionTruth truth;
};

inline SessionTruth compute_truth(const SessionScript& s) {
  SessionTruth t;
  t.session_id = s.session_id;
  t.duration = s.duration;
  t.num_frames = FrameGrid::count(std::size_t(std::llround(s.duration * kSampleRate)));
  for (const auto& sp : s.speakers) t.speakers.push_back({sp.label, sp.role, 0, 0, 0});
  int prev = -1;
  for (const auto& u : s.utterances) {
    auto& st = t.speakers[std::size_t(u.speaker)];
    st.speech_ms += std::llround(u.end * 1000.0) - std::llround(u.start * 1000.0);
    st.utterances += 1;
    if (prev >= 0 && prev != u.speaker) {
      ++t.turns_per_channel;
      ++st.turns;
    }
    prev = u.speaker;
  }
  for (const auto& st : t.speakers) {
    t.speech_ms_total += st.speech_ms;
    if (st.role == Role::leader) t.leader_share = double(st.speech_ms);
  }
  t.leader_share = t.speech_ms_total > 0 ? t.leader_share / double(t.speech_ms_total) : 0.0;
  return t;
}

inline SessionScript resolve_schedule(SessionScript s) {
  if (s.schedule && s.utterances.empty()) {
    std::size_t leader = 0;
    for (std::size_t i = 0; i < s.speakers.size(); ++i)
      if (s.speakers[i].role == Role::leader) leader = i;
    double end = 0.0;
    const double limit = s.duration > 0.0 ? s.duration - s.schedule->tail : 0.0;
    s.utterances = generate_schedule(*s.schedule, s.speakers.size(), leader, s.seed, &end, limit);
    if (s.duration <= 0.0) s.duration = end;
  }
  if (s.duration <= 0.0) {
    double end = 0.0;
    for (const auto& u : s.utterances) end = std::max(end, u.end);
    s.duration = quantize_10ms(end + 0.5);
  }
  return s;
}

inline GeneratedSession generate_session(const SessionScript& input) {
  GeneratedSession g;
  g.script = resolve_schedule(input);
  const SessionScript& s = g.script;
  validate(s);
  const auto total = std::size_t(std::llround(s.duration * kSampleRate));
  const std::size_t ns = s.speakers.size();

  g.sources.assign(ns, std::vector<double>(total, 0.0));
  std::vector<Rng> voice_rng;
  for (std::size_t i = 0; i < ns; ++i) voice_rng.emplace_back(Rng::derive(s.seed, i));
  for (const auto& u : s.utterances) {
    const auto a = std::size_t(std::llround(u.start * kSampleRate));
    const auto b = std::min(total, std::size_t(std::llround(u.end * kSampleRate)));
    const auto speech = synthesize_utterance(s.speakers[std::size_t(u.speaker)], b - a, voice_rng[std::size_t(u.speaker)]);
    auto& dst = g.sources[std::size_t(u.speaker)];
    for (std::size_t i = 0; i < speech.size(); ++i) dst[a + i] += speech[i];
  }

  const double cross = std::pow(10.0, s.cross_gain_db / 20.0);
  const double noise_rms = 0.1 * std::pow(10.0, -s.snr_db / 20.0);
  for (std::size_t c = 0; c < ns; ++c) {
    Rng noise(Rng::derive(s.seed, 1000 + c));
    Waveform w;
    w.sample_rate = kSampleRate;
    w.bits_per_sample = 16;
    w.samples.assign(total, 0.0);
    for (std::size_t i = 0; i < total; ++i) {
      double v = noise_rms * noise.normal();
      for (std::size_t sp = 0; sp < ns; ++sp) v += (sp == c ? 1.0 : cross) * g.sources[sp][i];
      w.samples[i] = std::clamp(v, -1.0, 32767.0 / 32768.0);
    }
    g.channels.push_back(std::move(w));
  }
  g.truth = compute_truth(s);
  return g;
}

// ---------------------------------------------------------------------------
// Script JSON

inline SessionScript parse_script(const nlohmann::json& j) {
  SessionScript s;
  std::string where = "/";
  try {
    auto get_num = [&](const nlohmann::json& obj, const char* key, double dflt, const std::string& path) {
      where = path + "/" + key;
      if (!obj.contains(key)) return dflt;
      return obj.at(key).get<double>();
    };
    where = "/session_id";
    if (j.contains("session_id")) s.session_id = j.at("session_id").get<std::string>();
    s.duration = get_num(j, "duration", 0.0, "");
    where = "/seed";
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    s.snr_db = get_num(j, "snr_db", s.snr_db, "");
    s.cross_gain_db = get_num(j, "cross_gain_db", s.cross_gain_db, "");

    std::size_t preset_count = 0;
    where = "/preset";
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset != "easy") throw ConfigError("script: unknown preset '" + preset + "' at /preset");
      where = "/num_speakers";
      preset_count = j.at("num_speakers").get<std::size_t>();
      s.speakers = easy_speakers(preset_count);
    }
    if (j.contains("speakers")) {
      const auto& arr = j.at("speakers");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/speakers/" + std::to_string(i);
        const auto& o = arr.at(i);
        SyntheticSpeaker sp = i < s.speakers.size() ? s.speakers[i] : SyntheticSpeaker{};
        where = p + "/label";
        if (o.contains("label")) sp.label = o.at("label").get<std::string>();
        where = p + "/role";
        if (o.contains("role")) {
          const auto r = o.at("role").get<std::string>();
          if (r != "leader" && r != "student") throw ConfigError("script: bad role at " + where);
          sp.role = r == "leader" ? Role::leader : Role::student;
        }
        sp.f0 = get_num(o, "f0", sp.f0, p);
        sp.f1 = get_num(o, "f1", sp.f1, p);
        sp.f2 = get_num(o, "f2", sp.f2, p);
        sp.bw1 = get_num(o, "bw1", sp.bw1, p);
        sp.bw2 = get_num(o, "bw2", sp.bw2, p);
        sp.tilt = get_num(o, "tilt", sp.tilt, p);
        sp.level_db = get_num(o, "level_db", sp.level_db, p);
        if (i < s.speakers.size())
          s.speakers[i] = sp;
        else
          s.speakers.push_back(sp);
      }
    }
    where = "/utterances";
    if (j.contains("utterances")) {
      const auto& arr = j.at("utterances");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/utterances/" + std::to_string(i);
        const auto& o = arr.at(i);
        Utterance u;
        where = p + "/speaker";
        const auto& who = o.at("speaker");
        if (who.is_number_integer()) {
          u.speaker = who.get<int>();
        } else {
          const auto name = who.get<std::string>();
          u.speaker = -1;
          for (std::size_t k = 0; k < s.speakers.size(); ++k)
            if (s.speakers[k].label == name) u.speaker = int(k);
          if (u.speaker < 0) throw ConfigError("script: unknown speaker '" + name + "' at " + where);
        }
        where = p + "/start";
        u.start = o.at("start").get<double>();
        where = p + "/end";
        u.end = o.at("end").get<double>();
        s.utterances.push_back(u);
      }
    }
    where = "/schedule";
    if (j.contains("schedule")) {
      const auto& o = j.at("schedule");
      ScheduleSpec sc;
      where = "/schedule/turns";
      if (o.contains("turns")) sc.turns = o.at("turns").get<int>();
      sc.leader_share = get_num(o, "leader_share", sc.leader_share, "/schedule");
      sc.min_utterance = get_num(o, "min_utterance", sc.min_utterance, "/schedule");
      sc.max_utterance = get_num(o, "max_utterance", sc.max_utterance, "/schedule");
      sc.min_gap = get_num(o, "min_gap", sc.min_gap, "/schedule");
      sc.max_gap = get_num(o, "max_gap", sc.max_gap, "/schedule");
      sc.lead_in = get_num(o, "lead_in", sc.lead_in, "/schedule");
      sc.tail = get_num(o, "tail", sc.tail, "/schedule");
      sc.overlap_fraction = get_num(o, "overlap_fraction", sc.overlap_fraction, "/schedule");
      if (sc.turns < 0 || sc.min_utterance <= 0.0 || sc.max_utterance < sc.min_utterance || sc.min_gap < 0.0 ||
          sc.max_gap < sc.min_gap || sc.overlap_fraction < 0.0 || sc.overlap_fraction > 0.1)
        throw ConfigError("script: invalid schedule parameters at /schedule");
      s.schedule = sc;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("script: invalid value at " + where + ": " + e.what());
  }
  if (s.speakers.empty()) throw ConfigError("script: no speakers at /speakers");
  return s;
}

inline SessionScript load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open script");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_script(j);
}

inline nlohmann::json to_json(const SessionTruth& t) {
  nlohmann::json j;
  j["session_id"] = t.session_id;
  j["duration"] = t.duration;
  j["num_frames"] = t.num_frames;
  j["turns_per_channel"] = t.turns_per_channel;
  j["speech_seconds_total"] = double(t.speech_ms_total) / 1000.0;
  j["leader_share"] = t.leader_share;
  auto& members = j["members"] = nlohmann::json::array();
  for (const auto& s : t.speakers) {
    members.push_back({{"label", s.label},
                       {"role", to_string(s.role)},
                       {"speech_seconds", double(s.speech_ms) / 1000.0},
                       {"utterances", s.utterances},
                       {"turns", s.turns}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Reference files

// Channel c (id c + 1) hears every utterance: its wearer's as primary, the
// rest as secondary.
inline std::vector<RttmTurn> reference_channel_turns(const SessionScript& s) {
  std::vector<RttmTurn> out;
  for (std::size_t c = 0; c < s.speakers.size(); ++c)
    for (const auto& u : s.utterances)
      out.push_back({s.session_id, int(c) + 1, u.start, u.end - u.start,
                     std::size_t(u.speaker) == c ? "primary" : "secondary"});
  return out;
}

inline std::vector<RttmTurn> reference_session_turns(const SessionScript& s) {
  std::vector<RttmTurn> out;
  for (const auto& u : s.utterances)
    out.push_back({s.session_id, 1, u.start, u.end - u.start, s.speakers[std::size_t(u.speaker)].label});
  return out;
}

// Union of all utterances, in order.
inline std::vector<std::pair<double, double>> speech_intervals(const SessionScript& s) {
  std::vector<std::pair<double, double>> iv;
  for (const auto& u : s.utterances) iv.emplace_back(u.start, u.end);
  std::sort(iv.begin(), iv.end());
  std::vector<std::pair<double, double>> out;
  for (const auto& x : iv) {
    if (!out.empty() && x.first <= out.back().second)
      out.back().second = std::max(out.back().second, x.second);
    else
      out.push_back(x);
  }
  return out;
}

inline SessionManifest synth_manifest(const SessionScript& s, const std::filesystem::path& dir) {
  SessionManifest m;
  m.session_id = s.session_id;
  for (std::size_t c = 0; c < s.speakers.size(); ++c) {
    ChannelSpec spec;
    spec.channel_id = int(c) + 1;
    spec.member_label = s.speakers[c].label;
    spec.role = s.speakers[c].role;
    spec.audio_path = dir / ("ch" + std::to_string(c + 1) + ".wav");
    spec.sad_path = dir / ("sad_ch" + std::to_string(c + 1) + ".lab");
    m.channels.push_back(spec);
  }
  m.notes = "synthetic session, seed " + std::to_string(s.seed);
  return m;
}

// Writes ch<N>.wav, sad_ch<N>.lab, manifest.json, ref_channels.rttm,
// ref_session.rttm and truth.json into dir.
inline void write_session(const GeneratedSession& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const SessionScript& s = g.script;
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  };
  std::string labels;
  char buf[64];
  for (const auto& [a, b] : speech_intervals(s)) {
    std::snprintf(buf, sizeof buf, "%.3f %.3f speech\n", a, b);
    labels += buf;
  }
  for (std::size_t c = 0; c < g.channels.size(); ++c) {
    write_wav16(dir / ("ch" + std::to_string(c + 1) + ".wav"), g.channels[c]);
    put("sad_ch" + std::to_string(c + 1) + ".lab", labels);
  }
  put("manifest.json", to_json(synth_manifest(s, dir), dir).dump(2) + "\n");
  put("ref_channels.rttm", format_rttm(reference_channel_turns(s)));
  put("ref_session.rttm", format_rttm(reference_session_turns(s)));
  put("truth.json", to_json(g.truth).dump(2) + "\n");
}

}  // namespace pltl
