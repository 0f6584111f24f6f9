#pragma once

// End-to-end session diarization: per-channel SAD, features, change
// detection, clustering and primary labelling, then the cross-channel rule,
// the session merge, reports and optional scoring.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pltl/analytics.hpp"
#include "pltl/audio_io.hpp"
#include "pltl/change_detection.hpp"
#include "pltl/clustering.hpp"
#include "pltl/common.hpp"
#include "pltl/features.hpp"
#include "pltl/primary_id.hpp"
#include "pltl/rttm.hpp"
#include "pltl/sad.hpp"
#include "pltl/scoring.hpp"

namespace pltl {

inline constexpr const char* kToolName = "pltl-diarize";

enum class SadMode { builtin, external };

struct PipelineConfig {
  double frame_length_ms = 40.0;
  double frame_hop_ms = 10.0;
  int lpc_order = kLpcOrder;
  ChangeDetectionOptions g3{};
  double refine_window_s = 2.0;
  SadMode sad_mode = SadMode::builtin;
  std::vector<int> sad_external_channels;  // external labels for these even in builtin mode
  std::size_t sad_median_length = 11;
  std::size_t max_rows_per_segment = 0;  // clustering subsampling, 0 = off
  std::vector<int> channels;             // empty = all
};

inline void validate(const PipelineConfig& c) {
  auto bad = [](const std::string& what) { throw ConfigError("config: " + what); };
  if (c.frame_length_ms != 40.0 || c.frame_hop_ms != 10.0) bad("only 40 ms frames with a 10 ms hop are supported");
  if (c.lpc_order < 1 || c.lpc_order > 40) bad("/lpc_order must be in [1, 40]");
  if (!(c.g3.window_s > 0.0) || !(c.g3.hop_s > 0.0) || !(c.g3.min_gap_s >= 0.0)) bad("/g3 durations must be positive");
  if (c.g3.window_s < c.g3.hop_s) bad("/g3/window_s must be at least /g3/hop_s");
  if (!(c.g3.min_speech_fraction > 0.0 && c.g3.min_speech_fraction <= 1.0))
    bad("/g3/min_speech_fraction must be in (0, 1]");
  if (c.g3.em.max_iterations < 1) bad("/em/max_iterations must be at least 1");
  if (!(c.g3.em.tolerance >= 0.0)) bad("/em/tolerance must be non-negative");
  if (!(c.g3.em.variance_floor > 0.0) || c.g3.gaussian.variance_floor != c.g3.em.variance_floor)
    bad("/em/variance_floor must be positive");
  if (!(c.g3.em.weight_floor > 0.0 && c.g3.em.weight_floor < 0.5)) bad("/em/weight_floor must be in (0, 0.5)");
  if (!(c.refine_window_s >= kHopSeconds)) bad("/refine_window_s must be at least one hop");
  if (c.sad_median_length < 1 || c.sad_median_length % 2 == 0) bad("/sad/median_length must be odd");
}

inline const char* to_string(SadMode m) { return m == SadMode::builtin ? "builtin" : "external"; }

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  return {
      {"frame_length_ms", c.frame_length_ms},
      {"frame_hop_ms", c.frame_hop_ms},
      {"lpc_order", c.lpc_order},
      {"g3",
       {{"window_s", c.g3.window_s},
        {"hop_s", c.g3.hop_s},
        {"min_gap_s", c.g3.min_gap_s},
        {"min_speech_fraction", c.g3.min_speech_fraction},
        {"speech_onsets", c.g3.speech_onsets},
        {"partition_start", c.g3.partition_start}}},
      {"em",
       {{"max_iterations", c.g3.em.max_iterations},
        {"tolerance", c.g3.em.tolerance},
        {"variance_floor", c.g3.em.variance_floor},
        {"weight_floor", c.g3.em.weight_floor},
        {"kmeans_init", c.g3.em.kmeans_init},
        {"seed", c.g3.em.seed}}},
      {"refine_window_s", c.refine_window_s},
      {"sad",
       {{"mode", to_string(c.sad_mode)},
        {"median_length", c.sad_median_length},
        {"external_channels", c.sad_external_channels}}},
      {"clustering", {{"max_rows_per_segment", c.max_rows_per_segment}}},
      {"channels", c.channels},
  };
}

// Applies the keys present in j over c. Unknown keys are errors, reported
// with their JSON pointer. A run.json (with a "config" member) is accepted
// as well as a bare config object.
inline void apply_json(PipelineConfig& c, const nlohmann::json& input) {
  const nlohmann::json& j = input.contains("config") && input.at("config").is_object() ? input.at("config") : input;
  std::string where;
  auto check_keys = [&](const nlohmann::json& o, const std::string& path, std::initializer_list<const char*> keys) {
    if (!o.is_object()) throw ConfigError("config: " + (path.empty() ? "/" : path) + " must be an object");
    for (const auto& [k, _] : o.items())
      if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end())
        throw ConfigError("config: unknown key " + path + "/" + k);
  };
  try {
    check_keys(j, "", {"frame_length_ms", "frame_hop_ms", "lpc_order", "g3", "em", "refine_window_s", "sad",
                       "clustering", "channels"});
    auto num = [&](const nlohmann::json& o, const char* key, const std::string& path, auto& dst) {
      if (!o.contains(key)) return;
      where = path + "/" + key;
      dst = o.at(key).get<std::remove_reference_t<decltype(dst)>>();
    };
    num(j, "frame_length_ms", "", c.frame_length_ms);
    num(j, "frame_hop_ms", "", c.frame_hop_ms);
    num(j, "lpc_order", "", c.lpc_order);
    num(j, "refine_window_s", "", c.refine_window_s);
    if (j.contains("g3")) {
      const auto& g = j.at("g3");
      check_keys(g, "/g3", {"window_s", "hop_s", "min_gap_s", "min_speech_fraction", "speech_onsets", "partition_start"});
      num(g, "window_s", "/g3", c.g3.window_s);
      num(g, "hop_s", "/g3", c.g3.hop_s);
      num(g, "min_gap_s", "/g3", c.g3.min_gap_s);
      num(g, "min_speech_fraction", "/g3", c.g3.min_speech_fraction);
      num(g, "speech_onsets", "/g3", c.g3.speech_onsets);
      num(g, "partition_start", "/g3", c.g3.partition_start);
    }
    if (j.contains("em")) {
      const auto& e = j.at("em");
      check_keys(e, "/em", {"max_iterations", "tolerance", "variance_floor", "weight_floor", "kmeans_init", "seed"});
      num(e, "max_iterations", "/em", c.g3.em.max_iterations);
      num(e, "tolerance", "/em", c.g3.em.tolerance);
      num(e, "variance_floor", "/em", c.g3.em.variance_floor);
      num(e, "weight_floor", "/em", c.g3.em.weight_floor);
      num(e, "kmeans_init", "/em", c.g3.em.kmeans_init);
      num(e, "seed", "/em", c.g3.em.seed);
      c.g3.gaussian.variance_floor = c.g3.em.variance_floor;
    }
    if (j.contains("sad")) {
      const auto& s = j.at("sad");
      check_keys(s, "/sad", {"mode", "median_length", "external_channels"});
      if (s.contains("mode")) {
        where = "/sad/mode";
        const auto m = s.at("mode").get<std::string>();
        if (m == "builtin")
          c.sad_mode = SadMode::builtin;
        else if (m == "external")
          c.sad_mode = SadMode::external;
        else
          throw ConfigError("config: /sad/mode must be builtin or external, got '" + m + "'");
      }
      num(s, "median_length", "/sad", c.sad_median_length);
      num(s, "external_channels", "/sad", c.sad_external_channels);
    }
    if (j.contains("clustering")) {
      const auto& k = j.at("clustering");
      check_keys(k, "/clustering", {"max_rows_per_segment"});
      num(k, "max_rows_per_segment", "/clustering", c.max_rows_per_segment);
    }
    num(j, "channels", "", c.channels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: bad value at " + where + ": " + e.what());
  }
}

inline PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  apply_json(base, j);
  return base;
}

// ---------------------------------------------------------------------------
// Per-channel stages

struct ChannelResult {
  int channel_id = 0;
  std::string member;
  Role role = Role::student;
  SadSource sad_source = SadSource::builtin;
  SadScoreTrack sad_scores;  // built-in detector scores, kept for EER
  SpeechMask mask;
  std::optional<FusedFeatureStream> features;  // kept only when requested
  ChangeDetection g3;
  std::vector<Segment> segments;
  TwoClusterAssignment clusters;
  EnergyTrack energy;
  ChannelDiarization initial;  // before the cross-channel rule
};

struct RunOptions {
  unsigned jobs = 1;  // 0 = hardware concurrency
  bool keep_features = false;
};

inline ChannelResult process_channel(const ChannelSpec& spec, const Waveform& w, const PipelineConfig& cfg,
                                     bool keep_features) {
  ChannelResult r;
  r.channel_id = spec.channel_id;
  r.member = spec.member_label;
  r.role = spec.role;

  SadOptions sopt;
  sopt.median_length = cfg.sad_median_length;
  SadResult builtin = detect_speech(w, sopt);
  r.sad_scores = builtin.track;
  const bool external = cfg.sad_mode == SadMode::external ||
                        std::find(cfg.sad_external_channels.begin(), cfg.sad_external_channels.end(),
                                  spec.channel_id) != cfg.sad_external_channels.end();
  if (external) {
    if (!spec.sad_path) throw ManifestError("channel " + std::to_string(spec.channel_id) + " has no sad_path");
    r.mask = load_external_mask(*spec.sad_path, make_grid(w.size()), double(w.size()) / kSampleRate);
    r.sad_source = SadSource::external;
  } else {
    r.mask = std::move(builtin.mask);
  }

  FusedFeatureStream fs = compute_features(w, cfg.lpc_order);
  if (fs.size() != r.mask.size()) throw Error("internal: feature and mask lengths differ");
  normalize(fs, r.mask);
  fs.speech_mask = r.mask;

  r.g3 = detect_changes(fs, cfg.g3, spec.channel_id);
  r.segments = build_segments(r.g3.changes, r.mask);
  ClusteringOptions copt;
  copt.max_rows_per_segment = cfg.max_rows_per_segment;
  r.clusters = cluster_to_two(r.segments, fs.frames, copt);
  r.energy = energy_track(w, r.mask, cfg.lpc_order);
  r.initial = assign_primary(r.segments, r.clusters, r.energy, spec.channel_id);
  if (keep_features) r.features = std::move(fs);
  return r;
}

struct SessionResult {
  std::string session_id;
  std::size_t num_frames = 0;
  double duration = 0.0;
  std::vector<ChannelResult> channels;
  std::vector<ChannelDiarization> refined;
  SessionDiarization session;
  TurnReport turns;
  ParticipationReport participation;
  std::optional<ScoreReport> scoring;
  std::vector<std::optional<double>> sad_eer;  // per channel, with a reference
};

inline SessionManifest select_channels(const SessionManifest& m, const std::vector<int>& ids) {
  if (ids.empty()) return m;
  SessionManifest out = m;
  out.channels.clear();
  for (int id : ids) {
    const auto& c = m.channel(id);
    if (std::any_of(out.channels.begin(), out.channels.end(), [&](const auto& x) { return x.channel_id == id; }))
      throw ConfigError("config: channel " + std::to_string(id) + " selected twice");
    out.channels.push_back(c);
  }
  std::sort(out.channels.begin(), out.channels.end(),
            [](const auto& a, const auto& b) { return a.channel_id < b.channel_id; });
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = unsigned(std::min<std::size_t>(jobs, n));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline SessionResult diarize_session(const SessionManifest& full, const PipelineConfig& cfg,
                                     const RunOptions& run = {}, const std::vector<RttmTurn>* reference = nullptr) {
  validate(cfg);
  const SessionManifest m = select_channels(full, cfg.channels);
  std::vector<Waveform> audio = load_session_audio(m);

  SessionResult out;
  out.session_id = m.session_id;
  out.num_frames = FrameGrid::count(audio.front().size());
  out.duration = double(audio.front().size()) / kSampleRate;
  out.channels.resize(m.channels.size());
  parallel_for(m.channels.size(), run.jobs, [&](std::size_t i) {
    out.channels[i] = process_channel(m.channels[i], audio[i], cfg, run.keep_features);
  });

  std::vector<ChannelDiarization> initial;
  std::vector<EnergyTrack> energies;
  std::vector<std::string> members;
  std::vector<ChangePointList> changes;
  for (const auto& c : out.channels) {
    initial.push_back(c.initial);
    energies.push_back(c.energy);
    members.push_back(c.member);
    changes.push_back(c.g3.changes);
  }
  out.refined = cross_channel_refine(initial, energies, cfg.refine_window_s);
  out.session = merge_session(out.refined, members);
  out.turns = count_turns(changes, out.refined, members);
  out.participation = participation(out.session);

  if (reference) {
    ScoreReport rep;
    std::vector<DerBreakdown> all;
    for (std::size_t i = 0; i < out.channels.size(); ++i) {
      const int id = out.channels[i].channel_id;
      const auto ref = rasterize_channel(*reference, id, out.num_frames);
      const auto b = der(out.refined[i].labels, ref);
      rep.channels[id] = b;
      all.push_back(b);
      SpeechMask truth(ref.size());
      for (std::size_t k = 0; k < ref.size(); ++k) truth[k] = ref[k] != FrameLabel::nonspeech;
      try {
        out.sad_eer.push_back(sad_eer(out.channels[i].sad_scores.scores, truth));
      } catch (const UndefinedResult&) {
        out.sad_eer.push_back(std::nullopt);
      }
    }
    rep.average_der = average_der(all);
    out.scoring = rep;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline double round_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

inline nlohmann::ordered_json session_json(const SessionResult& r) {
  nlohmann::ordered_json ch = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.channels.size(); ++i) {
    const auto& c = r.channels[i];
    std::size_t speech = 0, before = 0, after = 0;
    for (bool b : c.mask) speech += b;
    for (auto l : c.initial.labels) before += l == FrameLabel::primary;
    for (auto l : r.refined[i].labels) after += l == FrameLabel::primary;
    nlohmann::ordered_json times = nlohmann::ordered_json::array();
    for (double t : c.g3.changes.times) times.push_back(round_ms(t));
    ch.push_back({{"channel_id", c.channel_id},
                  {"member", c.member},
                  {"role", to_string(c.role)},
                  {"sad_source", to_string(c.sad_source)},
                  {"speech_frames", speech},
                  {"change_points", times},
                  {"segments", c.segments.size()},
                  {"clustering_subsampled", c.clusters.subsampled},
                  {"primary_frames_initial", before},
                  {"primary_frames", after}});
  }
  nlohmann::ordered_json j = {{"tool", kToolName},
                              {"version", kToolVersion},
                              {"session_id", r.session_id},
                              {"num_frames", r.num_frames},
                              {"duration_seconds", r.duration},
                              {"channels", ch},
                              {"multi_primary_frames", count_multi_primary(r.refined)},
                              {"turns", to_json(r.turns)},
                              {"participation", to_json(r.participation)}};
  if (r.scoring) {
    auto s = to_json(*r.scoring);
    nlohmann::ordered_json eer = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.channels.size(); ++i)
      eer.push_back({{"channel_id", r.channels[i].channel_id},
                     {"eer_percent", r.sad_eer[i] ? nlohmann::ordered_json(*r.sad_eer[i]) : nullptr}});
    s["sad_eer"] = eer;
    j["scoring"] = s;
  }
  return j;
}

inline nlohmann::ordered_json run_json(const std::string& command, const PipelineConfig& cfg) {
  return {{"tool", kToolName}, {"version", kToolVersion}, {"command", command}, {"config", to_json(cfg)}};
}

struct TraceOptions {
  bool features = false;
  bool dendrogram = false;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw Error("cannot write " + p.string());
}

}  // namespace detail

// Builds a sibling temporary directory with fill(dir), then moves it onto
// target, replacing any previous contents. Nothing is left behind on failure.
template <class Fill>
void write_atomically(const std::filesystem::path& target, Fill fill) {
  namespace fs = std::filesystem;
  const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  fs::create_directories(parent);
  fs::path tmp;
  for (int i = 0;; ++i) {
    tmp = parent / ("." + target.filename().string() + ".tmp" + std::to_string(i));
    if (fs::create_directory(tmp)) break;
    if (i > 1000) throw Error("cannot create a temporary directory next to " + target.string());
  }
  try {
    fill(tmp);
    if (fs::exists(target)) fs::remove_all(target);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

inline void write_session_outputs(const SessionResult& r, const PipelineConfig& cfg, const std::filesystem::path& dir,
                                  const TraceOptions& trace = {}) {
  std::vector<RttmTurn> chan;
  for (const auto& t : r.refined) {
    auto v = channel_turns(t, r.session_id);
    chan.insert(chan.end(), v.begin(), v.end());
  }
  detail::write_text(dir / "channels.rttm", format_rttm(chan));
  detail::write_text(dir / "session.rttm", format_rttm(session_turns(r.session, r.session_id)));
  detail::write_text(dir / "turns.csv", turns_csv(r.turns));
  detail::write_text(dir / "participation.csv", participation_csv(r.participation));
  detail::write_text(dir / "participation.svg", participation_svg(r.participation, r.session_id + " participation"));
  detail::write_text(dir / "session.json", session_json(r).dump(2) + "\n");
  detail::write_text(dir / "run.json", run_json("diarize", cfg).dump(2) + "\n");
  for (const auto& c : r.channels) {
    const std::string id = std::to_string(c.channel_id);
    detail::write_text(dir / ("llr_" + id + ".csv"), llr_trace_csv(c.g3.trace));
    if (trace.features && c.features) write_feature_dump(dir / ("features_" + id + ".f32"), *c.features);
    if (trace.dendrogram) detail::write_text(dir / ("dendrogram_" + id + ".json"), dendrogram_json(c.clusters).dump(2) + "\n");
  }
}

// ---------------------------------------------------------------------------
// Comparison of a diarize run against synthetic truth

// `session` is a parsed session.json; `truth` a parsed truth.json or null.
// Turn errors are percentages of the true per-channel count; participation
// deltas are percentage points of all speech.
inline nlohmann::ordered_json analyze_session(const nlohmann::json& session, const nlohmann::json& truth) {
  nlohmann::ordered_json out;
  try {
    out["session_id"] = session.at("session_id");
    const bool have_truth = !truth.is_null();
    const double true_turns = have_truth ? truth.at("turns_per_channel").get<double>() : 0.0;

    nlohmann::ordered_json ch = nlohmann::ordered_json::array();
    for (const auto& c : session.at("turns").at("channels")) {
      nlohmann::ordered_json row = {{"channel_id", c.at("channel_id")},
                                    {"member", c.at("member")},
                                    {"estimated_turns", c.at("change_points")}};
      if (have_truth) {
        row["true_turns"] = true_turns;
        row["turn_error_percent"] =
            true_turns > 0 ? nlohmann::ordered_json(turn_error(c.at("change_points").get<double>(), true_turns)) : nullptr;
      }
      ch.push_back(row);
    }
    const double avg = session.at("turns").at("session_average").get<double>();
    nlohmann::ordered_json turns = {{"channels", ch}, {"session_average", avg}};
    if (have_truth && true_turns > 0) turns["session_average_error_percent"] = turn_error(avg, true_turns);
    out["turns"] = turns;

    std::map<std::string, double> true_share;
    if (have_truth) {
      const double total = truth.at("speech_seconds_total").get<double>();
      for (const auto& m : truth.at("members"))
        true_share[m.at("label").get<std::string>()] = total > 0 ? m.at("speech_seconds").get<double>() / total : 0.0;
    }
    nlohmann::ordered_json members = nlohmann::ordered_json::array();
    const auto& part = session.at("participation");
    for (const auto& m : part.at("members")) {
      const auto label = m.at("member").get<std::string>();
      nlohmann::ordered_json row = {{"member", label},
                                    {"seconds", m.at("seconds")},
                                    {"proportion", m.at("proportion")},
                                    {"share_of_attributed", m.at("share_of_attributed")}};
      if (auto it = true_share.find(label); it != true_share.end()) {
        row["true_share"] = it->second;
        row["delta_pp"] = 100.0 * (m.at("proportion").get<double>() - it->second);
      }
      members.push_back(row);
    }
    out["participation"] = {{"members", members},
                            {"unattributed_proportion", part.at("unattributed").at("proportion")},
                            {"undefined", part.at("undefined")}};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("analysis input", 0, std::string("missing or bad field: ") + e.what());
  }
  return out;
}

}  // namespace pltl
