// pltl-diarize: command-line front end for the diarization toolkit.
//
// Exit codes: 0 ok, 1 other error, 2 bad manifest, 3 audio error,
// 4 config error, 5 parse error in an RTTM/label/CSV input.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pltl/pipeline.hpp"
#include "pltl/synth.hpp"

namespace fs = std::filesystem;
using namespace pltl;

namespace {

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw Error("cannot write " + path);
}

nlohmann::json read_json(const fs::path& p, const char* what) {
  std::ifstream in(p);
  if (!in) throw Error(std::string("cannot open ") + what + " " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string(), 0, e.what());
  }
}

std::vector<double> load_scores(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open scores " + p.string());
  return parse_scores_csv(in, p.string());
}

SpeechMask load_label_mask(const fs::path& p, std::size_t n) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open labels " + p.string());
  return rasterize(parse_labels(in, p.string()), n);
}

// --- diarize ---------------------------------------------------------------

struct DiarizeArgs {
  std::string manifest, out, config, ref;
  std::vector<int> channels, external_sad;
  unsigned jobs = 1;
  std::optional<std::string> sad;
  std::optional<double> window, hop, min_gap, refine_window;
  std::optional<int> lpc_order;
  std::optional<std::size_t> subsample;
  bool dump_features = false, dump_dendrogram = false;
};

void add_diarize(CLI::App& app, DiarizeArgs& a) {
  auto* c = app.add_subcommand("diarize", "Diarize a multichannel session");
  c->add_option("-m,--manifest", a.manifest, "Session manifest (JSON)")->required();
  c->add_option("-o,--out", a.out, "Output root; results go to <out>/<session_id>")->required();
  c->add_option("-c,--config", a.config, "Config file (default: $PLTLDIAR_CONFIG)");
  c->add_option("--ref", a.ref, "Reference per-channel RTTM to score against");
  c->add_option("--channels", a.channels, "Channel ids to process")->delimiter(',');
  c->add_option("-j,--jobs", a.jobs, "Channels processed in parallel (0 = all cores)");
  c->add_option("--sad", a.sad, "Speech detection: builtin or external")->check(CLI::IsMember({"builtin", "external"}));
  c->add_option("--external-sad", a.external_sad, "Channel ids that use their manifest sad_path labels")
      ->delimiter(',');
  c->add_option("--window", a.window, "Change-detection window (s)");
  c->add_option("--hop", a.hop, "Change-detection hop (s)");
  c->add_option("--min-gap", a.min_gap, "Minimum spacing of change points (s)");
  c->add_option("--refine-window", a.refine_window, "Cross-channel window (s)");
  c->add_option("--lpc-order", a.lpc_order, "LPC order");
  c->add_option("--subsample", a.subsample, "Max feature rows per segment in clustering (0 = all)");
  c->add_flag("--dump-features", a.dump_features, "Write features_<ch>.f32");
  c->add_flag("--dump-dendrogram", a.dump_dendrogram, "Write dendrogram_<ch>.json");
}

PipelineConfig resolve_config(const DiarizeArgs& a) {
  PipelineConfig cfg;
  std::string file = a.config;
  if (file.empty())
    if (const char* env = std::getenv("PLTLDIAR_CONFIG"); env && *env) file = env;
  if (!file.empty()) cfg = load_config(file, cfg);
  if (a.sad) cfg.sad_mode = *a.sad == "external" ? SadMode::external : SadMode::builtin;
  if (a.window) cfg.g3.window_s = *a.window;
  if (a.hop) cfg.g3.hop_s = *a.hop;
  if (a.min_gap) cfg.g3.min_gap_s = *a.min_gap;
  if (a.refine_window) cfg.refine_window_s = *a.refine_window;
  if (a.lpc_order) cfg.lpc_order = *a.lpc_order;
  if (a.subsample) cfg.max_rows_per_segment = *a.subsample;
  if (!a.channels.empty()) cfg.channels = a.channels;
  if (!a.external_sad.empty()) cfg.sad_external_channels = a.external_sad;
  validate(cfg);
  return cfg;
}

int run_diarize(const DiarizeArgs& a) {
  const PipelineConfig cfg = resolve_config(a);
  const SessionManifest m = load_manifest(a.manifest);
  std::optional<std::vector<RttmTurn>> ref;
  if (!a.ref.empty()) ref = load_rttm(a.ref);
  RunOptions run;
  run.jobs = a.jobs;
  run.keep_features = a.dump_features;
  const SessionResult r = diarize_session(m, cfg, run, ref ? &*ref : nullptr);
  const fs::path target = fs::path(a.out) / r.session_id;
  write_atomically(target, [&](const fs::path& dir) {
    write_session_outputs(r, cfg, dir, {a.dump_features, a.dump_dendrogram});
  });
  std::cout << target.string() << "\n";
  if (r.scoring) std::printf("average DER %.2f%%\n", r.scoring->average_der);
  return 0;
}

// --- score -----------------------------------------------------------------

struct ScoreArgs {
  std::string hyp, ref, out, sad_scores, sad_ref;
  std::size_t frames = 0;
};

void add_score(CLI::App& app, ScoreArgs& a) {
  auto* c = app.add_subcommand("score", "Frame-level DER of a per-channel RTTM against a reference");
  c->add_option("--hyp", a.hyp, "Hypothesis RTTM (primary/secondary per channel)")->required();
  c->add_option("--ref", a.ref, "Reference RTTM")->required();
  c->add_option("--frames", a.frames, "Frame grid length (default: covers both files)");
  c->add_option("--sad-scores", a.sad_scores, "Score track CSV for an EER");
  c->add_option("--sad-ref", a.sad_ref, "Speech labels the scores are judged against");
  c->add_option("-o,--out", a.out, "Report path (default: stdout)");
}

int run_score(const ScoreArgs& a) {
  const auto hyp = load_rttm(a.hyp);
  const auto ref = load_rttm(a.ref);
  auto j = to_json(score_rttm(hyp, ref, a.frames));
  if (a.sad_scores.empty() != a.sad_ref.empty()) throw ConfigError("--sad-scores and --sad-ref go together");
  if (!a.sad_scores.empty()) {
    const auto scores = load_scores(a.sad_scores);
    try {
      j["sad_eer_percent"] = sad_eer(scores, load_label_mask(a.sad_ref, scores.size()));
    } catch (const UndefinedResult& e) {
      warn(e.what());
      j["sad_eer_percent"] = nullptr;
    }
  }
  write_or_print(a.out, j.dump(2) + "\n");
  return 0;
}

// --- sad -------------------------------------------------------------------

struct SadArgs {
  std::string audio, out, scores, truth;
  std::size_t median = 11;
};

void add_sad(CLI::App& app, SadArgs& a) {
  auto* c = app.add_subcommand("sad", "Run the built-in speech detector on one channel");
  c->add_option("-a,--audio", a.audio, "Channel WAV")->required();
  c->add_option("-o,--out", a.out, "Speech labels (default: stdout)");
  c->add_option("--scores", a.scores, "Also write the per-frame score track CSV");
  c->add_option("--truth", a.truth, "Reference labels; prints the EER of the scores");
  c->add_option("--median", a.median, "Median filter length (odd)");
}

int run_sad(const SadArgs& a) {
  if (a.median % 2 == 0) throw ConfigError("--median must be odd");
  const Waveform w = load_channel(a.audio);
  SadOptions opt;
  opt.median_length = a.median;
  const SadResult r = detect_speech(w, opt);
  write_or_print(a.out, format_labels(r.mask));
  if (!a.scores.empty()) write_or_print(a.scores, scores_csv(r.track));
  if (!a.truth.empty()) {
    const SpeechMask truth = load_label_mask(a.truth, r.mask.size());
    std::size_t agree = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) agree += truth[i] == r.mask[i];
    std::fprintf(stderr, "frame accuracy %.2f%%\n", 100.0 * double(agree) / double(std::max<std::size_t>(1, truth.size())));
    try {
      std::fprintf(stderr, "EER %.2f%%\n", sad_eer(r.track.scores, truth));
    } catch (const UndefinedResult& e) {
      warn(e.what());
    }
  }
  return 0;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string script, out, session_id;
  std::optional<std::uint64_t> seed;
  std::size_t speakers = 4;
  double duration = 0.0;
  int turns = 30;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate a synthetic session with ground truth");
  c->add_option("-s,--script", a.script, "Session script (JSON); without one the easy preset is used");
  c->add_option("-o,--out", a.out, "Output directory")->required();
  c->add_option("--seed", a.seed, "Override the script seed");
  c->add_option("--speakers", a.speakers, "Preset: number of speakers");
  c->add_option("--duration", a.duration, "Preset: duration in seconds (0 = from the schedule)");
  c->add_option("--turns", a.turns, "Preset: scheduled speaker switches");
  c->add_option("--session-id", a.session_id, "Preset: session id");
}

int run_synth(const SynthArgs& a) {
  SessionScript s;
  if (!a.script.empty()) {
    s = load_script(a.script);
  } else {
    s.speakers = easy_speakers(a.speakers);
    s.duration = a.duration;
    ScheduleSpec sc;
    sc.turns = a.turns;
    s.schedule = sc;
    if (!a.session_id.empty()) s.session_id = a.session_id;
  }
  if (a.seed) s.seed = *a.seed;
  const GeneratedSession g = generate_session(s);
  // WAV paths in the manifest are relative, so the files can be staged and
  // moved together.
  write_atomically(a.out, [&](const fs::path& dir) { write_session(g, dir); });
  std::cout << (fs::path(a.out) / "manifest.json").string() << "\n";
  return 0;
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
  std::string session, truth, out;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
  auto* c = app.add_subcommand("analyze", "Compare a diarize result with synthetic truth");
  c->add_option("-s,--session", a.session, "Output directory of a diarize run")->required();
  c->add_option("-t,--truth", a.truth, "truth.json from synth");
  c->add_option("-o,--out", a.out, "Report path (default: <session>/analysis.json, '-' for stdout)");
}

int run_analyze(const AnalyzeArgs& a) {
  const auto session = read_json(fs::path(a.session) / "session.json", "session");
  const nlohmann::json truth = a.truth.empty() ? nlohmann::json() : read_json(a.truth, "truth");
  const std::string out = a.out.empty() ? (fs::path(a.session) / "analysis.json").string() : a.out;
  write_or_print(out, analyze_session(session, truth).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multichannel speaker diarization for small-group sessions"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  DiarizeArgs d;
  ScoreArgs sc;
  SadArgs sa;
  SynthArgs sy;
  AnalyzeArgs an;
  add_diarize(app, d);
  add_score(app, sc);
  add_sad(app, sa);
  add_synth(app, sy);
  add_analyze(app, an);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (quiet) set_warning_sink([](const std::string&) {});

  try {
    if (app.got_subcommand("diarize")) return run_diarize(d);
    if (app.got_subcommand("score")) return run_score(sc);
    if (app.got_subcommand("sad")) return run_sad(sa);
    if (app.got_subcommand("synth")) return run_synth(sy);
    if (app.got_subcommand("analyze")) return run_analyze(an);
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const AudioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
