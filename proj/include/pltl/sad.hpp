#pragma once

// Speech activity detection. The built-in detector projects three frame
// measures onto their first principal axis and thresholds the projection
// where a two-component 1-d GMM changes its mind. External label files can
// stand in for it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pltl/audio_io.hpp"
#include "pltl/common.hpp"
#include "pltl/features.hpp"
#include "pltl/fft.hpp"
#include "pltl/gmm.hpp"
#include "pltl/log.hpp"

namespace pltl {

enum class SadSource { builtin, external };

inline const char* to_string(SadSource s) { return s == SadSource::builtin ? "builtin" : "external"; }

struct SadScoreTrack {
  std::vector<double> scores;  // higher is more speech-like
  double threshold = 0.0;
};

struct SadResult {
  SadScoreTrack track;
  SpeechMask mask;
  SadSource source = SadSource::builtin;
};

struct SadOptions {
  std::size_t median_length = 11;
  double min_duration_s = 1.0;
};

// Log energy, spectral flatness and zero-crossing rate of one frame.
inline std::array<double, 3> sad_frame_measures(std::span<const double> frame) {
  double ms = 0.0;
  for (double v : frame) ms += v * v;
  ms /= double(frame.size());

  static const std::vector<double> win = hamming(std::size_t(kFrameLength));
  const auto p = fft::power_spectrum(apply_window(frame, win), kMfccFftSize);
  double log_sum = 0.0, sum = 0.0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    log_sum += std::log(p[k] + kLogFloor);
    sum += p[k] + kLogFloor;
  }
  const double m = double(p.size() - 1);
  const double flatness = std::exp(log_sum / m) / (sum / m);

  std::size_t crossings = 0;
  for (std::size_t i = 1; i < frame.size(); ++i)
    if ((frame[i] >= 0.0) != (frame[i - 1] >= 0.0)) ++crossings;
  const double zcr = double(crossings) / double(frame.size() - 1);
  return {std::log(ms + kLogFloor), flatness, zcr};
}

namespace detail {

// Leading eigenvector of a symmetric 3x3 matrix by power iteration.
inline std::array<double, 3> leading_eigenvector(const std::array<std::array<double, 3>, 3>& c) {
  std::array<double, 3> v{1.0, 1.0, 1.0};
  for (int it = 0; it < 500; ++it) {
    std::array<double, 3> next{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) next[i] += c[i][j] * v[j];
    double norm = std::sqrt(next[0] * next[0] + next[1] * next[1] + next[2] * next[2]);
    if (norm == 0.0) return {1.0, 0.0, 0.0};
    double delta = 0.0;
    for (int i = 0; i < 3; ++i) {
      next[i] /= norm;
      delta = std::max(delta, std::abs(next[i] - v[i]));
    }
    v = next;
    if (delta < 1e-12) break;
  }
  return v;
}

// Point between the two means where both components have equal posterior.
inline double equal_posterior_point(const Gmm2Model& m) {
  const auto& a = m.components[0];
  const auto& b = m.components[1];
  const bool a_low = a.mean[0] <= b.mean[0];
  const GaussianModel& lo = a_low ? a : b;
  const GaussianModel& hi = a_low ? b : a;
  const double wlo = a_low ? m.weights[0] : m.weights[1];
  const double whi = 1.0 - wlo;
  auto margin = [&](double x) {
    const double xs[1] = {x};
    return (std::log(whi) + hi.log_pdf(xs)) - (std::log(wlo) + lo.log_pdf(xs));
  };
  double l = lo.mean[0], h = hi.mean[0];
  if (!(margin(l) < 0.0 && margin(h) > 0.0)) return 0.5 * (l + h);
  for (int it = 0; it < 200 && h - l > 1e-12; ++it) {
    const double mid = 0.5 * (l + h);
    (margin(mid) < 0.0 ? l : h) = mid;
  }
  return 0.5 * (l + h);
}

}  // namespace detail

// Repeated median filtering until the mask stops changing. Frames outside
// the recording count as non-speech, so every speech run in the result is
// at least (length + 1) / 2 frames long.
inline SpeechMask median_smooth(const SpeechMask& in, std::size_t length) {
  if (length < 3 || in.empty()) return in;
  const std::ptrdiff_t half = std::ptrdiff_t(length / 2);
  const std::ptrdiff_t n = std::ptrdiff_t(in.size());
  SpeechMask cur = in, next(in.size());
  for (;;) {
    std::ptrdiff_t count = 0;
    for (std::ptrdiff_t i = 0; i < std::min(half, n); ++i) count += cur[std::size_t(i)];
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      if (i + half < n) count += cur[std::size_t(i + half)];
      if (i - half - 1 >= 0) count -= cur[std::size_t(i - half - 1)];
      next[std::size_t(i)] = count > half;
    }
    if (next == cur) return cur;
    std::swap(cur, next);
  }
}

inline SadResult detect_speech(const Waveform& w, const SadOptions& opt = {}) {
  SadResult out;
  const Matrix frames = frame(w);
  const std::size_t n = frames.rows();
  out.track.scores.assign(n, 0.0);
  if (double(w.size()) < opt.min_duration_s * kSampleRate) {
    warn("sad: channel shorter than " + std::to_string(opt.min_duration_s) + " s, treating every frame as speech");
    out.mask.assign(n, true);
    out.track.threshold = -std::numeric_limits<double>::infinity();
    return out;
  }

  std::vector<std::array<double, 3>> meas(n);
  SpeechMask silent(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    meas[i] = sad_frame_measures(frames.row(i));
    silent[i] = meas[i][0] <= std::log(2.0 * kLogFloor);
  }

  std::array<double, 3> mean{}, sd{};
  for (const auto& m : meas)
    for (int c = 0; c < 3; ++c) mean[c] += m[c];
  for (double& v : mean) v /= double(n);
  for (const auto& m : meas)
    for (int c = 0; c < 3; ++c) sd[c] += (m[c] - mean[c]) * (m[c] - mean[c]);
  for (double& v : sd) v = std::sqrt(v / double(n));

  std::vector<std::array<double, 3>> z(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) z[i][c] = sd[c] > 0.0 ? (meas[i][c] - mean[c]) / sd[c] : 0.0;
  std::array<std::array<double, 3>, 3> cov{};
  for (const auto& v : z)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cov[a][b] += v[a] * v[b] / double(n);
  auto axis = detail::leading_eigenvector(cov);
  if (axis[0] < 0.0)
    for (double& v : axis) v = -v;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = z[i][0] * axis[0] + z[i][1] * axis[1] + z[i][2] * axis[2];
    out.track.scores[i] = s;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }

  if (!(hi - lo > 1e-9)) {
    // Flat score track: nothing to separate.
    out.track.threshold = hi;
    out.mask.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) out.mask[i] = !silent[i];
  } else {
    Matrix col(n, 1);
    for (std::size_t i = 0; i < n; ++i) col(i, 0) = out.track.scores[i];
    EmOptions em;
    em.min_frames = 2;
    const Gmm2Fit fit = fit_gmm2(col, em);
    out.track.threshold = detail::equal_posterior_point(fit.model);
    out.mask.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) out.mask[i] = !silent[i] && out.track.scores[i] >= out.track.threshold;
  }
  out.mask = median_smooth(out.mask, opt.median_length);
  return out;
}

// ---------------------------------------------------------------------------
// Label files: "start end speech|nonspeech" per line, seconds.

struct LabelInterval {
  double start = 0.0;
  double end = 0.0;
  bool speech = true;
};

inline std::vector<LabelInterval> parse_labels(std::istream& in, const std::string& source) {
  std::vector<LabelInterval> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ls(line);
    LabelInterval iv;
    std::string label, extra;
    if (!(ls >> iv.start >> iv.end >> label)) throw ParseError(source, lineno, "expected 'start end label'");
    if (ls >> extra) throw ParseError(source, lineno, "trailing field '" + extra + "'");
    if (label == "speech")
      iv.speech = true;
    else if (label == "nonspeech")
      iv.speech = false;
    else
      throw ParseError(source, lineno, "unknown label '" + label + "'");
    if (!std::isfinite(iv.start) || !std::isfinite(iv.end) || iv.start < 0.0 || iv.end < iv.start)
      throw ParseError(source, lineno, "bad interval");
    if (!out.empty()) {
      if (iv.start < out.back().start) throw ParseError(source, lineno, "intervals out of order");
      if (iv.start < out.back().end) throw ParseError(source, lineno, "overlaps previous interval");
    }
    out.push_back(iv);
  }
  return out;
}

// Rasterizes speech intervals onto the frame grid by frame midpoint.
inline SpeechMask rasterize(const std::vector<LabelInterval>& labels, std::size_t num_frames) {
  SpeechMask m(num_frames, false);
  for (const auto& iv : labels) {
    if (!iv.speech) continue;
    for (std::size_t i = 0; i < num_frames; ++i) {
      const double t = frame_midpoint(i);
      if (t >= iv.start && t < iv.end) m[i] = true;
    }
  }
  return m;
}

inline SpeechMask load_external_mask(const std::filesystem::path& path, const FrameGrid& grid, double duration_s) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open SAD labels " + path.string());
  const auto labels = parse_labels(in, path.string());
  if (!labels.empty() && labels.back().end > duration_s + 1e-6)
    throw ParseError(path.string(), labels.size(),
                     "interval ends at " + std::to_string(labels.back().end) + " s, past the audio (" +
                         std::to_string(duration_s) + " s)");
  return rasterize(labels, grid.num_frames);
}

// Writes alternating speech/nonspeech runs on label-cell boundaries; reading
// the file back onto the same grid reproduces the mask.
inline std::string format_labels(const SpeechMask& m) {
  std::string out;
  char buf[96];
  std::size_t i = 0;
  while (i < m.size()) {
    std::size_t j = i;
    while (j < m.size() && m[j] == m[i]) ++j;
    const double a = i == 0 ? 0.0 : frame_cell_start(i);
    const double b = frame_cell_start(j);
    std::snprintf(buf, sizeof buf, "%.3f %.3f %s\n", a, b, m[i] ? "speech" : "nonspeech");
    out += buf;
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Equal error rate

// Threshold swept over every distinct score plus +inf (frames with
// score >= threshold count as speech). Returns a percentage.
inline double sad_eer(std::span<const double> scores, const SpeechMask& truth) {
  if (scores.size() != truth.size()) throw Error("sad_eer: score and truth lengths differ");
  std::size_t pos = 0;
  for (bool b : truth) pos += b;
  const std::size_t neg = truth.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedResult("sad_eer: truth contains a single class");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // At threshold = lowest score everything is speech.
  double fa = 1.0, miss = 0.0;
  std::size_t below_pos = 0, below_neg = 0;
  std::size_t i = 0;
  for (;;) {
    // advance past the current distinct score
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (truth[order[i]] ? below_pos : below_neg) += 1;
      ++i;
    }
    const double fa_next = double(neg - below_neg) / double(neg);
    const double miss_next = double(below_pos) / double(pos);
    const double d0 = fa - miss, d1 = fa_next - miss_next;
    if (d0 == 0.0) return 100.0 * fa;
    if (d1 <= 0.0) {
      const double a = d0 / (d0 - d1);
      return 100.0 * (fa + a * (fa_next - fa));
    }
    fa = fa_next;
    miss = miss_next;
  }
}

// One row per frame: midpoint time, score and the thresholded decision.
inline std::string scores_csv(const SadScoreTrack& t) {
  std::string out = "time,score,speech\n";
  char buf[96];
  for (std::size_t i = 0; i < t.scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.3f,%.9g,%d\n", frame_midpoint(i), t.scores[i], t.scores[i] >= t.threshold ? 1 : 0);
    out += buf;
  }
  return out;
}

inline std::vector<double> parse_scores_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("time,score", 0) != 0) throw ParseError(source, 1, "expected a time,score header");
  std::vector<double> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find(',');
    if (a == std::string::npos) throw ParseError(source, lineno, "expected time,score");
    const auto b = line.find(',', a + 1);
    try {
      out.push_back(std::stod(line.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1)));
    } catch (const std::exception&) {
      throw ParseError(source, lineno, "bad score");
    }
    if (!std::isfinite(out.back())) throw ParseError(source, lineno, "non-finite score");
  }
  return out;
}

}  // namespace pltl
