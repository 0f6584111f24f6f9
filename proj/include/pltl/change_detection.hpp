#pragma once

// Speaker change detection: one two-component GMM over the joint window
// against two single Gaussians over its halves, compared by log-likelihood.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "pltl/common.hpp"
#include "pltl/features.hpp"
#include "pltl/gmm.hpp"

namespace pltl {

struct LlrComponents {
  double l_h0 = 0.0;  // joint window under the 2-GMM
  double l_h1 = 0.0;  // each half under its own Gaussian
  double d_llr() const { return l_h1 - l_h0; }
};

struct ChangeDetectionOptions {
  double window_s = 1.0;
  double hop_s = 0.1;
  double min_gap_s = 0.5;
  double min_speech_fraction = 0.5;
  bool speech_onsets = true;  // also evaluate at the first frame of every speech run
  bool partition_start = true;  // second EM start from the two window Gaussians
  GaussianFitOptions gaussian{};
  EmOptions em{};
};

inline Matrix stack_rows(const Matrix& a, const Matrix& b) {
  Matrix w(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), w.data().begin());
  std::copy(b.data().begin(), b.data().end(), w.data().begin() + std::ptrdiff_t(a.data().size()));
  return w;
}

inline LlrComponents llr_components(const Matrix& u, const Matrix& v, const ChangeDetectionOptions& opt = {}) {
  if (u.cols() != v.cols()) throw Error("d_llr: feature dimension mismatch");
  const GaussianModel gu = fit_gaussian(u, opt.gaussian);
  const GaussianModel gv = fit_gaussian(v, opt.gaussian);
  const Matrix w = stack_rows(u, v);
  double l_h0 = fit_gmm2(w, opt.em).log_likelihood;
  if (opt.partition_start) {
    Gmm2Model start;
    const double wu = std::clamp(double(u.rows()) / double(w.rows()), opt.em.weight_floor, 1.0 - opt.em.weight_floor);
    start.weights = {wu, 1.0 - wu};
    start.components = {gu, gv};
    l_h0 = std::max(l_h0, run_em(w, std::move(start), opt.em).log_likelihood);
  }
  return {l_h0, gu.log_likelihood(u) + gv.log_likelihood(v)};
}

// L_H1 - L_H0; positive values favour a speaker change between u and v.
inline double d_llr(const Matrix& u, const Matrix& v, const ChangeDetectionOptions& opt = {}) {
  return llr_components(u, v, opt).d_llr();
}

struct LlrTrace {
  std::vector<double> eval_times;
  std::vector<std::size_t> eval_frames;
  std::vector<double> d_llr;
};

struct ChangePointList {
  int channel_id = 0;
  std::vector<double> times;
  std::vector<std::size_t> frames;  // first frame after the change

  std::size_t size() const { return frames.size(); }
};

// A change at evaluation time t separates the frames whose midpoints fall
// before t from those at or after it; k is the first of the latter.
inline double change_time(std::size_t k) { return frame_midpoint(k); }

struct ChangeDetection {
  ChangePointList changes;
  LlrTrace trace;
};

// Evaluates the LLR every hop, and at speech onsets when enabled, at times t
// whose windows [t - w, t) and [t, t + w), taken over frame midpoints, are
// each at least min_speech_fraction speech. Keeps positive local maxima
// separated by min_gap (larger value wins).
inline ChangeDetection detect_changes(const FusedFeatureStream& s, const ChangeDetectionOptions& opt = {},
                                      int channel_id = 0) {
  ChangeDetection out;
  out.changes.channel_id = channel_id;
  const std::size_t n = s.size();
  const auto win = std::size_t(std::lround(opt.window_s / kHopSeconds));
  const auto hop = std::max<std::size_t>(1, std::size_t(std::lround(opt.hop_s / kHopSeconds)));
  const auto gap = std::size_t(std::lround(opt.min_gap_s / kHopSeconds));
  const double need = opt.min_speech_fraction * double(win);
  if (win == 0) return out;
  // frame i has its midpoint at (i + lag) hops
  const std::size_t lag = std::size_t(kFrameLength / 2 / kFrameHop);

  std::vector<std::size_t> at;
  for (std::size_t j = win; j < n + lag; j += hop)
    if (j >= lag && j - lag < n) at.push_back(j - lag);
  if (opt.speech_onsets) {
    for (std::size_t k = 1; k < n; ++k)
      if (s.speech_mask[k] && !s.speech_mask[k - 1]) at.push_back(k);
    std::sort(at.begin(), at.end());
    at.erase(std::unique(at.begin(), at.end()), at.end());
  }

  std::vector<std::size_t> idx_u, idx_v;
  for (std::size_t k : at) {
    if (!s.speech_mask[k]) continue;
    idx_u.clear();
    idx_v.clear();
    for (std::size_t i = k >= win ? k - win : 0; i < k; ++i)
      if (s.speech_mask[i]) idx_u.push_back(i);
    for (std::size_t i = k; i < std::min(n, k + win); ++i)
      if (s.speech_mask[i]) idx_v.push_back(i);
    if (double(idx_u.size()) < need || double(idx_v.size()) < need) continue;
    try {
      const double d = d_llr(s.frames.select_rows(idx_u), s.frames.select_rows(idx_v), opt);
      out.trace.eval_frames.push_back(k);
      out.trace.eval_times.push_back(change_time(k));
      out.trace.d_llr.push_back(d);
    } catch (const InsufficientFrames&) {
      continue;
    }
  }

  // Positive local maxima over trace points less than a hop apart; a
  // missing neighbour counts as -inf.
  const auto& tr = out.trace;
  struct Candidate {
    std::size_t frame;
    double value;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < tr.d_llr.size(); ++i) {
    const double d = tr.d_llr[i];
    if (!(d > 0.0)) continue;
    const bool has_prev = i > 0 && tr.eval_frames[i - 1] + hop >= tr.eval_frames[i];
    const bool has_next = i + 1 < tr.d_llr.size() && tr.eval_frames[i] + hop >= tr.eval_frames[i + 1];
    if (has_prev && !(d > tr.d_llr[i - 1])) continue;
    if (has_next && !(d >= tr.d_llr[i + 1])) continue;
    cands.push_back({tr.eval_frames[i], d});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return a.value > b.value || (a.value == b.value && a.frame < b.frame);
  });
  std::vector<std::size_t> kept;
  for (const auto& c : cands) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return (c.frame > k ? c.frame - k : k - c.frame) >= gap;
    });
    if (clear) kept.push_back(c.frame);
  }
  std::sort(kept.begin(), kept.end());
  for (std::size_t k : kept) {
    out.changes.frames.push_back(k);
    out.changes.times.push_back(change_time(k));
  }
  return out;
}

inline std::string llr_trace_csv(const LlrTrace& t) {
  std::string out = "time,d_llr\n";
  char buf[96];
  for (std::size_t i = 0; i < t.d_llr.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.3f,%.6f\n", t.eval_times[i], t.d_llr[i]);
    out += buf;
  }
  return out;
}

}  // namespace pltl
