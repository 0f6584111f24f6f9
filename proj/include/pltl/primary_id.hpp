#pragma once

// Primary/secondary labelling by formant-band energy, the cross-channel
// primary rule, and the merge into one session timeline.

#include <algorithm>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "pltl/audio_io.hpp"
#include "pltl/clustering.hpp"
#include "pltl/common.hpp"
#include "pltl/features.hpp"
#include "pltl/fft.hpp"
#include "pltl/log.hpp"
#include "pltl/rttm.hpp"

namespace pltl {

inline constexpr double kFormantLowHz = 200.0;
inline constexpr double kFormantHighHz = 3500.0;
inline constexpr double kFormantHalfBandHz = 150.0;

using EnergyTrack = std::vector<double>;

// Peaks of the LPC envelope between 200 and 3500 Hz, lowest first, as bin
// indices of a kMfccFftSize-point spectrum.
inline std::vector<std::size_t> formant_peaks(std::span<const double> frame, int order = kLpcOrder) {
  const LpcResult lpc = lpc_analyze(frame, order);
  std::vector<double> a(std::size_t(order) + 1, 0.0);
  a[0] = 1.0;
  for (int k = 1; k <= order; ++k) a[std::size_t(k)] = -lpc.predictor[std::size_t(k - 1)];
  const auto spec = fft::rfft(a, kMfccFftSize);
  std::vector<double> env(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) env[k] = 1.0 / std::max(std::norm(spec[k]), 1e-300);

  const double bin_hz = double(kSampleRate) / kMfccFftSize;
  std::vector<std::size_t> peaks;
  for (std::size_t k = 1; k + 1 < env.size(); ++k) {
    const double hz = double(k) * bin_hz;
    if (hz < kFormantLowHz || hz > kFormantHighHz) continue;
    if (env[k] > env[k - 1] && env[k] >= env[k + 1]) peaks.push_back(k);
  }
  return peaks;
}

// Power in +-150 Hz around the two lowest envelope peaks, or in the whole
// 200-3500 Hz band when fewer than two peaks exist.
inline double formant_band_energy(std::span<const double> frame, int order = kLpcOrder) {
  static const std::vector<double> win = hamming(std::size_t(kFrameLength));
  const auto w = frame.size() == win.size() ? win : hamming(frame.size());
  const auto power = fft::power_spectrum(apply_window(frame, w), kMfccFftSize);
  const double bin_hz = double(kSampleRate) / kMfccFftSize;

  std::vector<char> take(power.size(), 0);
  const auto peaks = formant_peaks(frame, order);
  if (peaks.size() >= 2) {
    for (std::size_t p = 0; p < 2; ++p) {
      const double centre = double(peaks[p]) * bin_hz;
      for (std::size_t k = 0; k < power.size(); ++k)
        if (std::abs(double(k) * bin_hz - centre) <= kFormantHalfBandHz) take[k] = 1;
    }
  } else {
    for (std::size_t k = 0; k < power.size(); ++k) {
      const double hz = double(k) * bin_hz;
      if (hz >= kFormantLowHz && hz <= kFormantHighHz) take[k] = 1;
    }
  }
  double e = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k)
    if (take[k]) e += power[k];
  return e;
}

// Per-frame energy of the raw channel audio; zero on non-speech frames.
inline EnergyTrack energy_track(const Waveform& w, const SpeechMask& mask, int order = kLpcOrder) {
  const Matrix frames = frame(w);
  if (frames.rows() != mask.size()) throw Error("energy_track: mask length does not match the frame count");
  EnergyTrack e(frames.rows(), 0.0);
  for (std::size_t i = 0; i < frames.rows(); ++i)
    if (mask[i]) e[i] = formant_band_energy(frames.row(i), order);
  return e;
}

// ---------------------------------------------------------------------------
// Channel labels

enum class FrameLabel : std::uint8_t { nonspeech, primary, secondary };

inline const char* to_string(FrameLabel l) {
  switch (l) {
    case FrameLabel::primary: return "primary";
    case FrameLabel::secondary: return "secondary";
    default: return "nonspeech";
  }
}

struct ChannelDiarization {
  int channel_id = 0;
  std::vector<FrameLabel> labels;
};

// The cluster with the higher mean frame energy is primary. Equal means go
// to the cluster with more frames, then to cluster_a.
inline ChannelDiarization assign_primary(const std::vector<Segment>& segments, const TwoClusterAssignment& assignment,
                                         const EnergyTrack& energy, int channel_id = 0) {
  ChannelDiarization out;
  out.channel_id = channel_id;
  out.labels.assign(energy.size(), FrameLabel::nonspeech);
  if (segments.size() != assignment.labels.size()) throw Error("assign_primary: assignment does not match segments");

  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const int c = assignment.labels[s] == ClusterLabel::cluster_a ? 0 : 1;
    for (std::size_t r : segments[s].rows) {
      if (r >= energy.size()) throw Error("assign_primary: segment row outside the energy track");
      sum[c] += energy[r];
      ++count[c];
    }
  }
  if (count[0] == 0 && count[1] == 0) return out;

  int primary = 0;
  if (count[0] == 0 || count[1] == 0) {
    warn("primary_id: channel " + std::to_string(channel_id) + " has one cluster; labelling all speech primary");
    primary = count[0] == 0 ? 1 : 0;
  } else {
    const double m0 = sum[0] / double(count[0]), m1 = sum[1] / double(count[1]);
    if (m1 > m0 || (m1 == m0 && count[1] > count[0])) primary = 1;
  }
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const int c = assignment.labels[s] == ClusterLabel::cluster_a ? 0 : 1;
    for (std::size_t r : segments[s].rows) out.labels[r] = c == primary ? FrameLabel::primary : FrameLabel::secondary;
  }
  return out;
}

// Fixed windows starting at t = 0, a frame belonging to the window holding
// its midpoint. Where several channels have primary frames in a window, only
// the one with the largest summed energy over those frames keeps them (lower
// channel position on ties); the rest become secondary.
inline std::vector<ChannelDiarization> cross_channel_refine(std::vector<ChannelDiarization> tracks,
                                                            const std::vector<EnergyTrack>& energies,
                                                            double window_s = 2.0) {
  if (tracks.size() != energies.size()) throw Error("cross_channel_refine: one energy track per channel required");
  if (tracks.empty()) return tracks;
  const std::size_t n = tracks[0].labels.size();
  for (std::size_t c = 0; c < tracks.size(); ++c)
    if (tracks[c].labels.size() != n || energies[c].size() != n)
      throw Error("cross_channel_refine: tracks differ in length");
  const auto wf = std::size_t(std::llround(window_s / kHopSeconds));
  if (wf == 0) throw ConfigError("cross_channel_refine: window shorter than one hop");
  const std::size_t lag = std::size_t(kFrameLength / 2 / kFrameHop);

  std::size_t first = 0;
  while (first < n) {
    const std::size_t w = (first + lag) / wf;
    const std::size_t last = std::min(n, (w + 1) * wf - lag);
    std::size_t holders = 0, best = 0;
    double best_e = -1.0;
    for (std::size_t c = 0; c < tracks.size(); ++c) {
      bool any = false;
      double e = 0.0;
      for (std::size_t i = first; i < last; ++i)
        if (tracks[c].labels[i] == FrameLabel::primary) {
          any = true;
          e += energies[c][i];
        }
      if (!any) continue;
      ++holders;
      if (e > best_e) {
        best_e = e;
        best = c;
      }
    }
    if (holders > 1)
      for (std::size_t c = 0; c < tracks.size(); ++c) {
        if (c == best) continue;
        for (std::size_t i = first; i < last; ++i)
          if (tracks[c].labels[i] == FrameLabel::primary) tracks[c].labels[i] = FrameLabel::secondary;
      }
    first = last;
  }
  return tracks;
}

inline std::size_t count_multi_primary(const std::vector<ChannelDiarization>& tracks) {
  if (tracks.empty()) return 0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < tracks[0].labels.size(); ++i) {
    int k = 0;
    for (const auto& t : tracks) k += t.labels[i] == FrameLabel::primary;
    bad += k > 1;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Session timeline

inline constexpr int kNonspeech = -2;
inline constexpr int kUnattributed = -1;

struct SessionDiarization {
  std::vector<std::string> members;  // by channel position
  std::vector<int> speaker;          // member position, kUnattributed or kNonspeech
};

inline SessionDiarization merge_session(const std::vector<ChannelDiarization>& tracks,
                                        const std::vector<std::string>& members) {
  if (tracks.size() != members.size()) throw Error("merge_session: one member label per channel required");
  SessionDiarization out;
  out.members = members;
  if (tracks.empty()) return out;
  const std::size_t n = tracks[0].labels.size();
  for (const auto& t : tracks)
    if (t.labels.size() != n) throw Error("merge_session: tracks differ in length");
  out.speaker.assign(n, kNonspeech);
  for (std::size_t i = 0; i < n; ++i) {
    bool speech = false;
    int who = kUnattributed;
    for (std::size_t c = 0; c < tracks.size(); ++c) {
      const FrameLabel l = tracks[c].labels[i];
      if (l == FrameLabel::nonspeech) continue;
      speech = true;
      if (l == FrameLabel::primary) {
        if (who != kUnattributed)
          throw Error("merge_session: frame " + std::to_string(i) + " is primary on more than one channel");
        who = int(c);
      }
    }
    out.speaker[i] = speech ? who : kNonspeech;
  }
  return out;
}

inline std::vector<RttmTurn> session_turns(const SessionDiarization& d, const std::string& file) {
  return runs_to_turns(d.speaker, file, 1, [&](int s) {
    return s >= 0 ? d.members[std::size_t(s)] : std::string();
  });
}

inline std::vector<RttmTurn> channel_turns(const ChannelDiarization& d, const std::string& file) {
  return runs_to_turns(d.labels, file, d.channel_id, [](FrameLabel l) {
    return l == FrameLabel::nonspeech ? std::string() : std::string(to_string(l));
  });
}

}  // namespace pltl
