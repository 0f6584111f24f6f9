#pragma once

// 90-dimensional fused frame features: 39 MFCC (13 static including c0,
// delta, delta-delta) followed by the first 51 orthonormal DCT-II
// coefficients of the real cepstrum of the order-10 LPC residual.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <vector>

#include "json.hpp"
#include "pltl/audio_io.hpp"
#include "pltl/common.hpp"
#include "pltl/fft.hpp"

namespace pltl {

inline constexpr int kNumMelFilters = 26;
inline constexpr int kNumCeps = 13;
inline constexpr int kMfccDim = 39;
inline constexpr int kRclprDctDim = 51;
inline constexpr int kFusedDim = kMfccDim + kRclprDctDim;
inline constexpr int kMfccFftSize = 512;
inline constexpr int kLpcOrder = 10;

using SpeechMask = std::vector<bool>;

inline std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  if (n == 1) return {1.0};
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / double(n - 1));
  return w;
}

inline std::vector<double> apply_window(std::span<const double> x, std::span<const double> w) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * w[i];
  return y;
}

// ---------------------------------------------------------------------------
// DCT-II

// Orthonormal DCT-II basis restricted to the first `num_coeffs` outputs.
class DctII {
 public:
  DctII(std::size_t n, std::size_t num_coeffs) : n_(n), k_(num_coeffs), basis_(n * num_coeffs) {
    for (std::size_t k = 0; k < k_; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (std::size_t i = 0; i < n; ++i)
        basis_[k * n + i] = s * std::cos(std::numbers::pi * (double(i) + 0.5) * double(k) / double(n));
    }
  }

  std::vector<double> operator()(std::span<const double> x) const {
    if (x.size() != n_) throw Error("DctII: expected " + std::to_string(n_) + " inputs, got " + std::to_string(x.size()));
    std::vector<double> out(k_, 0.0);
    for (std::size_t k = 0; k < k_; ++k) {
      const double* b = basis_.data() + k * n_;
      double acc = 0.0;
      for (std::size_t i = 0; i < n_; ++i) acc += b[i] * x[i];
      out[k] = acc;
    }
    return out;
  }

 private:
  std::size_t n_, k_;
  std::vector<double> basis_;
};

inline std::vector<double> dct_ii(std::span<const double> x, std::size_t num_coeffs) {
  return DctII(x.size(), num_coeffs)(x);
}

// First 51 coefficients of the orthonormal DCT-II over the full cepstrum.
inline std::vector<double> dct51(std::span<const double> cepstrum) {
  if (cepstrum.size() == std::size_t(kFrameLength)) {
    static const DctII table(kFrameLength, kRclprDctDim);
    return table(cepstrum);
  }
  if (cepstrum.size() < std::size_t(kRclprDctDim)) throw Error("dct51: input shorter than 51");
  return dct_ii(cepstrum, kRclprDctDim);
}

// ---------------------------------------------------------------------------
// MFCC

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters equally spaced on the mel scale between low and high
// frequency, defined on the power-spectrum bins of an fft_size transform.
class MelFilterbank {
 public:
  MelFilterbank(int num_filters = kNumMelFilters, int fft_size = kMfccFftSize, double sample_rate = kSampleRate,
                double low_hz = 0.0, double high_hz = 4000.0)
      : num_filters_(num_filters), num_bins_(fft_size / 2 + 1), weights_(std::size_t(num_filters) * num_bins_, 0.0) {
    const double mel_lo = hz_to_mel(low_hz), mel_hi = hz_to_mel(high_hz);
    const double step = (mel_hi - mel_lo) / (num_filters + 1);
    for (int m = 0; m < num_filters; ++m) {
      const double left = mel_lo + m * step, centre = left + step, right = centre + step;
      centre_hz_.push_back(mel_to_hz(centre));
      for (int k = 0; k < num_bins_; ++k) {
        const double mel = hz_to_mel(k * sample_rate / fft_size);
        double w = 0.0;
        if (mel > left && mel <= centre)
          w = (mel - left) / (centre - left);
        else if (mel > centre && mel < right)
          w = (right - mel) / (right - centre);
        weights_[std::size_t(m) * num_bins_ + k] = w;
      }
    }
  }

  int size() const { return num_filters_; }
  double centre_hz(int m) const { return centre_hz_[std::size_t(m)]; }
  double weight(int m, int bin) const { return weights_[std::size_t(m) * num_bins_ + bin]; }

  std::vector<double> energies(std::span<const double> power) const {
    std::vector<double> e(std::size_t(num_filters_), 0.0);
    for (int m = 0; m < num_filters_; ++m) {
      const double* w = weights_.data() + std::size_t(m) * num_bins_;
      double acc = 0.0;
      for (int k = 0; k < num_bins_; ++k) acc += w[k] * power[std::size_t(k)];
      e[std::size_t(m)] = acc;
    }
    return e;
  }

 private:
  int num_filters_;
  int num_bins_;
  std::vector<double> weights_;
  std::vector<double> centre_hz_;
};

inline const MelFilterbank& default_mel_filterbank() {
  static const MelFilterbank fb;
  return fb;
}

// Mel filterbank energies of a Hamming-windowed frame.
inline std::vector<double> mel_energies(std::span<const double> frame) {
  static const std::vector<double> win = hamming(kFrameLength);
  const auto w = frame.size() == win.size() ? win : hamming(frame.size());
  const auto power = fft::power_spectrum(apply_window(frame, w), kMfccFftSize);
  return default_mel_filterbank().energies(power);
}

// 13 static cepstra (c0..c12) of one frame.
inline std::vector<double> mfcc_static(std::span<const double> frame, double floor = kLogFloor) {
  auto e = mel_energies(frame);
  for (double& v : e) v = std::log(v + floor);
  static const DctII dct(kNumMelFilters, kNumCeps);
  return dct(e);
}

// Regression deltas over +-`half` frames with edge replication.
inline Matrix deltas(const Matrix& x, int half = 2) {
  Matrix d(x.rows(), x.cols());
  if (x.rows() == 0) return d;
  double denom = 0.0;
  for (int n = 1; n <= half; ++n) denom += 2.0 * n * n;
  const auto last = std::int64_t(x.rows()) - 1;
  for (std::int64_t t = 0; t <= last; ++t) {
    for (int n = 1; n <= half; ++n) {
      const auto fwd = x.row(std::size_t(std::min(last, t + n)));
      const auto back = x.row(std::size_t(std::max<std::int64_t>(0, t - n)));
      auto out = d.row(std::size_t(t));
      for (std::size_t c = 0; c < x.cols(); ++c) out[c] += n * (fwd[c] - back[c]) / denom;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// LPC

inline std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  std::vector<double> r(std::size_t(max_lag) + 1, 0.0);
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t i = std::size_t(lag); i < x.size(); ++i) acc += x[i] * x[i - lag];
    r[std::size_t(lag)] = acc;
  }
  return r;
}

struct LpcResult {
  std::vector<double> predictor;  // a_1..a_p with x[n] ~ sum_k a_k x[n-k]
  double error = 0.0;             // final prediction error energy
};

// Levinson-Durbin recursion on autocorrelation lags r[0..p]. A zero r[0]
// yields an all-zero predictor.
inline LpcResult levinson_durbin(std::span<const double> r, int order) {
  LpcResult res;
  res.predictor.assign(std::size_t(order), 0.0);
  double err = r[0];
  res.error = err;
  if (!(err > 0.0)) return res;
  std::vector<double> a(std::size_t(order) + 1, 0.0), prev;
  for (int i = 1; i <= order; ++i) {
    double acc = r[std::size_t(i)];
    for (int j = 1; j < i; ++j) acc -= a[std::size_t(j)] * r[std::size_t(i - j)];
    const double k = acc / err;
    prev = a;
    a[std::size_t(i)] = k;
    for (int j = 1; j < i; ++j) a[std::size_t(j)] = prev[std::size_t(j)] - k * prev[std::size_t(i - j)];
    const double next = err * (1.0 - k * k);
    if (!(next > 0.0)) break;  // perfectly predictable
    err = next;
  }
  std::copy(a.begin() + 1, a.end(), res.predictor.begin());
  res.error = err;
  return res;
}

// Predictor estimated from the Hamming-windowed frame.
inline LpcResult lpc_analyze(std::span<const double> frame, int order = kLpcOrder) {
  static const std::vector<double> win = hamming(kFrameLength);
  const auto w = frame.size() == win.size() ? win : hamming(frame.size());
  const auto windowed = apply_window(frame, w);
  return levinson_durbin(autocorrelation(windowed, order), order);
}

// e[n] = x[n] - sum_k a_k x[n-k] on the unwindowed frame, zero history.
inline std::vector<double> lpc_residual(std::span<const double> frame, int order = kLpcOrder) {
  const auto lpc = lpc_analyze(frame, order);
  std::vector<double> e(frame.begin(), frame.end());
  for (std::size_t n = 0; n < frame.size(); ++n) {
    double pred = 0.0;
    for (int k = 1; k <= order && std::size_t(k) <= n; ++k) pred += lpc.predictor[std::size_t(k - 1)] * frame[n - k];
    e[n] -= pred;
  }
  return e;
}

// c = Re IDFT(log(|DFT(x)| + eps)) with transforms of the input length.
inline std::vector<double> real_cepstrum(std::span<const double> x, double eps = kLogFloor) {
  const int n = int(x.size());
  auto spec = fft::rfft(x, n);
  for (auto& v : spec) v = std::log(std::abs(v) + eps);
  return fft::irfft(spec, n);
}

inline std::vector<double> real_cepstrum_320(std::span<const double> residual, double eps = kLogFloor) {
  if (residual.size() != std::size_t(kFrameLength)) throw Error("real_cepstrum_320: expected 320 samples");
  return real_cepstrum(residual, eps);
}

// ---------------------------------------------------------------------------
// Fusion and streams

inline std::vector<double> fuse(std::span<const double> mfcc, std::span<const double> rclpr_dct) {
  if (mfcc.size() != std::size_t(kMfccDim) || rclpr_dct.size() != std::size_t(kRclprDctDim))
    throw Error("fuse: expected 39 + 51 dimensions, got " + std::to_string(mfcc.size()) + " + " +
                std::to_string(rclpr_dct.size()));
  std::vector<double> out(mfcc.begin(), mfcc.end());
  out.insert(out.end(), rclpr_dct.begin(), rclpr_dct.end());
  return out;
}

// 51 excitation coefficients of one frame.
inline std::vector<double> rclpr_dct(std::span<const double> frame, int lpc_order = kLpcOrder) {
  return dct51(real_cepstrum(lpc_residual(frame, lpc_order)));
}

struct FusedFeatureStream {
  Matrix frames;               // num_frames x 90
  std::vector<double> times;   // frame start, seconds
  SpeechMask speech_mask;      // attached by SAD
  bool normalized = false;

  std::size_t size() const { return frames.rows(); }
};

// MFCC (with deltas) stacked with the RCLPR DCT for every frame, before
// normalization. A mask of all-true is attached as placeholder.
inline FusedFeatureStream compute_features(const Waveform& w, int lpc_order = kLpcOrder) {
  if (w.sample_rate != kSampleRate) throw AudioError("compute_features: waveform must be 8 kHz");
  const Matrix frames = frame(w);
  const std::size_t n = frames.rows();
  Matrix statics(n, kNumCeps);
  Matrix excitation(n, kRclprDctDim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = mfcc_static(frames.row(i));
    std::copy(c.begin(), c.end(), statics.row(i).begin());
    const auto d = rclpr_dct(frames.row(i), lpc_order);
    std::copy(d.begin(), d.end(), excitation.row(i).begin());
  }
  const Matrix d1 = deltas(statics);
  const Matrix d2 = deltas(d1);

  FusedFeatureStream s;
  s.frames = Matrix(n, kFusedDim);
  s.times.resize(n);
  s.speech_mask.assign(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    auto out = s.frames.row(i);
    std::copy(statics.row(i).begin(), statics.row(i).end(), out.begin());
    std::copy(d1.row(i).begin(), d1.row(i).end(), out.begin() + kNumCeps);
    std::copy(d2.row(i).begin(), d2.row(i).end(), out.begin() + 2 * kNumCeps);
    std::copy(excitation.row(i).begin(), excitation.row(i).end(), out.begin() + kMfccDim);
    s.times[i] = double(i) * kHopSeconds;
  }
  return s;
}

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Per-dimension mean/std over the frames where `mask` is true (all frames if
// none are). Dimensions with zero spread get unit scale.
inline NormalizationStats normalization_stats(const Matrix& x, const SpeechMask& mask) {
  const std::size_t d = x.cols();
  NormalizationStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) count += mask[i] ? 1 : 0;
  const bool use_all = count == 0;
  if (use_all) count = x.rows();
  if (count == 0) return st;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (!use_all && !mask[i]) continue;
    for (std::size_t c = 0; c < d; ++c) st.mean[c] += x(i, c);
  }
  for (double& m : st.mean) m /= double(count);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (!use_all && !mask[i]) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x(i, c) - st.mean[c];
      var[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    const double sd = std::sqrt(var[c] / double(count));
    st.stddev[c] = sd > 0.0 ? sd : 1.0;
  }
  return st;
}

// Attaches the mask and z-normalizes every frame with speech-frame statistics.
inline void normalize(FusedFeatureStream& s, const SpeechMask& mask) {
  if (mask.size() != s.size()) throw Error("normalize: mask length does not match stream");
  s.speech_mask = mask;
  const auto st = normalization_stats(s.frames, mask);
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto r = s.frames.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] = (r[c] - st.mean[c]) / st.stddev[c];
  }
  s.normalized = true;
}

// ---------------------------------------------------------------------------
// Feature dump: <path> holds little-endian float32 records of 90 values per
// frame; <path>.json holds frame times and the speech mask.

inline void write_feature_dump(const std::filesystem::path& path, const FusedFeatureStream& s) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw Error(path.string() + ": cannot open for writing");
  for (double v : s.frames.data()) {
    const float f = float(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    bin.write(reinterpret_cast<const char*>(b), 4);
  }
  nlohmann::json side;
  side["dim"] = s.frames.cols();
  side["num_frames"] = s.size();
  side["normalized"] = s.normalized;
  side["times"] = s.times;
  std::vector<int> mask(s.speech_mask.begin(), s.speech_mask.end());
  side["speech_mask"] = mask;
  std::ofstream js(path.string() + ".json");
  js << side.dump() << '\n';
  if (!bin || !js) throw Error(path.string() + ": write failed");
}

inline FusedFeatureStream read_feature_dump(const std::filesystem::path& path) {
  std::ifstream js(path.string() + ".json");
  if (!js) throw Error(path.string() + ".json: cannot open");
  const auto side = nlohmann::json::parse(js);
  const std::size_t dim = side.at("dim").get<std::size_t>();
  const std::size_t n = side.at("num_frames").get<std::size_t>();
  std::ifstream bin(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() != n * dim * 4) throw Error(path.string() + ": size does not match sidecar");
  FusedFeatureStream s;
  s.frames = Matrix(n, dim);
  for (std::size_t i = 0; i < n * dim; ++i) {
    const std::uint32_t u = detail::read_le32(bytes.data() + 4 * i);
    float f;
    std::memcpy(&f, &u, 4);
    s.frames.data()[i] = f;
  }
  s.times = side.at("times").get<std::vector<double>>();
  for (int v : side.at("speech_mask").get<std::vector<int>>()) s.speech_mask.push_back(v != 0);
  s.normalized = side.at("normalized").get<bool>();
  return s;
}

}  // namespace pltl
