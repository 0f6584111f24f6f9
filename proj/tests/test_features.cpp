#include <gtest/gtest.h>

#include <cmath>

#include "json.hpp"
#include "pltl/features.hpp"
#include "test_util.hpp"

using namespace pltl;
using namespace pltl::test;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

std::vector<double> naive_dct(const std::vector<double>& x, std::size_t k_out) {
  const std::size_t n = x.size();
  std::vector<double> out(k_out, 0.0);
  for (std::size_t k = 0; k < k_out; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
    out[k] = acc * (k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n));
  }
  return out;
}

std::vector<double> naive_cepstrum(const std::vector<double>& x, double eps) {
  const std::size_t n = x.size();
  const auto X = naive_dft(x);
  std::vector<double> logmag(n);
  for (std::size_t k = 0; k < n; ++k) logmag[k] = std::log(std::abs(X[k]) + eps);
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += logmag[k] * std::cos(2.0 * std::numbers::pi * double(k * i % n) / n);
    c[i] = acc / n;
  }
  return c;
}

double energy(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

}  // namespace

TEST(Features, Dct51MatchesCosineSum) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_vec(rng, 320);
    const auto got = dct51(x);
    const auto want = naive_dct(x, 51);
    ASSERT_EQ(got.size(), 51u);
    for (std::size_t k = 0; k < 51; ++k) ASSERT_NEAR(got[k], want[k], 1e-9);
  }
}

TEST(Features, Dct51ZeroAndConstant) {
  for (double v : dct51(std::vector<double>(320, 0.0))) EXPECT_EQ(v, 0.0);
  const auto c = dct51(std::vector<double>(320, 1.7));
  EXPECT_NEAR(c[0], 1.7 * std::sqrt(320.0), 1e-9);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_NEAR(c[k], 0.0, 1e-9);
}

TEST(Features, DctParseval) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const auto x = random_vec(rng, 320);
    const auto full = dct_ii(x, 320);
    EXPECT_NEAR(energy(full), energy(x), 1e-9);
    EXPECT_LE(energy(dct51(x)), energy(x) + 1e-9);
  }
}

TEST(Features, CepstrumMatchesDftOracle) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const auto x = random_vec(rng, 320);
    const auto got = real_cepstrum_320(x);
    const auto want = naive_cepstrum(x, kLogFloor);
    for (std::size_t i = 0; i < 320; ++i) ASSERT_NEAR(got[i], want[i], 1e-9);
  }
  EXPECT_THROW(real_cepstrum_320(std::vector<double>(100, 1.0)), Error);
}

TEST(Features, CepstrumOfImpulse) {
  std::vector<double> x(320, 0.0);
  x[0] = 1.0;
  for (double c : real_cepstrum(x, 0.0)) EXPECT_LT(std::abs(c), 1e-9);
}

TEST(Features, CepstrumScaling) {
  Rng rng(4);
  const auto x = random_vec(rng, 320);
  auto y = x;
  const double a = 3.5;
  for (double& v : y) v *= a;
  const auto cx = real_cepstrum(x, 0.0), cy = real_cepstrum(y, 0.0);
  EXPECT_NEAR(cy[0] - cx[0], std::log(a), 1e-9);
  for (std::size_t i = 1; i < 320; ++i) ASSERT_NEAR(cy[i], cx[i], 1e-9);
}

TEST(Features, CepstrumCircularReversal) {
  Rng rng(5);
  const auto x = random_vec(rng, 320);
  std::vector<double> r(320);
  for (std::size_t i = 0; i < 320; ++i) r[i] = x[(320 - i) % 320];
  const auto a = real_cepstrum_320(x), b = real_cepstrum_320(r);
  for (std::size_t i = 0; i < 320; ++i) ASSERT_NEAR(a[i], b[i], 1e-9);
}

TEST(Features, MfccMatchesReferenceFixture) {
  const auto j = nlohmann::json::parse(slurp(fixture("mfcc_reference.json")));
  Waveform w;
  w.samples = j.at("samples").get<std::vector<double>>();
  const auto ref = j.at("mfcc").get<std::vector<std::vector<double>>>();
  const Matrix frames = frame(w);
  ASSERT_EQ(frames.rows(), ref.size());
  Matrix statics(frames.rows(), kNumCeps);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    const auto c = mfcc_static(frames.row(i));
    std::copy(c.begin(), c.end(), statics.row(i).begin());
  }
  const Matrix d1 = deltas(statics), d2 = deltas(d1);
  // The fused stream carries the same 39 values in its first columns.
  const auto fs = compute_features(w);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ASSERT_EQ(ref[i].size(), 39u);
    for (int c = 0; c < kNumCeps; ++c) {
      EXPECT_NEAR(statics(i, c), ref[i][c], 1e-4) << i << "," << c;
      EXPECT_NEAR(d1(i, c), ref[i][13 + c], 1e-4) << i << "," << c;
      EXPECT_NEAR(d2(i, c), ref[i][26 + c], 1e-4) << i << "," << c;
    }
    for (int c = 0; c < kMfccDim; ++c) EXPECT_NEAR(fs.frames(i, c), ref[i][c], 1e-4);
  }
}

TEST(Features, ToneExcitesFilterAroundIt) {
  // Independent triangle evaluation at 1 kHz.
  const double mel = [](double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }(1000.0);
  const double top = 1127.0 * std::log(1.0 + 4000.0 / 700.0);
  const double step = top / 27.0;
  int expect = -1;
  double best = 0.0;
  for (int m = 0; m < 26; ++m) {
    const double l = m * step, c = l + step, r = c + step;
    const double w = mel > l && mel <= c ? (mel - l) / step : (mel > c && mel < r ? (r - mel) / step : 0.0);
    if (w > best) {
      best = w;
      expect = m;
    }
  }
  std::vector<double> x(320);
  for (std::size_t i = 0; i < 320; ++i) x[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * double(i) / 8000.0);
  const auto e = mel_energies(x);
  EXPECT_EQ(int(std::max_element(e.begin(), e.end()) - e.begin()), expect);
}

TEST(Features, ZeroFrameMfccFloored) {
  const std::vector<double> z(320, 0.0);
  const auto a = mfcc_static(z), b = mfcc_static(z);
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a[0], std::sqrt(26.0) * std::log(kLogFloor), 1e-9);
  for (std::size_t k = 1; k < a.size(); ++k) EXPECT_NEAR(a[k], 0.0, 1e-9);
}

TEST(Features, LpcWhiteNoise) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_vec(rng, 320);
    const double ratio = energy(lpc_residual(x)) / energy(x);
    ASSERT_GE(ratio, 0.8);
    ASSERT_LE(ratio, 1.2);
  }
}

TEST(Features, LpcAr2Gain) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(1000, 0.0);
    for (std::size_t n = 2; n < s.size(); ++n) s[n] = 1.3 * s[n - 1] - 0.8 * s[n - 2] + rng.normal();
    const std::vector<double> x(s.end() - 320, s.end());
    const double gain_db = 10.0 * std::log10(energy(x) / energy(lpc_residual(x)));
    EXPECT_GT(gain_db, 5.0);
    const auto lpc = lpc_analyze(x, 2);
    EXPECT_NEAR(lpc.predictor[0], 1.3, 0.25);
    EXPECT_NEAR(lpc.predictor[1], -0.8, 0.25);
  }
}

TEST(Features, LpcZeroFrame) {
  const std::vector<double> z(320, 0.0);
  for (double v : lpc_residual(z)) EXPECT_EQ(v, 0.0);
  for (double v : rclpr_dct(z)) EXPECT_TRUE(std::isfinite(v));
}

TEST(Features, LevinsonMatchesDirectSolve) {
  // Order 2 normal equations solved by hand.
  const std::vector<double> r{4.0, 2.0, 1.0};
  const auto res = levinson_durbin(r, 2);
  const double det = r[0] * r[0] - r[1] * r[1];
  EXPECT_NEAR(res.predictor[0], (r[1] * r[0] - r[1] * r[2]) / det, 1e-12);
  EXPECT_NEAR(res.predictor[1], (r[0] * r[2] - r[1] * r[1]) / det, 1e-12);
  EXPECT_NEAR(res.error, r[0] - res.predictor[0] * r[1] - res.predictor[1] * r[2], 1e-12);
}

TEST(Features, Fuse) {
  const auto f = fuse(std::vector<double>(39, 0.0), std::vector<double>(51, 0.0));
  ASSERT_EQ(f.size(), 90u);
  for (double v : f) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fuse(std::vector<double>(38, 0.0), std::vector<double>(51, 0.0)), Error);
  EXPECT_THROW(fuse(std::vector<double>(39, 0.0), std::vector<double>(50, 0.0)), Error);
}

TEST(Features, StreamShapeAndNormalization) {
  const auto g = generate_session(easy_script("feat", 9, 2, 4));
  auto fs = compute_features(g.channels[0]);
  EXPECT_EQ(fs.frames.cols(), 90u);
  EXPECT_EQ(fs.size(), make_grid(g.channels[0].size()).num_frames);
  EXPECT_DOUBLE_EQ(fs.times[5], 0.05);
  const auto again = compute_features(g.channels[0]);
  EXPECT_EQ(again.frames.data(), fs.frames.data());

  const auto mask = script_mask(g.script, fs.size());
  normalize(fs, mask);
  std::size_t n = 0;
  for (bool b : mask) n += b;
  ASSERT_GT(n, 100u);
  for (std::size_t c = 0; c < 90; ++c) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i)
      if (mask[i]) {
        s += fs.frames(i, c);
        ss += fs.frames(i, c) * fs.frames(i, c);
      }
    const double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
    EXPECT_LT(std::abs(mean), 1e-6) << c;
    EXPECT_NEAR(sd, 1.0, 1e-6) << c;
  }
}

TEST(Features, NormalizationConstantColumn) {
  Matrix x(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = 3.0;
    x(i, 1) = double(i);
  }
  const auto st = normalization_stats(x, {true, true, false, false});
  EXPECT_EQ(st.mean[0], 3.0);
  EXPECT_EQ(st.stddev[0], 1.0);
  EXPECT_EQ(st.mean[1], 0.5);
  EXPECT_EQ(st.stddev[1], 0.5);
}

TEST(Features, DumpRoundTrip) {
  const auto g = generate_session(easy_script("dump", 2, 2, 2));
  auto fs = compute_features(g.channels[1]);
  normalize(fs, script_mask(g.script, fs.size()));
  const auto dir = scratch_dir("dump");
  write_feature_dump(dir / "f.f32", fs);
  const auto back = read_feature_dump(dir / "f.f32");
  ASSERT_EQ(back.size(), fs.size());
  EXPECT_EQ(back.speech_mask, fs.speech_mask);
  EXPECT_TRUE(back.normalized);
  for (std::size_t i = 0; i < fs.frames.data().size(); ++i)
    ASSERT_EQ(back.frames.data()[i], double(float(fs.frames.data()[i])));
}
