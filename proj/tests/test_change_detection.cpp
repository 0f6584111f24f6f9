#include <gtest/gtest.h>

#include <cmath>

#include "pltl/change_detection.hpp"
#include "test_util.hpp"

using namespace pltl;
using namespace pltl::test;

namespace {

Matrix shifted(const Matrix& x, const std::vector<double>& c) {
  Matrix y = x;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t k = 0; k < y.cols(); ++k) y(i, k) += c[k];
  return y;
}

Matrix permuted(const Matrix& x, const std::vector<std::size_t>& p) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) y(i, k) = x(i, p[k]);
  return y;
}

}  // namespace

TEST(Llr, Symmetric) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Matrix u = random_matrix(rng, 100, 6), v = random_matrix(rng, 100, 6, t % 2 ? 1.0 : 0.0);
    EXPECT_NEAR(d_llr(u, v), d_llr(v, u), 1e-9);
  }
}

TEST(Llr, DimensionPermutation) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Matrix u = random_matrix(rng, 100, 8), v = random_matrix(rng, 100, 8, 0.5);
    std::vector<std::size_t> p(8);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = 7; i > 0; --i) std::swap(p[i], p[rng.index(i + 1)]);
    EXPECT_NEAR(d_llr(permuted(u, p), permuted(v, p)), d_llr(u, v), 1e-9);
  }
}

TEST(Llr, Translation) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Matrix u = random_matrix(rng, 100, 10), v = random_matrix(rng, 100, 10, 0.8);
    std::vector<double> c(10);
    for (double& x : c) x = rng.uniform(-20.0, 20.0);
    EXPECT_NEAR(d_llr(shifted(u, c), shifted(v, c)), d_llr(u, v), 1e-6);
  }
}

TEST(Llr, IdenticalWindowsUnrolled) {
  Rng rng(4);
  const Matrix u = random_matrix(rng, 100, 5);
  ChangeDetectionOptions opt;
  opt.partition_start = false;
  const double want = 2.0 * fit_gaussian(u).log_likelihood(u) - fit_gmm2(stack_rows(u, u)).log_likelihood;
  EXPECT_NEAR(d_llr(u, u, opt), want, 1e-9);
  // With both EM starts the joint fit can only improve.
  EXPECT_LE(d_llr(u, u), d_llr(u, u, opt) + 1e-9);
}

TEST(Llr, SeparatedSourcesPositive) {
  Rng rng(5);
  int pos = 0;
  for (int t = 0; t < 100; ++t) pos += d_llr(random_matrix(rng, 100, 90, -3.0), random_matrix(rng, 100, 90, 3.0)) > 0.0;
  EXPECT_GE(pos, 99);
}

TEST(Llr, BoundedByCleanSplit) {
  // The two window Gaussians at equal weight are an admissible mixture, so
  // D cannot exceed N ln 2.
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    const Matrix u = random_matrix(rng, 100, 20, rng.uniform(-5.0, 5.0));
    const Matrix v = random_matrix(rng, 100, 20, rng.uniform(-5.0, 5.0), rng.uniform(0.5, 2.0));
    EXPECT_LE(d_llr(u, v), 200.0 * std::log(2.0) + 1e-6);
  }
}

TEST(Llr, SameSourceBaseline) {
  Rng rng(7);
  double sum = 0.0;
  int positive = 0;
  for (int t = 0; t < 200; ++t) {
    const double d = d_llr(random_matrix(rng, 100, 20), random_matrix(rng, 100, 20));
    sum += d;
    positive += d > 0.0;
  }
  // Same-source windows sit below zero on average; the false-alarm fraction
  // is printed as a calibration figure.
  EXPECT_LT(sum / 200.0, 0.0);
  RecordProperty("same_source_positive_fraction", std::to_string(positive / 200.0));
  std::printf("same-source mean D %.2f, positive fraction %.3f\n", sum / 200.0, positive / 200.0);
}

TEST(Llr, MismatchedDimensions) {
  Rng rng(8);
  EXPECT_THROW(d_llr(random_matrix(rng, 50, 3), random_matrix(rng, 50, 4)), Error);
}

TEST(DetectChanges, EmptyStream) {
  FusedFeatureStream s;
  const auto cd = detect_changes(s);
  EXPECT_EQ(cd.changes.size(), 0u);
  EXPECT_TRUE(cd.trace.d_llr.empty());
}

TEST(DetectChanges, NoSpeechNoChanges) {
  Rng rng(9);
  FusedFeatureStream s;
  s.frames = random_matrix(rng, 500, 4);
  s.speech_mask.assign(500, false);
  EXPECT_EQ(detect_changes(s).changes.size(), 0u);
}

TEST(DetectChanges, AbSpeakers) {
  const auto spk = easy_speakers(4);
  SessionScript s;
  s.seed = 77;
  s.duration = 20.0;
  s.speakers = {spk[0], spk[2]};
  s.speakers[1].role = Role::student;
  s.utterances = {{0, 0.0, 10.0}, {1, 10.0, 20.0}};
  const auto g = generate_session(s);
  auto fs = compute_features(g.channels[0]);
  normalize(fs, script_mask(g.script, fs.size()));
  const auto cd = detect_changes(fs, {}, 4);
  EXPECT_EQ(cd.changes.channel_id, 4);
  ASSERT_EQ(cd.changes.size(), 1u);
  EXPECT_NEAR(cd.changes.times[0], 10.0, 0.5);
  EXPECT_DOUBLE_EQ(cd.changes.times[0], frame_midpoint(cd.changes.frames[0]));
  const auto again = detect_changes(fs, {}, 4);
  EXPECT_EQ(again.changes.frames, cd.changes.frames);
  EXPECT_EQ(again.trace.d_llr, cd.trace.d_llr);
}

TEST(DetectChanges, ChangesInsideSpeechAndSpaced) {
  const auto g = generate_session(easy_script("cd", 21, 3, 12));
  auto fs = compute_features(g.channels[1]);
  const auto mask = script_mask(g.script, fs.size());
  normalize(fs, mask);
  const auto cd = detect_changes(fs);
  ASSERT_GT(cd.changes.size(), 3u);
  for (std::size_t i = 0; i < cd.changes.size(); ++i) {
    EXPECT_TRUE(mask[cd.changes.frames[i]]);
    if (i > 0) { EXPECT_GE(cd.changes.frames[i] - cd.changes.frames[i - 1], 50u); }
  }
  for (std::size_t k : cd.changes.frames) {
    const auto it = std::find(cd.trace.eval_frames.begin(), cd.trace.eval_frames.end(), k);
    ASSERT_NE(it, cd.trace.eval_frames.end());
    EXPECT_GT(cd.trace.d_llr[std::size_t(it - cd.trace.eval_frames.begin())], 0.0);
  }
}

TEST(DetectChanges, TraceCsv) {
  LlrTrace t;
  t.eval_times = {1.02, 1.12};
  t.d_llr = {-3.5, 12.25};
  const auto csv = llr_trace_csv(t);
  EXPECT_EQ(csv.substr(0, 12), "time,d_llr\n1");
  EXPECT_NE(csv.find("12.25"), std::string::npos);
}
