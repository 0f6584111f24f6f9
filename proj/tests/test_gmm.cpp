#include <gtest/gtest.h>

#include <cmath>

#include "pltl/gmm.hpp"
#include "test_util.hpp"

using namespace pltl;
using namespace pltl::test;

TEST(Gaussian, RepeatedRowHitsFloor) {
  const std::vector<double> v{1.0, -2.0, 0.5};
  Matrix x;
  for (int i = 0; i < 100; ++i) x.append_row(v);
  const auto g = fit_gaussian(x);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(g.mean[c], v[c]);
    EXPECT_EQ(g.var[c], 1e-4);
  }
}

TEST(Gaussian, MonteCarloStandardNormal) {
  Rng rng(1);
  const auto g = fit_gaussian(random_matrix(rng, 10000, 90));
  for (std::size_t c = 0; c < 90; ++c) {
    EXPECT_LT(std::abs(g.mean[c]), 0.05);
    EXPECT_NEAR(g.var[c], 1.0, 0.05);
  }
}

TEST(Gaussian, OutlierShiftsMean) {
  const std::vector<double> v{2.0, 3.0}, o{12.0, -7.0};
  const std::size_t n = 40;
  Matrix x;
  for (std::size_t i = 0; i + 1 < n; ++i) x.append_row(v);
  x.append_row(o);
  const auto g = fit_gaussian(x);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(g.mean[c] - v[c], (o[c] - v[c]) / double(n), 1e-12);
}

TEST(Gaussian, TooFewFrames) {
  Rng rng(2);
  EXPECT_THROW(fit_gaussian(random_matrix(rng, 9, 3)), InsufficientFrames);
  EXPECT_THROW(fit_gmm2(random_matrix(rng, 19, 3)), InsufficientFrames);
  EXPECT_NO_THROW(fit_gmm2(random_matrix(rng, 20, 3)));
}

TEST(Gaussian, LogLikelihoodMatchesClosedForm) {
  GaussianModel g{{0.0, 1.0}, {1.0, 4.0}};
  const std::vector<double> x{1.0, 3.0};
  const double want = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(4.0) - 0.5 * (1.0 + 1.0);
  EXPECT_NEAR(g.log_pdf(x), want, 1e-12);
  EXPECT_NEAR(g.log_likelihood(Matrix::from_rows({x, x})), 2.0 * want, 1e-12);
}

TEST(Gmm2, SingleGaussianData) {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 2000, 4, 1.5, 1.0);
  const auto single = fit_gaussian(x).log_likelihood(x);
  const auto fit = fit_gmm2(x);
  // The mixture nests the single Gaussian; on single-source data it gains
  // little over it.
  EXPECT_GE(fit.log_likelihood, single - 1e-3);
  EXPECT_LT(fit.log_likelihood - single, 0.01 * double(x.rows()));
  const auto& m = fit.model;
  for (std::size_t c = 0; c < 4; ++c) {
    const double mix = m.weights[0] * m.components[0].mean[c] + m.weights[1] * m.components[1].mean[c];
    EXPECT_NEAR(mix, 1.5, 0.1);
  }
}

TEST(Gmm2, RecoversSeparatedClusters) {
  Rng rng(4);
  int ok = 0;
  for (int t = 0; t < 20; ++t) {
    Matrix x(2000, 3);
    for (std::size_t i = 0; i < 2000; ++i)
      for (std::size_t c = 0; c < 3; ++c) x(i, c) = (i < 1000 ? -5.0 : 5.0) + rng.normal();
    const auto fit = fit_gmm2(x);
    const auto& m = fit.model;
    const int lo = m.components[0].mean[0] < m.components[1].mean[0] ? 0 : 1;
    bool good = true;
    for (std::size_t c = 0; c < 3; ++c) {
      good &= std::abs(m.components[lo].mean[c] + 5.0) <= 0.2;
      good &= std::abs(m.components[1 - lo].mean[c] - 5.0) <= 0.2;
    }
    good &= std::abs(m.weights[0] - 0.5) <= 0.1;
    ok += good;
  }
  EXPECT_GE(ok, 19);
}

TEST(Gmm2, LogLikelihoodNeverDecreases) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 20 + rng.index(300), d = 1 + rng.index(20);
    Matrix x = random_matrix(rng, n, d);
    // Some datasets get a second population, some duplicated rows.
    if (t % 3 == 0)
      for (std::size_t i = 0; i < n / 3; ++i)
        for (std::size_t c = 0; c < d; ++c) x(i, c) += 4.0;
    if (t % 5 == 0)
      for (std::size_t i = 1; i < n; i += 2) std::copy(x.row(i - 1).begin(), x.row(i - 1).end(), x.row(i).begin());
    EmOptions opt;
    opt.tolerance = 0.0;
    opt.max_iterations = 30;
    const auto fit = fit_gmm2(x, opt);
    ASSERT_GE(fit.history.size(), 2u);
    for (std::size_t i = 1; i < fit.history.size(); ++i) ASSERT_GE(fit.history[i], fit.history[i - 1] - 1e-8) << t;
    EXPECT_NEAR(fit.log_likelihood, log_likelihood(fit.model, x), 1e-6 * std::abs(fit.log_likelihood));
  }
}

TEST(Gmm2, FloorsHold) {
  Rng rng(6);
  Matrix x = random_matrix(rng, 100, 3);
  for (std::size_t i = 0; i < 99; ++i) std::fill(x.row(i).begin(), x.row(i).end(), 0.0);
  const auto fit = fit_gmm2(x);
  for (const auto& c : fit.model.components)
    for (double v : c.var) EXPECT_GE(v, 1e-4);
  for (double w : fit.model.weights) EXPECT_GE(w, 0.01 - 1e-12);
  EXPECT_NEAR(fit.model.weights[0] + fit.model.weights[1], 1.0, 1e-12);
}

TEST(Gmm2, KmeansInitIsSeeded) {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 300, 5);
  EmOptions opt;
  opt.kmeans_init = true;
  opt.seed = 9;
  EXPECT_EQ(fit_gmm2(x, opt).log_likelihood, fit_gmm2(x, opt).log_likelihood);
}
