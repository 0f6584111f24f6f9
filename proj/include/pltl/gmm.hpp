#pragma once

// Diagonal-covariance Gaussian and two-component GMM with EM.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "pltl/common.hpp"

namespace pltl {

class InsufficientFrames : public Error {
 public:
  using Error::Error;
};

struct GaussianModel {
  std::vector<double> mean;
  std::vector<double> var;

  std::size_t dim() const { return mean.size(); }

  double log_pdf(std::span<const double> x) const {
    double q = 0.0, logdet = 0.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      const double d = x[c] - mean[c];
      q += d * d / var[c];
      logdet += std::log(var[c]);
    }
    return -0.5 * (double(mean.size()) * std::log(2.0 * std::numbers::pi) + logdet + q);
  }

  double log_likelihood(const Matrix& x) const {
    const double konst = -0.5 * (double(dim()) * std::log(2.0 * std::numbers::pi) + log_det());
    std::vector<double> inv(var.size());
    for (std::size_t c = 0; c < var.size(); ++c) inv[c] = 1.0 / var[c];
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto r = x.row(i);
      double q = 0.0;
      for (std::size_t c = 0; c < mean.size(); ++c) {
        const double d = r[c] - mean[c];
        q += d * d * inv[c];
      }
      total += konst - 0.5 * q;
    }
    return total;
  }

  double log_det() const {
    double s = 0.0;
    for (double v : var) s += std::log(v);
    return s;
  }
};

struct GaussianFitOptions {
  double variance_floor = 1e-4;
  std::size_t min_frames = 10;
};

// ML mean and biased (1/N) variance, floored.
inline GaussianModel fit_gaussian(const Matrix& x, const GaussianFitOptions& opt = {}) {
  if (x.rows() < opt.min_frames || x.rows() == 0)
    throw InsufficientFrames("fit_gaussian: " + std::to_string(x.rows()) + " frames, need " +
                             std::to_string(opt.min_frames));
  const std::size_t n = x.rows(), d = x.cols();
  GaussianModel g{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) g.mean[c] += x(i, c);
  for (double& m : g.mean) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = x(i, c) - g.mean[c];
      g.var[c] += dv * dv;
    }
  for (double& v : g.var) v = std::max(v / double(n), opt.variance_floor);
  return g;
}

struct Gmm2Model {
  std::array<double, 2> weights{0.5, 0.5};
  std::array<GaussianModel, 2> components;

  double log_pdf(std::span<const double> x) const {
    return log_sum_exp(std::log(weights[0]) + components[0].log_pdf(x),
                       std::log(weights[1]) + components[1].log_pdf(x));
  }
};

struct EmOptions {
  std::size_t max_iterations = 50;
  double tolerance = 1e-4;  // absolute improvement in total log-likelihood
  double variance_floor = 1e-4;
  double weight_floor = 0.01;
  std::size_t min_frames = 20;
  // When set, the mean-split start is replaced by a seeded two-means
  // clustering of the frames.
  bool kmeans_init = false;
  std::uint64_t seed = 0;
};

struct Gmm2Fit {
  Gmm2Model model;
  double log_likelihood = 0.0;       // of the data under `model`
  std::vector<double> history;       // log-likelihood before each M-step, then final
  std::size_t iterations = 0;        // M-steps performed
};

namespace detail {

// E-step over both components. Fills resp0 (posterior of component 0) and
// returns the total log-likelihood.
inline double gmm2_estep(const Matrix& x, const Gmm2Model& m, std::vector<double>& resp0) {
  const std::size_t d = x.cols();
  std::array<std::vector<double>, 2> inv;
  std::array<double, 2> konst{};
  for (int k = 0; k < 2; ++k) {
    const auto& g = m.components[std::size_t(k)];
    inv[std::size_t(k)].resize(d);
    for (std::size_t c = 0; c < d; ++c) inv[std::size_t(k)][c] = 1.0 / g.var[c];
    konst[std::size_t(k)] = std::log(m.weights[std::size_t(k)]) -
                            0.5 * (double(d) * std::log(2.0 * std::numbers::pi) + g.log_det());
  }
  resp0.resize(x.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    std::array<double, 2> l{};
    for (int k = 0; k < 2; ++k) {
      const auto& mu = m.components[std::size_t(k)].mean;
      const auto& iv = inv[std::size_t(k)];
      double q = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = r[c] - mu[c];
        q += dv * dv * iv[c];
      }
      l[std::size_t(k)] = konst[std::size_t(k)] - 0.5 * q;
    }
    const double ll = log_sum_exp(l[0], l[1]);
    resp0[i] = std::exp(l[0] - ll);
    total += ll;
  }
  return total;
}

inline void gmm2_mstep(const Matrix& x, const std::vector<double>& resp0, const EmOptions& opt, Gmm2Model& m) {
  const std::size_t n = x.rows(), d = x.cols();
  for (int k = 0; k < 2; ++k) {
    double nk = 0.0;
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = k == 0 ? resp0[i] : 1.0 - resp0[i];
      nk += r;
      const auto row = x.row(i);
      for (std::size_t c = 0; c < d; ++c) mean[c] += r * row[c];
    }
    if (nk <= 1e-12) continue;  // component owns nothing; leave it in place
    for (double& v : mean) v /= nk;
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = k == 0 ? resp0[i] : 1.0 - resp0[i];
      const auto row = x.row(i);
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = row[c] - mean[c];
        var[c] += r * dv * dv;
      }
    }
    for (double& v : var) v = std::max(v / nk, opt.variance_floor);
    auto& g = m.components[std::size_t(k)];
    g.mean = std::move(mean);
    g.var = std::move(var);
    if (k == 0) m.weights[0] = nk / double(n);
  }
  m.weights[0] = std::clamp(m.weights[0], opt.weight_floor, 1.0 - opt.weight_floor);
  m.weights[1] = 1.0 - m.weights[0];
}

}  // namespace detail

inline Gmm2Model gmm2_kmeans_initial(const Matrix& x, const EmOptions& opt);

// Deterministic mean-split initialization: both components start at the
// global mean/variance, displaced by +-1 std along the highest-variance
// dimension.
inline Gmm2Model gmm2_initial(const Matrix& x, const EmOptions& opt = {}) {
  if (opt.kmeans_init) return gmm2_kmeans_initial(x, opt);
  GaussianFitOptions gopt{opt.variance_floor, 1};
  const GaussianModel global = fit_gaussian(x, gopt);
  std::size_t axis = 0;
  for (std::size_t c = 1; c < global.dim(); ++c)
    if (global.var[c] > global.var[axis]) axis = c;
  Gmm2Model m;
  m.components = {global, global};
  const double shift = std::sqrt(global.var[axis]);
  m.components[0].mean[axis] -= shift;
  m.components[1].mean[axis] += shift;
  return m;
}

inline Gmm2Model gmm2_kmeans_initial(const Matrix& x, const EmOptions& opt) {
  Rng rng(opt.seed);
  const std::size_t n = x.rows(), d = x.cols();
  std::array<std::vector<double>, 2> centre;
  const std::size_t first = rng.index(n);
  std::size_t second = rng.index(n - 1);
  if (second >= first) ++second;
  centre[0].assign(x.row(first).begin(), x.row(first).end());
  centre[1].assign(x.row(second).begin(), x.row(second).end());
  std::vector<int> label(n, 0);
  for (int it = 0; it < 10; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 2> dist{};
      for (int k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < d; ++c) {
          const double dv = x(i, c) - centre[std::size_t(k)][c];
          dist[std::size_t(k)] += dv * dv;
        }
      label[i] = dist[1] < dist[0] ? 1 : 0;
    }
    for (int k = 0; k < 2; ++k) {
      std::vector<double> acc(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (label[i] == k) {
          ++count;
          for (std::size_t c = 0; c < d; ++c) acc[c] += x(i, c);
        }
      if (count == 0) continue;
      for (double& v : acc) v /= double(count);
      centre[std::size_t(k)] = std::move(acc);
    }
  }
  // Hard assignments as responsibilities give the first M-step.
  std::vector<double> resp0(n);
  for (std::size_t i = 0; i < n; ++i) resp0[i] = label[i] == 0 ? 1.0 : 0.0;
  GaussianFitOptions gopt{opt.variance_floor, 1};
  Gmm2Model m;
  m.components = {fit_gaussian(x, gopt), fit_gaussian(x, gopt)};
  detail::gmm2_mstep(x, resp0, opt, m);
  return m;
}

// EM from the given starting model.
inline Gmm2Fit run_em(const Matrix& x, Gmm2Model start, const EmOptions& opt = {}) {
  if (x.rows() < opt.min_frames || x.rows() == 0)
    throw InsufficientFrames("fit_gmm2: " + std::to_string(x.rows()) + " frames, need " +
                             std::to_string(opt.min_frames));
  Gmm2Fit fit;
  fit.model = std::move(start);
  std::vector<double> resp0;
  double ll = detail::gmm2_estep(x, fit.model, resp0);
  fit.history.push_back(ll);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    detail::gmm2_mstep(x, resp0, opt, fit.model);
    ++fit.iterations;
    const double next = detail::gmm2_estep(x, fit.model, resp0);
    fit.history.push_back(next);
    const double gain = next - ll;
    ll = next;
    if (gain < opt.tolerance) break;
  }
  fit.log_likelihood = ll;
  return fit;
}

inline Gmm2Fit fit_gmm2(const Matrix& x, const EmOptions& opt = {}) {
  if (x.rows() < opt.min_frames || x.rows() == 0)
    throw InsufficientFrames("fit_gmm2: " + std::to_string(x.rows()) + " frames, need " +
                             std::to_string(opt.min_frames));
  return run_em(x, gmm2_initial(x, opt), opt);
}

inline double log_likelihood(const Gmm2Model& m, const Matrix& x) {
  std::vector<double> resp0;
  return detail::gmm2_estep(x, m, resp0);
}

}  // namespace pltl
