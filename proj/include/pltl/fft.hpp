#pragma once

// Thin FFTW wrapper. Plans are created once per size under a lock and then
// executed through FFTW's thread-safe new-array interface.

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "pltl/common.hpp"

namespace pltl::fft {

namespace detail {

enum class Kind { r2c, c2r };

inline fftw_plan plan_for(Kind kind, int n) {
  static std::mutex mu;
  static std::map<std::pair<Kind, int>, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find({kind, n});
  if (it != plans.end()) return it->second;
  std::vector<double> re(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> cx(std::size_t(n / 2 + 1));
  auto* c = reinterpret_cast<fftw_complex*>(cx.data());
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  fftw_plan p = kind == Kind::r2c ? fftw_plan_dft_r2c_1d(n, re.data(), c, flags)
                                  : fftw_plan_dft_c2r_1d(n, c, re.data(), flags | FFTW_DESTROY_INPUT);
  if (!p) throw Error("fftw: failed to create plan");
  plans.emplace(std::pair{kind, n}, p);
  return p;
}

}  // namespace detail

// Forward DFT of a real sequence, zero-padded (or truncated) to n points.
// Returns bins 0..n/2.
inline std::vector<std::complex<double>> rfft(std::span<const double> x, int n) {
  std::vector<double> in(std::size_t(n), 0.0);
  std::copy_n(x.begin(), std::min<std::size_t>(x.size(), std::size_t(n)), in.begin());
  std::vector<std::complex<double>> out(std::size_t(n / 2 + 1));
  fftw_execute_dft_r2c(detail::plan_for(detail::Kind::r2c, n), in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

// Inverse of rfft for a Hermitian spectrum given by bins 0..n/2, normalized
// by 1/n so that irfft(rfft(x)) == x.
inline std::vector<double> irfft(std::span<const std::complex<double>> half, int n) {
  std::vector<std::complex<double>> in(half.begin(), half.end());
  in.resize(std::size_t(n / 2 + 1));
  std::vector<double> out(static_cast<std::size_t>(n));
  fftw_execute_dft_c2r(detail::plan_for(detail::Kind::c2r, n), reinterpret_cast<fftw_complex*>(in.data()),
                       out.data());
  const double scale = 1.0 / n;
  for (double& v : out) v *= scale;
  return out;
}

// |X_k|^2 for k = 0..n/2.
inline std::vector<double> power_spectrum(std::span<const double> x, int n) {
  const auto spec = rfft(x, n);
  std::vector<double> p(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) p[k] = std::norm(spec[k]);
  return p;
}

}  // namespace pltl::fft
