#pragma once

// Chain convergence diagnostics: Gelman-Rubin R-hat, normalised
// autocorrelation, and effective sample size.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace eptomo {

using Series = std::vector<double>;

namespace detail {

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// The FFTW planner is not thread-safe.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// R-hat = sqrt(V / W_n) with W_n = (n-1)/n W the pooled within-chain
/// variance and V = W_n + B/n. Equals 1 exactly for identical chains.
inline double gelman_rubin(const std::vector<Series>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("gelman_rubin: chains must have equal lengths");
  }
  if (n < 10) throw std::invalid_argument("gelman_rubin: chains must have length >= 10");
  const double m = static_cast<double>(chains.size());
  const double nn = static_cast<double>(n);

  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    const double mu = detail::mean_of(c);
    means.push_back(mu);
    double ss = 0.0;
    for (double v : c) ss += (v - mu) * (v - mu);
    w += ss / (nn - 1.0);
  }
  w /= m;
  const double grand = detail::mean_of(means);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= nn / (m - 1.0);

  const double w_n = (nn - 1.0) / nn * w;
  if (w_n <= 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt((w_n + b / nn) / w_n);
}

struct RhatPoint {
  std::size_t length = 0;
  double rhat = 1.0;
};

/// R-hat on growing prefixes of the chains, at `points` evenly spaced lengths.
inline std::vector<RhatPoint> gelman_rubin_evolution(const std::vector<Series>& chains, int points) {
  if (chains.size() < 2) throw std::invalid_argument("gelman_rubin_evolution: need at least 2 chains");
  if (points < 1) throw std::invalid_argument("gelman_rubin_evolution: points must be >= 1");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  std::vector<RhatPoint> out;
  for (int k = 1; k <= points; ++k) {
    const std::size_t len = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(points);
    if (len < 10) continue;
    std::vector<Series> prefix;
    for (const auto& c : chains) prefix.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(len));
    out.push_back(RhatPoint{len, gelman_rubin(prefix)});
  }
  return out;
}

/// r(k) = c(k) / c(0), c(k) = (1/n) sum_t (x_t - mean)(x_{t+k} - mean), for
/// k = 0..max_lag. Computed through a zero-padded FFT.
inline std::vector<double> autocorrelation(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n <= max_lag) throw std::invalid_argument("autocorrelation: series must be longer than max_lag");
  const double mu = detail::mean_of(series);
  std::size_t size = 1;
  while (size < 2 * n) size <<= 1;

  std::vector<double> buf(size, 0.0);
  for (std::size_t t = 0; t < n; ++t) buf[t] = series[t] - mu;
  const std::size_t half = size / 2 + 1;
  fftw_complex* spec = fftw_alloc_complex(half);
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(size), buf.data(), spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(size), spec, buf.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (std::size_t k = 0; k < half; ++k) {
    spec[k][0] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    spec[k][1] = 0.0;
  }
  fftw_execute(inv);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);

  const double c0 = buf[0];
  if (!(c0 > 0.0)) throw std::invalid_argument("autocorrelation: series has zero variance");
  std::vector<double> r(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) r[k] = buf[k] / c0;
  r[0] = 1.0;
  return r;
}

/// Integrated autocorrelation time by Geyer's initial positive sequence.
inline double integrated_autocorrelation_time(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 4) throw std::invalid_argument("integrated_autocorrelation_time: series too short");
  const auto r = autocorrelation(series, n - 1);
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const double pair = r[k] + r[k + 1];
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0 / static_cast<double>(n));
}

inline double effective_sample_size(std::span<const double> series) {
  return static_cast<double>(series.size()) / integrated_autocorrelation_time(series);
}

/// Sum of per-chain effective sample sizes.
inline double effective_sample_size(const std::vector<Series>& chains) {
  double total = 0.0;
  for (const auto& c : chains) total += effective_sample_size(c);
  return total;
}

}  // namespace eptomo
