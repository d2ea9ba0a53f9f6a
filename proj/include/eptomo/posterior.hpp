#pragma once

// Scalar functionals evaluated on posterior samples, with mean / SD /
// histogram summaries and the posterior-mean density matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eptomo/bayes.hpp"
#include "eptomo/diagnostics.hpp"
#include "eptomo/entangle.hpp"

namespace eptomo {

enum class Functional { min_pt_eig, bell_fidelity, concurrence, eof, negativity, corrected_bell_fidelity };

inline std::string_view functional_name(Functional f) {
  switch (f) {
    case Functional::min_pt_eig: return "min_pt_eig";
    case Functional::bell_fidelity: return "bell_fidelity";
    case Functional::concurrence: return "concurrence";
    case Functional::eof: return "eof";
    case Functional::negativity: return "negativity";
    case Functional::corrected_bell_fidelity: return "corrected_bell_fidelity";
  }
  return "unknown";
}

inline Functional parse_functional(std::string_view name) {
  for (Functional f : {Functional::min_pt_eig, Functional::bell_fidelity, Functional::concurrence, Functional::eof,
                       Functional::negativity, Functional::corrected_bell_fidelity}) {
    if (functional_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown functional '" + std::string(name) + "'");
}

/// Fixed inputs shared by all samples. The Bell-fidelity functionals use one
/// photon-side unitary for every sample (normally the optimum for the
/// posterior mean), so they describe a single fixed observable.
struct FunctionalContext {
  Eigen::Matrix2cd u = Eigen::Matrix2cd::Identity();
  double gamma = 1.0;
};

inline double evaluate_functional(const DensityMatrix& rho, Functional f, const FunctionalContext& ctx = {}) {
  switch (f) {
    case Functional::min_pt_eig: return ppt_min_eigenvalue(rho);
    case Functional::bell_fidelity: return rotated_bell_fidelity(rho.matrix(), ctx.u);
    case Functional::concurrence: return concurrence(rho);
    case Functional::eof: return entanglement_of_formation(rho);
    case Functional::negativity: return negativity(rho);
    case Functional::corrected_bell_fidelity:
      return corrected_expectation(rho, ctx.gamma, rotated_bell_projector(ctx.u));
  }
  throw std::invalid_argument("evaluate_functional: unknown functional");
}

/// Functional values per chain, in sample order.
inline std::vector<Series> functional_series(const PosteriorSamples& samples, Functional f,
                                             const FunctionalContext& ctx = {}) {
  std::vector<Series> out;
  out.reserve(samples.chains.size());
  for (const auto& chain : samples.chains) {
    Series s;
    s.reserve(chain.size());
    for (const auto& x : chain) s.push_back(evaluate_functional(rho_from_params(x.m), f, ctx));
    out.push_back(std::move(s));
  }
  return out;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
  double centre(std::size_t k) const { return lo + (static_cast<double>(k) + 0.5) * bin_width(); }
};

inline Histogram make_histogram(std::span<const double> values, int bins, std::optional<std::pair<double, double>> range = {}) {
  if (bins < 1) throw std::invalid_argument("make_histogram: bins must be >= 1");
  if (values.empty()) throw std::invalid_argument("make_histogram: no values");
  Histogram h;
  if (range) {
    h.lo = range->first;
    h.hi = range->second;
  } else {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx;
  }
  if (!(h.hi > h.lo)) {
    const double pad = std::max(1e-12, std::abs(h.lo) * 1e-9);
    h.lo -= pad;
    h.hi += pad;
  }
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double w = h.bin_width();
  for (double v : values) {
    if (v < h.lo || v > h.hi) continue;
    auto k = static_cast<std::size_t>((v - h.lo) / w);
    h.counts[std::min(k, h.counts.size() - 1)]++;
  }
  return h;
}

struct ScalarSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  Histogram histogram;

  /// |mean| / SD, e.g. the number of standard deviations by which a negative
  /// minimum partial-transpose eigenvalue violates the separability bound.
  double significance() const { return sd > 0.0 ? std::abs(mean) / sd : std::numeric_limits<double>::infinity(); }
};

inline ScalarSummary summarize(std::span<const double> values, int bins = 50) {
  if (values.empty()) throw std::invalid_argument("summarize: no samples");
  ScalarSummary s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  s.histogram = make_histogram(values, bins);
  return s;
}

inline Series pooled(const std::vector<Series>& chains) {
  Series all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  return all;
}

inline ScalarSummary posterior_summary(const PosteriorSamples& samples, Functional f, const FunctionalContext& ctx = {},
                                       int bins = 50) {
  if (samples.size() == 0) throw std::invalid_argument("posterior_summary: empty samples");
  return summarize(pooled(functional_series(samples, f, ctx)), bins);
}

struct MatrixSummary {
  ComplexMatrix mean;
  Eigen::MatrixXd sd_real;
  Eigen::MatrixXd sd_imag;
};

/// Entrywise posterior mean and SD of rho.
inline MatrixSummary posterior_matrix_summary(const PosteriorSamples& samples) {
  const std::size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("posterior_matrix_summary: empty samples");
  ComplexMatrix sum = ComplexMatrix::Zero(4, 4);
  Eigen::MatrixXd sq_re = Eigen::MatrixXd::Zero(4, 4);
  Eigen::MatrixXd sq_im = Eigen::MatrixXd::Zero(4, 4);
  samples.for_each([&](const PosteriorSample& s) {
    const ComplexMatrix r = rho_from_params(s.m).matrix();
    sum += r;
    sq_re += r.real().cwiseAbs2();
    sq_im += r.imag().cwiseAbs2();
  });
  const double nn = static_cast<double>(n);
  MatrixSummary out;
  out.mean = sum / nn;
  const double bessel = n > 1 ? nn / (nn - 1.0) : 0.0;
  out.sd_real = ((sq_re / nn - out.mean.real().cwiseAbs2()) * bessel).cwiseMax(0.0).cwiseSqrt();
  out.sd_imag = ((sq_im / nn - out.mean.imag().cwiseAbs2()) * bessel).cwiseMax(0.0).cwiseSqrt();
  return out;
}

inline DensityMatrix posterior_mean(const PosteriorSamples& samples) {
  return DensityMatrix(posterior_matrix_summary(samples).mean);
}

}  // namespace eptomo
