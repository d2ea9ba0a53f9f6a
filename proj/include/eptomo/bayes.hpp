#pragma once

// Bayesian reconstruction of the joint 4x4 density matrix: rho = M M^dagger /
// tr(M M^dagger) with a complex 4x4 parameter matrix M, sampled by
// Metropolis-Hastings with preconditioned Crank-Nicolson proposals
//
//     m' = sqrt(1 - beta^2) m + beta xi,   xi ~ N(0, I_32).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "eptomo/errors.hpp"
#include "eptomo/polopt.hpp"
#include "eptomo/qmat.hpp"

namespace eptomo {

inline constexpr int kParamCount = 32;
using ParamVector = Eigen::Matrix<double, kParamCount, 1>;

/// M(i,j) = m[2 (4 i + j)] + i m[2 (4 i + j) + 1].
inline Eigen::Matrix4cd param_matrix(const ParamVector& m) {
  Eigen::Matrix4cd out;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const int k = 2 * (4 * i + j);
      out(i, j) = Complex(m(k), m(k + 1));
    }
  }
  return out;
}

inline ParamVector params_from_matrix(const Eigen::Matrix4cd& mat) {
  ParamVector m;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const int k = 2 * (4 * i + j);
      m(k) = mat(i, j).real();
      m(k + 1) = mat(i, j).imag();
    }
  }
  return m;
}

inline DensityMatrix rho_from_params(const ParamVector& m) {
  if (!(m.squaredNorm() > 0.0)) throw std::invalid_argument("rho_from_params: zero parameter vector");
  return DensityMatrix::from_gram(ComplexMatrix(param_matrix(m)));
}

namespace detail {

// Real coordinates of a Hermitian 4x4 matrix: 4 diagonal entries followed by
// (Re, Im) of each upper off-diagonal entry. For Hermitian A and B,
// tr(A B) = sum_k w_k a_k b_k with w = 1 on the diagonal and 2 off it.
inline std::array<double, 16> hermitian_coords(const Eigen::Matrix4cd& h) {
  std::array<double, 16> c{};
  int k = 0;
  for (int i = 0; i < 4; ++i) c[k++] = h(i, i).real();
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      c[k++] = h(i, j).real();
      c[k++] = h(i, j).imag();
    }
  }
  return c;
}

inline std::array<double, 16> effect_row(const ComplexMatrix& xi) {
  const Eigen::Matrix4cd h = 0.5 * (xi + xi.adjoint());
  auto c = hermitian_coords(h);
  for (int k = 4; k < 16; ++k) c[k] *= 2.0;
  return c;
}

}  // namespace detail

/// Group-normalised multinomial log-likelihood compiled into a dense linear
/// map from the Hermitian coordinates of rho to the record probabilities.
class LikelihoodModel {
 public:
  explicit LikelihoodModel(std::span<const CountRecord> records) {
    if (records.empty()) throw std::invalid_argument("LikelihoodModel: no records");
    std::map<GroupId, int> dense;
    std::vector<std::array<double, 16>> rows;
    for (const auto& r : records) {
      if (r.effect.op.rows() != 4 || r.effect.op.cols() != 4) {
        throw std::invalid_argument("log_likelihood: all effects must be 4x4");
      }
      const auto [it, inserted] = dense.try_emplace(r.effect.group, static_cast<int>(dense.size()));
      if (inserted) {
        group_rows_.emplace_back();
        group_rows_.back().fill(0.0);
        group_counts_.push_back(0.0);
      }
      const auto row = detail::effect_row(r.effect.op);
      for (int k = 0; k < 16; ++k) group_rows_[it->second][k] += row[k];
      group_counts_[it->second] += static_cast<double>(r.count);
      if (r.count > 0) {
        rows.push_back(row);
        counts_.push_back(static_cast<double>(r.count));
      }
    }
    design_.resize(static_cast<Eigen::Index>(rows.size()), 16);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      for (int k = 0; k < 16; ++k) design_(static_cast<Eigen::Index>(j), k) = rows[j][k];
    }
    total_counts_ = 0.0;
    for (double c : counts_) total_counts_ += c;
  }

  /// Sum_j N_j log(p_j / S_g(j)); the argument need not be trace-normalised.
  /// -inf when a record with counts has zero probability.
  double operator()(const Eigen::Matrix4cd& hermitian) const {
    const auto c = detail::hermitian_coords(hermitian);
    const Eigen::Map<const Eigen::Matrix<double, 16, 1>> h(c.data());
    double ll = 0.0;
    if (design_.rows() > 0) {
      const Eigen::VectorXd p = design_ * h;
      for (Eigen::Index j = 0; j < p.size(); ++j) {
        if (!(p(j) > 0.0)) return -std::numeric_limits<double>::infinity();
        ll += counts_[static_cast<std::size_t>(j)] * std::log(std::max(p(j), 1e-300));
      }
    }
    for (std::size_t g = 0; g < group_rows_.size(); ++g) {
      if (group_counts_[g] == 0.0) continue;
      double s = 0.0;
      for (int k = 0; k < 16; ++k) s += group_rows_[g][k] * c[k];
      if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
      ll -= group_counts_[g] * std::log(std::max(s, 1e-300));
    }
    return ll;
  }

  double operator()(const DensityMatrix& rho) const { return (*this)(Eigen::Matrix4cd(rho.matrix())); }

  /// Log-likelihood of the state parametrised by m (scale invariant).
  double from_params(const ParamVector& m) const {
    const Eigen::Matrix4cd mm = param_matrix(m);
    return (*this)(Eigen::Matrix4cd(mm * mm.adjoint()));
  }

  std::size_t group_count() const { return group_rows_.size(); }
  double total_counts() const { return total_counts_; }

 private:
  Eigen::Matrix<double, Eigen::Dynamic, 16> design_;
  std::vector<double> counts_;
  std::vector<std::array<double, 16>> group_rows_;
  std::vector<double> group_counts_;
  double total_counts_ = 0.0;
};

inline double log_likelihood(const DensityMatrix& rho, std::span<const CountRecord> records) {
  if (rho.dim() != 4) throw std::invalid_argument("log_likelihood: density matrix must be 4x4");
  return LikelihoodModel(records)(rho);
}

// ---------------------------------------------------------------------------
// Metropolis-Hastings with pCN proposals.

/// Reference density on m-space. `gaussian` is the standard normal on R^32,
/// whose direction is uniform and so induces the Hilbert-Schmidt measure on
/// rho; `flat` is the constant density, which is improper along |m|.
enum class ReferencePrior { gaussian, flat };

inline double log_prior(const ParamVector& m, ReferencePrior prior) {
  return prior == ReferencePrior::gaussian ? -0.5 * m.squaredNorm() : 0.0;
}

/// log q(to | from) for q(. | m) = N(sqrt(1 - beta^2) m, beta^2 I).
inline double log_proposal_density(const ParamVector& to, const ParamVector& from, double beta) {
  const double a = std::sqrt(1.0 - beta * beta);
  return -0.5 * kParamCount * std::log(2.0 * std::numbers::pi * beta * beta) -
         (to - a * from).squaredNorm() / (2.0 * beta * beta);
}

/// log q(m | m') - log q(m' | m) in closed form.
inline double log_proposal_ratio(const ParamVector& from, const ParamVector& to) {
  return 0.5 * (to.squaredNorm() - from.squaredNorm());
}

/// log alpha(from -> to) for log-likelihood values ll_from, ll_to.
inline double log_acceptance(const ParamVector& from, double ll_from, const ParamVector& to, double ll_to,
                             ReferencePrior prior) {
  if (ll_to == -std::numeric_limits<double>::infinity()) return ll_to;
  const double log_ratio =
      (ll_to + log_prior(to, prior)) - (ll_from + log_prior(from, prior)) + log_proposal_ratio(from, to);
  return std::min(0.0, log_ratio);
}

struct ChainState {
  ParamVector m = ParamVector::Zero();
  double log_likelihood = 0.0;
  double log_target = 0.0;  // log_likelihood + log_prior: the m-space target density
};

struct StepResult {
  ChainState state;
  bool accepted = false;
};

template <typename LogLikelihood>
ChainState make_chain_state(const ParamVector& m, const LogLikelihood& loglik, ReferencePrior prior) {
  ChainState s;
  s.m = m;
  s.log_likelihood = loglik(m);
  s.log_target = s.log_likelihood + log_prior(m, prior);
  return s;
}

/// One MH step; `loglik` maps a ParamVector to its log-likelihood.
template <typename LogLikelihood, typename Rng>
StepResult pcn_step(const ChainState& state, double beta, const LogLikelihood& loglik, ReferencePrior prior,
                    Rng& rng) {
  if (!(beta > 0.0) || beta > 1.0) throw std::invalid_argument("pcn_step: beta must lie in (0, 1]");
  std::normal_distribution<double> normal;
  ParamVector xi;
  for (int k = 0; k < kParamCount; ++k) xi(k) = normal(rng);
  const ParamVector proposal = std::sqrt(1.0 - beta * beta) * state.m + beta * xi;
  const double ll = loglik(proposal);
  const double log_alpha = log_acceptance(state.m, state.log_likelihood, proposal, ll, prior);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  if (std::log(uniform(rng)) < log_alpha) {
    return StepResult{ChainState{proposal, ll, ll + log_prior(proposal, prior)}, true};
  }
  return StepResult{state, false};
}

struct ChainConfig {
  int n_chains = 6;
  std::int64_t n_iter = 1'000'000;
  double burn_in_fraction = 0.10;
  double beta = 0.3;  // initial step; adapted during burn-in
  double adapt_target = 0.234;
  std::uint64_t seed = 0;
  int thinning = 10;
  int adapt_window = 100;
  int threads = 1;
  ReferencePrior prior = ReferencePrior::gaussian;

  std::int64_t burn_in_iterations() const {
    return static_cast<std::int64_t>(std::floor(burn_in_fraction * static_cast<double>(n_iter)));
  }

  void validate() const {
    if (n_chains < 1) throw std::invalid_argument("ChainConfig: n_chains must be >= 1");
    if (n_iter < 1) throw std::invalid_argument("ChainConfig: n_iter must be >= 1");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
      throw std::invalid_argument("ChainConfig: burn_in_fraction must lie in [0, 1)");
    }
    if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("ChainConfig: beta must lie in (0, 1]");
    if (!(adapt_target > 0.0 && adapt_target < 1.0)) throw std::invalid_argument("ChainConfig: bad adapt_target");
    if (thinning < 1) throw std::invalid_argument("ChainConfig: thinning must be >= 1");
    if (adapt_window < 1) throw std::invalid_argument("ChainConfig: adapt_window must be >= 1");
  }
};

/// log_post is the log posterior density of rho relative to the uniform
/// (Hilbert-Schmidt) prior, i.e. the log-likelihood up to a constant. The
/// radial and gauge directions of m that carry only the reference term are
/// deliberately excluded: they do not affect rho.
struct PosteriorSample {
  ParamVector m;
  int chain = 0;
  std::int64_t iteration = 0;
  double log_post = 0.0;
};

/// Chain history sampled every `thinning` iterations from the very start.
struct TracePoint {
  std::int64_t iteration = 0;
  double log_post = 0.0;
  double beta = 0.0;
  double cumulative_acceptance = 0.0;
};

struct ChainReport {
  double final_beta = 0.0;
  double burn_in_acceptance = 0.0;   // over the last quarter of the burn-in
  double acceptance_rate = 0.0;      // after burn-in
  std::vector<TracePoint> trace;
};

struct PosteriorSamples {
  ChainConfig config;
  std::vector<std::vector<PosteriorSample>> chains;
  std::vector<ChainReport> reports;
  std::vector<std::string> warnings;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& c : chains) n += c.size();
    return n;
  }

  double mean_acceptance() const {
    double s = 0.0;
    for (const auto& r : reports) s += r.acceptance_rate;
    return reports.empty() ? 0.0 : s / static_cast<double>(reports.size());
  }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& c : chains) {
      for (const auto& s : c) f(s);
    }
  }
};

namespace detail {

inline std::mt19937_64 chain_rng(std::uint64_t seed, int chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x5eedu};
  return std::mt19937_64(seq);
}

template <typename LogLikelihood>
void run_one_chain(const ChainConfig& cfg, int chain, const LogLikelihood& loglik, std::vector<PosteriorSample>& out,
                   ChainReport& report) {
  auto rng = chain_rng(cfg.seed, chain);
  std::normal_distribution<double> normal;
  ParamVector m0;
  for (int k = 0; k < kParamCount; ++k) m0(k) = normal(rng);
  ChainState state = make_chain_state(m0, loglik, cfg.prior);

  const std::int64_t burn = cfg.burn_in_iterations();
  double log_beta = std::log(cfg.beta);
  double beta = cfg.beta;
  std::int64_t window_accepts = 0;
  std::int64_t adapt_steps = 0;
  std::int64_t total_accepts = 0;
  std::int64_t post_accepts = 0;
  std::int64_t late_burn_accepts = 0;
  std::int64_t late_burn_iters = 0;
  double late_log_beta_sum = 0.0;
  std::int64_t late_log_beta_n = 0;
  const std::int64_t late_burn_start = burn - burn / 4;

  out.clear();
  out.reserve(static_cast<std::size_t>((cfg.n_iter - burn) / cfg.thinning + 1));
  report.trace.clear();

  for (std::int64_t it = 0; it < cfg.n_iter; ++it) {
    const StepResult step = pcn_step(state, beta, loglik, cfg.prior, rng);
    state = step.state;
    total_accepts += step.accepted;
    if (it < burn) {
      window_accepts += step.accepted;
      if (it >= late_burn_start) {
        late_burn_accepts += step.accepted;
        ++late_burn_iters;
      }
      if ((it + 1) % cfg.adapt_window == 0) {
        // Robbins-Monro on log(beta) with gain 5/sqrt(t).
        ++adapt_steps;
        const double rate = static_cast<double>(window_accepts) / cfg.adapt_window;
        log_beta += 5.0 * (rate - cfg.adapt_target) / std::sqrt(static_cast<double>(adapt_steps));
        log_beta = std::min(log_beta, 0.0);
        beta = std::exp(log_beta);
        window_accepts = 0;
        if (it >= late_burn_start) {
          late_log_beta_sum += log_beta;
          ++late_log_beta_n;
        }
      }
      if (it + 1 == burn && late_log_beta_n > 0) {
        beta = std::min(1.0, std::exp(late_log_beta_sum / static_cast<double>(late_log_beta_n)));
      }
    } else {
      post_accepts += step.accepted;
      if ((it - burn) % cfg.thinning == 0) {
        out.push_back(PosteriorSample{state.m, chain, it, state.log_likelihood});
      }
    }
    if (it % cfg.thinning == 0) {
      report.trace.push_back(TracePoint{it, state.log_likelihood, beta,
                                        static_cast<double>(total_accepts) / static_cast<double>(it + 1)});
    }
  }
  report.final_beta = beta;
  report.burn_in_acceptance =
      late_burn_iters > 0 ? static_cast<double>(late_burn_accepts) / static_cast<double>(late_burn_iters) : 0.0;
  const std::int64_t post = cfg.n_iter - burn;
  report.acceptance_rate = post > 0 ? static_cast<double>(post_accepts) / static_cast<double>(post) : 0.0;
}

}  // namespace detail

/// Runs cfg.n_chains independent chains. Chain c draws from a random stream
/// derived from (seed, c) only, so results do not depend on cfg.threads.
template <typename LogLikelihood>
PosteriorSamples run_chains_with(const ChainConfig& cfg, const LogLikelihood& loglik) {
  cfg.validate();
  PosteriorSamples samples;
  samples.config = cfg;
  samples.chains.resize(static_cast<std::size_t>(cfg.n_chains));
  samples.reports.resize(static_cast<std::size_t>(cfg.n_chains));

  const int workers = std::clamp(cfg.threads, 1, cfg.n_chains);
  if (workers == 1) {
    for (int c = 0; c < cfg.n_chains; ++c) {
      detail::run_one_chain(cfg, c, loglik, samples.chains[c], samples.reports[c]);
    }
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int c = w; c < cfg.n_chains; c += workers) {
          detail::run_one_chain(cfg, c, loglik, samples.chains[c], samples.reports[c]);
        }
      });
    }
  }

  for (int c = 0; c < cfg.n_chains; ++c) {
    const double acc = samples.reports[c].burn_in_acceptance;
    if (cfg.burn_in_iterations() > 0 && (acc < 0.05 || acc > 0.60)) {
      samples.warnings.push_back("chain " + std::to_string(c) + ": acceptance " + std::to_string(acc) +
                                 " at end of burn-in is outside [0.05, 0.60]; adaptation failed");
    }
  }
  return samples;
}

inline PosteriorSamples run_chains(const ChainConfig& cfg, std::span<const CountRecord> records) {
  if (records.empty()) throw std::invalid_argument("run_chains: no count records");
  const LikelihoodModel model(records);
  return run_chains_with(cfg, [&model](const ParamVector& m) { return model.from_params(m); });
}

// ---------------------------------------------------------------------------
// Sample file: one line per retained sample, 32 parameters at 17 significant
// digits followed by the chain id and the iteration index.

inline void write_samples(std::ostream& os, const PosteriorSamples& samples) {
  const auto old_precision = os.precision(17);
  samples.for_each([&os](const PosteriorSample& s) {
    for (int k = 0; k < kParamCount; ++k) os << s.m(k) << ',';
    os << s.chain << ',' << s.iteration << '\n';
  });
  os.precision(old_precision);
}

/// Reads a sample file; log_post is not stored and is left at zero.
inline PosteriorSamples read_samples(std::istream& is) {
  PosteriorSamples out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_skippable(line)) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != kParamCount + 2) {
      throw DataError("samples line " + std::to_string(line_no) + ": expected 34 fields");
    }
    PosteriorSample s;
    for (int k = 0; k < kParamCount; ++k) s.m(k) = detail::parse_double(f[static_cast<std::size_t>(k)], "parameter");
    const long long chain = detail::parse_integer(f[kParamCount], "chain id");
    if (chain < 0 || chain > 1'000'000) throw DataError("samples line " + std::to_string(line_no) + ": bad chain id");
    s.chain = static_cast<int>(chain);
    s.iteration = detail::parse_integer(f[kParamCount + 1], "iteration");
    if (!(s.m.squaredNorm() > 0.0)) throw DataError("samples line " + std::to_string(line_no) + ": zero parameters");
    if (out.chains.size() <= static_cast<std::size_t>(s.chain)) out.chains.resize(static_cast<std::size_t>(s.chain) + 1);
    out.chains[static_cast<std::size_t>(s.chain)].push_back(s);
  }
  out.config.n_chains = static_cast<int>(out.chains.size());
  return out;
}

}  // namespace eptomo
