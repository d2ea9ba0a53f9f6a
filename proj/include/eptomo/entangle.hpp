#pragma once

// Two-qubit entanglement measures, Bell fidelity under a photon-side local
// unitary, and the electron input-coherence correction.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eptomo/detail/nelder_mead.hpp"
#include "eptomo/errors.hpp"
#include "eptomo/qmat.hpp"

namespace eptomo {

namespace detail {
inline void require_two_qubit(const DensityMatrix& rho, const char* who) {
  if (rho.dim() != 4) throw std::invalid_argument(std::string(who) + ": expected a 4x4 density matrix");
}
}  // namespace detail

/// Smallest eigenvalue of the partial transpose on the photon factor.
inline double ppt_min_eigenvalue(const DensityMatrix& rho) {
  detail::require_two_qubit(rho, "ppt_min_eigenvalue");
  return herm_eigvals(partial_transpose(rho, Subsystem::second))(0);
}

/// -2 x (sum of negative partial-transpose eigenvalues).
inline double negativity(const DensityMatrix& rho) {
  detail::require_two_qubit(rho, "negativity");
  const RealVector ev = herm_eigvals(partial_transpose(rho, Subsystem::second));
  double s = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) s += std::min(0.0, ev(i));
  return -2.0 * s;
}

/// Wootters concurrence. The square roots of the eigenvalues of rho rho~ are
/// taken from the Hermitian form sqrt(rho) rho~ sqrt(rho).
inline double concurrence(const DensityMatrix& rho) {
  detail::require_two_qubit(rho, "concurrence");
  const Eigen::Matrix4cd yy = tensor(pauli::y(), pauli::y());
  const Eigen::Matrix4cd r = rho.matrix();
  const Eigen::Matrix4cd flipped = yy * r.conjugate() * yy;
  const ComplexMatrix sq = herm_apply(rho.matrix(), [](double x) { return std::sqrt(std::max(x, 0.0)); });
  ComplexMatrix h = sq * flipped * sq;
  h = 0.5 * (h + h.adjoint()).eval();
  const RealVector ev = herm_eigvals(h);
  std::array<double, 4> lam{};
  for (int i = 0; i < 4; ++i) lam[i] = std::sqrt(std::max(ev(3 - i), 0.0));  // descending
  return std::clamp(lam[0] - lam[1] - lam[2] - lam[3], 0.0, 1.0);
}

inline double binary_entropy(double x) {
  auto term = [](double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; };
  return term(x) + term(1.0 - x);
}

inline double entanglement_of_formation_from_concurrence(double c) {
  if (!(c >= -1e-12 && c <= 1.0 + 1e-12)) throw std::invalid_argument("concurrence must lie in [0, 1]");
  c = std::clamp(c, 0.0, 1.0);
  return binary_entropy(0.5 * (1.0 + std::sqrt(1.0 - c * c)));
}

inline double entanglement_of_formation(const DensityMatrix& rho) {
  return entanglement_of_formation_from_concurrence(concurrence(rho));
}

// ---------------------------------------------------------------------------
// Bell fidelity maximised over photon-side unitaries.

/// U = Rz(alpha) Ry(beta) Rz(gamma).
inline Eigen::Matrix2cd zyz_unitary(double alpha, double beta, double gamma) {
  auto rz = [](double t) {
    Eigen::Matrix2cd m = Eigen::Matrix2cd::Zero();
    m(0, 0) = std::polar(1.0, -t / 2);
    m(1, 1) = std::polar(1.0, t / 2);
    return m;
  };
  Eigen::Matrix2cd ry;
  ry << std::cos(beta / 2), -std::sin(beta / 2), std::sin(beta / 2), std::cos(beta / 2);
  return rz(alpha) * ry * rz(gamma);
}

/// <Phi+| (I (x) U) rho (I (x) U)^dagger |Phi+>.
inline double rotated_bell_fidelity(const ComplexMatrix& rho, const Eigen::Matrix2cd& u) {
  const Eigen::Vector4cd phi = bell_phi_plus().amplitudes();
  const Eigen::Matrix4cd local = tensor(Eigen::Matrix2cd::Identity(), u);
  const Eigen::Vector4cd w = local.adjoint() * phi;
  return (w.adjoint() * rho * w)(0, 0).real();
}

struct BellFidelityOptions {
  int grid = 16;           // points per Euler angle
  int refine_starts = 4;   // best grid points refined by simplex search
  double tolerance = 1e-9;
};

struct BellFidelityResult {
  double fidelity = 0.0;
  Eigen::Matrix2cd u = Eigen::Matrix2cd::Identity();
  std::array<double, 3> angles{};
  bool converged = false;
};

/// Works on any Hermitian 4x4 operator, so it also optimises coherence-
/// corrected operators that need not be positive.
inline BellFidelityResult bell_fidelity_opt(const ComplexMatrix& m, const BellFidelityOptions& options = {}) {
  if (m.rows() != 4 || m.cols() != 4) throw std::invalid_argument("bell_fidelity_opt: expected a 4x4 matrix");
  detail::require_hermitian(m, "bell_fidelity_opt");
  if (options.grid < 2 || options.refine_starts < 1) throw std::invalid_argument("bell_fidelity_opt: bad options");
  auto objective = [&m](double a, double b, double g) { return rotated_bell_fidelity(m, zyz_unitary(a, b, g)); };

  struct Candidate {
    double f;
    std::array<double, 3> x;
  };
  std::vector<Candidate> grid;
  const int n = options.grid;
  grid.reserve(static_cast<std::size_t>(n) * n * n);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        const std::array<double, 3> x{two_pi * i / n, std::numbers::pi * (j + 0.5) / n, two_pi * k / n};
        grid.push_back(Candidate{objective(x[0], x[1], x[2]), x});
      }
    }
  }
  const auto starts = static_cast<std::size_t>(std::min<int>(options.refine_starts, static_cast<int>(grid.size())));
  std::partial_sort(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(starts), grid.end(),
                    [](const Candidate& a, const Candidate& b) { return a.f > b.f; });

  BellFidelityResult best;
  best.fidelity = -1.0;
  detail::SimplexOptions simplex;
  simplex.initial_step = std::numbers::pi / n;
  simplex.size_tolerance = 1e-7;
  for (std::size_t s = 0; s < starts; ++s) {
    const auto r = detail::nelder_mead(
        [&objective](const std::vector<double>& x) { return -objective(x[0], x[1], x[2]); },
        {grid[s].x[0], grid[s].x[1], grid[s].x[2]}, simplex);
    const double f = std::max(-r.value, grid[s].f);
    const auto& x = -r.value >= grid[s].f ? std::array<double, 3>{r.x[0], r.x[1], r.x[2]} : grid[s].x;
    if (f > best.fidelity) {
      best.fidelity = f;
      best.angles = x;
      best.converged = r.converged;
    }
  }
  best.u = zyz_unitary(best.angles[0], best.angles[1], best.angles[2]);

  // Converged when a final simplex restart at the optimum cannot improve F.
  const auto check = detail::nelder_mead(
      [&objective](const std::vector<double>& x) { return -objective(x[0], x[1], x[2]); },
      {best.angles[0], best.angles[1], best.angles[2]}, simplex);
  if (-check.value > best.fidelity + options.tolerance) {
    best.converged = false;
    best.fidelity = -check.value;
    best.angles = {check.x[0], check.x[1], check.x[2]};
    best.u = zyz_unitary(best.angles[0], best.angles[1], best.angles[2]);
  }
  return best;
}

inline BellFidelityResult bell_fidelity_opt(const DensityMatrix& rho, const BellFidelityOptions& options = {}) {
  detail::require_two_qubit(rho, "bell_fidelity_opt");
  auto r = bell_fidelity_opt(rho.matrix(), options);
  r.fidelity = std::clamp(r.fidelity, 0.0, 1.0);
  return r;
}

/// Projector onto (I (x) U)^dagger |Phi+>, whose expectation is the rotated
/// Bell fidelity.
inline ComplexMatrix rotated_bell_projector(const Eigen::Matrix2cd& u) {
  const Eigen::Vector4cd phi = bell_phi_plus().amplitudes();
  const Eigen::Vector4cd w = tensor(Eigen::Matrix2cd::Identity(), u).adjoint() * phi;
  return w * w.adjoint();
}

// ---------------------------------------------------------------------------
// Coherence correction.

/// Electron input state [[a, c], [conj(c), b]].
struct CoherenceSpec {
  double a = 0.5;
  double b = 0.5;
  Complex c{0.5, 0.0};

  static CoherenceSpec from_gamma(double a, double gamma, double phase = 0.0) {
    CoherenceSpec s;
    s.a = a;
    s.b = 1.0 - a;
    s.c = std::polar(gamma * std::sqrt(s.a * s.b), phase);
    s.validate();
    return s;
  }

  double gamma() const {
    const double ab = std::sqrt(a * b);
    return ab > 0.0 ? std::abs(c) / ab : 0.0;
  }

  void validate() const {
    if (!(a >= 0.0 && b >= 0.0) || std::abs(a + b - 1.0) > 1e-12) {
      throw std::invalid_argument("CoherenceSpec: populations must be non-negative and sum to 1");
    }
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag()) || std::abs(c) > std::sqrt(a * b) + 1e-12) {
      throw std::invalid_argument("CoherenceSpec: |c| exceeds sqrt(ab)");
    }
  }
};

/// Photon states produced by pure |L> and |R> electrons.
struct LocalChannelSpec {
  DensityMatrix rho0 = DensityMatrix::maximally_mixed(2);
  DensityMatrix rho1 = DensityMatrix::maximally_mixed(2);
};

namespace detail {
inline ComplexMatrix electron_population_term(int k, const DensityMatrix& photon) {
  ComplexMatrix e = ComplexMatrix::Zero(2, 2);
  e(k, k) = 1.0;
  return tensor(e, photon.matrix());
}
}  // namespace detail

/// Expectation for a perfectly coherent input (a' = a, b' = b, |c'| = sqrt(ab))
/// from one measured with the partially coherent input `spec`:
///   (measured - a t0 - b t1) |c'|/|c| + a t0 + b t1,
/// with t_k = tr(O (|k><k| (x) rho_k)).
inline double coherence_correct(double measured, const CoherenceSpec& spec, const LocalChannelSpec& channel,
                                const ComplexMatrix& observable) {
  spec.validate();
  if (observable.rows() != 4 || observable.cols() != 4) {
    throw std::invalid_argument("coherence_correct: observable must be 4x4");
  }
  if (channel.rho0.dim() != 2 || channel.rho1.dim() != 2) {
    throw std::invalid_argument("coherence_correct: channel states must be 2x2");
  }
  if (hermiticity_defect(observable) > kHermitianTolerance * std::max(1.0, observable.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("coherence_correct: observable must be Hermitian");
  }
  if (std::abs(spec.c) == 0.0) throw NumericalError("coherence_correct: c = 0, correction undefined");
  const double t0 = (observable * detail::electron_population_term(0, channel.rho0)).trace().real();
  const double t1 = (observable * detail::electron_population_term(1, channel.rho1)).trace().real();
  const double populations = spec.a * t0 + spec.b * t1;
  const double ratio = std::sqrt(spec.a * spec.b) / std::abs(spec.c);
  return (measured - populations) * ratio + populations;
}

/// Per-sample correction: the populations a, b and the conditional photon
/// states rho_0, rho_1 are read from the sample itself; gamma is the measured
/// input coherence.
inline double corrected_expectation(const DensityMatrix& rho, double gamma, const ComplexMatrix& observable) {
  detail::require_two_qubit(rho, "corrected_expectation");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("corrected_expectation: gamma must lie in (0, 1]");
  const ComplexMatrix& m = rho.matrix();
  const double a = m.block(0, 0, 2, 2).trace().real();
  const double b = 1.0 - a;
  if (!(a > 0.0 && b > 0.0)) throw NumericalError("corrected_expectation: an electron beam has zero population");
  const auto normalise = [](const ComplexMatrix& block) {
    const ComplexMatrix h = 0.5 * (block + block.adjoint());
    return DensityMatrix(h / h.trace().real());
  };
  const LocalChannelSpec channel{normalise(m.block(0, 0, 2, 2)), normalise(m.block(2, 2, 2, 2))};
  return coherence_correct(expectation(observable, rho), CoherenceSpec::from_gamma(a, gamma), channel, observable);
}

/// The linear map behind corrected_expectation: the electron off-diagonal
/// blocks of rho divided by gamma. Not positive in general.
inline ComplexMatrix coherence_corrected_matrix(const DensityMatrix& rho, double gamma) {
  detail::require_two_qubit(rho, "coherence_corrected_matrix");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("coherence_corrected_matrix: gamma must lie in (0, 1]");
  ComplexMatrix m = rho.matrix();
  m.block(0, 2, 2, 2) /= gamma;
  m.block(2, 0, 2, 2) /= gamma;
  return m;
}

}  // namespace eptomo
