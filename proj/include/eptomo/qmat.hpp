#pragma once

// Complex matrix and quantum-state primitives.
//
// Basis convention (used by every module): the joint electron-photon space is
// ordered electron factor first,
//
//     index 0: |L,H>   index 1: |L,V>   index 2: |R,H>   index 3: |R,V>
//
// i.e. index = 2 * electron + photon with |L> = |0>, |R> = |1> for the
// electron path and |H> = |0>, |V> = |1> for the photon polarisation.
// Kronecker products put the first factor on the slow axis.

#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eptomo/errors.hpp"

namespace eptomo {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

inline constexpr double kHermitianTolerance = 1e-10;
inline constexpr double kDensityHermitianTolerance = 1e-12;
inline constexpr double kDensityTraceTolerance = 1e-12;
inline constexpr double kDensityEigenTolerance = 1e-10;
inline constexpr double kJacobiTolerance = 1e-13;
inline constexpr int kJacobiMaxSweeps = 100;

namespace basis {
inline constexpr int kElectronLeft = 0;
inline constexpr int kElectronRight = 1;
inline constexpr int kPhotonH = 0;
inline constexpr int kPhotonV = 1;

constexpr int joint_index(int electron, int photon) { return 2 * electron + photon; }
}  // namespace basis

namespace pauli {
inline Eigen::Matrix2cd identity() { return Eigen::Matrix2cd::Identity(); }
inline Eigen::Matrix2cd x() {
  Eigen::Matrix2cd m;
  m << 0, 1, 1, 0;
  return m;
}
inline Eigen::Matrix2cd y() {
  Eigen::Matrix2cd m;
  m << 0, Complex(0, -1), Complex(0, 1), 0;
  return m;
}
inline Eigen::Matrix2cd z() {
  Eigen::Matrix2cd m;
  m << 1, 0, 0, -1;
  return m;
}
}  // namespace pauli

inline bool all_finite(const ComplexMatrix& m) {
  return std::all_of(m.data(), m.data() + m.size(),
                     [](const Complex& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
}

/// Largest absolute entry of m - m^dagger.
inline double hermiticity_defect(const ComplexMatrix& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

/// Kronecker product a (x) b; entry a(i,j) * b(k,l) lands at
/// (i * rows(b) + k, j * cols(b) + l).
inline ComplexMatrix tensor(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols()) {
    throw std::invalid_argument("tensor: both factors must be square");
  }
  const Eigen::Index na = a.rows();
  const Eigen::Index nb = b.rows();
  ComplexMatrix out(na * nb, na * nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    for (Eigen::Index j = 0; j < na; ++j) {
      out.block(i * nb, j * nb, nb, nb) = a(i, j) * b;
    }
  }
  return out;
}

struct EigenDecomposition {
  RealVector values;      // ascending
  ComplexMatrix vectors;  // column k belongs to values(k)
};

namespace detail {

inline double off_diagonal_norm(const ComplexMatrix& a) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (i != j) sum += std::norm(a(i, j));
    }
  }
  return std::sqrt(sum);
}

// Cyclic complex Jacobi. Each (p,q) rotation first removes the phase of a(p,q)
// with diag(1, e^{-i arg a_pq}) and then applies the real Jacobi rotation that
// zeroes the now-real off-diagonal pair.
inline EigenDecomposition jacobi_eigen(ComplexMatrix a) {
  const Eigen::Index n = a.rows();
  a = (0.5 * (a + a.adjoint())).eval();
  ComplexMatrix v = ComplexMatrix::Identity(n, n);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

  for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a) <= kJacobiTolerance * scale) break;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Complex apq = a(p, q);
        const double r = std::abs(apq);
        if (r <= std::numeric_limits<double>::min()) continue;
        const Complex phase = std::conj(apq / r);
        const double app = a(p, p).real();
        const double aqq = a(q, q).real();
        const double theta = (aqq - app) / (2.0 * r);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        // U restricted to (p,q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
        const Complex u_pp = c;
        const Complex u_pq = s;
        const Complex u_qp = -s * phase;
        const Complex u_qq = c * phase;

        // a <- a U (columns p, q)
        for (Eigen::Index k = 0; k < n; ++k) {
          const Complex akp = a(k, p);
          const Complex akq = a(k, q);
          a(k, p) = akp * u_pp + akq * u_qp;
          a(k, q) = akp * u_pq + akq * u_qq;
        }
        // a <- U^dagger a (rows p, q)
        for (Eigen::Index k = 0; k < n; ++k) {
          const Complex apk = a(p, k);
          const Complex aqk = a(q, k);
          a(p, k) = std::conj(u_pp) * apk + std::conj(u_qp) * aqk;
          a(q, k) = std::conj(u_pq) * apk + std::conj(u_qq) * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        a(p, p) = a(p, p).real();
        a(q, q) = a(q, q).real();
        for (Eigen::Index k = 0; k < n; ++k) {
          const Complex vkp = v(k, p);
          const Complex vkq = v(k, q);
          v(k, p) = vkp * u_pp + vkq * u_qp;
          v(k, q) = vkp * u_pq + vkq * u_qq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i).real() < a(j, j).real(); });
  EigenDecomposition out{RealVector(n), ComplexMatrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]).real();
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

inline void require_hermitian(const ComplexMatrix& h, const char* who) {
  if (h.rows() != h.cols() || h.rows() == 0) {
    throw std::invalid_argument(std::string(who) + ": matrix must be square and non-empty");
  }
  if (!all_finite(h)) throw std::invalid_argument(std::string(who) + ": non-finite entries");
  const double tol = kHermitianTolerance * std::max(1.0, h.cwiseAbs().maxCoeff());
  if (hermiticity_defect(h) > tol) {
    throw std::invalid_argument(std::string(who) + ": matrix is not Hermitian");
  }
}

}  // namespace detail

/// Eigenvalues and eigenvectors of a Hermitian matrix, ascending.
inline EigenDecomposition herm_eig(const ComplexMatrix& h) {
  detail::require_hermitian(h, "herm_eig");
  return detail::jacobi_eigen(h);
}

/// Eigenvalues of a Hermitian matrix, ascending. Closed form for 2x2.
inline RealVector herm_eigvals(const ComplexMatrix& h) {
  detail::require_hermitian(h, "herm_eigvals");
  if (h.rows() == 2) {
    const double a = h(0, 0).real();
    const double d = h(1, 1).real();
    const Complex b = 0.5 * (h(0, 1) + std::conj(h(1, 0)));
    const double mean = 0.5 * (a + d);
    const double radius = std::hypot(0.5 * (a - d), std::abs(b));
    RealVector out(2);
    out << mean - radius, mean + radius;
    return out;
  }
  return detail::jacobi_eigen(h).values;
}

/// f(h) for Hermitian h via its eigendecomposition.
template <typename F>
ComplexMatrix herm_apply(const ComplexMatrix& h, F&& f) {
  const EigenDecomposition eig = herm_eig(h);
  RealVector mapped(eig.values.size());
  for (Eigen::Index k = 0; k < mapped.size(); ++k) mapped(k) = f(eig.values(k));
  return eig.vectors * mapped.cast<Complex>().asDiagonal() * eig.vectors.adjoint();
}

class PureState {
 public:
  explicit PureState(ComplexVector amplitudes) : amplitudes_(std::move(amplitudes)) {
    if (amplitudes_.size() == 0) throw std::invalid_argument("PureState: empty amplitude vector");
    if (std::abs(amplitudes_.norm() - 1.0) > 1e-12) {
      throw std::invalid_argument("PureState: amplitudes must have unit norm");
    }
  }

  static PureState normalized(const ComplexVector& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("PureState: zero or non-finite vector");
    return PureState(v / n);
  }

  const ComplexVector& amplitudes() const { return amplitudes_; }
  Eigen::Index dim() const { return amplitudes_.size(); }
  ComplexMatrix projector() const { return amplitudes_ * amplitudes_.adjoint(); }

 private:
  ComplexVector amplitudes_;
};

/// (|L,H> + |R,V>) / sqrt(2)
inline PureState bell_phi_plus() {
  ComplexVector v = ComplexVector::Zero(4);
  v(basis::joint_index(basis::kElectronLeft, basis::kPhotonH)) = 1.0;
  v(basis::joint_index(basis::kElectronRight, basis::kPhotonV)) = 1.0;
  return PureState::normalized(v);
}

class DensityMatrix {
 public:
  /// Validates squareness, dimension 2 or 4, Hermiticity, unit trace and
  /// positivity. Round-off asymmetry is removed from the stored matrix.
  explicit DensityMatrix(const ComplexMatrix& mat) {
    if (mat.rows() != mat.cols() || (mat.rows() != 2 && mat.rows() != 4)) {
      throw std::invalid_argument("DensityMatrix: must be square with dimension 2 or 4");
    }
    if (!all_finite(mat)) throw std::invalid_argument("DensityMatrix: non-finite entries");
    if (hermiticity_defect(mat) > kDensityHermitianTolerance) {
      throw std::invalid_argument("DensityMatrix: not Hermitian");
    }
    mat_ = 0.5 * (mat + mat.adjoint());
    if (std::abs(mat_.trace().real() - 1.0) > kDensityTraceTolerance) {
      throw std::invalid_argument("DensityMatrix: trace differs from 1");
    }
    if (detail::jacobi_eigen(mat_).values(0) < -kDensityEigenTolerance) {
      throw std::invalid_argument("DensityMatrix: not positive semidefinite");
    }
  }

  /// m m^dagger / tr(m m^dagger); valid for any nonzero m.
  static DensityMatrix from_gram(const ComplexMatrix& m) {
    const ComplexMatrix g = m * m.adjoint();
    const double tr = g.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr)) throw std::invalid_argument("DensityMatrix: zero parameter matrix");
    return DensityMatrix(g / tr);
  }

  static DensityMatrix maximally_mixed(Eigen::Index dim) {
    return DensityMatrix(ComplexMatrix::Identity(dim, dim) / static_cast<double>(dim));
  }

  static DensityMatrix from_pure(const PureState& psi) { return DensityMatrix(psi.projector()); }

  const ComplexMatrix& matrix() const { return mat_; }
  Eigen::Index dim() const { return mat_.rows(); }
  Complex operator()(Eigen::Index i, Eigen::Index j) const { return mat_(i, j); }

 private:
  ComplexMatrix mat_;
};

/// p |Phi+><Phi+| + (1 - p) I/4
inline DensityMatrix werner_state(double p) {
  return DensityMatrix(p * bell_phi_plus().projector() + (1.0 - p) * ComplexMatrix::Identity(4, 4) / 4.0);
}

enum class Subsystem { first, second };

/// Transpose of one tensor factor of a 4x4 (2 x 2 qubit) matrix.
inline ComplexMatrix partial_transpose(const ComplexMatrix& m, Subsystem subsystem) {
  if (m.rows() != 4 || m.cols() != 4) throw std::invalid_argument("partial_transpose: matrix must be 4x4");
  ComplexMatrix out(4, 4);
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      for (int j = 0; j < 2; ++j) {
        for (int l = 0; l < 2; ++l) {
          const Complex value = m(2 * i + k, 2 * j + l);
          if (subsystem == Subsystem::second) {
            out(2 * i + l, 2 * j + k) = value;
          } else {
            out(2 * j + k, 2 * i + l) = value;
          }
        }
      }
    }
  }
  return out;
}

inline ComplexMatrix partial_transpose(const DensityMatrix& rho, Subsystem subsystem) {
  if (rho.dim() != 4) throw std::invalid_argument("partial_transpose: density matrix must be 4x4");
  return partial_transpose(rho.matrix(), subsystem);
}

/// Reduced state of one factor of a 4x4 state.
inline DensityMatrix partial_trace(const DensityMatrix& rho, Subsystem keep) {
  if (rho.dim() != 4) throw std::invalid_argument("partial_trace: density matrix must be 4x4");
  ComplexMatrix out = ComplexMatrix::Zero(2, 2);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < 2; ++t) {
        out(a, b) += keep == Subsystem::first ? rho(2 * a + t, 2 * b + t) : rho(2 * t + a, 2 * t + b);
      }
    }
  }
  return DensityMatrix(out);
}

/// <psi| rho |psi>
inline double state_fidelity(const DensityMatrix& rho, const PureState& psi) {
  if (rho.dim() != psi.dim()) throw std::invalid_argument("state_fidelity: dimension mismatch");
  const double f = (psi.amplitudes().adjoint() * rho.matrix() * psi.amplitudes())(0, 0).real();
  return std::clamp(f, 0.0, 1.0);
}

/// tr(O rho) for Hermitian O.
inline double expectation(const ComplexMatrix& observable, const DensityMatrix& rho) {
  if (observable.rows() != rho.dim() || observable.cols() != rho.dim()) {
    throw std::invalid_argument("expectation: dimension mismatch");
  }
  return (observable * rho.matrix()).trace().real();
}

/// (1/2) || a - b ||_1
inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("trace_distance: dimension mismatch");
  const RealVector ev = herm_eigvals(a.matrix() - b.matrix());
  return 0.5 * ev.cwiseAbs().sum();
}

// Text form: first line the dimension, then dim*dim lines "re,im" in row-major
// order at 17 significant digits.
inline void write_density_matrix(std::ostream& os, const DensityMatrix& rho) {
  const auto old_precision = os.precision(17);
  os << rho.dim() << '\n';
  for (Eigen::Index i = 0; i < rho.dim(); ++i) {
    for (Eigen::Index j = 0; j < rho.dim(); ++j) {
      os << rho(i, j).real() << ',' << rho(i, j).imag() << '\n';
    }
  }
  os.precision(old_precision);
}

inline DensityMatrix read_density_matrix(std::istream& is) {
  auto next_line = [&is](std::string& line) {
    while (std::getline(is, line)) {
      if (!line.empty() && line[0] != '#') return true;
    }
    return false;
  };
  std::string line;
  if (!next_line(line)) throw DataError("density matrix: missing dimension line");
  Eigen::Index dim = 0;
  try {
    dim = std::stol(line);
  } catch (const std::exception&) {
    throw DataError("density matrix: bad dimension line '" + line + "'");
  }
  if (dim != 2 && dim != 4) throw DataError("density matrix: dimension must be 2 or 4");
  ComplexMatrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      if (!next_line(line)) throw DataError("density matrix: truncated entry list");
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw DataError("density matrix: expected 're,im' but got '" + line + "'");
      try {
        m(i, j) = Complex(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
      } catch (const std::exception&) {
        throw DataError("density matrix: unparsable entry '" + line + "'");
      }
    }
  }
  try {
    return DensityMatrix(m);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("density matrix: ") + e.what());
  }
}

}  // namespace eptomo
