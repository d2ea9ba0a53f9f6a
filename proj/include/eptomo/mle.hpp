#pragma once

// Single-qubit maximum-likelihood reconstruction from scan count records.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "eptomo/errors.hpp"
#include "eptomo/polopt.hpp"
#include "eptomo/qmat.hpp"

namespace eptomo {

struct BlochVector {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

/// Pauli expectations with z = <H|rho|H> - <V|rho|V>.
inline BlochVector bloch(const DensityMatrix& rho) {
  if (rho.dim() != 2) throw std::invalid_argument("bloch: density matrix must be 2x2");
  return BlochVector{2.0 * rho(0, 1).real(), -2.0 * rho(0, 1).imag(), rho(0, 0).real() - rho(1, 1).real()};
}

inline DensityMatrix from_bloch(const BlochVector& b) {
  if (b.norm() > 1.0 + 1e-9) throw std::invalid_argument("from_bloch: vector longer than 1");
  return DensityMatrix(0.5 * (pauli::identity() + b.x * pauli::x() + b.y * pauli::y() + b.z * pauli::z()));
}

/// Angle between two Bloch vectors in degrees.
inline double bloch_angle(const BlochVector& a, const BlochVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("bloch_angle: zero-norm Bloch vector");
  const double c = std::clamp((a.x * b.x + a.y * b.y + a.z * b.z) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

struct MleOptions {
  double tolerance = 1e-10;  // stop once the log-likelihood gain drops below this
  int max_iterations = 10000;
  bool check_invariants = false;  // validate trace/positivity every iteration
};

struct MleResult {
  DensityMatrix state = DensityMatrix::maximally_mixed(2);
  int iterations = 0;
  bool converged = false;
  std::vector<double> log_likelihood;  // one entry per accepted iterate, starting point first
};

namespace detail {

struct QubitProblem {
  std::vector<Eigen::Matrix2cd> effects;
  std::vector<double> counts;
  std::vector<std::size_t> group;  // dense group index per record
  std::vector<Eigen::Matrix2cd> group_sum;
  std::vector<double> group_counts;
  double total = 0.0;
};

inline QubitProblem compile_qubit_problem(std::span<const CountRecord> records) {
  QubitProblem p;
  std::map<GroupId, std::size_t> dense;
  for (const auto& r : records) {
    if (r.effect.op.rows() != 2 || r.effect.op.cols() != 2) {
      throw std::invalid_argument("mle_qubit: all effects must be 2x2");
    }
    const auto [it, inserted] = dense.try_emplace(r.effect.group, dense.size());
    if (inserted) {
      p.group_sum.push_back(Eigen::Matrix2cd::Zero());
      p.group_counts.push_back(0.0);
    }
    p.effects.emplace_back(r.effect.op);
    p.counts.push_back(static_cast<double>(r.count));
    p.group.push_back(it->second);
    p.group_sum[it->second] += r.effect.op;
    p.group_counts[it->second] += static_cast<double>(r.count);
    p.total += static_cast<double>(r.count);
  }
  if (records.empty() || !(p.total > 0.0)) throw std::invalid_argument("mle_qubit: zero total counts");

  // Tomographic completeness: the effects must span all 2x2 Hermitian matrices.
  Eigen::MatrixXd coords(static_cast<Eigen::Index>(p.effects.size()), 4);
  for (std::size_t j = 0; j < p.effects.size(); ++j) {
    const auto& e = p.effects[j];
    coords.row(static_cast<Eigen::Index>(j)) << e.trace().real(), (e * pauli::x()).trace().real(),
        (e * pauli::y()).trace().real(), (e * pauli::z()).trace().real();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(coords);
  const auto& sv = svd.singularValues();
  if (sv.size() < 4 || sv(3) <= 1e-9 * std::max(1.0, sv(0))) {
    throw std::invalid_argument("mle_qubit: measurement set is not tomographically complete");
  }
  return p;
}

inline double qubit_log_likelihood(const QubitProblem& p, const Eigen::Matrix2cd& rho) {
  std::vector<double> norm(p.group_sum.size());
  for (std::size_t g = 0; g < norm.size(); ++g) norm[g] = (p.group_sum[g] * rho).trace().real();
  double ll = 0.0;
  for (std::size_t j = 0; j < p.effects.size(); ++j) {
    if (p.counts[j] == 0.0) continue;
    const double prob = (p.effects[j] * rho).trace().real() / norm[p.group[j]];
    if (!(prob > 0.0)) return -std::numeric_limits<double>::infinity();
    ll += p.counts[j] * std::log(std::max(prob, 1e-300));
  }
  return ll;
}

// R = I + (1/N) sum_g sum_{j in g} N_j (xi_j / p_j - E_g / S_g); this is the
// usual sum_j (N_j / p_j) xi_j / N when every group sums to the identity.
inline Eigen::Matrix2cd qubit_r_operator(const QubitProblem& p, const Eigen::Matrix2cd& rho) {
  Eigen::Matrix2cd r = Eigen::Matrix2cd::Identity();
  for (std::size_t g = 0; g < p.group_sum.size(); ++g) {
    const double s = (p.group_sum[g] * rho).trace().real();
    r -= (p.group_counts[g] / (p.total * s)) * p.group_sum[g];
  }
  for (std::size_t j = 0; j < p.effects.size(); ++j) {
    if (p.counts[j] == 0.0) continue;
    const double prob = (p.effects[j] * rho).trace().real();
    r += (p.counts[j] / (p.total * prob)) * p.effects[j];
  }
  return 0.5 * (r + r.adjoint());
}

inline Eigen::Matrix2cd normalised(const Eigen::Matrix2cd& m) {
  Eigen::Matrix2cd h = 0.5 * (m + m.adjoint());
  return h / h.trace().real();
}

}  // namespace detail

/// Iterative R rho R reconstruction starting from the maximally mixed state.
/// A step that would lower the log-likelihood is replaced by the diluted
/// update (I + eps R) rho (I + eps R) with eps halved until it does not, so the
/// likelihood sequence is non-decreasing.
inline MleResult mle_qubit(std::span<const CountRecord> records, const MleOptions& options = {}) {
  const detail::QubitProblem problem = detail::compile_qubit_problem(records);
  Eigen::Matrix2cd rho = Eigen::Matrix2cd::Identity() / 2.0;
  double ll = detail::qubit_log_likelihood(problem, rho);

  MleResult result;
  result.log_likelihood.push_back(ll);
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::Matrix2cd r = detail::qubit_r_operator(problem, rho);
    Eigen::Matrix2cd next = detail::normalised(r * rho * r);
    double next_ll = detail::qubit_log_likelihood(problem, next);
    double eps = 1.0;
    while (!(next_ll >= ll) && eps > 1e-12) {
      const Eigen::Matrix2cd step = Eigen::Matrix2cd::Identity() + eps * (r - Eigen::Matrix2cd::Identity());
      next = detail::normalised(step * rho * step.adjoint());
      next_ll = detail::qubit_log_likelihood(problem, next);
      eps *= 0.5;
    }
    if (!(next_ll >= ll)) {
      result.converged = true;
      break;
    }
    if (options.check_invariants) {
      const RealVector ev = herm_eigvals(next);
      if (ev(0) < -kDensityEigenTolerance || std::abs(next.trace().real() - 1.0) > 1e-12) {
        throw NumericalError("mle_qubit: iterate left the state space");
      }
    }
    const double gain = next_ll - ll;
    rho = next;
    ll = next_ll;
    result.log_likelihood.push_back(ll);
    result.iterations = it + 1;
    if (gain < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.state = DensityMatrix(ComplexMatrix(rho));
  return result;
}

// ---------------------------------------------------------------------------
// Scan count file: "qwp_deg,hwp_deg,detector,side,count" per line.

struct ScanCount {
  WaveplateSetting setting;
  Detector detector = Detector::one;
  Side side = Side::left;
  std::uint64_t count = 0;
};

inline std::vector<ScanCount> read_scan_counts(std::istream& is) {
  std::vector<ScanCount> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::is_skippable(line)) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 5) {
      throw DataError("scan counts line " + std::to_string(line_no) + ": expected qwp_deg,hwp_deg,detector,side,count");
    }
    const long long det = detail::parse_integer(f[2], "detector");
    const long long count = detail::parse_integer(f[4], "count");
    if (det != 1 && det != 2) throw DataError("scan counts line " + std::to_string(line_no) + ": detector must be 1 or 2");
    if (count < 0) throw DataError("scan counts line " + std::to_string(line_no) + ": negative count");
    out.push_back(ScanCount{{detail::parse_double(f[0], "qwp_deg"), detail::parse_double(f[1], "hwp_deg")},
                            detector_from_number(static_cast<int>(det)), detail::parse_side(f[3]),
                            static_cast<std::uint64_t>(count)});
  }
  return out;
}

inline void write_scan_counts(std::ostream& os, std::span<const ScanCount> counts) {
  const auto old_precision = os.precision(17);
  for (const auto& c : counts) {
    os << c.setting.qwp_deg << ',' << c.setting.hwp_deg << ',' << detector_number(c.detector) << ','
       << side_code(c.side) << ',' << c.count << '\n';
  }
  os.precision(old_precision);
}

/// Sums raster pixels sharing (setting, side, detector).
inline std::vector<ScanCount> aggregate_scan_counts(std::span<const ScanCount> counts) {
  std::map<std::tuple<WaveplateSetting, int, int>, std::uint64_t> sums;
  for (const auto& c : counts) {
    sums[{c.setting, static_cast<int>(c.side), detector_number(c.detector)}] += c.count;
  }
  std::vector<ScanCount> out;
  out.reserve(sums.size());
  for (const auto& [key, total] : sums) {
    out.push_back(ScanCount{std::get<0>(key), detector_from_number(std::get<2>(key)), static_cast<Side>(std::get<1>(key)),
                            total});
  }
  return out;
}

namespace detail {
template <typename MakeEffect>
std::vector<CountRecord> grouped_scan_records(std::span<const ScanCount> counts, std::uint32_t first_group,
                                              MakeEffect&& make) {
  const std::vector<ScanCount> agg = aggregate_scan_counts(counts);
  std::map<std::pair<WaveplateSetting, int>, std::uint32_t> groups;
  std::vector<CountRecord> out;
  for (const auto& c : agg) {
    const auto [it, inserted] = groups.try_emplace({c.setting, static_cast<int>(c.side)},
                                                   first_group + static_cast<std::uint32_t>(groups.size()));
    out.push_back(CountRecord{make(c, GroupId{it->second}), c.count});
  }
  return out;
}
}  // namespace detail

/// 2x2 photon records for one electron side, one group per setting.
inline std::vector<CountRecord> photon_records_for_side(std::span<const ScanCount> counts, Side side,
                                                        const DetectorEfficiency& efficiency = {}) {
  std::vector<ScanCount> selected;
  std::copy_if(counts.begin(), counts.end(), std::back_inserter(selected),
               [side](const ScanCount& c) { return c.side == side; });
  return detail::grouped_scan_records(selected, 0, [&](const ScanCount& c, GroupId g) {
    MeasurementEffect e = photon_effect(c.setting, c.detector, efficiency);
    e.label.context = side;
    e.group = g;
    return e;
  });
}

/// 4x4 side-conditioned records, one group per (setting, side).
inline std::vector<CountRecord> scan_records(std::span<const ScanCount> counts, std::uint32_t first_group = 0,
                                             const DetectorEfficiency& efficiency = {}) {
  return detail::grouped_scan_records(counts, first_group, [&](const ScanCount& c, GroupId g) {
    return MeasurementEffect{tensor(side_projector(c.side), photon_effect(c.setting, c.detector, efficiency).op),
                             EffectLabel{c.setting, c.detector, c.side}, g};
  });
}

}  // namespace eptomo
