#pragma once

// Synthetic experiment: count tables, scan records and time-tagged event
// streams drawn from a known joint state.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "eptomo/events.hpp"
#include "eptomo/mle.hpp"
#include "eptomo/polopt.hpp"
#include "eptomo/qmat.hpp"

namespace eptomo {

/// Photon ket with Bloch vector (sin t cos p, sin t sin p, cos t), z = H/V.
inline Eigen::Vector2cd photon_ket(double theta, double phi) {
  return Eigen::Vector2cd(std::cos(theta / 2), std::polar(std::sin(theta / 2), phi));
}

/// lambda [kappa |psi><psi| + (1 - kappa) D] + (1 - lambda) diag(a, b) (x) I/2,
/// with psi = sqrt(a) |L, p0> + sqrt(b) |R, p1> and D its which-path dephased
/// form a |L><L| (x) |p0><p0| + b |R><R| (x) |p1><p1|.
inline DensityMatrix eraser_state(double a, const Eigen::Vector2cd& p0, const Eigen::Vector2cd& p1, double kappa,
                                  double lambda) {
  if (!(a >= 0.0 && a <= 1.0) || !(kappa >= 0.0 && kappa <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("eraser_state: parameters must lie in [0, 1]");
  }
  const double b = 1.0 - a;
  const Eigen::Vector2cd q0 = p0.normalized();
  const Eigen::Vector2cd q1 = p1.normalized();
  const Eigen::Vector2cd l(1.0, 0.0);
  const Eigen::Vector2cd r(0.0, 1.0);
  ComplexVector psi(4);
  psi << std::sqrt(a) * q0, std::sqrt(b) * q1;
  const ComplexMatrix dephased =
      a * tensor(l * l.adjoint(), q0 * q0.adjoint()) + b * tensor(r * r.adjoint(), q1 * q1.adjoint());
  Eigen::Matrix2cd pops = Eigen::Matrix2cd::Zero();
  pops(0, 0) = a;
  pops(1, 1) = b;
  const ComplexMatrix noise = tensor(pops, Eigen::Matrix2cd::Identity() / 2.0);
  return DensityMatrix(lambda * (kappa * psi * psi.adjoint() + (1.0 - kappa) * dephased) + (1.0 - lambda) * noise);
}

/// Electron beam weights 0.64 / 0.36 and photon Bloch vectors 121 degrees
/// apart, symmetric about the diagonal axis in the x-z plane.
inline DensityMatrix reference_eraser_state() {
  const double axis = std::numbers::pi / 4;
  const double half = 0.5 * 121.0 * std::numbers::pi / 180.0;
  return eraser_state(0.64, photon_ket(axis - half, 0.0), photon_ket(axis + half, 0.0), 0.5, 0.8);
}

/// rho with the electron off-diagonal blocks scaled by gamma.
inline DensityMatrix dephase_electron(const DensityMatrix& rho, double gamma) {
  if (rho.dim() != 4) throw std::invalid_argument("dephase_electron: expected a 4x4 state");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("dephase_electron: gamma must lie in [0, 1]");
  ComplexMatrix m = rho.matrix();
  m.block(0, 2, 2, 2) *= gamma;
  m.block(2, 0, 2, 2) *= gamma;
  return DensityMatrix(m);
}

struct FringeLayout {
  int width = 256;
  int height = 256;
  double period_px = 64.0;
  double angle_deg = 10.0;    // fringe wave vector angle from +x; keep in (-90, 90)
  double phase_offset = 0.0;  // interferometer phase at the pattern centre
};

struct ExperimentTruth {
  DensityMatrix rho_true = reference_eraser_state();
  double gamma_in = 1.0;
  std::array<double, 2> beam_weights{0.64, 0.36};
  double photon_prob = 1.5e-6;          // guided photon per incident electron
  double collection_efficiency = 1.0;   // guided photon reaching the analyser
  double filter_acceptance = 0.01;      // non-emitting electrons passing the energy filter
  double exposure_s = 440.0;
  double electron_rate_hz = 1.5e7;      // incident electrons
  std::array<double, 2> background_rate_hz{1000.0, 1000.0};
  std::array<std::int64_t, 2> detector_delays_ps{60'000, 64'000};
  double jitter_ps = 1000.0;
  std::uint64_t seed = 1;
  DetectorEfficiency efficiency;
  std::uint64_t scan_counts_per_setting = 100'000;
  FringeLayout layout;

  void validate() const {
    if (rho_true.dim() != 4) throw std::invalid_argument("ExperimentTruth: rho_true must be 4x4");
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("ExperimentTruth: ") + what + " must lie in [0, 1]");
    };
    prob(gamma_in, "gamma_in");
    prob(beam_weights[0], "beam weight");
    prob(beam_weights[1], "beam weight");
    prob(photon_prob, "photon_prob");
    prob(collection_efficiency, "collection_efficiency");
    prob(filter_acceptance, "filter_acceptance");
    prob(efficiency.detector1, "detector efficiency");
    prob(efficiency.detector2, "detector efficiency");
    if (std::abs(beam_weights[0] + beam_weights[1] - 1.0) > 1e-12) {
      throw std::invalid_argument("ExperimentTruth: beam weights must sum to 1");
    }
    if (!(exposure_s >= 0.0) || !(electron_rate_hz >= 0.0) || !(jitter_ps >= 0.0) || background_rate_hz[0] < 0.0 ||
        background_rate_hz[1] < 0.0) {
      throw std::invalid_argument("ExperimentTruth: rates, exposure and jitter must be non-negative");
    }
    if (layout.width < 8 || layout.height < 8 || !(layout.period_px > 0.0)) {
      throw std::invalid_argument("ExperimentTruth: bad fringe layout");
    }
  }

  /// State seen by coincidences: rho_true with electron coherence damped by gamma_in.
  DensityMatrix effective_state() const { return dephase_electron(rho_true, gamma_in); }

  double expected_coincidences_per_setting() const {
    return exposure_s * electron_rate_hz * photon_prob * collection_efficiency;
  }
};

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32), stream,
                    index};
  return std::mt19937_64(seq);
}

/// Multinomial draw by sequential conditional binomials.
template <typename Rng>
std::vector<std::uint64_t> multinomial(std::uint64_t n, const std::vector<double>& p, Rng& rng) {
  std::vector<std::uint64_t> out(p.size(), 0);
  double remaining_p = 0.0;
  for (double v : p) remaining_p += v;
  std::uint64_t remaining = n;
  for (std::size_t j = 0; j + 1 < p.size() && remaining > 0; ++j) {
    const double q = remaining_p > 0.0 ? std::clamp(p[j] / remaining_p, 0.0, 1.0) : 0.0;
    std::binomial_distribution<std::uint64_t> bin(remaining, q);
    out[j] = bin(rng);
    remaining -= out[j];
    remaining_p -= p[j];
  }
  if (!p.empty()) out.back() += remaining;
  return out;
}

}  // namespace detail

/// Per setting one joint group of 2K cells: total ~ Poisson(expected), split
/// multinomially by the group-normalised tr(xi rho_eff).
inline std::vector<CountEntry> simulate_counts(const ExperimentTruth& truth, const std::vector<WaveplateSetting>& settings,
                                               int bins) {
  truth.validate();
  const DensityMatrix rho = truth.effective_state();
  std::vector<CountEntry> out;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    auto rng = detail::stream_rng(truth.seed, 1, static_cast<std::uint32_t>(s));
    const auto effects = joint_effect_set(settings[s], bins, GroupId{}, truth.efficiency);
    std::vector<double> p;
    for (const auto& e : effects) p.push_back(std::max(0.0, expectation(e.op, rho)));
    std::poisson_distribution<std::uint64_t> poisson(truth.expected_coincidences_per_setting());
    const std::uint64_t n = truth.expected_coincidences_per_setting() > 0.0 ? poisson(rng) : 0;
    const auto counts = detail::multinomial(n, p, rng);
    for (std::size_t j = 0; j < effects.size(); ++j) {
      out.push_back(CountEntry{settings[s], effects[j].label.detector, effects[j].label.context, counts[j]});
    }
  }
  return out;
}

inline std::vector<WaveplateSetting> scan_grid(double step_deg = 10.0, double max_deg = 90.0) {
  if (!(step_deg > 0.0) || !(max_deg >= 0.0)) throw std::invalid_argument("scan_grid: bad step or range");
  std::vector<WaveplateSetting> grid;
  const int n = static_cast<int>(std::floor(max_deg / step_deg + 1e-9));
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) grid.push_back(WaveplateSetting{i * step_deg, j * step_deg});
  }
  return grid;
}

/// Photon state produced by a single beam on `side`.
inline DensityMatrix conditional_photon_state(const DensityMatrix& rho, Side side) {
  const int k = side == Side::left ? 0 : 2;
  const ComplexMatrix block = rho.matrix().block(k, k, 2, 2);
  const double tr = block.trace().real();
  if (!(tr > 0.0)) throw NumericalError("conditional_photon_state: side has zero population");
  return DensityMatrix(block / tr);
}

/// Per (setting, side): scan_counts_per_setting photons split binomially
/// between the detectors by the side-conditioned probabilities.
inline std::vector<ScanCount> simulate_scan(const ExperimentTruth& truth, const std::vector<WaveplateSetting>& grid) {
  truth.validate();
  std::vector<ScanCount> out;
  for (Side side : {Side::left, Side::right}) {
    const DensityMatrix photon = conditional_photon_state(truth.rho_true, side);
    for (std::size_t s = 0; s < grid.size(); ++s) {
      auto rng = detail::stream_rng(truth.seed, side == Side::left ? 2 : 3, static_cast<std::uint32_t>(s));
      const double p1 = expectation(photon_effect(grid[s], Detector::one, truth.efficiency).op, photon);
      const double p2 = expectation(photon_effect(grid[s], Detector::two, truth.efficiency).op, photon);
      const double q = p1 + p2 > 0.0 ? std::clamp(p1 / (p1 + p2), 0.0, 1.0) : 0.5;
      std::binomial_distribution<std::uint64_t> bin(truth.scan_counts_per_setting, q);
      const std::uint64_t n1 = bin(rng);
      out.push_back(ScanCount{grid[s], Detector::one, side, n1});
      out.push_back(ScanCount{grid[s], Detector::two, side, truth.scan_counts_per_setting - n1});
    }
  }
  return out;
}

inline std::vector<CountEntry> scan_count_entries(const std::vector<ScanCount>& scan) {
  std::vector<CountEntry> out;
  for (const auto& c : aggregate_scan_counts(scan)) out.push_back(CountEntry{c.setting, c.detector, c.side, c.count});
  return out;
}

// ---------------------------------------------------------------------------
// Event streams.

/// Fringe of one outcome: density over phi proportional to
/// S (1 + V cos(phi + phase)).
struct FringeModel {
  double weight = 0.0;  // S = outcome probability
  double visibility = 0.0;
  double phase = 0.0;
};

/// tr((v v^dagger (x) F) rho) / (2 pi) = S (1 + V cos(phi + phase)) / (2 pi)
/// with S = tr(F (rho_LL + rho_RR)), z = tr(F rho_LR), V = 2|z| / S, phase = arg z.
inline FringeModel fringe_model(const DensityMatrix& rho, const Eigen::Matrix2cd& photon_operator) {
  const ComplexMatrix& m = rho.matrix();
  const Complex s = (photon_operator * (m.block(0, 0, 2, 2) + m.block(2, 2, 2, 2))).trace();
  const Complex z = (photon_operator * m.block(0, 2, 2, 2)).trace();
  FringeModel f;
  f.weight = s.real();
  f.visibility = f.weight > 0.0 ? std::min(1.0, 2.0 * std::abs(z) / f.weight) : 0.0;
  f.phase = std::arg(z);
  return f;
}

/// Model fringe for coincidences on detector d at a setting.
inline FringeModel detector_fringe_model(const ExperimentTruth& truth, const WaveplateSetting& setting, Detector d) {
  return fringe_model(truth.effective_state(), photon_effect(setting, d, truth.efficiency).op);
}

namespace detail {

inline double layout_phase(const FringeLayout& layout, double x, double y) {
  const double t = layout.angle_deg * std::numbers::pi / 180.0;
  const double u = (x - 0.5 * layout.width) * std::cos(t) + (y - 0.5 * layout.height) * std::sin(t);
  return 2.0 * std::numbers::pi * u / layout.period_px + layout.phase_offset;
}

/// Position drawn from the fringe density by rejection on uniform positions.
template <typename Rng>
std::pair<double, double> sample_position(const FringeLayout& layout, const FringeModel& f, Rng& rng) {
  std::uniform_real_distribution<double> ux(0.0, layout.width);
  std::uniform_real_distribution<double> uy(0.0, layout.height);
  std::uniform_real_distribution<double> u(0.0, 1.0 + f.visibility);
  for (;;) {
    const double x = ux(rng);
    const double y = uy(rng);
    if (u(rng) <= 1.0 + f.visibility * std::cos(layout_phase(layout, x, y) + f.phase)) return {x, y};
  }
}

template <typename Rng>
void poisson_times(double rate_hz, double duration_s, Rng& rng, std::vector<std::int64_t>& out) {
  if (rate_hz <= 0.0 || duration_s <= 0.0) return;
  std::exponential_distribution<double> gap(rate_hz);
  double t = gap(rng);
  while (t < duration_s) {
    out.push_back(static_cast<std::int64_t>(std::llround(t * 1e12)));
    t += gap(rng);
  }
}

}  // namespace detail

/// Event streams for one waveplate setting.
///  - Emitting electrons (rate R p) yield a photon that is detected on
///    detector d with operator c E_d or lost (I - c(E_1 + E_2)); the electron
///    position follows the fringe of that outcome, so electron-photon
///    correlations are those of tr(xi rho_eff).
///  - Non-emitting electrons pass the energy filter at rate R (1 - p) f and
///    show the reference two-beam fringe of visibility 2 gamma sqrt(w_L w_R).
///  - Detected photons arrive at t_e + delay_d + N(0, jitter); uncorrelated
///    background photons are Poisson per detector.
inline EventStreams simulate_events(const ExperimentTruth& truth, const WaveplateSetting& setting, double duration_s,
                                    std::uint32_t dataset = 0) {
  truth.validate();
  if (!(duration_s > 0.0)) throw std::invalid_argument("simulate_events: duration must be positive");
  auto rng = detail::stream_rng(truth.seed, 4, dataset);
  const DensityMatrix rho = truth.effective_state();

  std::array<Eigen::Matrix2cd, 3> ops;  // detector 1, detector 2, lost
  const double c = truth.collection_efficiency;
  ops[0] = c * photon_effect(setting, Detector::one, truth.efficiency).op;
  ops[1] = c * photon_effect(setting, Detector::two, truth.efficiency).op;
  ops[2] = Eigen::Matrix2cd::Identity() - ops[0] - ops[1];
  std::array<FringeModel, 3> outcome;
  for (int o = 0; o < 3; ++o) outcome[o] = fringe_model(rho, ops[o]);
  std::discrete_distribution<int> pick_outcome(
      {std::max(0.0, outcome[0].weight), std::max(0.0, outcome[1].weight), std::max(0.0, outcome[2].weight)});
  const FringeModel reference{1.0,
                              std::min(1.0, 2.0 * truth.gamma_in *
                                                std::sqrt(truth.beam_weights[0] * truth.beam_weights[1])),
                              0.0};

  std::vector<std::int64_t> emit_t;
  std::vector<std::int64_t> plain_t;
  detail::poisson_times(truth.electron_rate_hz * truth.photon_prob, duration_s, rng, emit_t);
  detail::poisson_times(truth.electron_rate_hz * (1.0 - truth.photon_prob) * truth.filter_acceptance, duration_s, rng,
                        plain_t);

  EventStreams s;
  s.electrons.reserve(emit_t.size() + plain_t.size());
  std::normal_distribution<double> jitter(0.0, truth.jitter_ps);
  for (std::int64_t t : emit_t) {
    const int o = pick_outcome(rng);
    const auto [x, y] = detail::sample_position(truth.layout, outcome[static_cast<std::size_t>(o)], rng);
    s.electrons.push_back(DetectionEvent{Channel::electron, t, x, y});
    if (o < 2) {
      const double dt = static_cast<double>(truth.detector_delays_ps[static_cast<std::size_t>(o)]) +
                        (truth.jitter_ps > 0.0 ? jitter(rng) : 0.0);
      const std::int64_t tp = std::max<std::int64_t>(0, t + std::llround(dt));
      auto& stream = o == 0 ? s.photon1 : s.photon2;
      stream.push_back(DetectionEvent{o == 0 ? Channel::photon1 : Channel::photon2, tp, std::nullopt, std::nullopt});
    }
  }
  for (std::int64_t t : plain_t) {
    const auto [x, y] = detail::sample_position(truth.layout, reference, rng);
    s.electrons.push_back(DetectionEvent{Channel::electron, t, x, y});
  }
  for (Detector d : kDetectors) {
    std::vector<std::int64_t> bg;
    detail::poisson_times(truth.background_rate_hz[d == Detector::one ? 0 : 1], duration_s, rng, bg);
    for (std::int64_t t : bg) s.photons(d).push_back(DetectionEvent{photon_channel(d), t, std::nullopt, std::nullopt});
  }
  sort_by_time(s.electrons);
  sort_by_time(s.photon1);
  sort_by_time(s.photon2);
  return s;
}

}  // namespace eptomo
