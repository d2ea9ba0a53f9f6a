#include <gtest/gtest.h>

#include <sstream>

#include "eptomo/polopt.hpp"
#include "oracles.hpp"

using namespace eptomo;

namespace {

double max_abs(const ComplexMatrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Distance after removing a global phase.
double phase_free_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
  Eigen::Index i = 0, j = 0;
  b.cwiseAbs().maxCoeff(&i, &j);
  const Complex ph = a(i, j) / b(i, j);
  return max_abs(a - (ph / std::abs(ph)) * b);
}

}  // namespace

TEST(Waveplate, QuarterAtZeroIsDiagOneI) {
  ComplexMatrix expect = ComplexMatrix::Zero(2, 2);
  expect(0, 0) = 1.0;
  expect(1, 1) = Complex(0, 1);
  EXPECT_LT(phase_free_distance(waveplate_jones(Waveplate::quarter, 0.0), expect), 1e-15);
}

TEST(Waveplate, HalfAt45SwapsHV) {
  const Eigen::Vector2cd out = waveplate_jones(Waveplate::half, 45.0) * Eigen::Vector2cd(1, 0);
  EXPECT_NEAR(std::abs(out(0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(out(1)), 1.0, 1e-15);
}

TEST(Waveplate, HalfIsInvolutionAndAllAreUnitary) {
  for (double t : {0.0, 12.5, 33.0, 90.0, 181.0}) {
    const Eigen::Matrix2cd h = waveplate_jones(Waveplate::half, t);
    EXPECT_LT(phase_free_distance(h * h, ComplexMatrix::Identity(2, 2)), 1e-14);
    const Eigen::Matrix2cd q = waveplate_jones(Waveplate::quarter, t);
    EXPECT_LT(max_abs(q.adjoint() * q - ComplexMatrix::Identity(2, 2)), 1e-14);
  }
}

TEST(PhotonEffect, NoRotationAndDiagonal) {
  ComplexMatrix h = ComplexMatrix::Zero(2, 2);
  h(0, 0) = 1;
  EXPECT_LT(max_abs(photon_effect({0, 0}, Detector::one).op - h), 1e-15);
  // QWP at 0 leaves |H>, |V> alone, so W^dagger |H> = QWP^dagger |D> is circular.
  const Eigen::Vector2cd w(1 / std::sqrt(2.0), Complex(0, -1 / std::sqrt(2.0)));
  EXPECT_LT(max_abs(photon_effect({0, 22.5}, Detector::one).op - w * w.adjoint()), 1e-15);
  // QWP at 45 leaves |D> invariant up to phase.
  ComplexMatrix d = ComplexMatrix::Constant(2, 2, 0.5);
  EXPECT_LT(max_abs(photon_effect({45, 22.5}, Detector::one).op - d), 1e-15);
}

TEST(PhotonEffect, MatchesExplicitProduct) {
  // W = HWP(h) QWP(q) built here from rotation matrices; E_1 = W^dagger |H><H| W.
  auto rot = [](double deg) {
    const double t = deg * std::numbers::pi / 180.0;
    Eigen::Matrix2cd r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return r;
  };
  for (auto [q, h] : {std::pair{30.0, 28.0}, {30.0, 95.0}, {74.0, 80.0}}) {
    Eigen::Matrix2cd qr = Eigen::Matrix2cd::Zero();
    qr(0, 0) = 1;
    qr(1, 1) = Complex(0, 1);
    Eigen::Matrix2cd hr = Eigen::Matrix2cd::Zero();
    hr(0, 0) = 1;
    hr(1, 1) = -1;
    const Eigen::Matrix2cd w = rot(h) * hr * rot(-h) * rot(q) * qr * rot(-q);
    Eigen::Matrix2cd ph = Eigen::Matrix2cd::Zero();
    ph(0, 0) = 1;
    EXPECT_LT(max_abs(photon_effect({q, h}, Detector::one).op - w.adjoint() * ph * w), 1e-14);
  }
}

TEST(PhotonEffect, DetectorsSumToIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ang(-180, 180);
  for (int t = 0; t < 100; ++t) {
    const WaveplateSetting s{ang(rng), ang(rng)};
    EXPECT_LT(max_abs(photon_effect(s, Detector::one).op + photon_effect(s, Detector::two).op -
                      ComplexMatrix::Identity(2, 2)),
              1e-12);
  }
}

TEST(ElectronPhaseEffect, Examples) {
  const auto e0 = electron_phase_effect(0.0, 4).op;
  EXPECT_LT(max_abs(e0 - ComplexMatrix::Constant(2, 2, 0.25)), 1e-15);
  EXPECT_NEAR(e0.trace().real(), 0.5, 1e-15);
  ComplexMatrix pi_expect = ComplexMatrix::Constant(2, 2, 0.25);
  pi_expect(0, 1) = pi_expect(1, 0) = -0.25;
  EXPECT_LT(max_abs(electron_phase_effect(std::numbers::pi, 4).op - pi_expect), 1e-15);
  EXPECT_THROW(electron_phase_effect(0.1, 4), std::invalid_argument);
}

TEST(ElectronPhaseEffect, SumOver64BinsIsIdentity) {
  ComplexMatrix sum = ComplexMatrix::Zero(2, 2);
  for (int k = 0; k < 64; ++k) sum += electron_phase_bin_effect(k, 64);
  EXPECT_LT(max_abs(sum - ComplexMatrix::Identity(2, 2)), 1e-12);
}

TEST(JointEffectSet, MaximallyMixedIsUniform) {
  const int k = 16;
  const auto effects = joint_effect_set({30, 28}, k);
  ASSERT_EQ(effects.size(), 2u * k);
  for (const auto& e : effects) {
    EXPECT_NEAR(expectation(e.op, DensityMatrix::maximally_mixed(4)), 1.0 / (2 * k), 1e-15);
    EXPECT_EQ(e.group, effects.front().group);
  }
}

TEST(JointEffectSet, BellCellsMatchBruteForce) {
  // W = I: detector 1 sees |H>, whose electron partner is |L>; detector 2 sees |V> with |R>.
  const int k = 8;
  const auto effects = joint_effect_set({0, 0}, k);
  const auto rho = oracle::phi_plus();
  double total = 0.0;
  for (const auto& e : effects) {
    const int bin = std::get<PhaseBin>(e.label.context).index;
    const double phi = 2 * std::numbers::pi * bin / k;
    Eigen::Vector2cd v(1.0, std::polar(1.0, phi));
    Eigen::Matrix2cd pd = Eigen::Matrix2cd::Zero();
    const int port = e.label.detector == Detector::one ? 0 : 1;
    pd(port, port) = 1;
    const auto xi = oracle::kron(v * v.adjoint() / double(k), pd);
    const double p = (xi * rho).trace().real();
    EXPECT_NEAR(expectation(e.op, DensityMatrix(rho)), p, 1e-15);
    EXPECT_NEAR(p, 0.5 / k, 1e-15);  // one electron port populated per detector: no fringe
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-14);

  // Diagonal analyser: fringes (1 +/- cos phi) / (2K).
  const auto diag = joint_effect_set({45, 22.5}, k);
  for (const auto& e : diag) {
    const double phi = 2 * std::numbers::pi * std::get<PhaseBin>(e.label.context).index / k;
    const double sign = e.label.detector == Detector::one ? 1.0 : -1.0;
    EXPECT_NEAR(expectation(e.op, DensityMatrix(rho)), (1 + sign * std::cos(phi)) / (2.0 * k), 1e-14);
  }
}

TEST(JointEffectSet, CompletenessOnRandomStates) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ang(0, 180);
  for (int t = 0; t < 100; ++t) {
    const DensityMatrix rho(oracle::random_density(4, rng));
    double total = 0.0;
    for (const auto& e : joint_effect_set({ang(rng), ang(rng)}, 12)) total += expectation(e.op, rho);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ScanEffectSet, Examples) {
  ComplexMatrix lh = ComplexMatrix::Zero(4, 4);
  lh(0, 0) = 1;
  const auto l = scan_effect_set({0, 0}, Side::left);
  EXPECT_NEAR(expectation(l[0].op, DensityMatrix(lh)), 1.0, 1e-15);
  EXPECT_NEAR(expectation(l[1].op, DensityMatrix(lh)), 0.0, 1e-15);
  for (const auto& e : scan_effect_set({12, 40}, Side::right)) EXPECT_NEAR(expectation(e.op, DensityMatrix(lh)), 0.0, 1e-15);

  std::mt19937_64 rng(8);
  const auto rho = oracle::random_density(4, rng);
  const Eigen::Matrix2cd rho0_unnorm = rho.block(0, 0, 2, 2);
  for (const auto& e : scan_effect_set({30, 95}, Side::left)) {
    const double direct = (photon_effect({30, 95}, e.label.detector).op * rho0_unnorm).trace().real();
    EXPECT_NEAR(expectation(e.op, DensityMatrix(rho)), direct, 1e-14);
  }
}

TEST(SettingsFile, RoundTripAndErrors) {
  std::stringstream ss("# comment\n30,28,phase:32\n\n30,95,side:L\n74,80,side:R\n");
  const auto recs = read_settings(ss);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(std::get<PhaseBins>(recs[0].context).count, 32);
  EXPECT_EQ(std::get<Side>(recs[2].context), Side::right);
  std::stringstream out;
  write_settings(out, recs);
  const auto again = read_settings(out);
  ASSERT_EQ(again.size(), 3u);
  EXPECT_EQ(again[1].setting, (WaveplateSetting{30, 95}));

  std::stringstream bad("30,28,phase:2\n");
  EXPECT_THROW(read_settings(bad), DataError);
  std::stringstream bad2("30,x,side:L\n");
  EXPECT_THROW(read_settings(bad2), DataError);
}

TEST(CountFile, RoundTripAndGrouping) {
  std::vector<CountEntry> e{{{30, 28}, Detector::one, PhaseBin{0, 4}, 5},
                            {{30, 28}, Detector::two, PhaseBin{3, 4}, 7},
                            {{30, 28}, Detector::one, Side::left, 2},
                            {{30, 95}, Detector::one, PhaseBin{1, 4}, 1}};
  std::stringstream ss;
  write_count_entries(ss, e);
  const auto back = read_count_entries(ss);
  ASSERT_EQ(back.size(), e.size());
  EXPECT_EQ(back[1].count, 7u);
  EXPECT_EQ(std::get<PhaseBin>(back[1].context), (PhaseBin{3, 4}));
  const auto recs = count_records(back);
  EXPECT_EQ(recs[0].effect.group, recs[1].effect.group);
  EXPECT_NE(recs[0].effect.group, recs[2].effect.group);
  EXPECT_NE(recs[0].effect.group, recs[3].effect.group);

  std::stringstream bad("30,28,3,phase:0/4,5\n");
  EXPECT_THROW(read_count_entries(bad), DataError);
  std::stringstream neg("30,28,1,phase:0/4,-5\n");
  EXPECT_THROW(read_count_entries(neg), DataError);
}
