#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "eptomo/events.hpp"

using namespace eptomo;

namespace {

std::vector<DetectionEvent> poisson_stream(Channel ch, double rate_hz, double duration_s, std::mt19937_64& rng) {
  std::exponential_distribution<double> gap(rate_hz * 1e-12);
  std::vector<DetectionEvent> out;
  for (double t = gap(rng); t < duration_s * 1e12; t += gap(rng)) {
    DetectionEvent e{ch, static_cast<std::int64_t>(t), std::nullopt, std::nullopt};
    if (ch == Channel::electron) {
      e.x = 0.0;
      e.y = 0.0;
    }
    out.push_back(e);
  }
  return out;
}

/// A (1 + V cos(2 pi k . (r - centre) + phi0)) on a rows x cols grid, with k
/// along angle `deg` and the phase zero at the image centre.
Pattern fringe_image(int size, double period, double deg, double a, double v, double phi0) {
  Pattern p(size, size);
  const double c = 0.5 * (size - 1);
  const double t = deg * std::numbers::pi / 180.0;
  for (int r = 0; r < size; ++r)
    for (int col = 0; col < size; ++col) {
      const double u = (col - c) * std::cos(t) + (r - c) * std::sin(t);
      p(r, col) = a * (1 + v * std::cos(2 * std::numbers::pi * u / period + phi0));
    }
  return p;
}

double wrap_cycles(double d) { return d - std::floor(d + 0.5); }

}  // namespace

TEST(CoincidenceHistogram, ExactOffsetFillsOneBin) {
  std::vector<DetectionEvent> e, p;
  for (int i = 0; i < 500; ++i) {
    const std::int64_t t = 1'000'000 + 2'000'000LL * i;
    e.push_back({Channel::electron, t, 1.0, 1.0});
    p.push_back({Channel::photon1, t + 100'000, std::nullopt, std::nullopt});
  }
  const auto h = coincidence_histogram(e, p, 1562, 500'000);
  const auto k = static_cast<std::size_t>((100'000 + 500'000) / 1562);
  EXPECT_EQ(h.counts[k], 500u);
  EXPECT_EQ(h.total(), 500u);
  EXPECT_LE(h.edge(k), 100'000);
  EXPECT_GT(h.edge(k + 1), 100'000);
}

TEST(CoincidenceHistogram, IndependentStreamsAreFlat) {
  std::mt19937_64 rng(1);
  const double r1 = 2e5, r2 = 1e5, dur = 2.0;
  const auto e = poisson_stream(Channel::electron, r1, dur, rng);
  const auto p = poisson_stream(Channel::photon1, r2, dur, rng);
  const auto h = coincidence_histogram(e, p, 1562, 200'000);
  const double expect = r1 * r2 * 1562e-12 * dur;
  double mean = 0;
  for (auto c : h.counts) {
    EXPECT_NEAR(static_cast<double>(c), expect, 5 * std::sqrt(expect));
    mean += static_cast<double>(c) / h.counts.size();
  }
  EXPECT_NEAR(mean, expect, 5 * std::sqrt(expect / h.counts.size()));
}

TEST(CoincidenceHistogram, UnsortedInputIsAnError) {
  std::vector<DetectionEvent> e{{Channel::electron, 10, 0.0, 0.0}, {Channel::electron, 5, 0.0, 0.0}};
  std::vector<DetectionEvent> p{{Channel::photon1, 7, std::nullopt, std::nullopt}};
  EXPECT_THROW(coincidence_histogram(e, p, 10, 100), DataError);
}

TEST(CoincidenceWindow, RecoversInjectedWidth) {
  CoincidenceHistogram h;
  h.bin_width_ps = 1000;
  h.lo_ps = -100'000;
  h.counts.assign(200, 400);
  std::mt19937_64 rng(2);
  std::poisson_distribution<std::uint64_t> bg(400);
  for (auto& c : h.counts) c = bg(rng);
  // True peak: [60 ns, 65 ns), i.e. five 1 ns bins.
  for (std::int64_t t = 60'000; t < 65'000; t += 1000) h.counts[static_cast<std::size_t>((t - h.lo_ps) / 1000)] += 2000;
  const auto w = find_coincidence_window(h);
  EXPECT_NEAR(static_cast<double>(w.width_ps()), 5000.0, 2 * 1000.0);
  EXPECT_LE(w.lo_ps, 60'000);
  EXPECT_GE(w.hi_ps, 65'000);
  EXPECT_NEAR(w.background, 400, 5 * std::sqrt(400.0 / 195));
  EXPECT_GT(w.snr(), 4.0);
}

TEST(CoincidenceWindow, FlatHistogramHasNoPeak) {
  CoincidenceHistogram h;
  h.bin_width_ps = 1000;
  h.counts.assign(100, 50);
  EXPECT_THROW(find_coincidence_window(h), NumericalError);
}

TEST(CoincidenceWindow, DeltaPeakIsOneBin) {
  CoincidenceHistogram h;
  h.bin_width_ps = 1000;
  h.lo_ps = 0;
  h.counts.assign(100, 50);
  h.counts[40] = 5000;
  const auto w = find_coincidence_window(h);
  EXPECT_EQ(w.lo_ps, 40'000);
  EXPECT_EQ(w.hi_ps, 41'000);
}

TEST(BackgroundWindows, LayoutAndOverlapCheck) {
  CoincidenceWindow w;
  w.lo_ps = 60'000;
  w.hi_ps = 65'000;
  const auto bg = background_windows(w, 10);
  ASSERT_EQ(bg.size(), 10u);
  EXPECT_EQ(bg[0].lo_ps, 70'000);
  EXPECT_EQ(bg[9].hi_ps, 165'000);
  EXPECT_NO_THROW(check_background_windows({w.lo_ps, w.hi_ps}, bg));
  std::vector<TimeWindow> bad{{62'000, 67'000}};
  EXPECT_THROW(check_background_windows({w.lo_ps, w.hi_ps}, bad), DataError);
}

TEST(BackgroundSubtract, NoBackgroundLeavesPatternUnchanged) {
  const Pattern p = fringe_image(32, 8, 0, 3, 0.5, 0.0);
  EXPECT_EQ(background_subtract(p, std::vector<Pattern>{}), p);
  EXPECT_EQ(background_subtract(p, std::vector<Pattern>{Pattern::Zero(32, 32)}), p);
}

TEST(BackgroundSubtract, UniformBackgroundLeavesZeroMean) {
  std::mt19937_64 rng(3);
  const double lambda = 5.0;
  std::poisson_distribution<int> pois(lambda);
  auto draw = [&] {
    Pattern p(64, 64);
    for (int i = 0; i < p.size(); ++i) p.data()[i] = pois(rng);
    return p;
  };
  const Pattern signal = draw();
  std::vector<Pattern> bg;
  for (int k = 0; k < 10; ++k) bg.push_back(draw());
  const Pattern res = background_subtract(signal, bg);
  const double sigma = std::sqrt(lambda * 1.1 / res.size());
  EXPECT_NEAR(res.mean(), 0.0, 3 * sigma);
}

TEST(GatedPattern, CountsPairsInsideTheWindow) {
  std::vector<DetectionEvent> e{{Channel::electron, 1000, 3.5, 2.2}, {Channel::electron, 50'000, 7.9, 0.1}};
  std::vector<DetectionEvent> p{{Channel::photon1, 1500, std::nullopt, std::nullopt},
                                {Channel::photon1, 1600, std::nullopt, std::nullopt},
                                {Channel::photon1, 50'900, std::nullopt, std::nullopt}};
  const Pattern g = gated_pattern(e, p, {0, 1000}, {8, 8});
  EXPECT_EQ(g(2, 3), 2.0);
  EXPECT_EQ(g(0, 7), 1.0);
  EXPECT_EQ(g.sum(), 3.0);
  EXPECT_EQ(gated_pattern(e, p, {500, 700}, {8, 8}).sum(), 2.0);  // [500, 700) excludes 900
}

TEST(FringeGeometry, VerticalFringesPhaseExact) {
  for (double phi0 : {0.0, 1.0, 2.5, 5.9}) {
    const Pattern p = fringe_image(256, 64, 0, 10, 0.4, phi0);
    const auto g = estimate_fringe_geometry(p);
    EXPECT_NEAR(g.period_px(), 64.0, 0.1);
    const auto fit = fit_fringe(extract_fringe(p, g, 64));
    EXPECT_LT(std::abs(wrap_cycles((fit.phase - phi0) / (2 * std::numbers::pi))), 1e-3) << phi0;
    EXPECT_NEAR(fit.visibility, 0.4, 0.01);
  }
}

TEST(FringeGeometry, RotatedFringesKeepVisibility) {
  const Pattern straight = fringe_image(256, 64, 0, 10, 0.5, 0.7);
  const Pattern rotated = fringe_image(256, 64, 17, 10, 0.5, 0.7);
  const auto g = estimate_fringe_geometry(rotated);
  EXPECT_NEAR(g.angle_rad() * 180 / std::numbers::pi, 17.0, 0.2);
  const double v0 = fit_fringe(extract_fringe(straight, 64)).visibility;
  const double v1 = fit_fringe(extract_fringe(rotated, g, 64)).visibility;
  EXPECT_NEAR(v1, v0, 0.01 * v0);
  const double ph = fit_fringe(extract_fringe(rotated, g, 64)).phase;
  EXPECT_LT(std::abs(wrap_cycles((ph - 0.7) / (2 * std::numbers::pi))), 5e-3);
}

TEST(FringeGeometry, ConstantImageIsAnError) {
  EXPECT_THROW(estimate_fringe_geometry(Pattern::Constant(64, 64, 3.0)), NumericalError);
}

TEST(ExtractFringe, PreservesTotal) {
  const Pattern p = fringe_image(128, 32, 10, 4, 0.3, 0.2);
  const auto h = extract_fringe(p, 32);
  const auto g = estimate_fringe_geometry(p);
  Pattern cov;
  const Pattern aligned = align_fringes(p, g, &cov);
  EXPECT_NEAR(h.total(), aligned.sum(), 1e-9 * aligned.sum());
}

TEST(FitFringe, ExactSinusoid) {
  PhaseHistogram h;
  for (int k = 0; k < 32; ++k) h.values.push_back(100 * (1 + 0.5 * std::cos(2 * std::numbers::pi * k / 32 + 1.0)));
  const auto r = fit_fringe(h);
  EXPECT_NEAR(r.amplitude, 100, 1e-9);
  EXPECT_NEAR(r.visibility, 0.5, 1e-9);
  EXPECT_NEAR(r.phase, 1.0, 1e-9);
  EXPECT_NEAR(r.residual_rms, 0.0, 1e-9);
}

TEST(FitFringe, ConstantHasZeroVisibility) {
  PhaseHistogram h;
  h.values.assign(16, 7.0);
  EXPECT_NEAR(fit_fringe(h).visibility, 0.0, 1e-12);
  h.values.resize(4);
  EXPECT_THROW(fit_fringe(h), std::invalid_argument);
}

TEST(FitFringe, PoissonFringesAcrossVisibilityRange) {
  std::mt19937_64 rng(4);
  for (double v : {0.145, 0.3, 0.5, 0.687}) {
    PhaseHistogram h;
    for (int k = 0; k < 64; ++k) {
      std::poisson_distribution<int> p(2000 * (1 + v * std::cos(2 * std::numbers::pi * k / 64 + 2.0)));
      h.values.push_back(p(rng));
    }
    EXPECT_NEAR(fit_fringe(h).visibility, v, 0.03);
  }
}

TEST(PhaseDifference, Wraps) {
  EXPECT_NEAR(phase_difference_cycles(0.1, 0.1 + 2 * std::numbers::pi * 0.2), 0.2, 1e-12);
  EXPECT_NEAR(phase_difference_cycles(6.0, 0.2), (0.2 - 6.0) / (2 * std::numbers::pi) + 1, 1e-12);
}

TEST(EventFile, RoundTripAndErrors) {
  std::vector<DetectionEvent> ev{{Channel::electron, 5, 1.25, 3.5},
                                 {Channel::photon1, 7, std::nullopt, std::nullopt},
                                 {Channel::photon2, 9, std::nullopt, std::nullopt}};
  std::stringstream ss;
  write_events(ss, ev);
  const auto back = read_events(ss);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(*back[0].x, 1.25);
  EXPECT_EQ(back[2].channel, Channel::photon2);
  const auto s = split_streams(back);
  EXPECT_EQ(s.electrons.size(), 1u);
  EXPECT_EQ(s.photon2.size(), 1u);
  std::stringstream bad("p1,5,1,2\n");
  EXPECT_THROW(read_events(bad), DataError);
  std::stringstream bad2("q,5\n");
  EXPECT_THROW(read_events(bad2), DataError);
}
