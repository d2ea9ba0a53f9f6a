#include <gtest/gtest.h>

#include "eptomo/posterior.hpp"
#include "oracles.hpp"

using namespace eptomo;

namespace {

PosteriorSamples concentrated(const Eigen::Matrix4cd& m, int chains, int per_chain, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, jitter);
  PosteriorSamples s;
  s.chains.resize(static_cast<std::size_t>(chains));
  const ParamVector base = params_from_matrix(m);
  for (int c = 0; c < chains; ++c) {
    for (int i = 0; i < per_chain; ++i) {
      ParamVector p = base;
      for (int k = 0; k < kParamCount; ++k) p(k) += g(rng);
      s.chains[c].push_back({p, c, i, 0.0});
    }
  }
  return s;
}

}  // namespace

TEST(PosteriorSummary, ConstantFunctionalHasZeroSd) {
  const auto s = concentrated(bell_phi_plus().projector(), 2, 50, 0.0, 1);
  const auto sum = posterior_summary(s, Functional::min_pt_eig);
  EXPECT_NEAR(sum.mean, -0.5, 1e-12);
  EXPECT_NEAR(sum.sd, 0.0, 1e-12);
  EXPECT_EQ(sum.n, 100u);
}

TEST(PosteriorSummary, BellPosteriorValues) {
  const auto s = concentrated(bell_phi_plus().projector(), 3, 100, 0.0, 2);
  EXPECT_NEAR(posterior_summary(s, Functional::concurrence).mean, 1.0, 1e-9);
  EXPECT_NEAR(posterior_summary(s, Functional::eof).mean, 1.0, 1e-9);
  EXPECT_NEAR(posterior_summary(s, Functional::bell_fidelity).mean, 1.0, 1e-12);
  EXPECT_NEAR(posterior_summary(s, Functional::negativity).mean, 1.0, 1e-12);
}

TEST(PosteriorSummary, MeanAndSdMatchDirectComputation) {
  const auto s = concentrated(bell_phi_plus().projector(), 2, 200, 0.05, 3);
  std::vector<double> v;
  s.for_each([&](const PosteriorSample& x) {
    v.push_back(oracle::eigvals(oracle::pt_second(rho_from_params(x.m).matrix()))(0));
  });
  double mean = 0;
  for (double x : v) mean += x / v.size();
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
  const auto sum = posterior_summary(s, Functional::min_pt_eig, {}, 20);
  EXPECT_NEAR(sum.mean, mean, 1e-12);
  EXPECT_NEAR(sum.sd, std::sqrt(var), 1e-12);
  EXPECT_GT(sum.significance(), 7.0);
  std::size_t total = 0;
  for (auto c : sum.histogram.counts) total += c;
  EXPECT_EQ(total, v.size());
  EXPECT_EQ(sum.histogram.counts.size(), 20u);
}

TEST(PosteriorSummary, EmptyIsAnError) {
  PosteriorSamples s;
  EXPECT_THROW(posterior_summary(s, Functional::min_pt_eig), std::invalid_argument);
  EXPECT_THROW(posterior_matrix_summary(s), std::invalid_argument);
}

TEST(PosteriorMatrix, MeanOfStates) {
  const auto s = concentrated(bell_phi_plus().projector(), 2, 100, 0.1, 4);
  ComplexMatrix sum = ComplexMatrix::Zero(4, 4);
  s.for_each([&](const PosteriorSample& x) { sum += rho_from_params(x.m).matrix(); });
  const auto ms = posterior_matrix_summary(s);
  EXPECT_LT((ms.mean - sum / 200.0).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NO_THROW(posterior_mean(s));
  EXPECT_GT(ms.sd_real.maxCoeff(), 0.0);
}

TEST(Functional, NamesRoundTrip) {
  for (Functional f : {Functional::min_pt_eig, Functional::bell_fidelity, Functional::concurrence, Functional::eof,
                       Functional::negativity, Functional::corrected_bell_fidelity}) {
    EXPECT_EQ(parse_functional(functional_name(f)), f);
  }
  EXPECT_THROW(parse_functional("entropy"), std::invalid_argument);
}

TEST(Histogram, FixedRangeAndEdges) {
  const std::vector<double> v{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto h = make_histogram(v, 4, std::pair{0.0, 1.0});
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 1, 1, 2}));
  EXPECT_NEAR(h.centre(0), 0.125, 1e-15);
}
