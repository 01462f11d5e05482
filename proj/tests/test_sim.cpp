#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "coxq/analytic.hpp"
#include "coxq/sim.hpp"
#include "coxq/stats.hpp"

using namespace coxq;

namespace {

SimConfig base(EnvSpec env, std::vector<double> mu, ScalingRegime scaling, std::vector<double> grid,
               std::int64_t reps, std::uint64_t seed = 1) {
  SimConfig c;
  c.env = std::move(env);
  c.queues = QueueParams(std::move(mu));
  c.scaling = scaling;
  c.grid = std::move(grid);
  c.horizon = c.grid.back();
  c.replications = reps;
  c.seed = seed;
  return c;
}

std::vector<double> endpoint(const Trajectory& t, std::size_t g, std::size_t i) {
  std::vector<double> x(static_cast<std::size_t>(t.replications));
  for (std::int64_t r = 0; r < t.replications; ++r) x[static_cast<std::size_t>(r)] = static_cast<double>(t.count(r, g, i));
  return x;
}

}  // namespace

TEST(Sim, EmptyEnvironmentOnlyDrains) {
  auto c = base(EnvSpec::deterministic(0.0), {1.0, 0.5}, ScalingRegime(10, 1.0, 1.0), {0.0, 0.5, 1.0, 2.0}, 4000);
  c.initial_counts = {50, 20};
  const auto t = simulate(c);
  for (std::int64_t r = 0; r < t.replications; ++r)
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(t.count(r, 0, i), c.initial_counts[i]);
      for (std::size_t g = 1; g < t.grid.size(); ++g) EXPECT_LE(t.count(r, g, i), t.count(r, g - 1, i));
    }
  for (std::size_t i = 0; i < 2; ++i) {
    const auto s = summarize(endpoint(t, 3, i));
    const double p = std::exp(-c.queues.mu[i] * 2.0);
    EXPECT_NEAR(s.mean, static_cast<double>(c.initial_counts[i]) * p, 3.0 * s.mean_se);
    EXPECT_NEAR(s.variance, static_cast<double>(c.initial_counts[i]) * p * (1.0 - p), 4.0 * s.variance_se);
  }
}

TEST(Sim, TransientMomentsFromEmptyStart) {
  const auto env = EnvSpec::exponential(1.0);
  const auto c = base(env, {1.0}, ScalingRegime(1, 0.0, 1.0), {0.5, 2.0}, 40000, 5);
  const auto t = simulate(c);
  for (std::size_t g = 0; g < 2; ++g) {
    const auto target = transient_moments(env, 1.0, 1.0, c.grid[g]);
    const auto s = summarize(endpoint(t, g, 0));
    EXPECT_NEAR(s.mean, target.mean, 3.0 * s.mean_se) << "t=" << c.grid[g];
    EXPECT_NEAR(s.variance, target.variance, 3.0 * s.variance_se) << "t=" << c.grid[g];
  }
}

TEST(Sim, ScaledTransientWithMergedCells) {
  // Slots of length 1e-6 are merged into cells; moments must still match.
  const auto env = EnvSpec::gamma(2.0, 0.5);
  const double n = 1000.0;
  const auto c = base(env, {2.0}, ScalingRegime(1000, 2.0, 1.0), {1.5}, 20000, 6);
  const auto t = simulate(c);
  const auto tm = transient_moments(env, 2.0, c.scaling.slot_length(), 1.5);
  const auto s = summarize(endpoint(t, 0, 0));
  EXPECT_NEAR(s.mean, n * tm.mean, 3.0 * s.mean_se);
  EXPECT_NEAR(s.variance, n * tm.mean + n * n * (tm.variance - tm.mean), 3.0 * s.variance_se);
}

TEST(Sim, MergedAndExactCellsAgree) {
  const auto env = EnvSpec::exponential(1.0);
  auto c = base(env, {1.0, 3.0}, ScalingRegime(400, 1.0, 1.0), {0.0, 1.0, 4.0}, 6000, 8);
  auto exact = c;
  exact.resolution.exact_slots = true;
  exact.seed = 9;
  const auto a = estimate_moments(simulate(c));
  const auto b = estimate_moments(simulate(exact));
  for (std::size_t g = 1; g < 3; ++g)
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& x = a.grid[g].queues[i];
      const auto& y = b.grid[g].queues[i];
      EXPECT_NEAR(x.mean, y.mean, 4.0 * std::hypot(x.mean_se, y.mean_se));
      EXPECT_NEAR(x.variance, y.variance, 4.0 * std::hypot(x.variance_se, y.variance_se));
    }
}

TEST(Sim, CountsAreConditionallyPoissonGivenThePath) {
  // Given the realized slot levels, M(t) from an empty start is Poisson with
  // mean N sum_j Lambda_j int_{slot j} e^{-mu (t - u)} du.
  const auto env = EnvSpec::exponential(0.5);
  auto c = base(env, {1.0}, ScalingRegime(20, 0.5, 1.0), {3.0}, 20000, 10);
  c.resolution.exact_slots = true;
  c.record_paths = true;
  const auto t = simulate(c);
  ASSERT_EQ(t.realized_paths.size(), 20000u);
  double z1 = 0.0, z2 = 0.0;
  for (std::int64_t r = 0; r < t.replications; ++r) {
    const auto& path = t.realized_paths[static_cast<std::size_t>(r)];
    ASSERT_EQ(path.rates.size(), slot_count(3.0, c.scaling.slot_length()));
    double mean = 0.0;
    for (std::size_t j = 0; j < path.rates.size(); ++j) {
      const double lo = static_cast<double>(j) * path.slot_length;
      const double hi = std::min(3.0, lo + path.slot_length);
      mean += 20.0 * path.rates[j] * (std::exp(-(3.0 - hi)) - std::exp(-(3.0 - lo)));
    }
    const double dev = static_cast<double>(t.count(r, 0, 0)) - mean;
    z1 += dev / std::sqrt(mean);
    z2 += dev * dev / mean;
  }
  const double n = static_cast<double>(t.replications);
  EXPECT_NEAR(z1 / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(z2 / n, 1.0, 4.0 * std::sqrt(2.0 / n) + 0.01);
}

TEST(Sim, SameSeedSameTrajectoryAcrossThreadCounts) {
  auto c = base(EnvSpec::gamma(2.0, 0.5), {1.0, 2.0}, ScalingRegime(50, 0.5, 1.0), {0.0, 1.0, 2.0}, 64, 77);
  c.initial_counts = {3, 4};
  c.threads = 1;
  const auto a = simulate(c);
  c.threads = 4;
  const auto b = simulate(c);
  EXPECT_EQ(a.counts, b.counts);
  c.seed = 78;
  EXPECT_NE(simulate(c).counts, a.counts);
}

TEST(Sim, StationaryDeterministicIsPoisson) {
  const auto c = base(EnvSpec::deterministic(2.0), {1.0}, ScalingRegime(5, 1.0, 1.0), {0.0}, 50000, 3);
  const auto t = sample_stationary(c);
  const auto s = summarize(endpoint(t, 0, 0));
  EXPECT_NEAR(s.mean, 10.0, 3.0 * s.mean_se);
  EXPECT_NEAR(s.variance / s.mean, 1.0, 3.0 * s.dispersion_ratio_se());
}

TEST(Sim, StationaryMeanAndVarianceMatchAnalytic) {
  const auto env = EnvSpec::exponential(1.0);
  const auto c = base(env, {1.0}, ScalingRegime(100, 1.0, 1.0), {0.0}, 100000, 4);
  const auto t = sample_stationary(c);
  const auto s = summarize(endpoint(t, 0, 0));
  EXPECT_NEAR(s.mean, 100.0 * stationary_mean(env, 1.0), 3.0 * s.mean_se);
  EXPECT_NEAR(s.variance, scaled_variance(env, 1.0, c.scaling).exact, 3.0 * s.variance_se);
}

TEST(Sim, StationaryPairCovarianceMatchesSlotSum) {
  // Shared arrivals give N E Lambda / (mu1 + mu2); shared levels give
  // N^2 Var Lambda r1 r2 / (1 - p1 p2) with the readout on a slot boundary.
  const auto env = EnvSpec::exponential(1.0);
  const auto c = base(env, {1.0, 2.0}, ScalingRegime(3, 0.0, 1.0), {0.0}, 40000, 21);
  const auto t = sample_stationary(c);
  const auto x = endpoint(t, 0, 0), y = endpoint(t, 0, 1);
  const auto s1 = SurvivalConstants::at(1.0, 1.0), s2 = SurvivalConstants::at(2.0, 1.0);
  const double target = 3.0 * env.mean() / 3.0 + 9.0 * env.variance() * s1.r * s2.r / (1.0 - s1.p * s2.p);
  const double cov = sample_covariance(x, y);
  std::vector<double> prod(x.size());
  const double mx = summarize(x).mean, my = summarize(y).mean;
  for (std::size_t r = 0; r < x.size(); ++r) prod[r] = (x[r] - mx) * (y[r] - my);
  EXPECT_NEAR(cov, target, 3.0 * summarize(prod).mean_se);
  EXPECT_NEAR(summarize(x).variance, scaled_variance(env, 1.0, c.scaling).exact, 3.0 * summarize(x).variance_se);
}

TEST(Sim, StationaryKappaHasStationaryMoments) {
  const auto env = EnvSpec::gamma(0.5, 2.0);
  RandomStream rng(31);
  std::vector<double> k(100000);
  for (auto& v : k) v = sample_kappa(env, 2.0, kInf, ScalingRegime(1, 0.0, 0.5), rng);
  const auto s = summarize(k);
  EXPECT_NEAR(s.mean, env.mean() / 2.0, 3.0 * s.mean_se);
  const auto sc = SurvivalConstants::at(2.0, 0.5);
  EXPECT_NEAR(s.variance, env.variance() * sc.r * sc.r / (1.0 - sc.p * sc.p), 3.0 * s.variance_se);
}

TEST(Sim, IndependentFixtureHasZeroCovariance) {
  const auto env = EnvSpec::exponential(1.0);
  auto c = base(env, {1.0}, ScalingRegime(30, 0.5, 1.0), {2.0}, 20000, 100);
  const auto a = simulate(c);
  c.seed = 200;
  const auto b = simulate(c);
  Trajectory joint;
  joint.grid = a.grid;
  joint.d = 2;
  joint.replications = a.replications;
  for (std::int64_t r = 0; r < a.replications; ++r) {
    joint.counts.push_back(a.count(r, 0, 0));
    joint.counts.push_back(b.count(r, 0, 0));
  }
  const auto m = estimate_moments(joint);
  const double se = std::sqrt(m.grid[0].queues[0].variance * m.grid[0].queues[1].variance /
                              static_cast<double>(joint.replications));
  EXPECT_NEAR(m.grid[0].covariance(0, 1), 0.0, 3.0 * se);
  EXPECT_TRUE(m.grid[0].covariance.is_symmetric());
}

TEST(Sim, MomentEstimatorBasics) {
  Trajectory t;
  t.grid = {1.0};
  t.d = 1;
  t.replications = 2;
  t.counts = {0, 2};
  auto m = estimate_moments(t);
  EXPECT_DOUBLE_EQ(m.grid[0].queues[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(m.grid[0].queues[0].variance, 2.0);
  EXPECT_DOUBLE_EQ(m.grid[0].queues[0].mean_se, 1.0);
  t.counts = {4, 4};
  m = estimate_moments(t);
  EXPECT_DOUBLE_EQ(m.grid[0].queues[0].variance, 0.0);
  t.replications = 1;
  t.counts = {4};
  EXPECT_THROW(estimate_moments(t), InsufficientData);
}

TEST(Sim, NormalizedEndpoint) {
  Trajectory t;
  t.grid = {0.0, 1.0};
  t.d = 1;
  t.replications = 2;
  t.counts = {0, 400, 0, 420};
  const std::vector<double> center = {0.4};
  const auto z = normalized_endpoint(t, ScalingRegime(1000, 2.0, 1.0), center, 1.0);
  EXPECT_NEAR(z[0][0], 0.0, 1e-15);
  EXPECT_NEAR(z[1][0], 20.0 / std::sqrt(1000.0), 1e-12);
  const auto slow = normalized_endpoint(t, ScalingRegime(1000, 0.5, 1.0), center, 1.0);
  EXPECT_NEAR(slow[1][0], std::pow(1000.0, 0.25) * 0.02, 1e-12);
  EXPECT_THROW(normalized_endpoint(t, ScalingRegime(1000, 2.0, 1.0), center, 0.5), RangeError);
}

TEST(Sim, FluidLimitConcentrates) {
  const auto env = EnvSpec::exponential(1.0);
  auto sup_dev = [&](std::int64_t n) {
    auto c = base(env, {1.0}, ScalingRegime(n, 1.0, 1.0), {0.5, 1.0, 2.0, 3.0}, 400, 55);
    c.initial_counts = {n};
    const auto t = simulate(c);
    std::vector<double> devs;
    for (std::int64_t r = 0; r < t.replications; ++r) {
      double dev = 0.0;
      for (std::size_t g = 0; g < t.grid.size(); ++g)
        dev = std::max(dev, std::abs(static_cast<double>(t.count(r, g, 0)) / static_cast<double>(n) -
                                     fluid_limit(1.0, env, 1.0, t.grid[g])));
      devs.push_back(dev);
    }
    std::nth_element(devs.begin(), devs.begin() + devs.size() / 2, devs.end());
    return devs[devs.size() / 2];
  };
  EXPECT_LT(sup_dev(10000), 0.5 * sup_dev(100));
}

TEST(Sim, ValidationAndBudget) {
  auto c = base(EnvSpec::exponential(1.0), {1.0}, ScalingRegime(1000, 1.0, 1.0), {1.0}, 10);
  c.event_budget = 100.0;
  EXPECT_THROW(simulate(c), ResourceError);
  c.event_budget = 1e9;
  c.grid = {2.0};
  EXPECT_THROW(simulate(c), DomainError);
  c.grid = {1.0, 0.5};
  EXPECT_THROW(simulate(c), DomainError);
  c.grid = {1.0};
  c.record_paths = true;
  EXPECT_THROW(simulate(c), DomainError);
  c.record_paths = false;
  c.initial_counts = {1, 2};
  EXPECT_THROW(simulate(c), DomainError);
}

TEST(Sim, CsvExport) {
  Trajectory t;
  t.grid = {0.0, 0.5};
  t.d = 2;
  t.replications = 1;
  t.counts = {1, 2, 3, 4};
  std::ostringstream os;
  write_trajectory_csv(os, t);
  EXPECT_EQ(os.str(), "replication,time,queue,count\n0,0,0,1\n0,0,1,2\n0,0.5,0,3\n0,0.5,1,4\n");
}
