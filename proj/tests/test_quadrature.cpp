#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "coxq/quadrature.hpp"

using coxq::integrate;

TEST(Quadrature, SmoothIntegrands) {
  EXPECT_NEAR(integrate([](double x) { return std::exp(x); }, 0.0, 1.0).value, std::numbers::e - 1.0, 1e-13);
  EXPECT_NEAR(integrate([](double x) { return std::sin(x); }, 0.0, std::numbers::pi).value, 2.0, 1e-13);
}

TEST(Quadrature, EndpointSingularities) {
  auto r = integrate([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0, 1e-10);
  EXPECT_NEAR(r.value, 2.0, 1e-8);
  r = integrate([](double x) { return std::log(x); }, 0.0, 1.0, 1e-12);
  EXPECT_NEAR(r.value, -1.0, 1e-10);
}

TEST(Quadrature, ReversedAndEmptyIntervals) {
  EXPECT_NEAR(integrate([](double x) { return x * x; }, 2.0, 0.0).value, -8.0 / 3.0, 1e-13);
  EXPECT_EQ(integrate([](double x) { return x; }, 1.0, 1.0).value, 0.0);
}

TEST(Quadrature, ErrorEstimateBoundsTrueError) {
  const auto r = integrate([](double x) { return 1.0 / (1e-4 + x * x); }, -1.0, 1.0, 1e-9);
  const double exact = 2.0 * std::atan(1.0 / 1e-2) / 1e-2;
  EXPECT_LE(std::abs(r.value - exact), std::max(r.abs_error, 1e-9));
  EXPECT_GT(r.intervals, 1);
}
