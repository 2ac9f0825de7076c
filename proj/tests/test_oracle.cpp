#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "macode/oracle.hpp"
#include "support.hpp"

namespace mt = macode::testing;

using namespace macode;
using namespace macode::oracle;

namespace {

const auto kSine = [](double u) { return 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * u); };

}  // namespace

TEST(ExactConditional, IndependentCoins) {
  const DiscreteJoint coins({2, 2}, {0.25, 0.25, 0.25, 0.25});
  for (int a = 0; a < 2; ++a) {
    const auto c = exact_conditional(coins, 1, {a, kFree});
    EXPECT_DOUBLE_EQ(c[0], 0.5);
    EXPECT_DOUBLE_EQ(c[1], 0.5);
  }
}

TEST(ExactConditional, ParityJointIsDeterministic) {
  const DiscreteJoint parity({2, 2, 2}, {0.25, 0, 0, 0.25, 0, 0.25, 0.25, 0});
  const auto c = exact_conditional(parity, 2, {1, 1, kFree});
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], 0.0);
  const auto d = exact_conditional(parity, 2, {1, 0, kFree});
  EXPECT_EQ(d[1], 1.0);
}

TEST(ExactConditional, EmptyConditionIsTheMarginal) {
  const auto joint = mt::binary_oracle_joint();
  const auto m = exact_conditional(joint, 0, {kFree, kFree, kFree});
  EXPECT_NEAR(m[0], 0.20 + 0.05 + 0.10 + 0.15, 1e-15);
  EXPECT_NEAR(m[1], 0.05 + 0.15 + 0.05 + 0.25, 1e-15);
}

TEST(ExactConditional, Errors) {
  const DiscreteJoint parity({2, 2, 2}, {0.25, 0, 0, 0.25, 0, 0.25, 0.25, 0});
  EXPECT_THROW(exact_conditional(DiscreteJoint({2, 2}, {1.0, 0, 0, 0}), 1, {1, kFree}), ZeroMassCondition);
  EXPECT_THROW(exact_conditional(parity, 2, {1, 1, 0}), InvalidArgument);
  EXPECT_THROW(exact_conditional(parity, 3, {1, 1, kFree}), IndexOutOfRange);
  EXPECT_THROW(DiscreteJoint({2}, {0.5, 0.4}), InvalidArgument);
  EXPECT_THROW(DiscreteJoint({2}, {1.0}), LengthMismatch);
}

TEST(ChainRule, ReproducesRandomJoints) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) EXPECT_LE(chain_rule_error(random_joint({2, 3, 2}, rng)), 1e-12);
  EXPECT_LE(chain_rule_error(mt::binary_oracle_joint()), 1e-12);
}

TEST(ConditioningCases, EnumerateEverySubset) {
  const auto cases = conditioning_cases(mt::binary_oracle_joint());
  ASSERT_EQ(cases.size(), 12u);
  std::size_t assignments = 0;
  for (const auto& c : cases) {
    EXPECT_EQ(c.assignments.size(), std::size_t{1} << c.subset.size());
    assignments += c.assignments.size();
  }
  EXPECT_EQ(assignments, 3u * 9u);
}

TEST(Tv, Examples) {
  const std::vector<double> p{0.3, 0.7}, a{1, 0}, b{0, 1}, u{0.5, 0.5}, v{0.75, 0.25};
  EXPECT_EQ(tv(p, p), 0.0);
  EXPECT_EQ(tv(a, b), 1.0);
  EXPECT_DOUBLE_EQ(tv(u, v), 0.25);
  EXPECT_THROW(tv(p, std::vector<double>{1.0}), LengthMismatch);
}

TEST(Tv, MetricAxioms) {
  Rng rng(2);
  auto draw = [&] {
    std::vector<double> x(4);
    double s = 0;
    for (auto& e : x) s += e = uniform01(rng);
    for (auto& e : x) e /= s;
    return x;
  };
  for (int t = 0; t < 200; ++t) {
    const auto p = draw(), q = draw(), r = draw();
    EXPECT_EQ(tv(p, q), tv(q, p));
    EXPECT_LE(tv(p, r), tv(p, q) + tv(q, r) + 1e-15);
    EXPECT_EQ(tv(p, p), 0.0);
    EXPECT_GE(tv(p, q), 0.0);
    EXPECT_LE(tv(p, q), 1.0);
  }
}

TEST(CrossEntropyGap, ZeroForTheTruthPositiveOtherwise) {
  const auto joint = mt::binary_oracle_joint();
  const std::vector<std::size_t> subset{0, 1};
  EXPECT_NEAR(cross_entropy_gap(joint, 2, subset, [&](const Condition& c) { return exact_conditional(joint, 2, c); }),
              0.0, 1e-15);
  EXPECT_GT(cross_entropy_gap(joint, 2, subset, [](const Condition&) { return std::vector<double>{0.5, 0.5}; }), 0.01);
}

TEST(Histogram, Examples) {
  const auto g10 = uniform_grid(10);
  const std::vector<double> flat(10, 0.1);
  for (double u : {0.0, 0.05, 0.5, 0.99, 1.0}) EXPECT_NEAR(histogram_estimate(flat, g10, u), 1.0, 1e-12);
  const std::vector<double> two{0.8, 0.2};
  EXPECT_NEAR(histogram_estimate(two, uniform_grid(2), 0.1), 1.6, 1e-15);
  EXPECT_NEAR(histogram_estimate(two, uniform_grid(2), 0.7), 0.4, 1e-15);
}

TEST(Histogram, IntegratesToOne) {
  Rng rng(3);
  for (std::size_t L : {3u, 7u, 20u}) {
    const auto grid = uniform_grid(L);
    std::vector<double> pi(L);
    double s = 0;
    for (auto& e : pi) s += e = uniform01(rng);
    for (auto& e : pi) e /= s;
    double total = 0.0;
    for (std::size_t l = 0; l < L; ++l)
      total += integrate([&](double u) { return histogram_estimate(pi, grid, u); }, grid.cut(l), grid.cut(l + 1));
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Quadrature, KnownIntegrals) {
  EXPECT_NEAR(integrate([](double x) { return x * x; }, 0, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(integrate(kSine, 0, 1), 1.0, 1e-12);
  EXPECT_EQ(integrate([](double) { return 1.0; }, 0.3, 0.3), 0.0);
  EXPECT_THROW(integrate([](double x) { return 1.0 / std::sqrt(x); }, 0, 1, 1e-14, 5), QuadratureFailure);
}

TEST(Bound, ConstantDensityIsExact) {
  const auto r = prop1_bound_check([](double) { return 1.0; }, 0.0, uniform_grid(10));
  EXPECT_NEAR(r.measured_tv, 0.0, 1e-14);
  EXPECT_TRUE(r.holds);
}

TEST(Bound, SineDensityAcrossGridSizes) {
  for (std::size_t L : {5u, 10u, 25u, 50u}) {
    const auto r = prop1_bound_check(kSine, std::numbers::pi, uniform_grid(L));
    EXPECT_TRUE(r.holds) << "L=" << L << " tv=" << r.measured_tv << " bound=" << r.bound;
    EXPECT_NEAR(r.bound, std::numbers::pi / (2.0 * static_cast<double>(L)), 1e-15);
  }
}

TEST(Bound, HalvingBinWidthHalvesTheError) {
  const double a = prop1_bound_check(kSine, std::numbers::pi, uniform_grid(10)).measured_tv;
  const double b = prop1_bound_check(kSine, std::numbers::pi, uniform_grid(20)).measured_tv;
  const double c = prop1_bound_check(kSine, std::numbers::pi, uniform_grid(50)).measured_tv;
  EXPECT_LE(b / a, 0.55);
  EXPECT_LT(c, b);
}

TEST(Bound, TriangularDensity) {
  const auto r = prop1_bound_check([](double u) { return 2.0 * u; }, 2.0, uniform_grid(50));
  EXPECT_LE(r.measured_tv, 0.02);
  EXPECT_TRUE(r.holds);
  // Per bin the density is linear, so the TV is K h^2 / 8 summed over L bins.
  EXPECT_NEAR(r.measured_tv, 0.5 * 50 * 2.0 * (1.0 / 50) * (1.0 / 50) / 4.0, 1e-9);
}

TEST(Battery, EveryCheckPasses) {
  const auto results = run_oracle_checks(0);
  EXPECT_GE(results.size(), 8u);
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}
