#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "macode/masking.hpp"

using namespace macode;

namespace {

Table gaussian_table(std::size_t n, std::size_t p, std::uint64_t seed) {
  Schema s;
  for (std::size_t j = 0; j < p; ++j) s.push_back({"x" + std::to_string(j), ColumnKind::Continuous, {}});
  Rng rng = make_stream(seed, "table");
  std::vector<double> v(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    const double common = standard_normal(rng);
    for (std::size_t j = 0; j < p; ++j) v[i * p + j] = common + standard_normal(rng);
  }
  return Table(s, n, v);
}

double missing_fraction(const Table& t, std::size_t j) {
  std::size_t miss = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) miss += t.observed(i, j) ? 0 : 1;
  return static_cast<double>(miss) / static_cast<double>(t.rows());
}

void expect_values_untouched(const Table& in, const Table& out) {
  for (std::size_t i = 0; i < in.rows(); ++i)
    for (std::size_t j = 0; j < in.cols(); ++j)
      if (out.observed(i, j)) ASSERT_EQ(out.value(i, j), in.value(i, j));
}

}  // namespace

TEST(SampleMask, MarginalHalf) {
  Rng rng(1);
  std::size_t zeros = 0;
  for (int k = 0; k < 100000; ++k) zeros += sample_mask(1, rng)[0] == 0;
  EXPECT_NEAR(zeros / 1e5, 0.5, 0.01);
}

TEST(SampleMask, PatternLawMatchesBetaIntegrals) {
  // P(a given pattern with k ones) = k! (p-k)! / (p+1)!
  for (std::size_t p : {2u, 3u, 4u}) {
    Rng rng = make_stream(p, "mask-law");
    const std::size_t draws = 1000000;
    std::vector<double> count(std::size_t{1} << p, 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      const auto m = sample_mask(p, rng);
      std::size_t code = 0;
      for (std::size_t j = 0; j < p; ++j) code |= std::size_t{m[j]} << j;
      count[code] += 1.0;
    }
    for (std::size_t code = 0; code < count.size(); ++code) {
      const auto k = static_cast<double>(__builtin_popcountll(code));
      const double prob = std::tgamma(k + 1) * std::tgamma(static_cast<double>(p) - k + 1) / std::tgamma(p + 2.0);
      const double se = std::sqrt(prob * (1 - prob) / static_cast<double>(draws));
      EXPECT_NEAR(count[code] / static_cast<double>(draws), prob, 3 * se) << "p=" << p << " pattern " << code;
    }
  }
}

TEST(SampleMask, FullSupport) {
  Rng rng(3);
  std::array<int, 8> seen{};
  for (int k = 0; k < 100000; ++k) {
    const auto m = sample_mask(3, rng);
    ++seen[static_cast<std::size_t>(m[0] | m[1] << 1 | m[2] << 2)];
  }
  for (int c : seen) EXPECT_GT(c, 0);
}

TEST(Mcar, TinyRateLeavesEverythingObserved) {
  const auto t = gaussian_table(50, 2, 1);
  Rng rng(2);
  EXPECT_EQ(corrupt_mcar(t, 1e-9, rng).missing_count(), 0u);
}

TEST(Mcar, RateAndDeterminism) {
  const auto t = gaussian_table(20000, 5, 2);
  Rng a(7), b(7);
  const auto x = corrupt_mcar(t, 0.3, a), y = corrupt_mcar(t, 0.3, b);
  EXPECT_NEAR(static_cast<double>(x.missing_count()) / 1e5, 0.3, 0.01);
  EXPECT_TRUE(std::equal(x.observed_mask().begin(), x.observed_mask().end(), y.observed_mask().begin()));
  expect_values_untouched(t, x);
}

TEST(Mcar, RequiresCompleteInput) {
  const auto t = gaussian_table(10, 2, 3);
  std::vector<std::uint8_t> r(20, 1);
  r[0] = 0;
  Rng rng(1);
  EXPECT_THROW(corrupt_mcar(t.with_observed(r), 0.3, rng), InvalidArgument);
}

TEST(Mar, AnchorsStayObservedAndRateHolds) {
  const auto t = gaussian_table(10000, 6, 4);
  Rng rng(9);
  const auto res = corrupt_mar_detailed(t, 0.3, MarOptions{2, 1.0}, rng);
  ASSERT_EQ(res.anchors.size(), 2u);
  double total = 0.0;
  for (std::size_t j = 0; j < 6; ++j) {
    const bool anchor = std::find(res.anchors.begin(), res.anchors.end(), j) != res.anchors.end();
    if (anchor) EXPECT_EQ(missing_fraction(res.table, j), 0.0);
    else total += missing_fraction(res.table, j);
  }
  EXPECT_NEAR(total / 4.0, 0.3, 0.02);
  expect_values_untouched(t, res.table);
}

TEST(Mar, ZeroWeightsReduceToConstantRate) {
  const auto t = gaussian_table(20000, 3, 5);
  Rng rng(10);
  const auto res = corrupt_mar_detailed(t, 0.25, MarOptions{1, 0.0}, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    if (j == res.anchors[0]) continue;
    EXPECT_NEAR(missing_fraction(res.table, j), 0.25, 0.015);
  }
}

TEST(Mar, MissingnessDependsOnAnchor) {
  const auto t = gaussian_table(20000, 2, 6);
  Rng rng(12);
  const auto res = corrupt_mar_detailed(t, 0.3, MarOptions{1, 3.0}, rng);
  const std::size_t a = res.anchors[0], other = 1 - a;
  double hi = 0, hi_n = 0, lo = 0, lo_n = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const bool miss = !res.table.observed(i, other);
    if (t.value(i, a) > 0) hi += miss, hi_n += 1;
    else lo += miss, lo_n += 1;
  }
  EXPECT_GT(std::abs(hi / hi_n - lo / lo_n), 0.2);
}

TEST(Mar, ConstantAnchorFailsLineSearch) {
  const Schema s{{"a", ColumnKind::Continuous, {}}, {"b", ColumnKind::Continuous, {}}};
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.insert(v.end(), {1.0, double(i)});
  const Table t(s, 100, v);
  bool threw = false;
  for (std::uint64_t seed = 0; seed < 8 && !threw; ++seed) {
    Rng rng(seed);
    try {
      corrupt_mar(t, 0.3, 1, rng);
    } catch (const LineSearchFailed&) {
      threw = true;
    }
  }
  EXPECT_TRUE(threw);
}

TEST(Mar, ZeroRateIsIdentity) {
  const auto t = gaussian_table(100, 3, 7);
  Rng rng(1);
  EXPECT_EQ(corrupt_mar(t, 0.0, 1, rng).missing_count(), 0u);
}

TEST(MnarLogistic, AnchorsGetMcarAndOthersMatchMar) {
  const auto t = gaussian_table(10000, 4, 8);
  Rng a(21), b(21);
  const auto mar = corrupt_mar_detailed(t, 0.3, MarOptions{2, 1.0}, a);
  const auto mnar = corrupt_mnar_logistic(t, 0.3, 2, b);
  for (std::size_t j = 0; j < 4; ++j) {
    const bool anchor = std::find(mar.anchors.begin(), mar.anchors.end(), j) != mar.anchors.end();
    if (anchor) {
      EXPECT_NEAR(missing_fraction(mnar, j), 0.3, 0.02);
    } else {
      for (std::size_t i = 0; i < t.rows(); ++i) ASSERT_EQ(mnar.observed(i, j), mar.table.observed(i, j));
    }
  }
  Rng c(3);
  EXPECT_EQ(corrupt_mnar_logistic(t, 0.0, 2, c).missing_count(), 0u);
}

TEST(MnarQuantile, OnlyTailsGoMissing) {
  const auto t = gaussian_table(5000, 4, 9);
  Rng rng(4);
  const auto out = corrupt_mnar_quantile(t, 0.2, 0.25, 0.5, rng);
  for (std::size_t j = 0; j < 4; ++j) {
    auto col = t.observed_column(j);
    std::sort(col.begin(), col.end());
    const double lo = detail::quantile_sorted(col, 0.25), hi = detail::quantile_sorted(col, 0.75);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const double v = t.value(i, j);
      if (v >= lo && v <= hi) ASSERT_TRUE(out.observed(i, j));
    }
  }
  EXPECT_NEAR(static_cast<double>(out.missing_count()) / 20000.0, 0.2, 0.02);
  expect_values_untouched(t, out);
}

TEST(MnarQuantile, FullTailProbabilityMasksHalf) {
  const Schema s{{"a", ColumnKind::Continuous, {}}};
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 7919) % 1000);
  const Table t(s, 1000, v);
  Rng rng(1);
  const auto out = corrupt_mnar_quantile_prob(t, 1.0, 0.25, {0}, rng);
  EXPECT_NEAR(static_cast<double>(out.missing_count()), 500.0, 1.0);
}

TEST(MnarQuantile, InfeasibleAndZeroRate) {
  const auto t = gaussian_table(100, 4, 10);
  Rng rng(1);
  EXPECT_THROW(corrupt_mnar_quantile(t, 0.3, 0.25, 0.5, rng), InfeasibleRate);
  EXPECT_EQ(corrupt_mnar_quantile(t, 0.0, 0.25, 0.5, rng).missing_count(), 0u);
}

TEST(Corrupt, DeterministicDispatch) {
  const auto t = gaussian_table(500, 3, 11);
  for (auto mech : {Mechanism::Mcar, Mechanism::Mar, Mechanism::MnarLogistic, Mechanism::MnarQuantile}) {
    CorruptionOptions o;
    o.mechanism = mech;
    o.rate = mech == Mechanism::MnarQuantile ? 0.1 : 0.3;
    Rng a(5), b(5);
    const auto x = corrupt(t, o, a), y = corrupt(t, o, b);
    EXPECT_TRUE(std::equal(x.observed_mask().begin(), x.observed_mask().end(), y.observed_mask().begin()));
    EXPECT_GT(x.missing_count(), 0u);
  }
  EXPECT_FALSE(parse_mechanism("bogus"));
  EXPECT_EQ(default_anchor_count(3), 1u);
  EXPECT_EQ(default_anchor_count(4), 2u);
}
