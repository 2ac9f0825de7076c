#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "macode/discretize.hpp"
#include "macode/error.hpp"
#include "macode/rng.hpp"

namespace macode::oracle {

/// Dense joint probability table over p finite columns. Levels are 0-based and
/// the last column varies fastest.
class DiscreteJoint {
 public:
  DiscreteJoint(std::vector<int> levels, std::vector<double> probs) : levels_(std::move(levels)), probs_(std::move(probs)) {
    if (levels_.empty()) throw InvalidArgument("joint needs at least one column");
    std::size_t size = 1;
    for (int l : levels_) {
      if (l < 1) throw InvalidArgument("every column needs at least one level");
      size *= static_cast<std::size_t>(l);
    }
    if (probs_.size() != size) throw LengthMismatch("probability table size does not match the level counts");
    double total = 0.0;
    for (double v : probs_) {
      if (!(v >= 0.0)) throw InvalidArgument("negative probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("probabilities must sum to 1");
  }

  std::size_t columns() const { return levels_.size(); }
  int levels(std::size_t j) const { return levels_[j]; }
  const std::vector<int>& level_counts() const { return levels_; }
  std::size_t size() const { return probs_.size(); }
  double prob(std::size_t flat) const { return probs_[flat]; }
  const std::vector<double>& probs() const { return probs_; }

  /// Assignment of the cell with flat index `flat`.
  std::vector<int> decode(std::size_t flat) const {
    std::vector<int> x(levels_.size());
    for (std::size_t j = levels_.size(); j-- > 0;) {
      x[j] = static_cast<int>(flat % static_cast<std::size_t>(levels_[j]));
      flat /= static_cast<std::size_t>(levels_[j]);
    }
    return x;
  }

  std::size_t encode(std::span<const int> x) const {
    std::size_t flat = 0;
    for (std::size_t j = 0; j < levels_.size(); ++j) flat = flat * static_cast<std::size_t>(levels_[j]) + static_cast<std::size_t>(x[j]);
    return flat;
  }

  double prob(std::span<const int> x) const { return probs_[encode(x)]; }

 private:
  std::vector<int> levels_;
  std::vector<double> probs_;
};

/// Partial assignment; kFree marks an unassigned column.
using Condition = std::vector<int>;
inline constexpr int kFree = -1;

/// p(x_target | condition), marginalizing the unassigned columns.
inline std::vector<double> exact_conditional(const DiscreteJoint& joint, std::size_t target, const Condition& condition) {
  if (target >= joint.columns()) throw IndexOutOfRange("target column " + std::to_string(target));
  if (condition.size() != joint.columns()) throw LengthMismatch("condition must name every column");
  if (condition[target] != kFree) throw InvalidArgument("condition assigns the target column");
  std::vector<double> out(static_cast<std::size_t>(joint.levels(target)), 0.0);
  for (std::size_t f = 0; f < joint.size(); ++f) {
    const auto x = joint.decode(f);
    bool match = true;
    for (std::size_t j = 0; j < x.size() && match; ++j) match = condition[j] == kFree || condition[j] == x[j];
    if (match) out[static_cast<std::size_t>(x[target])] += joint.prob(f);
  }
  const double mass = std::accumulate(out.begin(), out.end(), 0.0);
  if (!(mass > 0.0)) throw ZeroMassCondition("conditioning event has zero probability");
  for (auto& v : out) v /= mass;
  return out;
}

/// Total variation distance (1/2) sum |p - q|.
inline double tv(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw LengthMismatch("TV needs vectors of equal length");
  double s = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) s += std::abs(p[l] - q[l]);
  return 0.5 * s;
}

/// Every (target, conditioning subset) pair with all assignments of the subset:
/// the conditions over which a learned conditional can be compared to the truth.
struct ConditioningCase {
  std::size_t target;
  std::vector<std::size_t> subset;
  std::vector<Condition> assignments;
};

inline std::vector<ConditioningCase> conditioning_cases(const DiscreteJoint& joint) {
  const std::size_t p = joint.columns();
  std::vector<ConditioningCase> out;
  for (std::size_t t = 0; t < p; ++t) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < p; ++j)
      if (j != t) others.push_back(j);
    for (std::size_t bits = 0; bits < (std::size_t{1} << others.size()); ++bits) {
      ConditioningCase c{t, {}, {}};
      for (std::size_t k = 0; k < others.size(); ++k)
        if (bits >> k & 1U) c.subset.push_back(others[k]);
      std::size_t combos = 1;
      for (std::size_t j : c.subset) combos *= static_cast<std::size_t>(joint.levels(j));
      for (std::size_t a = 0; a < combos; ++a) {
        Condition cond(p, kFree);
        std::size_t rest = a;
        for (std::size_t k = c.subset.size(); k-- > 0;) {
          const std::size_t j = c.subset[k];
          cond[j] = static_cast<int>(rest % static_cast<std::size_t>(joint.levels(j)));
          rest /= static_cast<std::size_t>(joint.levels(j));
        }
        c.assignments.push_back(std::move(cond));
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// Largest deviation between the joint and its chain-rule reconstruction from
/// exact conditionals, over every column order.
inline double chain_rule_error(const DiscreteJoint& joint) {
  const std::size_t p = joint.columns();
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double worst = 0.0;
  do {
    for (std::size_t f = 0; f < joint.size(); ++f) {
      const auto x = joint.decode(f);
      Condition cond(p, kFree);
      double prod = 1.0;
      for (std::size_t j : order) {
        std::vector<double> c;
        try {
          c = exact_conditional(joint, j, cond);
        } catch (const ZeroMassCondition&) {
          prod = 0.0;
          break;
        }
        prod *= c[static_cast<std::size_t>(x[j])];
        cond[j] = x[j];
      }
      worst = std::max(worst, std::abs(prod - joint.prob(f)));
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return worst;
}

/// Expected KL divergence sum_x p(x) log(p(x_t | x_S) / q(x_t | x_S)) of a model
/// conditional q against the truth: the excess cross-entropy over the true
/// conditional entropy.
inline double cross_entropy_gap(const DiscreteJoint& joint, std::size_t target, std::span<const std::size_t> subset,
                                const std::function<std::vector<double>(const Condition&)>& model) {
  double gap = 0.0;
  for (std::size_t f = 0; f < joint.size(); ++f) {
    const double pf = joint.prob(f);
    if (pf <= 0.0) continue;
    const auto x = joint.decode(f);
    Condition cond(joint.columns(), kFree);
    for (std::size_t j : subset) cond[j] = x[j];
    const auto truth = exact_conditional(joint, target, cond);
    const auto q = model(cond);
    const auto l = static_cast<std::size_t>(x[target]);
    gap += pf * (std::log(truth[l]) - std::log(std::max(q[l], 1e-300)));
  }
  return gap;
}

// ---------------------------------------------------------------------------
// Histogram density estimate on [0, 1]

/// pi_l / (b_l - b_{l-1}) for the bin holding u.
inline double histogram_estimate(std::span<const double> pi, const BinGrid& grid, double u) {
  if (pi.size() != grid.bins()) throw LengthMismatch("one probability per bin required");
  if (!(u >= 0.0 && u <= 1.0)) throw InvalidArgument("u must lie in [0, 1]");
  const int l = std::min(grid.bin_of(u), static_cast<int>(grid.bins()));
  const auto [lo, hi] = bin_interval(grid, l);
  return pi[static_cast<std::size_t>(l) - 1] / (hi - lo);
}

/// Adaptive 15-point Gauss-Kronrod quadrature of f on [a, b]. The nodes are
/// interior, so f may jump at either endpoint. Fails when the error estimate
/// exceeds `tol` both absolutely and relative to the integral of |f|.
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12,
                        unsigned max_depth = 15) {
  using Rule = boost::math::quadrature::gauss_kronrod<double, 15>;
  if (!(b >= a)) throw InvalidArgument("integration bounds out of order");
  if (a == b) return 0.0;
  double error = 0.0, l1 = 0.0;
  Rule::integrate(f, a, b, 0, 0.0, &error, &l1);
  // The rule's stopping test is relative to the integral of |f|.
  const double rel = std::max(l1 > 0.0 ? tol / l1 : tol, 64 * std::numeric_limits<double>::epsilon());
  const double r = Rule::integrate(f, a, b, max_depth, rel, &error, &l1);
  if (!std::isfinite(r) || !(error <= tol || error <= tol * l1))
    throw QuadratureFailure("Gauss-Kronrod did not converge on [" + detail::format_double(a) + ", " + detail::format_double(b) +
                            "], error estimate " + detail::format_double(error));
  return r;
}

/// Mass of a density over every bin of the grid.
inline std::vector<double> bin_masses(const std::function<double(double)>& density, const BinGrid& grid) {
  std::vector<double> pi(grid.bins());
  for (std::size_t l = 0; l < grid.bins(); ++l) pi[l] = integrate(density, grid.cut(l), grid.cut(l + 1));
  return pi;
}

struct BoundCheck {
  double measured_tv = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// TV between a K-Lipschitz density on [0, 1] and its histogram estimate built
/// from exact bin masses, against the bound K / (2L) that holds for the
/// uniform grid.
inline BoundCheck prop1_bound_check(const std::function<double(double)>& density, double lipschitz,
                                    const BinGrid& grid, double tol = 1e-10) {
  const auto pi = bin_masses(density, grid);
  double tv_sum = 0.0;
  for (std::size_t l = 0; l < grid.bins(); ++l) {
    const double h = pi[l] / (grid.cut(l + 1) - grid.cut(l));
    // Split the bin where the density crosses its bin height so every piece is smooth.
    auto gap = [&](double u) { return density(u) - h; };
    std::vector<double> knots{grid.cut(l)};
    constexpr int kScan = 32;
    const double width = grid.cut(l + 1) - grid.cut(l);
    for (int k = 1; k <= kScan; ++k) {
      const double lo = grid.cut(l) + width * (k - 1) / kScan, hi = k == kScan ? grid.cut(l + 1) : grid.cut(l) + width * k / kScan;
      const double glo = gap(lo), ghi = gap(hi);
      if (ghi == 0.0 && k < kScan) {
        knots.push_back(hi);
      } else if (glo * ghi < 0.0) {
        std::uintmax_t iters = 200;
        const auto root = boost::math::tools::toms748_solve(gap, lo, hi, glo, ghi,
                                                            boost::math::tools::eps_tolerance<double>(52), iters);
        knots.push_back(0.5 * (root.first + root.second));
      }
    }
    knots.push_back(grid.cut(l + 1));
    const double piece_tol = tol / static_cast<double>(grid.bins() * (knots.size() - 1));
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
      tv_sum += std::abs(integrate(gap, knots[k], knots[k + 1], piece_tol));
  }
  BoundCheck r;
  r.measured_tv = 0.5 * tv_sum;
  r.bound = lipschitz / (2.0 * static_cast<double>(grid.bins()));
  r.holds = r.measured_tv <= r.bound + tol;
  return r;
}

// ---------------------------------------------------------------------------
// Verification battery

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Random strictly positive joint over the given level counts.
inline DiscreteJoint random_joint(std::vector<int> levels, Rng& rng) {
  std::size_t size = 1;
  for (int l : levels) size *= static_cast<std::size_t>(l);
  std::vector<double> p(size);
  double total = 0.0;
  for (auto& v : p) total += v = 0.05 + uniform01(rng);
  for (auto& v : p) v /= total;
  // Absorb rounding so the table sums to 1 within the constructor tolerance.
  p.back() = std::max(0.0, 1.0 - std::accumulate(p.begin(), p.end() - 1, 0.0));
  return DiscreteJoint(std::move(levels), std::move(p));
}

inline std::vector<CheckResult> run_oracle_checks(std::uint64_t seed = 0) {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, bool ok, std::string detail) { out.push_back({std::move(name), ok, std::move(detail)}); };
  Rng rng = make_stream(seed, "oracle");

  const auto joint = random_joint({2, 3, 2}, rng);
  const double chain = chain_rule_error(joint);
  add("chain rule reproduces the joint", chain <= 1e-12, "max error " + std::to_string(chain));

  const DiscreteJoint parity({2, 2, 2}, {0.25, 0, 0, 0.25, 0, 0.25, 0.25, 0});
  const auto c = exact_conditional(parity, 2, {1, 1, kFree});
  add("parity joint conditional is deterministic", c[0] == 1.0 && c[1] == 0.0,
      "p(x3 | x1=1, x2=1) = (" + std::to_string(c[0]) + ", " + std::to_string(c[1]) + ")");

  bool metric_ok = true;
  for (int t = 0; t < 100; ++t) {
    auto draw = [&] {
      std::vector<double> v(5);
      double s = 0.0;
      for (auto& x : v) s += x = uniform01(rng);
      for (auto& x : v) x /= s;
      return v;
    };
    const auto p = draw(), q = draw(), r = draw();
    metric_ok = metric_ok && tv(p, p) == 0.0 && std::abs(tv(p, q) - tv(q, p)) <= 1e-15 &&
                tv(p, r) <= tv(p, q) + tv(q, r) + 1e-15;
  }
  add("tv metric axioms", metric_ok, "100 random simplex triples");

  double worst_norm = 0.0;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> pi(7);
    double s = 0.0;
    for (auto& x : pi) s += x = uniform01(rng);
    for (auto& x : pi) x /= s;
    const auto grid = uniform_grid(7);
    double integral = 0.0;
    for (std::size_t l = 0; l < 7; ++l)
      integral += integrate([&](double u) { return histogram_estimate(pi, grid, u); }, grid.cut(l), grid.cut(l + 1));
    worst_norm = std::max(worst_norm, std::abs(integral - 1.0));
  }
  add("histogram estimate integrates to 1", worst_norm < 1e-9, "max error " + std::to_string(worst_norm));

  const auto sine = [](double u) { return 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * u); };
  double tv10 = 0.0, tv50 = 0.0;
  for (std::size_t L : {5, 10, 25, 50}) {
    const auto r = prop1_bound_check(sine, std::numbers::pi, uniform_grid(L));
    if (L == 10) tv10 = r.measured_tv;
    if (L == 50) tv50 = r.measured_tv;
    add("sine density bound, L=" + std::to_string(L), r.holds,
        "tv " + std::to_string(r.measured_tv) + " <= " + std::to_string(r.bound));
  }
  add("sine density TV shrinks with L", tv50 <= 0.25 * tv10 * 1.1,
      "tv(L=50) / tv(L=10) = " + std::to_string(tv50 / tv10));
  const auto tri = prop1_bound_check([](double u) { return 2.0 * u; }, 2.0, uniform_grid(50));
  add("triangular density bound, L=50", tri.holds && tri.measured_tv <= 0.02,
      "tv " + std::to_string(tri.measured_tv) + " <= " + std::to_string(tri.bound));
  const auto flat = prop1_bound_check([](double) { return 1.0; }, 0.0, uniform_grid(10));
  add("constant density is exact", flat.measured_tv <= 1e-12, "tv " + std::to_string(flat.measured_tv));
  return out;
}

}  // namespace macode::oracle
