#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "macode/error.hpp"

namespace macode {

/// Empirical CDF of one continuous column.
///
/// The forward map is the right-continuous step function
/// F(x) = #{observed x_i <= x} / m. Its inverse is the piecewise-linear curve
/// through (0, x_(1)) and (c_k / m, x_(k)), so sampling stays inside the
/// observed range and inverse(eval(x_(k))) == x_(k) exactly at every node.
class EmpiricalCdf {
 public:
  EmpiricalCdf() = default;

  /// Rebuilds a fitted CDF from its distinct nodes and cumulative counts.
  EmpiricalCdf(std::vector<double> nodes, std::vector<std::int64_t> cumulative_counts)
      : nodes_(std::move(nodes)), counts_(std::move(cumulative_counts)) {
    if (nodes_.size() < 2 || nodes_.size() != counts_.size())
      throw DegenerateColumn("a CDF needs at least 2 distinct nodes with matching counts");
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (!std::isfinite(nodes_[k])) throw InvalidArgument("non-finite CDF node");
      if (k > 0 && !(nodes_[k] > nodes_[k - 1])) throw InvalidArgument("CDF nodes must be strictly increasing");
      if (counts_[k] <= (k > 0 ? counts_[k - 1] : 0)) throw InvalidArgument("CDF counts must be strictly increasing");
    }
    const auto m = static_cast<double>(counts_.back());
    knots_.resize(counts_.size());
    for (std::size_t k = 0; k < counts_.size(); ++k) knots_[k] = static_cast<double>(counts_[k]) / m;
  }

  static EmpiricalCdf fit(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> nodes;
    std::vector<std::int64_t> counts;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (!std::isfinite(sorted[i])) throw InvalidArgument("non-finite value in CDF fit");
      if (nodes.empty() || sorted[i] != nodes.back()) {
        nodes.push_back(sorted[i]);
        counts.push_back(0);
      }
      counts.back() = static_cast<std::int64_t>(i + 1);
    }
    if (nodes.size() < 2)
      throw DegenerateColumn("need at least 2 distinct observed values, got " + std::to_string(nodes.size()));
    return EmpiricalCdf(std::move(nodes), std::move(counts));
  }

  /// Fits on the entries whose `observed` flag is set.
  static EmpiricalCdf fit(std::span<const double> values, std::span<const bool> observed) {
    if (values.size() != observed.size()) throw LengthMismatch("values and observed differ in length");
    std::vector<double> kept;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (observed[i]) kept.push_back(values[i]);
    return fit(kept);
  }

  double eval(double x) const {
    auto it = std::upper_bound(nodes_.begin(), nodes_.end(), x);
    if (it == nodes_.begin()) return 0.0;
    return knots_[static_cast<std::size_t>(it - nodes_.begin()) - 1];
  }

  double inverse(double u) const {
    if (!(u >= 0.0 && u <= 1.0)) throw InvalidArgument("inverse CDF argument outside [0,1]");
    auto it = std::lower_bound(knots_.begin(), knots_.end(), u);
    const auto k = static_cast<std::size_t>(it - knots_.begin());
    if (*it == u) return nodes_[k];
    const double u0 = k == 0 ? 0.0 : knots_[k - 1];
    const double x0 = k == 0 ? nodes_[0] : nodes_[k - 1];
    const double x1 = nodes_[k];
    double x = x0 + (u - u0) / (knots_[k] - u0) * (x1 - x0);
    // u lies strictly below knot k, so the result must stay strictly below node k
    // or the forward map would jump to the next knot.
    if (x >= x1) x = std::nextafter(x1, x0);
    return std::max(x, x0);
  }

  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  /// c_k / m for every node.
  const std::vector<double>& knots() const { return knots_; }
  std::int64_t sample_size() const { return counts_.back(); }
  double min() const { return nodes_.front(); }
  double max() const { return nodes_.back(); }

 private:
  std::vector<double> nodes_;
  std::vector<std::int64_t> counts_;
  std::vector<double> knots_;
};

inline EmpiricalCdf fit_ecdf(std::span<const double> values, std::span<const bool> observed) {
  return EmpiricalCdf::fit(values, observed);
}
inline double eval_cdf(const EmpiricalCdf& cdf, double x) { return cdf.eval(x); }
inline double inv_cdf(const EmpiricalCdf& cdf, double u) { return cdf.inverse(u); }

}  // namespace macode
