#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "macode/dataset.hpp"
#include "macode/error.hpp"
#include "macode/rng.hpp"

namespace macode {

/// Length-p training mask; 1 keeps the cell visible, 0 hides it.
using MaskVector = std::vector<std::uint8_t>;

/// Beta-Bernoulli mask: u ~ U(0,1), then each bit is 1 with probability u.
/// Every pattern in {0,1}^p has positive probability. The sampler never sees
/// table values, so it is independent of both the data and its missingness.
inline MaskVector sample_mask(std::size_t p, Rng& rng) {
  if (p == 0) throw InvalidArgument("mask length must be positive");
  const double u = uniform01(rng);
  MaskVector m(p);
  for (auto& bit : m) bit = uniform01(rng) < u ? 1 : 0;
  return m;
}

inline std::size_t default_anchor_count(std::size_t p) { return (p + 2) / 3; }

namespace detail {

inline void require_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("missingness rate must lie in [0, 1)");
}

inline void require_complete(const Table& t) {
  if (!t.fully_observed()) throw InvalidArgument("corruption input must be fully observed");
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Column j standardized by its mean and population standard deviation.
inline std::vector<double> standardized_column(const Table& t, std::size_t j) {
  const std::size_t n = t.rows();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += t.value(i, j);
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (t.value(i, j) - mean) * (t.value(i, j) - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (!(sd > 0.0))
    throw LineSearchFailed("anchor column '" + t.schema()[j].name + "' is constant; logistic inputs are degenerate");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (t.value(i, j) - mean) / sd;
  return out;
}

/// Intercept b with mean_i sigmoid(z_i + b) == rate, by bisection.
inline double fit_intercept(const std::vector<double>& z, double rate) {
  auto excess = [&](double b) {
    double s = 0.0;
    for (double zi : z) s += sigmoid(zi + b);
    return s / static_cast<double>(z.size()) - rate;
  };
  double lo = -50.0, hi = 50.0;
  for (int expand = 0; excess(lo) > 0.0 || excess(hi) < 0.0; ++expand) {
    if (expand > 20) throw LineSearchFailed("cannot bracket intercept for rate " + std::to_string(rate));
    lo *= 2.0;
    hi *= 2.0;
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = excess(mid);
    if (std::abs(f) < 1e-6) break;
    (f > 0.0 ? hi : lo) = mid;
  }
  if (std::abs(excess(mid)) > 1e-3) throw LineSearchFailed("bisection did not reach the target rate");
  return mid;
}

inline void mcar_columns(const Table& t, std::vector<std::uint8_t>& observed, const std::vector<std::size_t>& cols,
                         double rate, Rng& rng) {
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j : cols)
      if (uniform01(rng) < rate) observed[i * t.cols() + j] = 0;
}

}  // namespace detail

/// Every cell independently missing with probability `rate`.
inline Table corrupt_mcar(const Table& table, double rate, Rng& rng) {
  detail::require_complete(table);
  detail::require_rate(rate);
  std::vector<std::uint8_t> observed(table.observed_mask().begin(), table.observed_mask().end());
  std::vector<std::size_t> all(table.cols());
  std::iota(all.begin(), all.end(), std::size_t{0});
  detail::mcar_columns(table, observed, all, rate, rng);
  return table.with_observed(std::move(observed));
}

struct MarOptions {
  std::size_t n_anchor = 1;
  /// Multiplies the standard-normal logistic weights; 0 makes the mechanism MCAR
  /// on the non-anchor columns.
  double weight_scale = 1.0;
};

struct MarResult {
  Table table;
  std::vector<std::size_t> anchors;
};

/// A random set of anchor columns stays fully observed; every other column j
/// goes missing with probability sigmoid(w_j . x_anchor + b_j), where the anchors
/// are standardized, w_j ~ N(0, I) and b_j is fitted so the column's expected
/// missing fraction equals `rate`.
inline MarResult corrupt_mar_detailed(const Table& table, double rate, const MarOptions& opts, Rng& rng) {
  detail::require_complete(table);
  detail::require_rate(rate);
  const std::size_t p = table.cols(), n = table.rows();
  if (!(opts.n_anchor >= 1 && opts.n_anchor < p)) throw InvalidArgument("MAR needs 1 <= n_anchor < p");
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> anchors(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(opts.n_anchor));
  std::sort(anchors.begin(), anchors.end());
  std::vector<std::uint8_t> observed(n * p, 1);
  if (rate == 0.0) return {table.with_observed(std::move(observed)), anchors};

  std::vector<std::vector<double>> inputs;
  for (std::size_t a : anchors) inputs.push_back(detail::standardized_column(table, a));
  for (std::size_t j = 0; j < p; ++j) {
    if (std::binary_search(anchors.begin(), anchors.end(), j)) continue;
    std::vector<double> w(anchors.size());
    for (auto& wk : w) wk = opts.weight_scale * standard_normal(rng);
    std::vector<double> z(n, 0.0);
    for (std::size_t k = 0; k < anchors.size(); ++k)
      for (std::size_t i = 0; i < n; ++i) z[i] += w[k] * inputs[k][i];
    const double b = detail::fit_intercept(z, rate);
    for (std::size_t i = 0; i < n; ++i)
      if (uniform01(rng) < detail::sigmoid(z[i] + b)) observed[i * p + j] = 0;
  }
  return {table.with_observed(std::move(observed)), anchors};
}

inline Table corrupt_mar(const Table& table, double rate, std::size_t n_anchor, Rng& rng) {
  return corrupt_mar_detailed(table, rate, MarOptions{n_anchor, 1.0}, rng).table;
}

/// MAR as above, after which the anchor columns are themselves hit by MCAR at
/// the same rate, so the missingness depends on values that may be unobserved.
inline Table corrupt_mnar_logistic(const Table& table, double rate, std::size_t n_anchor, Rng& rng) {
  auto mar = corrupt_mar_detailed(table, rate, MarOptions{n_anchor, 1.0}, rng);
  std::vector<std::uint8_t> observed(mar.table.observed_mask().begin(), mar.table.observed_mask().end());
  detail::mcar_columns(table, observed, mar.anchors, rate, rng);
  return table.with_observed(std::move(observed));
}

namespace detail {

/// Linear-interpolation empirical quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Tail-based MNAR. A random subset of max(1, round(subset_fraction * p))
/// columns is chosen; in each, cells strictly below the `quantile` or above the
/// (1 - quantile) empirical percentile go missing with probability
/// min(1, target / (2 * quantile)), where target = rate * p / |subset| is the
/// within-subset missing rate needed for an overall rate of `rate`.
inline Table corrupt_mnar_quantile(const Table& table, double rate, double quantile, double subset_fraction, Rng& rng) {
  detail::require_complete(table);
  detail::require_rate(rate);
  if (!(quantile > 0.0 && quantile < 0.5)) throw InvalidArgument("quantile must lie in (0, 0.5)");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) throw InvalidArgument("subset_fraction must lie in (0, 1]");
  const std::size_t p = table.cols(), n = table.rows();
  const auto n_sel = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(subset_fraction * static_cast<double>(p))));
  const double realized_fraction = static_cast<double>(n_sel) / static_cast<double>(p);
  if (rate > 2.0 * quantile * std::min(subset_fraction, realized_fraction))
    throw InfeasibleRate("rate " + std::to_string(rate) + " exceeds the tail mass 2*quantile*subset_fraction");
  std::vector<std::uint8_t> observed(n * p, 1);
  if (rate == 0.0) return table.with_observed(std::move(observed));

  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_sel));
  std::sort(selected.begin(), selected.end());
  const double prob = std::min(1.0, rate / realized_fraction / (2.0 * quantile));
  for (std::size_t j : selected) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = table.value(i, j);
    std::sort(col.begin(), col.end());
    const double lower = detail::quantile_sorted(col, quantile);
    const double upper = detail::quantile_sorted(col, 1.0 - quantile);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = table.value(i, j);
      if ((v < lower || v > upper) && uniform01(rng) < prob) observed[i * p + j] = 0;
    }
  }
  return table.with_observed(std::move(observed));
}

/// Variant with the per-cell tail probability given directly.
inline Table corrupt_mnar_quantile_prob(const Table& table, double tail_prob, double quantile,
                                        std::vector<std::size_t> columns, Rng& rng) {
  detail::require_complete(table);
  const std::size_t p = table.cols(), n = table.rows();
  std::vector<std::uint8_t> observed(n * p, 1);
  for (std::size_t j : columns) {
    if (j >= p) throw IndexOutOfRange("column " + std::to_string(j));
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = table.value(i, j);
    std::sort(col.begin(), col.end());
    const double lower = detail::quantile_sorted(col, quantile);
    const double upper = detail::quantile_sorted(col, 1.0 - quantile);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = table.value(i, j);
      if ((v < lower || v > upper) && uniform01(rng) < tail_prob) observed[i * p + j] = 0;
    }
  }
  return table.with_observed(std::move(observed));
}

enum class Mechanism { Mcar, Mar, MnarLogistic, MnarQuantile };

inline std::optional<Mechanism> parse_mechanism(std::string_view s) {
  if (s == "mcar") return Mechanism::Mcar;
  if (s == "mar") return Mechanism::Mar;
  if (s == "mnarl") return Mechanism::MnarLogistic;
  if (s == "mnarq") return Mechanism::MnarQuantile;
  return std::nullopt;
}

struct CorruptionOptions {
  Mechanism mechanism = Mechanism::Mcar;
  double rate = 0.3;
  std::optional<std::size_t> n_anchor;  // defaults to ceil(p / 3)
  double quantile = 0.25;
  double subset_fraction = 0.5;
};

inline Table corrupt(const Table& table, const CorruptionOptions& opts, Rng& rng) {
  const std::size_t anchors = opts.n_anchor.value_or(default_anchor_count(table.cols()));
  switch (opts.mechanism) {
    case Mechanism::Mcar: return corrupt_mcar(table, opts.rate, rng);
    case Mechanism::Mar: return corrupt_mar(table, opts.rate, anchors, rng);
    case Mechanism::MnarLogistic: return corrupt_mnar_logistic(table, opts.rate, anchors, rng);
    case Mechanism::MnarQuantile:
      return corrupt_mnar_quantile(table, opts.rate, opts.quantile, opts.subset_fraction, rng);
  }
  throw InvalidArgument("unknown mechanism");
}

}  // namespace macode
