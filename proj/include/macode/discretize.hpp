#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "macode/cdf.hpp"
#include "macode/dataset.hpp"
#include "macode/error.hpp"

namespace macode {

/// Cut-points 0 = b_0 < b_1 < ... < b_L = 1 on the quantile scale.
class BinGrid {
 public:
  BinGrid() = default;

  explicit BinGrid(std::vector<double> cuts) : cuts_(std::move(cuts)) {
    if (cuts_.size() < 3) throw InvalidArgument("a bin grid needs at least 2 bins");
    if (cuts_.front() != 0.0 || cuts_.back() != 1.0) throw InvalidArgument("bin grid must start at 0 and end at 1");
    for (std::size_t s = 1; s < cuts_.size(); ++s)
      if (!(cuts_[s] > cuts_[s - 1])) throw InvalidArgument("bin grid cuts must be strictly increasing");
  }

  std::size_t bins() const { return cuts_.size() - 1; }
  const std::vector<double>& cuts() const { return cuts_; }
  double cut(std::size_t s) const { return cuts_[s]; }

  /// Label of a quantile level per the indicator sum: #{s < L : b_s <= u}.
  int bin_of(double u) const {
    auto last = cuts_.begin() + static_cast<std::ptrdiff_t>(bins());
    return static_cast<int>(std::upper_bound(cuts_.begin(), last, u) - cuts_.begin());
  }

  friend bool operator==(const BinGrid&, const BinGrid&) = default;

 private:
  std::vector<double> cuts_;
};

inline BinGrid uniform_grid(std::size_t bins) {
  if (bins < 2) throw InvalidArgument("uniform grid needs L >= 2");
  std::vector<double> cuts(bins + 1);
  for (std::size_t s = 0; s <= bins; ++s) cuts[s] = static_cast<double>(s) / static_cast<double>(bins);
  return BinGrid(std::move(cuts));
}

/// (b_{l-1}, b_l) for a 1-based bin label.
inline std::pair<double, double> bin_interval(const BinGrid& grid, int label) {
  if (label < 1 || static_cast<std::size_t>(label) > grid.bins())
    throw IndexOutOfRange("bin " + std::to_string(label) + " outside [1, " + std::to_string(grid.bins()) + "]");
  return {grid.cut(static_cast<std::size_t>(label) - 1), grid.cut(static_cast<std::size_t>(label))};
}

/// Part of bin `label` from which inverse-CDF sampling lands back in the same
/// bin: [kappa, b_l) where kappa is the smallest CDF knot inside the bin.
/// Bins holding no knot fall back to the full bin interval.
inline std::pair<double, double> sampling_interval(const BinGrid& grid, const EmpiricalCdf& cdf, int label) {
  auto [lo, hi] = bin_interval(grid, label);
  const auto& knots = cdf.knots();
  auto it = std::lower_bound(knots.begin(), knots.end(), lo);
  const bool last_bin = static_cast<std::size_t>(label) == grid.bins();
  if (it == knots.end() || (last_bin ? *it > hi : *it >= hi)) return {lo, hi};
  return {*it, hi};
}

/// Per-column CDFs; empty for categorical columns.
using CdfSet = std::vector<std::optional<EmpiricalCdf>>;

/// Fits an empirical CDF on the observed cells of every continuous column.
inline CdfSet fit_cdfs(const Table& table) {
  CdfSet out(table.cols());
  for (std::size_t j = 0; j < table.cols(); ++j) {
    if (!table.schema()[j].is_continuous()) continue;
    try {
      out[j] = EmpiricalCdf::fit(table.observed_column(j));
    } catch (const DegenerateColumn& e) {
      throw DegenerateColumn("column '" + table.schema()[j].name + "': " + e.what());
    }
  }
  return out;
}

/// Per-column output vocabulary L_j: the grid size for continuous columns,
/// the level count for categorical ones.
inline std::vector<int> vocab_sizes(const Schema& schema, const BinGrid& grid) {
  std::vector<int> out;
  out.reserve(schema.size());
  for (const auto& c : schema)
    out.push_back(static_cast<int>(c.is_continuous() ? grid.bins() : c.num_levels()));
  return out;
}

/// n x p labels; 0 marks a masked or missing cell, otherwise 1..L_j.
struct LabelMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> data;

  LabelMatrix() = default;
  LabelMatrix(std::size_t n, std::size_t p) : rows(n), cols(p), data(n * p, 0) {}

  int& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  int at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const int> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<int> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

/// Label of one observed cell.
inline int discretize_cell(const ColumnSpec& col, const std::optional<EmpiricalCdf>& cdf, const BinGrid& grid,
                           double value) {
  if (col.is_categorical()) return static_cast<int>(value);
  return grid.bin_of(cdf->eval(value));
}

inline LabelMatrix discretize(const Table& table, const CdfSet& cdfs, const BinGrid& grid) {
  const auto& schema = table.schema();
  if (cdfs.size() != schema.size()) throw ShapeMismatch("one CDF slot per column required");
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].is_continuous() && !cdfs[j]) throw InvalidArgument("missing CDF for column '" + schema[j].name + "'");
  LabelMatrix out(table.rows(), table.cols());
  for (std::size_t i = 0; i < table.rows(); ++i)
    for (std::size_t j = 0; j < table.cols(); ++j)
      out.at(i, j) = table.observed(i, j) ? discretize_cell(schema[j], cdfs[j], grid, table.value(i, j)) : 0;
  return out;
}

}  // namespace macode
