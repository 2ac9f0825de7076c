#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "macode/dataset.hpp"
#include "macode/discretize.hpp"
#include "macode/error.hpp"
#include "macode/model.hpp"
#include "macode/rng.hpp"

namespace macode {

struct SynthesisConfig {
  std::size_t n_samples = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Synthetic rows plus the bin labels they were decoded from.
struct Synthesis {
  Table table;
  LabelMatrix labels;
};

/// A fully completed row: one label and one decoded value per column.
struct CompletedRow {
  std::vector<int> labels;
  std::vector<double> values;
};

/// M completed copies of one incomplete table.
struct ImputationPool {
  std::vector<Table> tables;

  std::size_t size() const { return tables.size(); }
};

namespace detail {

inline void require_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("temperature must be a positive finite number");
}

/// softmax(z / tau), computed in double precision.
template <class T>
std::vector<double> tempered_probabilities(std::span<const T> z, double tau) {
  require_temperature(tau);
  double zmax = -INFINITY;
  for (T v : z) zmax = std::max(zmax, static_cast<double>(v) / tau);
  std::vector<double> w(z.size());
  double total = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l) total += w[l] = std::exp(static_cast<double>(z[l]) / tau - zmax);
  for (auto& v : w) v /= total;
  return w;
}

/// Draws a 1-based label from softmax(z / tau).
template <class T>
int sample_tempered(std::span<const T> z, double tau, Rng& rng) {
  const auto w = tempered_probabilities(z, tau);
  double u = uniform01(rng);
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (u < w[l]) return static_cast<int>(l) + 1;
    u -= w[l];
  }
  // Rounding left u just above the accumulated mass: fall back to the last
  // label with positive weight.
  for (std::size_t l = w.size(); l-- > 0;)
    if (w[l] > 0.0) return static_cast<int>(l) + 1;
  return 1;
}

/// Fills every zero label of `labels` by ancestral sampling. Row b visits its
/// empty positions in a uniformly random order drawn from rngs[b] and takes all
/// of its randomness from that stream, so results do not depend on how rows are
/// grouped into batches. The visiting order of each row is appended to `orders`
/// when given.
template <class T>
void fill_labels(const ModelParams<T>& params, LabelMatrix& labels, double tau, std::vector<Rng>& rngs,
                 std::vector<std::vector<std::size_t>>* orders = nullptr) {
  require_temperature(tau);
  const std::size_t B = labels.rows, p = labels.cols;
  if (p != params.columns()) throw SchemaMismatch("label width does not match the model");
  if (rngs.size() != B) throw LengthMismatch("one random stream per row required");
  std::vector<std::vector<std::size_t>> todo(B);
  std::size_t steps = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < p; ++j) {
      const int y = labels.at(b, j);
      if (y < 0 || y > params.vocab[j]) throw IndexOutOfRange("label outside the column vocabulary");
      if (y == 0) todo[b].push_back(j);
    }
    std::shuffle(todo[b].begin(), todo[b].end(), rngs[b]);
    steps = std::max(steps, todo[b].size());
  }
  if (orders) orders->insert(orders->end(), todo.begin(), todo.end());

  for (std::size_t s = 0; s < steps; ++s) {
    // Forward only the rows that still have work at this step.
    std::vector<std::size_t> active;
    for (std::size_t b = 0; b < B; ++b)
      if (s < todo[b].size()) active.push_back(b);
    LabelMatrix input(active.size(), p);
    for (std::size_t a = 0; a < active.size(); ++a)
      std::copy_n(labels.row(active[a]).begin(), p, input.row(a).begin());
    const auto logits = predict_logits(params, input);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t b = active[a], j = todo[b][s];
      const auto& z = logits[j];
      std::span<const T> row(z.data.data() + a * z.cols(), z.cols());
      labels.at(b, j) = sample_tempered(row, tau, rngs[b]);
    }
  }
}

/// Value of a sampled label: the level index for categorical columns, the
/// inverse CDF of a quantile drawn from the bin for continuous ones.
inline double decode_cell(const ColumnSpec& col, const std::optional<EmpiricalCdf>& cdf, const BinGrid& grid,
                          int label, Rng& rng) {
  if (col.is_categorical()) return static_cast<double>(label);
  const auto [lo, hi] = sampling_interval(grid, *cdf, label);
  return cdf->inverse(uniform_open(rng, lo, hi));
}

constexpr std::size_t kGenerateBatch = 512;

}  // namespace detail

/// Draws `cfg.n_samples` rows. Each row starts fully masked and fills its
/// columns in a fresh random order, sampling every label from the tempered
/// conditional given the labels drawn so far. Row i uses the substream
/// ("generate", i) of the seed.
template <class T>
Synthesis synthesize(const FittedModel<T>& model, const SynthesisConfig& cfg) {
  detail::require_temperature(cfg.temperature);
  const std::size_t n = cfg.n_samples, p = model.schema.size();
  Synthesis out{Table(), LabelMatrix(n, p)};
  std::vector<double> values(n * p);
  for (std::size_t start = 0; start < n; start += detail::kGenerateBatch) {
    const std::size_t B = std::min(detail::kGenerateBatch, n - start);
    LabelMatrix batch(B, p);
    std::vector<Rng> rngs;
    rngs.reserve(B);
    for (std::size_t b = 0; b < B; ++b) rngs.push_back(make_stream(cfg.seed, "generate", start + b));
    detail::fill_labels(model.params, batch, cfg.temperature, rngs);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < p; ++j) {
        const int y = batch.at(b, j);
        out.labels.at(start + b, j) = y;
        values[(start + b) * p + j] = detail::decode_cell(model.schema[j], model.cdfs[j], model.grid, y, rngs[b]);
      }
    }
  }
  if (n > 0) out.table = Table(model.schema, n, values);
  return out;
}

/// Same as synthesize but also returns the column visiting order of every row.
template <class T>
std::vector<std::vector<std::size_t>> synthesis_orders(const FittedModel<T>& model, const SynthesisConfig& cfg) {
  std::vector<std::vector<std::size_t>> orders;
  const std::size_t p = model.schema.size();
  for (std::size_t start = 0; start < cfg.n_samples; start += detail::kGenerateBatch) {
    const std::size_t B = std::min(detail::kGenerateBatch, cfg.n_samples - start);
    LabelMatrix batch(B, p);
    std::vector<Rng> rngs;
    for (std::size_t b = 0; b < B; ++b) rngs.push_back(make_stream(cfg.seed, "generate", start + b));
    detail::fill_labels(model.params, batch, cfg.temperature, rngs, &orders);
  }
  return orders;
}

/// Completes one label row whose zeros mark missing cells. Observed labels are
/// never changed; every column's value is decoded from its final label. With no
/// zeros the labels come back unchanged.
template <class T>
CompletedRow complete_row(const FittedModel<T>& model, std::span<const int> labels, double tau, Rng& rng) {
  const std::size_t p = model.schema.size();
  if (labels.size() != p) throw LengthMismatch("label row width does not match the schema");
  LabelMatrix row(1, p);
  std::copy(labels.begin(), labels.end(), row.row(0).begin());
  std::vector<Rng> rngs{rng};
  detail::fill_labels(model.params, row, tau, rngs);
  rng = rngs[0];
  CompletedRow out{std::vector<int>(row.row(0).begin(), row.row(0).end()), std::vector<double>(p)};
  for (std::size_t j = 0; j < p; ++j)
    out.values[j] = detail::decode_cell(model.schema[j], model.cdfs[j], model.grid, out.labels[j], rng);
  return out;
}

/// Completes `corrupted` M times. Observed cells are copied unchanged; draw m
/// of row i uses the substream ("impute.m", i) of the seed.
template <class T>
ImputationPool multiple_impute(const FittedModel<T>& model, const Table& corrupted, std::size_t M, double tau,
                               std::uint64_t seed) {
  if (M == 0) throw InvalidArgument("need at least one imputation");
  if (corrupted.schema() != model.schema) throw SchemaMismatch("table schema differs from the model schema");
  detail::require_temperature(tau);
  const std::size_t n = corrupted.rows(), p = corrupted.cols();
  const LabelMatrix labels = discretize(corrupted, model.cdfs, model.grid);
  ImputationPool pool;
  for (std::size_t m = 0; m < M; ++m) {
    const std::string stream = "impute." + std::to_string(m);
    std::vector<double> values(corrupted.values().begin(), corrupted.values().end());
    for (std::size_t start = 0; start < n; start += detail::kGenerateBatch) {
      const std::size_t B = std::min(detail::kGenerateBatch, n - start);
      LabelMatrix batch(B, p);
      std::copy_n(labels.data.begin() + static_cast<std::ptrdiff_t>(start * p), B * p, batch.data.begin());
      std::vector<Rng> rngs;
      rngs.reserve(B);
      for (std::size_t b = 0; b < B; ++b) rngs.push_back(make_stream(seed, stream, start + b));
      detail::fill_labels(model.params, batch, tau, rngs);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = start + b;
        for (std::size_t j = 0; j < p; ++j) {
          if (corrupted.observed(i, j)) continue;
          values[i * p + j] = detail::decode_cell(model.schema[j], model.cdfs[j], model.grid, batch.at(b, j), rngs[b]);
        }
      }
    }
    pool.tables.emplace_back(corrupted.schema(), n, std::move(values));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Rubin's rules

/// Share of the cells of column j lying strictly above the column mean.
inline double fraction_above_mean(const Table& table, std::size_t column) {
  if (column >= table.cols()) throw IndexOutOfRange("column " + std::to_string(column));
  const std::size_t n = table.rows();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += table.value(i, column);
  mean /= static_cast<double>(n);
  std::size_t above = 0;
  for (std::size_t i = 0; i < n; ++i) above += table.value(i, column) > mean ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(n);
}

struct RubinResult {
  double q_star = 0.0;    // estimand on the complete data
  double q_hat = 0.0;     // pooled point estimate
  double within = 0.0;    // mean of the per-imputation variances
  double between = 0.0;   // sample variance of the per-imputation estimates
  double variance = 0.0;  // within + (M + 1) / M * between
  double bias = 0.0;
  double width = 0.0;
  bool covered = false;
};

/// Pools per-imputation proportion estimates of a sample of size n.
inline RubinResult rubin_pool(std::span<const double> q_hats, std::size_t n, double q_star) {
  const std::size_t M = q_hats.size();
  if (M == 0 || n == 0) throw InvalidArgument("Rubin pooling needs estimates and a positive sample size");
  RubinResult r;
  r.q_star = q_star;
  for (double q : q_hats) {
    r.q_hat += q;
    r.within += q * (1.0 - q) / static_cast<double>(n);
  }
  r.q_hat /= static_cast<double>(M);
  r.within /= static_cast<double>(M);
  if (M > 1) {
    for (double q : q_hats) r.between += (q - r.q_hat) * (q - r.q_hat);
    r.between /= static_cast<double>(M - 1);
  }
  const auto Md = static_cast<double>(M);
  r.variance = r.within + (Md + 1.0) / Md * r.between;
  const double half = 1.96 * std::sqrt(r.variance);
  r.bias = std::abs(r.q_hat - q_star);
  r.width = 2.0 * half;
  r.covered = q_star >= r.q_hat - half && q_star <= r.q_hat + half;
  return r;
}

/// Bias, 95% interval width and coverage of the proportion of column values
/// above their mean, estimated from the imputed tables against the truth.
inline RubinResult rubin_evaluate(const ImputationPool& pool, const Table& complete, std::size_t column) {
  if (pool.tables.empty()) throw InvalidArgument("empty imputation pool");
  if (column >= complete.cols()) throw IndexOutOfRange("column " + std::to_string(column));
  if (!complete.schema()[column].is_continuous()) throw InvalidArgument("Rubin evaluation needs a continuous column");
  if (!complete.fully_observed()) throw InvalidArgument("ground truth must be fully observed");
  const auto truth = complete.observed_column(column);
  if (std::all_of(truth.begin(), truth.end(), [&](double v) { return v == truth.front(); }))
    throw DegenerateColumn("column '" + complete.schema()[column].name + "' is constant");
  std::vector<double> q;
  for (const auto& t : pool.tables) {
    if (t.rows() != complete.rows() || t.schema() != complete.schema())
      throw SchemaMismatch("imputed table does not match the ground truth");
    q.push_back(fraction_above_mean(t, column));
  }
  return rubin_pool(q, complete.rows(), fraction_above_mean(complete, column));
}

}  // namespace macode
