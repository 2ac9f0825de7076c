#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "macode/dataset.hpp"
#include "macode/error.hpp"
#include "macode/rng.hpp"

namespace macode {

namespace detail {

inline void require_same_schema(const Table& a, const Table& b) {
  if (a.schema() != b.schema()) throw SchemaMismatch("tables have different schemas");
}

struct ColumnMoments {
  double mean = 0.0;
  double sd = 1.0;
};

/// Mean and population sd of the observed cells; a zero sd is replaced by 1.
inline ColumnMoments moments(const Table& t, std::size_t j) {
  const auto v = t.observed_column(j);
  ColumnMoments m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  m.sd = sd > 0.0 ? sd : 1.0;
  return m;
}

/// Smoothed histogram: (count + eps) renormalized.
inline std::vector<double> smoothed(const std::vector<double>& counts, double eps) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::vector<double> out(counts.size());
  const double denom = (total > 0.0 ? 1.0 : 0.0) + eps * static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) out[k] = ((total > 0.0 ? counts[k] / total : 0.0) + eps) / denom;
  return out;
}

inline std::vector<double> level_counts(const Table& t, std::size_t j) {
  std::vector<double> c(t.schema()[j].num_levels(), 0.0);
  for (double v : t.observed_column(j)) c[static_cast<std::size_t>(v) - 1] += 1.0;
  return c;
}

/// Linear-interpolation percentile (q in [0,1]) of unsorted data.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw InvalidArgument("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t max_rows, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_rows) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Marginal fidelity

/// Mean over columns of KL(real || synth) between smoothed marginal histograms.
/// Continuous columns use `bins` equal-width cells over the pooled range.
inline double kl_marginal(const Table& real, const Table& synth, std::size_t bins = 10, double eps = 1e-6) {
  detail::require_same_schema(real, synth);
  if (bins == 0) throw InvalidArgument("bins must be positive");
  double total = 0.0;
  for (std::size_t j = 0; j < real.cols(); ++j) {
    std::vector<double> cr, cs;
    if (real.schema()[j].is_categorical()) {
      cr = detail::level_counts(real, j);
      cs = detail::level_counts(synth, j);
    } else {
      const auto a = real.observed_column(j), b = synth.observed_column(j);
      double lo = INFINITY, hi = -INFINITY;
      for (double v : a) lo = std::min(lo, v), hi = std::max(hi, v);
      for (double v : b) lo = std::min(lo, v), hi = std::max(hi, v);
      cr.assign(bins, 0.0);
      cs.assign(bins, 0.0);
      auto cell = [&](double v) {
        if (!(hi > lo)) return std::size_t{0};
        return std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins)));
      };
      for (double v : a) cr[cell(v)] += 1.0;
      for (double v : b) cs[cell(v)] += 1.0;
    }
    const auto p = detail::smoothed(cr, eps), q = detail::smoothed(cs, eps);
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) kl += p[k] * std::log(p[k] / q[k]);
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(real.cols());
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("KS statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, k = 0;
  double d = 0.0;
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() || k < b.size()) {
    const double x = k == b.size() || (i < a.size() && a[i] <= b[k]) ? a[i] : b[k];
    while (i < a.size() && a[i] <= x) ++i;
    while (k < b.size() && b[k] <= x) ++k;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(k) / nb));
  }
  return d;
}

struct GofResult {
  std::optional<double> ks;    // mean over continuous columns
  std::optional<double> chi2;  // mean over categorical columns
};

/// KS on continuous columns; chi-square of synthetic level counts against the
/// real level frequencies scaled to the synthetic size on categorical ones.
inline GofResult gof(const Table& real, const Table& synth, double eps = 1e-6) {
  detail::require_same_schema(real, synth);
  double ks = 0.0, chi2 = 0.0;
  std::size_t n_cont = 0, n_cat = 0;
  for (std::size_t j = 0; j < real.cols(); ++j) {
    if (real.schema()[j].is_continuous()) {
      ks += ks_statistic(real.observed_column(j), synth.observed_column(j));
      ++n_cont;
      continue;
    }
    const auto cr = detail::level_counts(real, j), cs = detail::level_counts(synth, j);
    const double nr = std::accumulate(cr.begin(), cr.end(), 0.0), ns = std::accumulate(cs.begin(), cs.end(), 0.0);
    double stat = 0.0;
    for (std::size_t l = 0; l < cr.size(); ++l) {
      const double expected = std::max(cr[l] / nr * ns, eps);
      stat += (cs[l] - expected) * (cs[l] - expected) / expected;
    }
    chi2 += stat;
    ++n_cat;
  }
  GofResult r;
  if (n_cont) r.ks = ks / static_cast<double>(n_cont);
  if (n_cat) r.chi2 = chi2 / static_cast<double>(n_cat);
  return r;
}

/// Exact 1-Wasserstein distance between two 1-D empirical distributions, the
/// area between their CDFs.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("Wasserstein distance needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> xs(a);
  xs.insert(xs.end(), b.begin(), b.end());
  std::sort(xs.begin(), xs.end());
  const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double area = 0.0;
  std::size_t i = 0, k = 0;
  for (std::size_t t = 0; t + 1 < xs.size(); ++t) {
    while (i < a.size() && a[i] <= xs[t]) ++i;
    while (k < b.size() && b[k] <= xs[t]) ++k;
    area += std::abs(static_cast<double>(i) / na - static_cast<double>(k) / nb) * (xs[t + 1] - xs[t]);
  }
  return area;
}

/// Column-wise: mean over columns of the 1-D Wasserstein distance (continuous,
/// raw scale) or the total variation of level frequencies (categorical).
inline double wasserstein1(const Table& real, const Table& synth) {
  detail::require_same_schema(real, synth);
  double total = 0.0;
  for (std::size_t j = 0; j < real.cols(); ++j) {
    if (real.schema()[j].is_continuous()) {
      total += wasserstein_1d(real.observed_column(j), synth.observed_column(j));
    } else {
      const auto cr = detail::level_counts(real, j), cs = detail::level_counts(synth, j);
      const double nr = std::accumulate(cr.begin(), cr.end(), 0.0), ns = std::accumulate(cs.begin(), cs.end(), 0.0);
      double tv = 0.0;
      for (std::size_t l = 0; l < cr.size(); ++l) tv += std::abs(cr[l] / nr - cs[l] / ns);
      total += 0.5 * tv;
    }
  }
  return total / static_cast<double>(real.cols());
}

// ---------------------------------------------------------------------------
// Joint fidelity: MMD

/// Dense row-major feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  const double* row(std::size_t i) const { return data.data() + i * cols; }
};

/// Continuous columns standardized by `ref` statistics, categorical columns
/// one-hot. Columns listed in `skip` are left out.
inline FeatureMatrix encode_features(const Table& t, const Table& ref, std::span<const std::size_t> rows,
                                     std::span<const std::size_t> skip = {}) {
  FeatureMatrix f;
  f.rows = rows.size();
  std::vector<detail::ColumnMoments> mom(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) {
    if (std::find(skip.begin(), skip.end(), j) != skip.end()) continue;
    if (t.schema()[j].is_continuous()) {
      mom[j] = detail::moments(ref, j);
      f.cols += 1;
    } else {
      f.cols += t.schema()[j].num_levels();
    }
  }
  f.data.assign(f.rows * f.cols, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    std::size_t c = 0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      if (std::find(skip.begin(), skip.end(), j) != skip.end()) continue;
      if (t.schema()[j].is_continuous()) {
        f.data[r * f.cols + c] = (t.value(i, j) - mom[j].mean) / mom[j].sd;
        c += 1;
      } else {
        f.data[r * f.cols + c + static_cast<std::size_t>(t.value(i, j)) - 1] = 1.0;
        c += t.schema()[j].num_levels();
      }
    }
  }
  return f;
}

inline double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Unbiased MMD^2 with the Gaussian kernel exp(-|x - y|^2 / (2 sigma^2)).
inline double mmd2_unbiased(const FeatureMatrix& x, const FeatureMatrix& y, double sigma) {
  if (x.rows < 2 || y.rows < 2) throw InvalidArgument("MMD needs at least 2 rows per sample");
  if (x.cols != y.cols) throw ShapeMismatch("MMD feature widths differ");
  const double gamma = 1.0 / (2.0 * sigma * sigma);
  auto k = [&](const double* a, const double* b) { return std::exp(-gamma * squared_distance(a, b, x.cols)); };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = i + 1; j < x.rows; ++j) kxx += 2.0 * k(x.row(i), x.row(j));
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = i + 1; j < y.rows; ++j) kyy += 2.0 * k(y.row(i), y.row(j));
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < y.rows; ++j) kxy += k(x.row(i), y.row(j));
  const auto m = static_cast<double>(x.rows), n = static_cast<double>(y.rows);
  return kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n);
}

/// Median pairwise Euclidean distance over the pooled rows of x and y.
inline double median_bandwidth(const FeatureMatrix& x, const FeatureMatrix& y) {
  std::vector<const double*> pooled;
  for (std::size_t i = 0; i < x.rows; ++i) pooled.push_back(x.row(i));
  for (std::size_t i = 0; i < y.rows; ++i) pooled.push_back(y.row(i));
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::sqrt(squared_distance(pooled[i], pooled[j], x.cols)));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

/// MMD^2 between the two tables, both subsampled to at most `max_rows` rows with
/// a fixed seed, clamped at 0.
inline double mmd(const Table& real, const Table& synth, std::size_t max_rows = 500, std::uint64_t seed = 0) {
  detail::require_same_schema(real, synth);
  Rng rng = make_stream(seed, "mmd");
  const auto ri = detail::subsample_rows(real.rows(), max_rows, rng);
  const auto si = detail::subsample_rows(synth.rows(), max_rows, rng);
  const auto x = encode_features(real, real, ri), y = encode_features(synth, real, si);
  return std::max(0.0, mmd2_unbiased(x, y, median_bandwidth(x, y)));
}

// ---------------------------------------------------------------------------
// Privacy

/// Distance to closest record: for every synthetic row the Euclidean distance
/// to its nearest real row over continuous columns standardized by the real
/// statistics, summarized by the 5th percentile.
inline double dcr(const Table& real, const Table& synth, double percentile = 0.05) {
  detail::require_same_schema(real, synth);
  std::vector<std::size_t> skip;
  for (std::size_t j = 0; j < real.cols(); ++j)
    if (!real.schema()[j].is_continuous()) skip.push_back(j);
  if (skip.size() == real.cols()) throw NoContinuousColumns("DCR needs at least one continuous column");
  std::vector<std::size_t> ri(real.rows()), si(synth.rows());
  std::iota(ri.begin(), ri.end(), std::size_t{0});
  std::iota(si.begin(), si.end(), std::size_t{0});
  const auto x = encode_features(real, real, ri, skip), y = encode_features(synth, real, si, skip);
  std::vector<double> nearest(y.rows, INFINITY);
  for (std::size_t s = 0; s < y.rows; ++s)
    for (std::size_t r = 0; r < x.rows; ++r) nearest[s] = std::min(nearest[s], squared_distance(y.row(s), x.row(r), x.cols));
  for (auto& d : nearest) d = std::sqrt(d);
  return detail::percentile(std::move(nearest), percentile);
}

// ---------------------------------------------------------------------------
// Utility proxies

/// Mean of 2|p - t| / (|p| + |t|) with 0/0 taken as 0.
inline double smape(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw LengthMismatch("SMAPE needs equal non-empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double denom = std::abs(pred[i]) + std::abs(truth[i]);
    if (denom > 0.0) s += 2.0 * std::abs(pred[i] - truth[i]) / denom;
  }
  return s / static_cast<double>(pred.size());
}

/// Macro-averaged F1 over the classes that occur in either vector.
inline double macro_f1(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw LengthMismatch("F1 needs equal non-empty vectors");
  struct Counts {
    double tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Counts> per;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) {
      per[pred[i]].tp += 1;
    } else {
      per[pred[i]].fp += 1;
      per[truth[i]].fn += 1;
    }
  }
  double total = 0.0;
  for (const auto& [_, c] : per) {
    const double denom = 2 * c.tp + c.fp + c.fn;
    total += denom > 0 ? 2 * c.tp / denom : 0.0;
  }
  return total / static_cast<double>(per.size());
}

struct UtilityResult {
  std::optional<double> smape;
  std::optional<double> f1_macro;
};

/// Fits a k-nearest-neighbour predictor of `target` on `synth` and scores it on
/// `test`. Features are the remaining columns, continuous ones standardized by
/// `real_train` statistics and categorical ones one-hot. Regression averages
/// the neighbours; classification takes a majority vote with ties going to the
/// nearer neighbour. Distance ties prefer the lower row index.
inline UtilityResult utility_proxy(const Table& real_train, const Table& synth, const Table& test, std::size_t target,
                                   std::size_t k = 5) {
  detail::require_same_schema(real_train, synth);
  detail::require_same_schema(real_train, test);
  if (target >= synth.cols()) throw IndexOutOfRange("target column " + std::to_string(target));
  if (synth.rows() == 0) throw EmptyTrain("no rows to fit the utility learner on");
  if (synth.cols() < 2) throw InvalidArgument("utility proxy needs at least one feature column");
  const std::vector<std::size_t> skip{target};
  std::vector<std::size_t> si(synth.rows()), ti(test.rows());
  std::iota(si.begin(), si.end(), std::size_t{0});
  std::iota(ti.begin(), ti.end(), std::size_t{0});
  const auto xs = encode_features(synth, real_train, si, skip), xt = encode_features(test, real_train, ti, skip);
  const std::size_t kk = std::min(k, synth.rows());
  const bool regression = synth.schema()[target].is_continuous();

  std::vector<double> pred_r, truth_r;
  std::vector<int> pred_c, truth_c;
  std::vector<std::pair<double, std::size_t>> dist(xs.rows);
  for (std::size_t t = 0; t < xt.rows; ++t) {
    for (std::size_t s = 0; s < xs.rows; ++s) dist[s] = {squared_distance(xt.row(t), xs.row(s), xs.cols), s};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    if (regression) {
      double mean = 0.0;
      for (std::size_t a = 0; a < kk; ++a) mean += synth.value(dist[a].second, target);
      pred_r.push_back(mean / static_cast<double>(kk));
      truth_r.push_back(test.value(t, target));
    } else {
      std::map<int, std::size_t> votes;
      for (std::size_t a = 0; a < kk; ++a) ++votes[static_cast<int>(synth.value(dist[a].second, target))];
      std::size_t best_votes = 0;
      for (const auto& [_, v] : votes) best_votes = std::max(best_votes, v);
      int choice = 0;
      for (std::size_t a = 0; a < kk; ++a) {
        const int lvl = static_cast<int>(synth.value(dist[a].second, target));
        if (votes[lvl] == best_votes) {
          choice = lvl;
          break;
        }
      }
      pred_c.push_back(choice);
      truth_c.push_back(static_cast<int>(test.value(t, target)));
    }
  }
  UtilityResult r;
  if (xt.rows == 0) return r;
  if (regression)
    r.smape = smape(pred_r, truth_r);
  else
    r.f1_macro = macro_f1(pred_c, truth_c);
  return r;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  std::optional<double> kl;
  std::optional<double> gof_ks;
  std::optional<double> gof_chi2;
  std::optional<double> mmd;
  std::optional<double> wd;
  std::optional<double> dcr;
  std::optional<double> smape;
  std::optional<double> f1_macro;
};

struct EvaluateOptions {
  std::size_t kl_bins = 10;
  std::size_t mmd_rows = 500;
  std::uint64_t seed = 0;
};

inline MetricsReport evaluate(const Table& real, const Table& synth, const EvaluateOptions& opts = {},
                              const Table* test = nullptr, std::optional<std::size_t> target = std::nullopt) {
  MetricsReport r;
  r.kl = kl_marginal(real, synth, opts.kl_bins);
  const auto g = gof(real, synth);
  r.gof_ks = g.ks;
  r.gof_chi2 = g.chi2;
  r.mmd = mmd(real, synth, opts.mmd_rows, opts.seed);
  r.wd = wasserstein1(real, synth);
  const bool any_continuous = std::any_of(real.schema().begin(), real.schema().end(),
                                          [](const ColumnSpec& c) { return c.is_continuous(); });
  if (any_continuous) r.dcr = dcr(real, synth);
  if (test && target) {
    const auto u = utility_proxy(real, synth, *test, *target);
    r.smape = u.smape;
    r.f1_macro = u.f1_macro;
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("kl", r.kl);
  put("gof_ks", r.gof_ks);
  put("gof_chi2", r.gof_chi2);
  put("mmd", r.mmd);
  put("wd", r.wd);
  put("dcr", r.dcr);
  put("smape", r.smape);
  put("f1_macro", r.f1_macro);
  nlohmann::json notes = nlohmann::json::object();
  notes["wd"] = "column-wise";
  if (r.smape || r.f1_macro) notes["utility"] = "proxy: 5-nearest-neighbour learner fit on synthetic rows";
  j["notes"] = notes;
  return j;
}

}  // namespace macode
