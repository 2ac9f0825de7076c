#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "macode/dataset.hpp"
#include "macode/model.hpp"
#include "macode/oracle.hpp"
#include "macode/rng.hpp"
#include "macode/tensor.hpp"

namespace macode::testing {

/// Three binary columns with a non-product joint; every cell has positive mass.
inline oracle::DiscreteJoint binary_oracle_joint() {
  return oracle::DiscreteJoint({2, 2, 2}, {0.20, 0.05, 0.10, 0.15, 0.05, 0.15, 0.05, 0.25});
}

/// Schema of categorical columns named c0, c1, ... with levels "0", "1", ...
inline Schema categorical_schema(const std::vector<int>& levels) {
  Schema s;
  for (std::size_t j = 0; j < levels.size(); ++j) {
    ColumnSpec c{"c" + std::to_string(j), ColumnKind::Categorical, {}};
    for (int l = 0; l < levels[j]; ++l) c.levels.push_back(std::to_string(l));
    s.push_back(c);
  }
  return s;
}

/// n i.i.d. rows from a discrete joint; level k is stored as k + 1.
inline Table sample_joint(const oracle::DiscreteJoint& joint, std::size_t n, std::uint64_t seed) {
  Rng rng = make_stream(seed, "joint-sample");
  std::vector<double> cdf(joint.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < joint.size(); ++f) cdf[f] = acc += joint.prob(f);
  std::vector<double> values;
  values.reserve(n * joint.columns());
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng) * acc;
    std::size_t f = 0;
    while (f + 1 < cdf.size() && cdf[f] <= u) ++f;
    for (int x : joint.decode(f)) values.push_back(x + 1.0);
  }
  return Table(categorical_schema(joint.level_counts()), n, values);
}

/// Empirical joint frequencies of a fully observed categorical table.
inline std::vector<double> joint_frequencies(const Table& t, const oracle::DiscreteJoint& joint) {
  std::vector<double> freq(joint.size(), 0.0);
  std::vector<int> x(t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) x[j] = static_cast<int>(t.value(i, j)) - 1;
    freq[joint.encode(x)] += 1.0;
  }
  for (auto& f : freq) f /= static_cast<double>(t.rows());
  return freq;
}

/// Largest relative error between an analytic gradient and central finite
/// differences of `loss` with respect to `x`, over entries whose gradient
/// magnitude exceeds `floor`.
inline double gradient_error(std::vector<double>& x, const std::vector<double>& analytic,
                             const std::function<double()>& loss, double h = 1e-3, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale <= floor) continue;
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

inline ad::Tensor<double> random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  ad::Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = scale * standard_normal(rng);
  t.requires_grad = true;
  return t;
}

using OpBuilder = std::function<ad::Var<double>(std::vector<ad::Var<double>>&)>;

/// Worst relative gradient error of an op over all of its inputs. The op output
/// is reduced to a scalar through a fixed random projection.
inline double op_gradient_error(std::vector<ad::Tensor<double>> inputs, const OpBuilder& build, std::uint64_t seed) {
  Rng rng = make_stream(seed, "projection");
  std::vector<double> projection;
  auto eval = [&](std::vector<std::vector<double>>* grads) {
    ad::Tape<double> tape(grads != nullptr);
    std::vector<ad::Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    auto out = build(vars);
    if (projection.empty())
      for (std::size_t i = 0; i < out.value().numel(); ++i) projection.push_back(standard_normal(rng));
    auto loss = ad::sum(ad::mul_constant(out, projection));
    if (grads) {
      tape.backward(loss);
      for (auto& v : vars) grads->push_back(tape.needs_grad(v.id) ? v.grad() : std::vector<double>(v.value().numel(), 0.0));
    }
    return loss.value()[0];
  };
  std::vector<std::vector<double>> grads;
  eval(&grads);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad) continue;
    worst = std::max(worst, gradient_error(inputs[k].data, grads[k], [&] { return eval(nullptr); }));
  }
  return worst;
}

/// Worst relative gradient error of the complete-data loss over every parameter
/// of a small double-precision model (p = 2, L = 3, d = 8, one layer).
inline double model_gradient_error(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.bins = 3;
  Rng rng = make_stream(seed, "model-grad");
  auto params = init_params<double>(cfg, {3, 3}, rng);
  // Larger weights than the default init so every path carries signal.
  params.weights.visit([&](const std::string&, ad::Tensor<double>& t) {
    for (auto& v : t.data) v += 0.3 * standard_normal(rng);
  });
  const std::size_t B = 4;
  LabelMatrix labels(B, 2), input(B, 2);
  BinaryMatrix mask(B, 2);
  const int y[B][2] = {{1, 3}, {2, 2}, {3, 1}, {2, 3}};
  const std::uint8_t m[B][2] = {{0, 1}, {1, 0}, {0, 0}, {1, 0}};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < 2; ++j) {
      labels.at(b, j) = y[b][j];
      mask.at(b, j) = m[b][j];
      input.at(b, j) = m[b][j] ? y[b][j] : 0;
    }
  auto eval = [&](std::vector<std::vector<double>>* grads) {
    ad::Tape<double> tape(grads != nullptr);
    auto w = bind(tape, params, grads != nullptr);
    auto loss = loss_complete(probabilities(forward_graph(tape, w, cfg, input)), labels, mask);
    if (grads) {
      tape.backward(loss);
      w.visit([&](const std::string&, const ad::Var<double>& v) { grads->push_back(v.grad()); });
    }
    return loss.value()[0];
  };
  std::vector<std::vector<double>> grads;
  eval(&grads);
  std::vector<std::vector<double>*> slots;
  params.weights.visit([&](const std::string&, ad::Tensor<double>& t) { slots.push_back(&t.data); });
  double worst = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k)
    worst = std::max(worst, gradient_error(*slots[k], grads[k], [&] { return eval(nullptr); }));
  return worst;
}

}  // namespace macode::testing
