#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "macode/dataset.hpp"
#include "macode/discretize.hpp"
#include "macode/error.hpp"
#include "macode/masking.hpp"
#include "macode/optim.hpp"
#include "macode/rng.hpp"
#include "macode/tensor.hpp"

namespace macode {

/// Network and optimisation hyperparameters. Defaults are the values used for
/// every dataset in the original experiments.
struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * embed_dim
  double dropout = 0.0;
  std::size_t bins = 50;
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  std::size_t batch_size = 1024;
  std::size_t epochs = 500;

  std::size_t ffn_width() const { return ffn_dim ? ffn_dim : 4 * embed_dim; }

  void validate() const {
    if (embed_dim == 0 || n_heads == 0 || n_layers == 0) throw ConfigError("embed_dim, n_heads and n_layers must be positive");
    if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (bins < 2) throw ConfigError("bins must be at least 2");
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("invalid learning rate or weight decay");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"embed_dim", c.embed_dim},   {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},     {"ffn_dim", c.ffn_width()},
                        {"dropout", c.dropout},       {"bins", c.bins},
                        {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
                        {"batch_size", c.batch_size}, {"epochs", c.epochs}};
}

/// Reads the hyperparameter keys present in `j` over `base`; unknown keys are errors
/// unless listed in `extra_keys`.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {},
                                    const std::vector<std::string>& extra_keys = {}) {
  if (!j.is_object()) throw ConfigError("model configuration must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "embed_dim") base.embed_dim = v.get<std::size_t>();
      else if (key == "n_heads") base.n_heads = v.get<std::size_t>();
      else if (key == "n_layers") base.n_layers = v.get<std::size_t>();
      else if (key == "ffn_dim") base.ffn_dim = v.get<std::size_t>();
      else if (key == "dropout") base.dropout = v.get<double>();
      else if (key == "bins") base.bins = v.get<std::size_t>();
      else if (key == "learning_rate") base.learning_rate = v.get<double>();
      else if (key == "weight_decay") base.weight_decay = v.get<double>();
      else if (key == "batch_size") base.batch_size = v.get<std::size_t>();
      else if (key == "epochs") base.epochs = v.get<std::size_t>();
      else if (std::find(extra_keys.begin(), extra_keys.end(), key) == extra_keys.end())
        throw ConfigError("unknown configuration key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad configuration value: ") + e.what());
  }
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Weights. `Slot` is a tensor for stored parameters or a tape variable once
// bound into a graph.

template <class Slot>
struct LayerWeights {
  Slot norm1_gain, norm1_shift;
  Slot query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
  Slot norm2_gain, norm2_shift;
  Slot ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;

  template <class Self, class F>
  static void each(Self& s, const std::string& prefix, F& f) {
    f(prefix + "norm1.gain", s.norm1_gain);
    f(prefix + "norm1.shift", s.norm1_shift);
    f(prefix + "attn.query.weight", s.query_w);
    f(prefix + "attn.query.bias", s.query_b);
    f(prefix + "attn.key.weight", s.key_w);
    f(prefix + "attn.key.bias", s.key_b);
    f(prefix + "attn.value.weight", s.value_w);
    f(prefix + "attn.value.bias", s.value_b);
    f(prefix + "attn.out.weight", s.out_w);
    f(prefix + "attn.out.bias", s.out_b);
    f(prefix + "norm2.gain", s.norm2_gain);
    f(prefix + "norm2.shift", s.norm2_shift);
    f(prefix + "ffn.in.weight", s.ffn_in_w);
    f(prefix + "ffn.in.bias", s.ffn_in_b);
    f(prefix + "ffn.out.weight", s.ffn_out_w);
    f(prefix + "ffn.out.bias", s.ffn_out_b);
  }
};

template <class Slot>
struct Weights {
  std::vector<Slot> embeddings;  // column j: (L_j + 1) x d, row 0 is the mask token
  std::vector<LayerWeights<Slot>> layers;
  Slot final_gain, final_shift;
  std::vector<Slot> head_w;  // column j: d x L_j
  std::vector<Slot> head_b;  // column j: L_j

  /// Calls f(name, slot) for every parameter in a fixed order.
  template <class F>
  void visit(F&& f) {
    each(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    each(*this, f);
  }

 private:
  template <class Self, class F>
  static void each(Self& s, F& f) {
    for (std::size_t j = 0; j < s.embeddings.size(); ++j) f("embed." + std::to_string(j), s.embeddings[j]);
    for (std::size_t l = 0; l < s.layers.size(); ++l)
      LayerWeights<Slot>::each(s.layers[l], "layer." + std::to_string(l) + ".", f);
    f(std::string("final_norm.gain"), s.final_gain);
    f(std::string("final_norm.shift"), s.final_shift);
    for (std::size_t j = 0; j < s.head_w.size(); ++j) {
      f("head." + std::to_string(j) + ".weight", s.head_w[j]);
      f("head." + std::to_string(j) + ".bias", s.head_b[j]);
    }
  }
};

/// Same layout with every slot replaced by f(name, slot).
template <class To, class From, class F>
Weights<To> map_weights(const Weights<From>& src, F&& f) {
  Weights<To> dst;
  dst.embeddings.resize(src.embeddings.size());
  dst.layers.resize(src.layers.size());
  dst.head_w.resize(src.head_w.size());
  dst.head_b.resize(src.head_b.size());
  std::vector<To*> slots;
  dst.visit([&](const std::string&, To& s) { slots.push_back(&s); });
  std::size_t k = 0;
  src.visit([&](const std::string& name, const From& s) { *slots[k++] = f(name, s); });
  return dst;
}

template <class T = float>
struct ModelParams {
  ModelConfig config;
  std::vector<int> vocab;  // L_j per column
  Weights<ad::Tensor<T>> weights;

  std::size_t columns() const { return vocab.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    weights.visit([&](const std::string&, const ad::Tensor<T>& t) { n += t.numel(); });
    return n;
  }
};

/// Normal(0, 0.02) embeddings and matrices, zero biases, unit norm gains.
template <class T = float>
ModelParams<T> init_params(const ModelConfig& cfg, std::vector<int> vocab, Rng& rng) {
  cfg.validate();
  if (vocab.empty()) throw InvalidArgument("model needs at least one column");
  const std::size_t d = cfg.embed_dim, ff = cfg.ffn_width();
  std::normal_distribution<double> normal(0.0, 0.02);
  auto randn = [&](ad::Shape s) {
    ad::Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(normal(rng));
    return t;
  };
  auto zeros = [](ad::Shape s) { return ad::Tensor<T>(std::move(s), T(0)); };
  auto ones = [](ad::Shape s) { return ad::Tensor<T>(std::move(s), T(1)); };

  ModelParams<T> p;
  p.config = cfg;
  p.config.ffn_dim = ff;
  p.vocab = std::move(vocab);
  auto& w = p.weights;
  for (int L : p.vocab) {
    if (L < 2) throw InvalidArgument("every column needs at least 2 classes");
    w.embeddings.push_back(randn({static_cast<std::size_t>(L) + 1, d}));
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights<ad::Tensor<T>> lw;
    lw.norm1_gain = ones({d});
    lw.norm1_shift = zeros({d});
    lw.query_w = randn({d, d});
    lw.query_b = zeros({d});
    lw.key_w = randn({d, d});
    lw.key_b = zeros({d});
    lw.value_w = randn({d, d});
    lw.value_b = zeros({d});
    lw.out_w = randn({d, d});
    lw.out_b = zeros({d});
    lw.norm2_gain = ones({d});
    lw.norm2_shift = zeros({d});
    lw.ffn_in_w = randn({d, ff});
    lw.ffn_in_b = zeros({ff});
    lw.ffn_out_w = randn({ff, d});
    lw.ffn_out_b = zeros({d});
    w.layers.push_back(std::move(lw));
  }
  w.final_gain = ones({d});
  w.final_shift = zeros({d});
  for (int L : p.vocab) {
    w.head_w.push_back(randn({d, static_cast<std::size_t>(L)}));
    w.head_b.push_back(zeros({static_cast<std::size_t>(L)}));
  }
  return p;
}

/// Places every parameter on the tape as a leaf.
template <class T>
Weights<ad::Var<T>> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  return map_weights<ad::Var<T>>(params.weights, [&](const std::string&, const ad::Tensor<T>& t) {
    ad::Tensor<T> copy(t.shape, t.data, requires_grad);
    return tape.input(std::move(copy));
  });
}

/// Builds the network on `tape` for a batch of (already masked) label rows and
/// returns the head logits of every column, each [B, L_j].
///
/// Tokens are laid out column-major: row j*B + b of the hidden state is column j
/// of batch row b. There is no positional encoding; column identity comes from
/// the per-column embedding tables. Encoder blocks are pre-norm with a GELU FFN.
template <class T>
std::vector<ad::Var<T>> forward_graph(ad::Tape<T>& tape, const Weights<ad::Var<T>>& w, const ModelConfig& cfg,
                                      const LabelMatrix& input, Rng* dropout_rng = nullptr) {
  const std::size_t B = input.rows, p = input.cols;
  if (w.final_gain.tape != &tape) throw ShapeMismatch("forward: weights are bound to another tape");
  if (B == 0) throw ShapeMismatch("forward: empty batch");
  if (p != w.embeddings.size()) throw ShapeMismatch("forward: label width does not match the model");
  const std::size_t H = cfg.n_heads, d = cfg.embed_dim;
  const double drop = dropout_rng ? cfg.dropout : 0.0;

  std::vector<ad::Var<T>> tokens;
  tokens.reserve(p);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<int> idx(B);
    for (std::size_t b = 0; b < B; ++b) idx[b] = input.at(b, j);
    tokens.push_back(ad::embedding_gather(w.embeddings[j], std::move(idx)));
  }
  auto x = ad::concat_rows(tokens);
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d / H)));

  for (const auto& lw : w.layers) {
    auto h = ad::layer_norm(x, lw.norm1_gain, lw.norm1_shift);
    auto q = ad::to_heads(ad::add_bias(ad::matmul(h, lw.query_w), lw.query_b), p, B, H);
    auto k = ad::to_heads(ad::add_bias(ad::matmul(h, lw.key_w), lw.key_b), p, B, H);
    auto v = ad::to_heads(ad::add_bias(ad::matmul(h, lw.value_w), lw.value_b), p, B, H);
    auto attn = ad::softmax_rows(ad::scale(ad::batched_matmul(q, k, true), attn_scale));
    auto ctx = ad::from_heads(ad::batched_matmul(attn, v, false), p, B, H);
    auto o = ad::add_bias(ad::matmul(ctx, lw.out_w), lw.out_b);
    if (drop > 0.0) o = ad::dropout(o, drop, *dropout_rng);
    x = ad::add(x, o);

    auto h2 = ad::layer_norm(x, lw.norm2_gain, lw.norm2_shift);
    auto f = ad::gelu(ad::add_bias(ad::matmul(h2, lw.ffn_in_w), lw.ffn_in_b));
    f = ad::add_bias(ad::matmul(f, lw.ffn_out_w), lw.ffn_out_b);
    if (drop > 0.0) f = ad::dropout(f, drop, *dropout_rng);
    x = ad::add(x, f);
  }
  x = ad::layer_norm(x, w.final_gain, w.final_shift);

  std::vector<ad::Var<T>> logits;
  logits.reserve(p);
  for (std::size_t j = 0; j < p; ++j) {
    auto hj = ad::slice_rows(x, j * B, (j + 1) * B);
    logits.push_back(ad::add_bias(ad::matmul(hj, w.head_w[j]), w.head_b[j]));
  }
  return logits;
}

template <class T>
std::vector<ad::Var<T>> probabilities(const std::vector<ad::Var<T>>& logits) {
  std::vector<ad::Var<T>> out;
  out.reserve(logits.size());
  for (const auto& z : logits) out.push_back(ad::softmax_rows(z));
  return out;
}

/// Head logits for a batch of label rows (0 = masked), without gradients.
template <class T>
std::vector<ad::Tensor<T>> predict_logits(const ModelParams<T>& params, const LabelMatrix& input) {
  ad::Tape<T> tape(false);
  auto w = bind(tape, params, false);
  auto logits = forward_graph(tape, w, params.config, input);
  std::vector<ad::Tensor<T>> out;
  out.reserve(logits.size());
  for (const auto& z : logits) out.push_back(z.value());
  return out;
}

/// Per-column class probabilities pi_j, each [B, L_j].
template <class T>
std::vector<ad::Tensor<T>> forward(const ModelParams<T>& params, const LabelMatrix& input) {
  ad::Tape<T> tape(false);
  auto w = bind(tape, params, false);
  auto probs = probabilities(forward_graph(tape, w, params.config, input));
  std::vector<ad::Tensor<T>> out;
  out.reserve(probs.size());
  for (const auto& pv : probs) out.push_back(pv.value());
  return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Row-major n x p binary matrix (training masks m, or missing indicators r).
struct BinaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  BinaryMatrix() = default;
  BinaryMatrix(std::size_t n, std::size_t p, std::uint8_t fill = 1) : rows(n), cols(p), data(n * p, fill) {}
  std::uint8_t& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Negative log-likelihood of the entries that are masked (m = 0) and observed
/// (r = 1), averaged over the batch. Missing entries contribute nothing.
template <class T>
ad::Var<T> loss_missing(const std::vector<ad::Var<T>>& probs, const LabelMatrix& labels, const BinaryMatrix& mask,
                        const BinaryMatrix& observed) {
  const std::size_t B = labels.rows, p = labels.cols;
  if (probs.size() != p || mask.rows != B || mask.cols != p || observed.rows != B || observed.cols != p)
    throw ShapeMismatch("loss: probabilities, labels, mask and observed must agree");
  std::vector<ad::Var<T>> terms;
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<int> target(B, -1);
    std::vector<T> weight(B, T(0));
    for (std::size_t b = 0; b < B; ++b) {
      if (mask.at(b, j) == 0 && observed.at(b, j) == 1) {
        if (labels.at(b, j) < 1) throw InvalidArgument("observed masked entry has no label");
        target[b] = labels.at(b, j) - 1;
        weight[b] = T(1);
      }
    }
    terms.push_back(ad::cross_entropy(probs[j], std::move(target), std::move(weight), static_cast<double>(B)));
  }
  auto total = terms[0];
  for (std::size_t j = 1; j < terms.size(); ++j) total = ad::add(total, terms[j]);
  return total;
}

/// Complete-data objective: negative log-likelihood of the masked entries.
template <class T>
ad::Var<T> loss_complete(const std::vector<ad::Var<T>>& probs, const LabelMatrix& labels, const BinaryMatrix& mask) {
  return loss_missing(probs, labels, mask, BinaryMatrix(labels.rows, labels.cols, 1));
}

// ---------------------------------------------------------------------------
// Training

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

template <class T = float>
struct TrainResult {
  ModelParams<T> params;
  std::vector<double> epoch_losses;
};

/// Minimises the masked objective. Each optimiser step draws one fresh mask per
/// row, feeds y * min(m, r) to the network and scores the entries with m = 0 and
/// r = 1. Randomness comes from the "train" (init, shuffling, dropout) and "mask"
/// substreams of `seed`.
template <class T = float>
TrainResult<T> train(const Table& table, const ModelConfig& cfg, const BinGrid& grid, const CdfSet& cdfs,
                     std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (table.rows() == 0) throw InvalidArgument("cannot train on an empty table");
  const LabelMatrix labels = discretize(table, cdfs, grid);
  const std::size_t n = table.rows(), p = table.cols();

  Rng init_rng = make_stream(seed, "train", 0);
  Rng shuffle_rng = make_stream(seed, "train", 1);
  Rng dropout_rng = make_stream(seed, "train", 2);
  Rng mask_rng = make_stream(seed, "mask");

  TrainResult<T> result{init_params<T>(cfg, vocab_sizes(table.schema(), grid), init_rng), {}};
  auto& params = result.params;
  std::vector<ad::Tensor<T>*> param_ptrs;
  params.weights.visit([&](const std::string&, ad::Tensor<T>& t) { param_ptrs.push_back(&t); });
  AdamState<T> opt_state;
  const AdamWConfig opt{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t B = std::min(cfg.batch_size, n - start);
      LabelMatrix y(B, p), input(B, p);
      BinaryMatrix mask(B, p), observed(B, p);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = order[start + b];
        const MaskVector m = sample_mask(p, mask_rng);
        for (std::size_t j = 0; j < p; ++j) {
          const bool r = table.observed(i, j);
          y.at(b, j) = labels.at(i, j);
          mask.at(b, j) = m[j];
          observed.at(b, j) = r ? 1 : 0;
          input.at(b, j) = (m[j] && r) ? labels.at(i, j) : 0;
        }
      }
      try {
        ad::Tape<T> tape;
        auto w = bind(tape, params, true);
        auto probs = probabilities(forward_graph(tape, w, cfg, input, &dropout_rng));
        auto loss = loss_missing(probs, y, mask, observed);
        tape.backward(loss);
        std::vector<const std::vector<T>*> grads;
        w.visit([&](const std::string&, const ad::Var<T>& v) { grads.push_back(&v.grad()); });
        adamw_step<T>(param_ptrs, grads, opt_state, opt);
        epoch_loss += static_cast<double>(loss.value()[0]) * static_cast<double>(B);
      } catch (const NonFinite& e) {
        throw NonFinite("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
    }
    epoch_loss /= static_cast<double>(n);
    result.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

/// Everything needed to sample from or impute with a trained model.
template <class T = float>
struct FittedModel {
  Schema schema;
  BinGrid grid;
  CdfSet cdfs;
  ModelParams<T> params;
  std::uint64_t seed = 0;
};

/// Fits the marginal CDFs on observed cells, builds the uniform grid and trains.
template <class T = float>
FittedModel<T> fit(const Table& table, const ModelConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {},
                   std::vector<double>* epoch_losses = nullptr) {
  FittedModel<T> m;
  m.schema = table.schema();
  m.grid = uniform_grid(cfg.bins);
  m.cdfs = fit_cdfs(table);
  m.seed = seed;
  auto res = train<T>(table, cfg, m.grid, m.cdfs, seed, on_epoch);
  m.params = std::move(res.params);
  if (epoch_losses) *epoch_losses = std::move(res.epoch_losses);
  return m;
}

}  // namespace macode
