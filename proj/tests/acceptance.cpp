// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance --only N   run criterion N

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "macode/checkpoint.hpp"
#include "macode/generate.hpp"
#include "macode/masking.hpp"
#include "macode/metrics.hpp"
#include "macode/optim.hpp"
#include "macode/oracle.hpp"
#include "support.hpp"

using namespace macode;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kGradTol = 1e-3;
constexpr double kGradSeconds = 10;
constexpr double kMaskTol = 0.005;
constexpr double kMaskSeconds = 5;
constexpr double kBoundSeconds = 5;
constexpr double kBoundShrink = 0.25 * 1.10;
constexpr double kOracleTv = 0.05;
constexpr double kOracleSeconds = 600;
constexpr double kMissingTv = 0.10;
constexpr double kMissingSeconds = 600;
constexpr double kUniformTol = 0.02;
constexpr double kCoverageLo = 0.88;
constexpr double kCoverageHi = 1.00;
constexpr double kBiasMax = 0.02;
constexpr double kRubinSeconds = 1800;
constexpr double kRangeSeconds = 30;
constexpr double kMetricTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ModelConfig oracle_config() {
  ModelConfig c;
  c.embed_dim = 32;
  c.n_heads = 4;
  c.n_layers = 1;
  c.bins = 50;
  c.epochs = 100;
  return c;
}

/// Largest TV between the model's conditionals and the exact ones over every
/// (target, conditioning subset, assignment) of a 3-column binary joint.
double max_conditional_tv(const FittedModel<float>& model, const oracle::DiscreteJoint& joint) {
  double worst = 0.0;
  for (const auto& c : oracle::conditioning_cases(joint)) {
    LabelMatrix input(c.assignments.size(), joint.columns());
    for (std::size_t a = 0; a < c.assignments.size(); ++a)
      for (std::size_t j = 0; j < joint.columns(); ++j)
        input.at(a, j) = c.assignments[a][j] == oracle::kFree ? 0 : c.assignments[a][j] + 1;
    const auto probs = forward(model.params, input);
    for (std::size_t a = 0; a < c.assignments.size(); ++a) {
      const auto exact = oracle::exact_conditional(joint, c.target, c.assignments[a]);
      std::vector<double> learned(exact.size());
      for (std::size_t l = 0; l < learned.size(); ++l) learned[l] = probs[c.target].at(a, l);
      worst = std::max(worst, oracle::tv(learned, exact));
    }
  }
  return worst;
}

// 1 ------------------------------------------------------------------------
Outcome gradients() {
  const auto t0 = Clock::now();
  using testing::op_gradient_error;
  using testing::random_tensor;
  Rng rng(1);
  double worst = 0.0;
  auto check = [&](std::vector<ad::Tensor<double>> in, const testing::OpBuilder& op) {
    worst = std::max(worst, op_gradient_error(std::move(in), op, rng()));
  };
  auto positive = [&](ad::Shape s) {
    auto t = random_tensor(std::move(s), rng);
    for (auto& v : t.data) v = 0.2 + std::abs(v);
    return t;
  };
  check({random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)}, [](auto& v) { return ad::matmul(v[0], v[1]); });
  check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, [](auto& v) { return ad::add(v[0], v[1]); });
  check({random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)}, [](auto& v) { return ad::add_bias(v[0], v[1]); });
  check({random_tensor({3, 3}, rng)}, [](auto& v) { return ad::scale(v[0], 0.7); });
  check({random_tensor({2, 3}, rng)}, [](auto& v) { return ad::mul_constant(v[0], {1, -2, 3, 0.5, 0, 2}); });
  check({random_tensor({2, 3}, rng)}, [](auto& v) { return ad::sum(v[0]); });
  check({random_tensor({4, 4}, rng)}, [](auto& v) {
    Rng fixed(5);
    return ad::dropout(v[0], 0.3, fixed);
  });
  check({random_tensor({3, 5}, rng, 2.0)}, [](auto& v) { return ad::softmax_rows(v[0]); });
  check({random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)},
        [](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); });
  check({random_tensor({4, 5}, rng, 2.0)}, [](auto& v) { return ad::gelu(v[0]); });
  check({random_tensor({4, 3}, rng)}, [](auto& v) { return ad::embedding_gather(v[0], {0, 2, 2, 3}); });
  check({random_tensor({2, 3}, rng), random_tensor({3, 3}, rng)},
        [](auto& v) { return ad::slice_rows(ad::concat_rows<double>({v[0], v[1]}), 1, 4); });
  check({positive({3, 4})}, [](auto& v) { return ad::cross_entropy(v[0], {1, 3, 0}, {1.0, 0.5, 2.0}, 3.0); });
  check({random_tensor({6, 4}, rng)}, [](auto& v) { return ad::to_heads(v[0], 3, 2, 2); });
  check({random_tensor({4, 3, 2}, rng)}, [](auto& v) { return ad::from_heads(v[0], 3, 2, 2); });
  check({random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)},
        [](auto& v) { return ad::batched_matmul(v[0], v[1], true); });
  check({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)},
        [](auto& v) { return ad::batched_matmul(v[0], v[1], false); });
  const double model = testing::model_gradient_error(7);
  const double secs = seconds_since(t0);
  return {worst <= kGradTol && model <= kGradTol && secs < kGradSeconds,
          "ops " + fmt("%.2e", worst) + ", loss " + fmt("%.2e", model) + ", " + fmt("%.1fs", secs)};
}

// 2 ------------------------------------------------------------------------
Outcome mask_law() {
  const auto t0 = Clock::now();
  Rng rng = make_stream(0, "acceptance.mask");
  const std::size_t draws = 1000000;
  std::vector<double> zeros(3, 0.0);
  double all_ones = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    const auto m = sample_mask(3, rng);
    for (std::size_t j = 0; j < 3; ++j) zeros[j] += m[j] == 0;
    all_ones += m[0] && m[1] && m[2];
  }
  double worst = 0.0;
  for (double z : zeros) worst = std::max(worst, std::abs(z / draws - 0.5));
  const double ones = all_ones / draws;
  const double secs = seconds_since(t0);
  return {worst <= kMaskTol && std::abs(ones - 0.25) <= kMaskTol && secs < kMaskSeconds,
          "max|P(m=0)-0.5| " + fmt("%.4f", worst) + ", P(all ones) " + fmt("%.4f", ones) + ", " + fmt("%.1fs", secs)};
}

// 3 ------------------------------------------------------------------------
Outcome histogram_bound() {
  const auto t0 = Clock::now();
  const auto density = [](double u) { return 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * u); };
  bool all = true;
  double tv10 = 0.0, tv50 = 0.0;
  std::string detail;
  for (std::size_t L : {5u, 10u, 25u, 50u}) {
    const auto r = oracle::prop1_bound_check(density, std::numbers::pi, uniform_grid(L));
    all = all && r.holds;
    if (L == 10) tv10 = r.measured_tv;
    if (L == 50) tv50 = r.measured_tv;
    detail += "L=" + std::to_string(L) + " " + fmt("%.5f", r.measured_tv) + "<=" + fmt("%.5f", r.bound) + "; ";
  }
  const double secs = seconds_since(t0);
  const bool shrinks = tv50 <= kBoundShrink * tv10;
  return {all && shrinks && secs < kBoundSeconds, detail + "ratio " + fmt("%.3f", tv50 / tv10) + ", " + fmt("%.1fs", secs)};
}

// 4 ------------------------------------------------------------------------
Outcome oracle_recovery() {
  const auto t0 = Clock::now();
  const auto joint = testing::binary_oracle_joint();
  const auto table = testing::sample_joint(joint, 50000, 4);
  const auto model = fit<float>(table, oracle_config(), 4);
  const double cond = max_conditional_tv(model, joint);
  const auto synth = synthesize(model, SynthesisConfig{100000, 1.0, 4});
  const double joint_tv = oracle::tv(testing::joint_frequencies(synth.table, joint), joint.probs());
  const double secs = seconds_since(t0);
  return {cond <= kOracleTv && joint_tv <= kOracleTv && secs < kOracleSeconds,
          "max conditional TV " + fmt("%.4f", cond) + ", joint TV " + fmt("%.4f", joint_tv) + ", " + fmt("%.0fs", secs)};
}

// 5 ------------------------------------------------------------------------
Outcome missing_training() {
  const auto t0 = Clock::now();
  const auto joint = testing::binary_oracle_joint();
  const auto table = testing::sample_joint(joint, 50000, 4);
  Rng rng = make_stream(5, "corrupt");
  const auto corrupted = corrupt_mcar(table, 0.3, rng);
  const auto model = fit<float>(corrupted, oracle_config(), 5);
  const double cond = max_conditional_tv(model, joint);
  const double secs = seconds_since(t0);
  return {cond <= kMissingTv && secs < kMissingSeconds,
          "missing " + fmt("%.3f", static_cast<double>(corrupted.missing_count()) / 150000.0) + ", max conditional TV " +
              fmt("%.4f", cond) + ", " + fmt("%.0fs", secs)};
}

// 6 ------------------------------------------------------------------------
Table gaussian_pair(std::size_t n, double rho, std::uint64_t seed) {
  const Schema s{{"x", ColumnKind::Continuous, {}}, {"y", ColumnKind::Continuous, {}}};
  Rng rng = make_stream(seed, "gaussian-pair");
  std::vector<double> v(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = standard_normal(rng);
    v[i * 2] = x;
    v[i * 2 + 1] = rho * x + std::sqrt(1 - rho * rho) * standard_normal(rng);
  }
  return Table(s, n, v);
}

Outcome temperature() {
  // Argmax invariance, checked on the tempered probabilities themselves.
  Rng rng(6);
  int argmax_failures = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> z(8);
    for (auto& v : z) v = 4.0 * standard_normal(rng);
    const auto best = std::max_element(z.begin(), z.end()) - z.begin();
    for (double tau : {0.01, 0.5, 1.0, 2.0, 3.0, 100.0, 1e6}) {
      const auto pr = detail::tempered_probabilities<double>(z, tau);
      if (std::max_element(pr.begin(), pr.end()) - pr.begin() != best) ++argmax_failures;
    }
  }

  // Uniform bins at a huge temperature.
  const Schema one{{"x", ColumnKind::Continuous, {}}};
  std::vector<double> v(5000);
  for (auto& x : v) x = std::exp(standard_normal(rng));
  ModelConfig cfg = oracle_config();
  cfg.bins = 10;
  cfg.epochs = 20;
  const auto single = fit<float>(Table(one, v.size(), v), cfg, 6);
  const auto hot = synthesize(single, SynthesisConfig{100000, 1e6, 6});
  std::vector<double> freq(10, 0.0);
  for (int y : hot.labels.data) freq[static_cast<std::size_t>(y - 1)] += 1e-5;
  double uniform_dev = 0.0;
  for (double f : freq) uniform_dev = std::max(uniform_dev, std::abs(f - 0.1));

  // DCR against temperature on a correlated continuous toy.
  const auto real = gaussian_pair(2000, 0.9, 6);
  cfg.bins = 20;
  cfg.epochs = 60;
  std::string dcr_detail;
  bool monotone = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto model = fit<float>(real, cfg, 100 + seed);
    double prev = -1.0;
    for (double tau : {1.0, 2.0, 3.0}) {
      const double d = dcr(real, synthesize(model, SynthesisConfig{2000, tau, seed}).table);
      monotone = monotone && d >= prev;
      prev = d;
      dcr_detail += fmt("%.4f", d) + (tau < 3.0 ? "," : "");
    }
    dcr_detail += seed < 3 ? " | " : "";
  }
  return {argmax_failures == 0 && uniform_dev <= kUniformTol && monotone,
          "argmax failures " + std::to_string(argmax_failures) + ", max bin deviation " + fmt("%.4f", uniform_dev) +
              ", DCR " + dcr_detail};
}

// 7 ------------------------------------------------------------------------
Outcome rubin() {
  const auto t0 = Clock::now();
  ModelConfig cfg = oracle_config();
  cfg.bins = 20;
  cfg.epochs = 100;
  cfg.batch_size = 256;
  const std::size_t n = 1000, M = 10, seeds = 100;
  int covered = 0;
  double bias = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto complete = gaussian_pair(n, 0.8, 1000 + seed);
    Rng rng = make_stream(seed, "corrupt");
    const auto mar = corrupt_mar_detailed(complete, 0.3, MarOptions{1, 1.0}, rng);
    const std::size_t target = 1 - mar.anchors[0];
    const auto model = fit<float>(mar.table, cfg, seed);
    const auto pool = multiple_impute(model, mar.table, M, 1.0, seed);
    const auto r = rubin_evaluate(pool, complete, target);
    covered += r.covered ? 1 : 0;
    bias += r.bias / static_cast<double>(seeds);
  }
  const double coverage = covered / static_cast<double>(seeds);
  const double secs = seconds_since(t0);
  return {coverage >= kCoverageLo && coverage <= kCoverageHi && bias < kBiasMax && secs < kRubinSeconds,
          "coverage " + fmt("%.2f", coverage) + ", mean bias " + fmt("%.4f", bias) + ", " + fmt("%.0fs", secs)};
}

// 8 ------------------------------------------------------------------------
Outcome round_trips() {
  const auto t0 = Clock::now();
  const auto real = gaussian_pair(3000, 0.7, 8);
  bool nodes_exact = true;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto col = real.observed_column(j);
    const auto cdf = EmpiricalCdf::fit(col);
    for (double x : cdf.nodes()) nodes_exact = nodes_exact && cdf.inverse(cdf.eval(x)) == x;
  }
  ModelConfig cfg = oracle_config();
  cfg.epochs = 10;
  const auto model = fit<float>(real, cfg, 8);
  const auto synth = synthesize(model, SynthesisConfig{10000, 1.0, 8});
  std::size_t outside = 0;
  for (std::size_t j = 0; j < 2; ++j) {
    const auto col = real.observed_column(j);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    for (std::size_t i = 0; i < synth.table.rows(); ++i)
      outside += synth.table.value(i, j) < *lo || synth.table.value(i, j) > *hi;
  }
  const auto relabeled = discretize(synth.table, model.cdfs, model.grid);
  std::size_t mismatched = 0;
  for (std::size_t k = 0; k < relabeled.data.size(); ++k) mismatched += relabeled.data[k] != synth.labels.data[k];
  const double secs = seconds_since(t0);
  return {nodes_exact && outside == 0 && mismatched == 0 && secs < kRangeSeconds,
          std::string("nodes exact ") + (nodes_exact ? "yes" : "no") + ", outside range " + std::to_string(outside) +
              ", relabel mismatches " + std::to_string(mismatched) + ", " + fmt("%.1fs", secs)};
}

// 9 ------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto table = gaussian_pair(500, 0.5, 9);
  ModelConfig cfg = oracle_config();
  cfg.epochs = 5;
  std::string ckpt[2], csv[2];
  for (int k = 0; k < 2; ++k) {
    const auto model = fit<float>(table, cfg, 9);
    std::ostringstream c, s;
    save_checkpoint(c, model);
    write_csv(s, synthesize(model, SynthesisConfig{300, 1.0, 9}).table);
    ckpt[k] = c.str();
    csv[k] = s.str();
  }
  const bool lib = ckpt[0] == ckpt[1] && csv[0] == csv[1];

  // The same through the command-line tool.
  const fs::path dir = fs::temp_directory_path() / "macode-acceptance-9";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_csv((dir / "train.csv").string(), table);
  {
    std::ofstream(dir / "schema.json") << schema_to_json(table.schema()).dump();
    auto j = config_to_json(cfg);
    j["train_csv"] = "train.csv";
    j["schema"] = "schema.json";
    j["checkpoint"] = "model.ckpt";
    j["seed"] = 9;
    std::ofstream(dir / "fit.json") << j.dump();
  }
  bool cli = true;
  std::string files[2][2];
  for (int k = 0; k < 2; ++k) {
    const std::string ck = (dir / ("m" + std::to_string(k) + ".ckpt")).string();
    const std::string out = (dir / ("s" + std::to_string(k) + ".csv")).string();
    const std::string fit_cmd = std::string(MACODE_CLI) + " fit --config " + (dir / "fit.json").string() +
                                " --checkpoint " + ck + " 2>/dev/null";
    const std::string gen_cmd =
        std::string(MACODE_CLI) + " generate --checkpoint " + ck + " -n 300 --seed 9 --out " + out;
    cli = cli && std::system(fit_cmd.c_str()) == 0 && std::system(gen_cmd.c_str()) == 0;
    files[k][0] = slurp(ck);
    files[k][1] = slurp(out);
  }
  cli = cli && !files[0][0].empty() && files[0][0] == files[1][0] && files[0][1] == files[1][1];
  fs::remove_all(dir);
  return {lib && cli, std::string("library ") + (lib ? "identical" : "differs") + ", cli " + (cli ? "identical" : "differs")};
}

// 10 -----------------------------------------------------------------------
Outcome metric_sanity() {
  const Schema mixed{{"x", ColumnKind::Continuous, {}}, {"c", ColumnKind::Categorical, {"a", "b", "c"}}};
  Rng rng(10);
  std::vector<double> v;
  for (int i = 0; i < 400; ++i) v.insert(v.end(), {standard_normal(rng), 1.0 + static_cast<double>(rng() % 3)});
  const Table t(mixed, 400, v);
  const auto r = evaluate(t, t);
  const double zero = std::max({*r.kl, *r.gof_ks, *r.gof_chi2, *r.mmd, *r.wd, *r.dcr});

  const Schema cat{{"c", ColumnKind::Categorical, {"A", "B"}}};
  const double kl = kl_marginal(Table(cat, 2, std::vector<double>{1, 1}), Table(cat, 2, std::vector<double>{1, 2}));
  // Closed form with the 1e-6 cell smoothing.
  const double eps = 1e-6, p1 = (1 + eps) / (1 + 2 * eps), p2 = eps / (1 + 2 * eps);
  const double kl_expected = p1 * std::log(p1 / 0.5) + p2 * std::log(p2 / 0.5);

  const Schema one{{"x", ColumnKind::Continuous, {}}};
  auto col = [&](std::vector<double> x) { return Table(one, x.size(), x); };
  const double ks = *gof(col({1, 2, 3, 4}), col({1, 2, 3, 100})).ks;
  const double wd = wasserstein1(col({0, 1}), col({0, 3}));

  const bool ok = zero <= kMetricTol && std::abs(kl - kl_expected) <= kMetricTol &&
                  std::abs(kl - std::log(2.0)) <= kMetricTol + 2 * eps * (1 - std::log(eps)) && std::abs(ks - 0.25) <= kMetricTol &&
                  std::abs(wd - 1.0) <= kMetricTol;
  return {ok, "identical-table max " + fmt("%.2e", zero) + ", KL " + fmt("%.7f", kl) + ", KS " + fmt("%.6f", ks) +
                  ", WD " + fmt("%.6f", wd)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradients},
      {"mask law", mask_law},
      {"histogram TV bound", histogram_bound},
      {"oracle conditional recovery", oracle_recovery},
      {"training with missing cells", missing_training},
      {"temperature contract", temperature},
      {"multiple-imputation calibration", rubin},
      {"round trips and ranges", round_trips},
      {"determinism", determinism},
      {"metric sanity", metric_sanity},
  };
  std::size_t only = 0;
  for (int a = 1; a < argc; ++a) {
    if (std::strcmp(argv[a], "--only") == 0 && a + 1 < argc) {
      only = static_cast<std::size_t>(std::atoi(argv[++a]));
    } else {
      std::cerr << "usage: acceptance [--only N]\n";
      return 2;
    }
  }
  if (only > criteria.size()) {
    std::cerr << "no criterion " << only << '\n';
    return 2;
  }
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only && only != k + 1) continue;
    Outcome o;
    try {
      o = criteria[k].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (k + 1) << ". " << criteria[k].name << ": " << o.detail
              << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
