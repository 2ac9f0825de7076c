#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "macode/checkpoint.hpp"
#include "macode/dataset.hpp"
#include "macode/error.hpp"
#include "macode/generate.hpp"
#include "macode/masking.hpp"
#include "macode/metrics.hpp"
#include "macode/model.hpp"
#include "macode/oracle.hpp"

namespace macode::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return kUsage;
    case ErrorCategory::Data: return kData;
    case ErrorCategory::Numeric: return kNumeric;
  }
  return kUsage;
}

/// Label of the step being executed, prefixed to error messages.
struct Context {
  std::string step;
};

// ---------------------------------------------------------------------------
// fit

struct FitConfig {
  std::string train_csv;
  std::string schema;
  std::string checkpoint;
  std::uint64_t seed = 0;
  ModelConfig model;
};

/// Reads a fit configuration. Paths are resolved against the directory of the
/// configuration file; unknown keys are errors.
inline FitConfig load_fit_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("configuration '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  FitConfig cfg;
  const std::vector<std::string> own{"train_csv", "schema", "checkpoint", "seed"};
  cfg.model = config_from_json(j, ModelConfig{}, own);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) throw ConfigError(std::string("configuration needs a string '") + key + "'");
    const std::filesystem::path p = j[key].get<std::string>();
    return (p.is_absolute() ? p : base / p).lexically_normal().string();
  };
  cfg.train_csv = resolve("train_csv");
  cfg.schema = resolve("schema");
  cfg.checkpoint = resolve("checkpoint");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  return cfg;
}

struct FitOverrides {
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint;
};

/// Trains on the configured CSV and writes a checkpoint. One JSON line per epoch
/// goes to `log`.
inline void run_fit(const std::string& config_path, const FitOverrides& ov, std::ostream& log, Context& ctx) {
  ctx.step = "reading configuration '" + config_path + "'";
  auto cfg = load_fit_config(config_path);
  if (ov.epochs) cfg.model.epochs = *ov.epochs;
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.checkpoint) cfg.checkpoint = *ov.checkpoint;
  cfg.model.validate();
  ctx.step = "reading schema '" + cfg.schema + "'";
  const auto schema = load_schema(cfg.schema);
  ctx.step = "reading '" + cfg.train_csv + "'";
  const auto table = load_csv(cfg.train_csv, schema);
  ctx.step = "training";
  const auto model = fit<float>(table, cfg.model, cfg.seed, [&](std::size_t epoch, double loss) {
    log << nlohmann::json{{"epoch", epoch}, {"loss", loss}}.dump() << '\n' << std::flush;
  });
  ctx.step = "writing checkpoint '" + cfg.checkpoint + "'";
  save_checkpoint(cfg.checkpoint, model);
}

// ---------------------------------------------------------------------------
// generate / impute

inline void write_table_or_header(std::ostream& out, const Schema& schema, const Synthesis& s, std::size_t n) {
  if (n > 0) {
    write_csv(out, s.table);
    return;
  }
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (j) out << ',';
    detail::write_csv_field(out, schema[j].name);
  }
  out << '\n';
}

/// Writes `n` synthetic rows as CSV to `out_path` ("-" for stdout).
inline void run_generate(const std::string& checkpoint, std::size_t n, double temperature, std::uint64_t seed,
                         const std::string& out_path, Context& ctx) {
  ctx.step = "reading checkpoint '" + checkpoint + "'";
  const auto model = load_checkpoint<float>(checkpoint);
  ctx.step = "generating";
  const auto synth = synthesize(model, SynthesisConfig{n, temperature, seed});
  ctx.step = "writing '" + out_path + "'";
  if (out_path == "-") {
    write_table_or_header(std::cout, model.schema, synth, n);
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + out_path + "'");
  write_table_or_header(out, model.schema, synth, n);
}

/// Writes imputed_<m>.csv for m = 1..M into `out_dir` and, when the complete
/// table is given, rubin.json with bias, coverage and width per continuous column.
inline void run_impute(const std::string& checkpoint, const std::string& corrupted_csv, std::size_t M,
                       double temperature, std::uint64_t seed, const std::string& out_dir,
                       const std::optional<std::string>& complete_csv, Context& ctx) {
  ctx.step = "reading checkpoint '" + checkpoint + "'";
  const auto model = load_checkpoint<float>(checkpoint);
  ctx.step = "reading '" + corrupted_csv + "'";
  const auto corrupted = load_csv(corrupted_csv, model.schema);
  ctx.step = "imputing";
  const auto pool = multiple_impute(model, corrupted, M, temperature, seed);
  ctx.step = "writing to '" + out_dir + "'";
  std::filesystem::create_directories(out_dir);
  for (std::size_t m = 0; m < pool.size(); ++m)
    save_csv((std::filesystem::path(out_dir) / ("imputed_" + std::to_string(m + 1) + ".csv")).string(), pool.tables[m]);
  if (!complete_csv) return;
  ctx.step = "reading '" + *complete_csv + "'";
  const auto complete = load_csv(*complete_csv, model.schema);
  if (complete.rows() != corrupted.rows()) throw SchemaMismatch("complete and corrupted tables differ in row count");
  ctx.step = "evaluating imputations";
  nlohmann::json report = nlohmann::json::object();
  for (std::size_t j = 0; j < model.schema.size(); ++j) {
    if (!model.schema[j].is_continuous()) continue;
    const auto r = rubin_evaluate(pool, complete, j);
    report[model.schema[j].name] = {{"bias", r.bias}, {"covered", r.covered}, {"width", r.width}};
  }
  std::ofstream out(std::filesystem::path(out_dir) / "rubin.json");
  out << report.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// corrupt / evaluate / oracle-check

/// Applies a missingness mechanism to a complete CSV.
inline void run_corrupt(const std::string& csv, const std::string& schema_path, const CorruptionOptions& opts,
                        std::uint64_t seed, const std::string& out_path, Context& ctx) {
  ctx.step = "reading schema '" + schema_path + "'";
  const auto schema = load_schema(schema_path);
  ctx.step = "reading '" + csv + "'";
  const auto table = load_csv(csv, schema);
  ctx.step = "corrupting";
  Rng rng = make_stream(seed, "corrupt");
  const auto out = corrupt(table, opts, rng);
  ctx.step = "writing '" + out_path + "'";
  save_csv(out_path, out);
}

struct EvaluateInputs {
  std::string real_csv;
  std::string synth_csv;
  std::string schema;
  std::optional<std::string> test_csv;
  std::optional<std::string> target;
  std::optional<std::string> out;
};

inline void run_evaluate(const EvaluateInputs& in, Context& ctx) {
  ctx.step = "reading schema '" + in.schema + "'";
  const auto schema = load_schema(in.schema);
  ctx.step = "reading '" + in.real_csv + "'";
  const auto real = load_csv(in.real_csv, schema);
  ctx.step = "reading '" + in.synth_csv + "'";
  const auto synth = load_csv(in.synth_csv, schema);
  std::optional<Table> test;
  std::optional<std::size_t> target;
  if (in.test_csv) {
    if (!in.target) throw InvalidArgument("--test requires --target");
    ctx.step = "reading '" + *in.test_csv + "'";
    test = load_csv(*in.test_csv, schema);
    target = real.column_index(*in.target);
  }
  ctx.step = "computing metrics";
  const auto report = evaluate(real, synth, EvaluateOptions{}, test ? &*test : nullptr, target);
  const std::string text = to_json(report).dump(2) + "\n";
  if (!in.out) {
    std::cout << text;
    return;
  }
  std::ofstream out(*in.out);
  if (!out) throw InvalidArgument("cannot write '" + *in.out + "'");
  out << text;
}

/// Prints the oracle verification table; returns true when every check passes.
inline bool run_oracle_check(std::ostream& out) {
  const auto results = oracle::run_oracle_checks();
  bool all = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(42) << r.name << r.detail << '\n';
    all = all && r.passed;
  }
  return all;
}

}  // namespace macode::cli
