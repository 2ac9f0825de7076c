// Command-line front end: fit, generate, impute, corrupt, evaluate.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "macode/cli.hpp"

namespace {

using macode::cli::Context;

int report(const std::string& command, const Context& ctx, const std::string& what, int code) {
  std::cerr << "macode " << command << ": ";
  if (!ctx.step.empty()) std::cerr << ctx.step << ": ";
  std::cerr << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked conditional density estimation for mixed-type tables"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "Train a model and write a checkpoint");
  std::string fit_config;
  macode::cli::FitOverrides fit_over;
  fit->add_option("--config", fit_config, "JSON configuration file")->required();
  fit->add_option("--epochs", fit_over.epochs, "Override the epoch count");
  fit->add_option("--seed", fit_over.seed, "Override the seed");
  fit->add_option("--checkpoint", fit_over.checkpoint, "Override the checkpoint path");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample synthetic rows");
  std::string gen_ckpt, gen_out = "-";
  std::size_t gen_n = 0;
  double gen_tau = 1.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required();
  gen->add_option("-n,--rows", gen_n, "Number of rows")->required();
  gen->add_option("--temperature", gen_tau, "Sampling temperature")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV, - for stdout")->capture_default_str();

  // impute
  auto* imp = app.add_subcommand("impute", "Multiple imputation of missing cells");
  std::string imp_ckpt, imp_csv, imp_dir;
  std::size_t imp_m = 10;
  double imp_tau = 1.0;
  std::uint64_t imp_seed = 0;
  std::optional<std::string> imp_complete;
  imp->add_option("--checkpoint", imp_ckpt, "Checkpoint file")->required();
  imp->add_option("--input", imp_csv, "CSV with missing cells")->required();
  imp->add_option("-M,--imputations", imp_m, "Number of completed tables")->capture_default_str();
  imp->add_option("--temperature", imp_tau, "Sampling temperature")->capture_default_str();
  imp->add_option("--seed", imp_seed, "Random seed")->capture_default_str();
  imp->add_option("--out-dir", imp_dir, "Output directory")->required();
  imp->add_option("--complete", imp_complete, "Ground-truth CSV for Rubin evaluation");

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Inject missing values");
  std::string cor_csv, cor_schema, cor_out, cor_mech = "mcar";
  macode::CorruptionOptions cor_opts;
  std::uint64_t cor_seed = 0;
  cor->add_option("--input", cor_csv, "Complete CSV")->required();
  cor->add_option("--schema", cor_schema, "Schema JSON")->required();
  cor->add_option("--mechanism", cor_mech, "mcar, mar, mnarl or mnarq")->capture_default_str();
  cor->add_option("--rate", cor_opts.rate, "Missingness rate")->capture_default_str();
  cor->add_option("--anchors", cor_opts.n_anchor, "Anchor columns for mar/mnarl");
  cor->add_option("--quantile", cor_opts.quantile, "Tail quantile for mnarq")->capture_default_str();
  cor->add_option("--subset", cor_opts.subset_fraction, "Column fraction for mnarq")->capture_default_str();
  cor->add_option("--seed", cor_seed, "Random seed")->capture_default_str();
  cor->add_option("--out", cor_out, "Output CSV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Fidelity, privacy and utility metrics as JSON");
  macode::cli::EvaluateInputs ev_in;
  ev->add_option("--real", ev_in.real_csv, "Real CSV")->required();
  ev->add_option("--synth", ev_in.synth_csv, "Synthetic CSV")->required();
  ev->add_option("--schema", ev_in.schema, "Schema JSON")->required();
  ev->add_option("--test", ev_in.test_csv, "Held-out CSV for the utility proxy");
  ev->add_option("--target", ev_in.target, "Target column for the utility proxy");
  ev->add_option("--out", ev_in.out, "Output JSON (default stdout)");

  auto* oracle = app.add_subcommand("oracle-check", "Run the oracle verification battery");
  oracle->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return macode::cli::kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  Context ctx;
  try {
    if (*fit) {
      macode::cli::run_fit(fit_config, fit_over, std::cerr, ctx);
    } else if (*gen) {
      macode::cli::run_generate(gen_ckpt, gen_n, gen_tau, gen_seed, gen_out, ctx);
    } else if (*imp) {
      macode::cli::run_impute(imp_ckpt, imp_csv, imp_m, imp_tau, imp_seed, imp_dir, imp_complete, ctx);
    } else if (*cor) {
      const auto mech = macode::parse_mechanism(cor_mech);
      if (!mech) throw macode::InvalidArgument("unknown mechanism '" + cor_mech + "'");
      cor_opts.mechanism = *mech;
      macode::cli::run_corrupt(cor_csv, cor_schema, cor_opts, cor_seed, cor_out, ctx);
    } else if (*ev) {
      macode::cli::run_evaluate(ev_in, ctx);
    } else if (*oracle) {
      return macode::cli::run_oracle_check(std::cout) ? macode::cli::kOk : macode::cli::kNumeric;
    }
  } catch (const macode::Error& e) {
    return report(command, ctx, e.what(), macode::cli::exit_code(e.category()));
  } catch (const nlohmann::json::exception& e) {
    return report(command, ctx, e.what(), macode::cli::kUsage);
  } catch (const std::filesystem::filesystem_error& e) {
    return report(command, ctx, e.what(), macode::cli::kUsage);
  }
  return macode::cli::kOk;
}
