// funbuffer: distance-indexed exposure effects on survival outcomes with a
// data-informed buffer distance.

#include <CLI11.hpp>

#include "funbuffer/cli.hpp"

namespace {

void add_common(CLI::App* cmd, funbuffer::cli::RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "master RNG seed")->envname("FUNBUFFER_SEED");
  cmd->add_option("--threads", cfg.threads, "worker threads (0 = logical cores)")
      ->envname("FUNBUFFER_THREADS");
  cmd->add_option("--out", cfg.out_dir, "output directory")->envname("FUNBUFFER_OUT");
  cmd->add_option("--variant", cfg.variant,
                  "estimator: spline|lasso|gbridge|spline-lasso|spline-gbridge")
      ->envname("FUNBUFFER_VARIANT");
  cmd->add_option("--gamma", cfg.gamma, "bridge exponent in (0,1)");
  cmd->add_option("--grid-l1", cfg.grid_n1, "lambda1 grid size")->envname("FUNBUFFER_GRID_L1");
  cmd->add_option("--grid-l2", cfg.grid_n2, "lambda2 grid size")->envname("FUNBUFFER_GRID_L2");
  cmd->add_option("--grid-l1-range", [&cfg](const std::vector<std::string>& vals) {
        return CLI::detail::lexical_cast(vals[0], cfg.grid_l1_lo) &&
               CLI::detail::lexical_cast(vals[1], cfg.grid_l1_hi);
      },
      "lambda1 range multipliers (lo hi)")
      ->expected(2);
  cmd->add_option("--grid-l2-range", [&cfg](const std::vector<std::string>& vals) {
        return CLI::detail::lexical_cast(vals[0], cfg.grid_l2_lo) &&
               CLI::detail::lexical_cast(vals[1], cfg.grid_l2_hi);
      },
      "lambda2 range multipliers (lo hi)")
      ->expected(2);
  cmd->add_flag("--warm-start,!--cold-start", cfg.warm_start,
                "warm start along the lambda1 path (default on)");
  cmd->add_option("--n-starts", cfg.n_starts, "initial points per fit");
}

void add_data(CLI::App* cmd, funbuffer::cli::RunConfig& cfg) {
  cmd->add_option("--data", cfg.data_path, "input CSV")->required()->envname("FUNBUFFER_DATA");
  cmd->add_option("--time-col", cfg.schema.time_col, "time column name");
  cmd->add_option("--event-col", cfg.schema.event_col, "event column name");
  cmd->add_option("--strata-col", cfg.schema.strata_col, "strata column name (used if present)");
  cmd->add_option("--exposure-prefix", cfg.schema.exposure_prefix, "exposure column prefix");
  cmd->add_option("--covariates", cfg.schema.covariate_cols, "explicit covariate columns");
}

void add_basis(CLI::App* cmd, funbuffer::cli::RunConfig& cfg) {
  cmd->add_option("--Mn", cfg.mn, "inner knot count")->envname("FUNBUFFER_MN");
  cmd->add_option("--degree", cfg.degree, "spline degree")->envname("FUNBUFFER_DEGREE");
  cmd->add_option("--domain", [&cfg](const std::vector<std::string>& vals) {
        const auto colon = vals[0].find(':');
        if (colon == std::string::npos) return false;
        double lo, hi;
        if (!CLI::detail::lexical_cast(vals[0].substr(0, colon), lo)) return false;
        if (!CLI::detail::lexical_cast(vals[0].substr(colon + 1), hi)) return false;
        cfg.domain_lo = lo;
        cfg.domain_hi = hi;
        return true;
      },
      "basis domain as lo:hi (default: radius range)");
  cmd->add_option("--knots", cfg.knots, "explicit inner knots (physical units)");
  cmd->add_option("--hr-increment", cfg.hr_increment, "exposure increment for hazard ratios");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"penalized functional linear Cox regression with an estimated buffer distance"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags override");

  funbuffer::cli::RunConfig cfg;

  auto* fit = app.add_subcommand("fit", "two-stage fit: tuned sparse fit, region selection, refit");
  add_data(fit, cfg);
  add_basis(fit, cfg);
  add_common(fit, cfg);

  auto* sim = app.add_subcommand("simulate", "scenario Monte-Carlo study");
  sim->add_option("--scenario", cfg.scenario, "I | II | III")->envname("FUNBUFFER_SCENARIO");
  sim->add_option("--n", cfg.n, "sample size per replication");
  sim->add_option("--reps", cfg.reps, "replication count")->envname("FUNBUFFER_REPS");
  sim->add_option("--censor-fraction", cfg.censor_fraction, "target censoring fraction");
  sim->add_flag("--coverage", cfg.coverage_dump, "also run the truth-region coverage study");
  add_common(sim, cfg);

  auto* tune = app.add_subcommand("tune", "BIC grid evaluation only");
  add_data(tune, cfg);
  add_basis(tune, cfg);
  add_common(tune, cfg);

  auto* inspect = app.add_subcommand("inspect", "print dataset summary as JSON");
  add_data(inspect, cfg);

  CLI11_PARSE(app, argc, argv);

  if (fit->parsed()) return funbuffer::cli::run_fit(cfg);
  if (sim->parsed()) return funbuffer::cli::run_simulate(cfg);
  if (tune->parsed()) return funbuffer::cli::run_tune(cfg);
  if (inspect->parsed()) return funbuffer::cli::run_inspect(cfg);
  return funbuffer::cli::kConfigError;
}
