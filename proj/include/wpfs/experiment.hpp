#pragma once

#include <functional>
#include <string>

#include "wpfs/train.hpp"

#include "json.hpp"

namespace wpfs {

/// Method names accepted by the cv/sweep commands. `mlp` turns both
/// auxiliary networks off (and the sparsity term with them), `wpfs-nospn`
/// keeps only the weight predictor, `wpfs-nowpn` keeps only the gates.
struct MethodFlags {
    bool use_wpn = true;
    bool use_spn = true;
    bool force_lambda_zero = false;
};
MethodFlags method_flags(const std::string& method);

struct ExperimentConfig {
    RunConfig run;
    std::string method = "wpfs";
    std::size_t folds = 5;
    std::size_t repeats = 5;
    double val_fraction = 0.1;
    std::size_t jobs = 1;
    bool save_models = false;
};

struct ExperimentOutcome {
    nlohmann::json manifest;
    std::vector<RunResult> runs;  // in (repeat, fold) order
    bool any_aborted = false;
};

/// Runs the full repeated cross-validation for one method, writes
/// manifest.json, per-run curve and importance CSVs and the best model under
/// `out_dir`, and returns the manifest. Runs execute `jobs` at a time; each
/// owns its model and rng, seeded from (seed, repeat, fold) only, so the
/// outputs are independent of scheduling. A NaN-aborted run is recorded in
/// the manifest (aborted=true) instead of stopping the experiment.
ExperimentOutcome run_cv_experiment(const Dataset& data, const ExperimentConfig& cfg,
                                    std::uint64_t dataset_digest_value,
                                    const std::string& out_dir);

/// One cv experiment per lambda (subdirectory lambda_<value>), plus
/// sweep_summary.csv (lambda, mean_bacc, std_bacc, mean_selected_fraction,
/// mean_train_ce, mean_sparsity_loss, sparsity_ce_ratio) and a per-lambda
/// binned histogram of importance scores aggregated over runs.
ExperimentOutcome run_sweep(const Dataset& data, const ExperimentConfig& base,
                            const std::vector<double>& lambdas,
                            std::uint64_t dataset_digest_value, const std::string& out_dir);

std::string format_lambda(double lambda);

}  // namespace wpfs
