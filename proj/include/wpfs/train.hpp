#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpfs/cross_validation.hpp"
#include "wpfs/data.hpp"
#include "wpfs/embeddings.hpp"
#include "wpfs/errors.hpp"
#include "wpfs/model.hpp"

namespace wpfs {

/// Every hyper-parameter of one training run. Defaults are the full-size
/// settings; the synthetic desk-scale tests shrink widths and budgets.
struct RunConfig {
    double lambda = 3e-5;

    EmbedMethod embed_method = EmbedMethod::nmf;
    std::size_t embed_size = 50;
    EmbedPreprocessing embed_preprocessing = EmbedPreprocessing::minmax;
    std::size_t nmf_iters = 1000;

    std::size_t batch_size = 8;
    long max_iterations = 10000;
    long patience = 200;  // epochs without validation improvement
    double clip_norm = 2.5;
    ScheduleConfig schedule;  // 3e-3 -> 3e-4 over 500 epochs
    AdamwConfig adamw;        // betas 0.9/0.999, eps 1e-8, weight decay 1e-4
    double dropout = 0.2;
    double bn_momentum = 0.1;
    double tau = 0.95;

    bool use_wpn = true;
    bool use_spn = true;
    std::size_t first_hidden = 100;
    std::vector<std::size_t> classifier_tail = {100, 100, 10};
    std::vector<std::size_t> aux_hidden = {100, 100, 100};

    std::uint64_t seed = 0;

    void validate() const;
};

struct RunResult {
    double test_bacc = 0.0;
    double best_val_loss = 0.0;
    long best_epoch = 0;
    long epochs = 0;
    long iterations = 0;
    /// One point per epoch: iterations completed, mean training objective of
    /// the epoch, validation weighted cross-entropy.
    std::vector<DivergenceError::CurvePoint> curves;
    ImportanceVector importance;
    ParameterCounts param_counts;
    /// Diagnostics at the selected snapshot, for the lambda-vs-loss-ratio
    /// report: weighted CE over the training split and sum of the gates.
    double train_ce = 0.0;
    double sparsity_sum = 0.0;
    double wall_seconds = 0.0;
};

/// Trains one model on one split: embeddings from the raw training rows,
/// Z-score normalisation fitted on the training rows, minibatch AdamW with
/// gradient clipping and the linear learning-rate schedule, validation
/// weighted cross-entropy once per epoch, snapshot of the best-validation
/// parameters, early stopping on `patience` epochs. Returns the snapshot's
/// test balanced accuracy, curves, importance and parameter counts.
/// A non-finite loss raises DivergenceError carrying the curves so far.
/// When `save_model_path` is non-empty, the selected model is persisted there.
RunResult train_run(const Dataset& data, const Split& split, const RunConfig& cfg,
                    const std::string& save_model_path = "");

}  // namespace wpfs
