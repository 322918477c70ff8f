#include "wpfs/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "wpfs/metrics.hpp"

namespace wpfs {

namespace {
// Independent PCG streams per concern so that, e.g., changing the embedding
// method cannot shift the parameter-initialisation draws.
constexpr std::uint64_t kStreamEmbed = 0xE0BED;
constexpr std::uint64_t kStreamInit = 0x1217;
constexpr std::uint64_t kStreamTrain = 0x7124172;
}  // namespace

void RunConfig::validate() const {
    if (lambda < 0.0) throw ValueError("RunConfig: lambda must be non-negative");
    if (embed_size == 0) throw ValueError("RunConfig: embed_size must be positive");
    if (batch_size == 0) throw ValueError("RunConfig: batch_size must be positive");
    if (max_iterations <= 0) throw ValueError("RunConfig: max_iterations must be positive");
    if (patience <= 0) throw ValueError("RunConfig: patience must be positive");
    if (clip_norm <= 0.0) throw ValueError("RunConfig: clip_norm must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ValueError("RunConfig: dropout must lie in [0, 1)");
    if (!(schedule.lr_start >= schedule.lr_end) || !(schedule.lr_end > 0.0))
        throw ValueError("RunConfig: schedule requires lr_start >= lr_end > 0");
    if (tau <= 0.0 || tau >= 1.0) throw ValueError("RunConfig: tau must lie in (0, 1)");
    if (classifier_tail.empty()) throw ValueError("RunConfig: classifier_tail must be non-empty");
}

RunResult train_run(const Dataset& data, const Split& split, const RunConfig& cfg,
                    const std::string& save_model_path) {
    cfg.validate();
    tune_allocator_for_training();
    const auto started = std::chrono::steady_clock::now();

    const Matrix x_train_raw = take_rows(data.x, split.train);
    const std::vector<int> y_train = take_labels(data.y, split.train);
    const std::vector<int> y_val = take_labels(data.y, split.val);
    const std::vector<int> y_test = take_labels(data.y, split.test);

    const ZscoreStats stats = zscore_fit(x_train_raw);
    const Matrix x_train = zscore_apply(stats, x_train_raw);
    const Matrix x_val = zscore_apply(stats, take_rows(data.x, split.val));
    const Matrix x_test = zscore_apply(stats, take_rows(data.x, split.test));

    // Embeddings see only the raw training rows (never validation or test).
    EmbeddingMatrix embedding;
    if (cfg.use_wpn || cfg.use_spn) {
        Rng embed_rng(cfg.seed, kStreamEmbed);
        embedding = compute_embedding(x_train_raw, cfg.embed_method, cfg.embed_size,
                                      cfg.embed_preprocessing, cfg.nmf_iters, embed_rng);
        embedding.e.ensure_finite("embedding");
    }

    WpfsArch arch;
    arch.feature_count = data.x.cols();
    arch.class_count = data.class_count;
    arch.embed_size = cfg.use_wpn || cfg.use_spn ? embedding.size : cfg.embed_size;
    arch.first_hidden = cfg.first_hidden;
    arch.classifier_tail = cfg.classifier_tail;
    arch.aux_hidden = cfg.aux_hidden;
    arch.use_wpn = cfg.use_wpn;
    arch.use_spn = cfg.use_spn;
    arch.dropout = cfg.dropout;
    arch.bn_momentum = cfg.bn_momentum;
    WpfsModel model(arch, std::move(embedding));

    Rng init_rng(cfg.seed, kStreamInit);
    model.init_params(init_rng);

    const ClassWeights weights = class_weights(y_train, data.class_count);
    AdamwState optimizer(model.store(), cfg.adamw);
    Rng train_rng(cfg.seed, kStreamTrain);

    RunResult result;
    result.param_counts = model.parameter_counts();

    WpfsModel::Snapshot best_snapshot = model.snapshot();
    double best_val = std::numeric_limits<double>::infinity();
    long best_epoch = -1;
    long epoch = 0;
    long iterations = 0;
    long epochs_since_improvement = 0;

    std::vector<std::size_t> order(x_train.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    while (iterations < cfg.max_iterations) {
        const double lr = lr_at(cfg.schedule, epoch);
        train_rng.shuffle(order);

        double epoch_loss = 0.0;
        long epoch_steps = 0;
        for (std::size_t start = 0; start < order.size() && iterations < cfg.max_iterations;
             start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, order.size());
            if (stop - start < 2) continue;  // batch norm needs at least two rows

            Matrix xb = Matrix::uninitialized(stop - start, x_train.cols());
            std::vector<int> yb(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const double* src = x_train.row(order[i]);
                std::copy(src, src + x_train.cols(), xb.row(i - start));
                yb[i - start] = y_train[order[i]];
            }

            Tape tape;
            Tape::Var xv = tape.constant(std::move(xb));
            WpfsModel::FirstLayer first = model.first_layer(tape, Mode::train, train_rng);
            Tape::Var probs = model.classifier_forward(tape, xv, first, Mode::train, train_rng);
            Tape::Var loss = model.loss(tape, probs, first, yb, weights, cfg.lambda);
            const double loss_value = tape.scalar(loss);
            if (!std::isfinite(loss_value))
                throw DivergenceError("training loss became non-finite at iteration " +
                                          std::to_string(iterations + 1),
                                      result.curves);

            model.store().zero_grads();
            tape.backward(loss);
            clip_gradients(model.store(), cfg.clip_norm);
            optimizer.step(model.store(), lr);

            epoch_loss += loss_value;
            ++epoch_steps;
            ++iterations;
        }

        Rng eval_rng(0);
        const Matrix val_probs = model.forward_values(x_val, Mode::eval, eval_rng);
        const double val_loss = weighted_ce_value(val_probs, y_val, weights.w);
        if (!std::isfinite(val_loss))
            throw DivergenceError("validation loss became non-finite after epoch " +
                                      std::to_string(epoch),
                                  result.curves);

        result.curves.push_back({iterations,
                                 epoch_steps > 0 ? epoch_loss / static_cast<double>(epoch_steps)
                                                 : 0.0,
                                 val_loss});

        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = model.snapshot();
            epochs_since_improvement = 0;
        } else {
            ++epochs_since_improvement;
        }
        ++epoch;
        if (epochs_since_improvement >= cfg.patience) break;
    }

    model.restore(best_snapshot);

    Rng eval_rng(0);
    const Matrix test_probs = model.forward_values(x_test, Mode::eval, eval_rng);
    result.test_bacc = balanced_accuracy(y_test, argmax_rows(test_probs), data.class_count);
    result.best_val_loss = best_val;
    result.best_epoch = best_epoch;
    result.epochs = epoch;
    result.iterations = iterations;
    result.importance = model.feature_importance(cfg.tau);

    const Matrix train_probs = model.forward_values(x_train, Mode::eval, eval_rng);
    result.train_ce = weighted_ce_value(train_probs, y_train, weights.w);
    result.sparsity_sum = 0.0;
    if (cfg.use_spn)
        for (double s : result.importance.s) result.sparsity_sum += s;

    if (!save_model_path.empty()) model.save(save_model_path);

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace wpfs
