#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wpfs/autograd.hpp"
#include "wpfs/rng.hpp"

namespace wpfs {

/// Forward-pass mode.
///  train:  batch-statistics normalisation with running-stat updates,
///          dropout masks sampled from the rng.
///  eval:   running statistics, no dropout; a pure function of the inputs.
///  frozen: running statistics without updates, dropout masks sampled from
///          the rng. Re-seeding the rng before each call makes the pass a
///          deterministic function of the parameters, which is what the
///          finite-difference gradient checks require.
enum class Mode { train, eval, frozen };

struct LayerSpec {
    std::size_t width = 0;
    bool batch_norm = true;
    double dropout = 0.2;
    ActKind act = ActKind::leaky_relu;
};

struct MlpConfig {
    std::size_t input_width = 0;
    std::vector<LayerSpec> hidden;
    std::size_t output_width = 0;
    std::optional<ActKind> output_activation;
    double leaky_slope = 0.01;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

/// Running statistics of one batch-normalisation layer. Learnable scale and
/// shift live in the ParameterStore; these buffers are state, snapshotted
/// together with the parameters for early stopping and persisted with models.
struct BnBuffers {
    Matrix running_mean;  // 1 x width
    Matrix running_var;   // 1 x width
};

/// Feed-forward stack: per hidden layer linear -> batch norm (optional) ->
/// dropout (inverted scaling) -> activation, then a linear output head with
/// an optional activation.
class Mlp {
public:
    Mlp(MlpConfig cfg, std::string prefix);

    /// Adds this network's slots to the store, in forward order. Must be
    /// called exactly once, before any forward pass.
    void register_params(ParameterStore& store);

    /// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    /// batch-norm scale starts at 1, shift at 0.
    void init_params(ParameterStore& store, Rng& rng);

    Tape::Var forward(Tape& tape, ParameterStore& store, Tape::Var x, Mode mode, Rng& rng);

    const MlpConfig& config() const { return cfg_; }
    const std::string& prefix() const { return prefix_; }
    std::vector<BnBuffers>& bn_buffers() { return bn_; }
    const std::vector<BnBuffers>& bn_buffers() const { return bn_; }

    /// Learnable parameter count, computed from the configuration alone.
    std::size_t param_count() const;

private:
    MlpConfig cfg_;
    std::string prefix_;
    bool registered_ = false;
    std::vector<std::size_t> weight_slots_;  // one per layer incl. the head
    std::vector<std::size_t> bias_slots_;
    std::vector<std::size_t> gamma_slots_;  // batch-norm layers only, hidden index
    std::vector<std::size_t> beta_slots_;
    std::vector<BnBuffers> bn_;
};

/// Batch normalisation as used by Mlp, exposed for the model's first layer.
/// In train mode updates the running buffers (unbiased variance, momentum
/// convention new = (1-m)*old + m*batch).
Tape::Var batch_norm(Tape& tape, ParameterStore& store, std::size_t gamma_slot,
                     std::size_t beta_slot, BnBuffers& buffers, Tape::Var x, Mode mode,
                     double eps, double momentum);

struct ClassWeights {
    std::vector<double> w;  // one positive weight per class
};

/// Balanced-heuristic weights w_c = N / (C * n_c). Every class in [0, C)
/// must appear in y.
ClassWeights class_weights(const std::vector<int>& y, std::size_t class_count);

struct AdamwConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
class AdamwState {
public:
    AdamwState(const ParameterStore& store, AdamwConfig cfg);

    void step(ParameterStore& store, double lr);
    long step_count() const { return t_; }

private:
    AdamwConfig cfg_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
};

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the applied scale (1 when nothing was clipped).
double clip_gradients(ParameterStore& store, double max_norm);

struct ScheduleConfig {
    double lr_start = 3e-3;
    double lr_end = 3e-4;
    long decay_epochs = 500;
};

/// Linear interpolation from lr_start to lr_end over decay_epochs, constant
/// at lr_end afterwards.
double lr_at(const ScheduleConfig& s, long epoch);

}  // namespace wpfs
