#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "wpfs/matrix.hpp"
#include "wpfs/rng.hpp"

namespace wpfs {

/// Named parameter slots, each a value matrix plus a same-shape gradient
/// accumulator. One store backs all three WPFS networks so gradient clipping
/// and the optimiser see a single flat parameter list.
class ParameterStore {
public:
    struct Slot {
        std::string name;
        Matrix value;
        Matrix grad;
    };

    /// Registers a slot. Slot order is declaration order; persistence and the
    /// optimiser iterate in this order. Throws UsageError on duplicate names.
    std::size_t add(const std::string& name, Matrix value);

    bool contains(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    Slot& slot(std::size_t i) { return slots_[i]; }
    const Slot& slot(std::size_t i) const { return slots_[i]; }
    Slot& slot(const std::string& name) { return slots_[index_of(name)]; }
    const Slot& slot(const std::string& name) const { return slots_[index_of(name)]; }

    std::size_t count() const { return slots_.size(); }
    /// Total number of scalar parameters across all slots.
    std::size_t parameter_count() const;

    void zero_grads();
    double grad_l2_norm() const;

    /// Deep copies of all values, and restore (shapes must match).
    std::vector<Matrix> snapshot_values() const;
    void restore_values(const std::vector<Matrix>& values);

private:
    std::vector<Slot> slots_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class ActKind { leaky_relu, tanh_fn, sigmoid, softmax_rows };

/// Ordered record of executed primitives with enough context to replay the
/// chain rule backward. Nodes are appended strictly after their inputs, so
/// walking ids in reverse is a reverse topological order. A tape is consumed
/// by exactly one backward pass.
///
/// Constructed with recording=false the tape becomes a plain evaluator: ops
/// compute values but record no backward closures (used for eval-mode
/// forward passes and finite-difference probes).
class Tape {
public:
    struct Var {
        std::int32_t id = -1;
        std::uint32_t rows = 0;
        std::uint32_t cols = 0;
    };

    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    /// Leaf that never receives a gradient (inputs, embeddings, masks).
    Var constant(Matrix v);

    /// Leaf bound to a store slot; backward accumulates into the slot's grad.
    Var parameter(ParameterStore& store, std::size_t slot_index);
    Var parameter(ParameterStore& store, const std::string& name);

    Var matmul(Var a, Var b);
    /// Fused affine layer: x (b x in) * w (in x out) + bias (1 x out).
    Var linear(Var x, Var w, Var bias);
    Var add(Var a, Var b);
    Var hadamard(Var a, Var b);
    /// Row i of a (m x n) scaled by col[i] (col is m x 1); the gate product.
    Var scale_rows(Var a, Var col);
    Var scale(Var a, double c);
    Var activation(ActKind kind, Var x, double leaky_slope = 0.01);
    /// Batch normalisation with statistics from this batch (training mode).
    /// Writes the per-column batch mean and biased variance to the out
    /// parameters so the caller can maintain running statistics.
    Var batchnorm_train(Var x, Var gamma, Var beta, double eps, Matrix* mean_out,
                        Matrix* var_out);
    /// Batch normalisation with frozen statistics: per column
    /// y = ((x - mean) / sqrt(var + eps)) * gamma + beta, with the learnable
    /// scale and shift still receiving gradients. One fused node.
    Var batchnorm_frozen(Var x, Var gamma, Var beta, const Matrix& running_mean,
                         const Matrix& running_var, double eps);
    /// Dropout (inverted scaling, mask drawn here when p > 0) fused with an
    /// elementwise activation. softmax_rows is not supported here.
    Var dropout_act(ActKind kind, Var x, double dropout_p, Rng* rng, double leaky_slope);
    /// Sum of all entries, as a 1x1 matrix.
    Var sum(Var a);
    /// Weighted cross-entropy of probability rows against integer labels:
    /// sum_i w[y_i] * (-log max(p[i, y_i], 1e-12)) / sum_i w[y_i].
    Var weighted_ce(Var probs, const std::vector<int>& labels,
                    const std::vector<double>& class_weights);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const;

    /// Fills parameter gradients with d(loss)/d(param). The loss must be a
    /// 1x1 node of this tape; a tape can be walked backward only once.
    void backward(Var loss);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool grad_set = false;
        bool needs_grad = false;
        ParameterStore* store = nullptr;
        std::size_t slot = 0;
        std::function<void(Tape&, Node&)> backprop;
    };

    Var push(Matrix value, bool needs_grad);
    void accumulate(std::int32_t id, Matrix contribution);
    void check_valid(Var v, const char* op) const;

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;

    friend struct TapeOps;
};

/// Value-level weighted cross-entropy (same clamp as the tape op) for metric
/// evaluation outside any tape.
double weighted_ce_value(const Matrix& probs, const std::vector<int>& labels,
                         const std::vector<double>& class_weights);

}  // namespace wpfs
