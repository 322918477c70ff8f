#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wpfs/embeddings.hpp"
#include "wpfs/network.hpp"

namespace wpfs {

/// Architecture of the classifier and its two auxiliary networks. The
/// defaults are the full-size settings; tests shrink the widths.
struct WpfsArch {
    std::size_t feature_count = 0;   // D
    std::size_t class_count = 0;     // C
    std::size_t embed_size = 50;     // M
    std::size_t first_hidden = 100;  // K, width of the generated layer
    std::vector<std::size_t> classifier_tail = {100, 100, 10};
    // WPN and SPN are 4-layer networks: these three hidden widths plus an
    // output head (width K with tanh for WPN, width 1 with sigmoid for SPN).
    std::vector<std::size_t> aux_hidden = {100, 100, 100};
    bool use_wpn = true;
    bool use_spn = true;
    double dropout = 0.2;
    double leaky_slope = 0.01;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
};

/// Feature importance scores from the sparsity network.
struct ImportanceVector {
    std::vector<double> s;  // one score per feature, in (0,1)
    double threshold = 0.95;
    std::vector<std::size_t> selected;  // indices with s > threshold
    bool available = true;              // false when the model has no SPN
};

struct ParameterCounts {
    std::size_t direct_first_layer = 0;  // K*D weights of a directly learned first layer
    std::size_t wpfs_total = 0;
    std::size_t direct_total = 0;
    double reduction = 0.0;  // 1 - wpfs_total / direct_total
};

/// The WPFS classifier. The first-layer weight matrix is generated
/// column-by-column from frozen per-feature embeddings: the weight predictor
/// network maps each embedding to the K weights of that feature's column and
/// the sparsity network to a scalar gate in (0,1); the gated columns form the
/// first layer. With use_wpn off the first layer is a directly learned
/// matrix; with use_spn off the gates are identically 1. Both off with
/// lambda = 0 is exactly the plain MLP baseline.
class WpfsModel {
public:
    WpfsModel(WpfsArch arch, EmbeddingMatrix embedding);

    /// Draws all parameters from the rng (one stream; order is fixed by the
    /// declaration order of the slots).
    void init_params(Rng& rng);

    /// First-layer weights in feature-major layout (D x K, row j is the
    /// gated column for feature j) plus the gate vector as a tape variable.
    struct FirstLayer {
        Tape::Var weights_dk;
        std::optional<Tape::Var> gates;  // D x 1, present only with use_spn
    };
    FirstLayer first_layer(Tape& tape, Mode mode, Rng& rng);

    /// The column-major view: W1 (K x D, column j = w(j) * s_j) and s. Runs
    /// the auxiliary networks in the requested mode on a value-only tape.
    std::pair<Matrix, std::vector<double>> assemble_first_layer(Mode mode, Rng& rng);

    /// Classifier pass on an already-assembled first layer; lets the training
    /// loop reuse the same gates for the sparsity term of the loss.
    Tape::Var classifier_forward(Tape& tape, Tape::Var x, const FirstLayer& first, Mode mode,
                                 Rng& rng);

    /// Class probabilities (rows sum to 1) for a batch.
    Tape::Var forward(Tape& tape, Tape::Var x, Mode mode, Rng& rng);
    Matrix forward_values(const Matrix& x, Mode mode, Rng& rng);

    /// Training objective: weighted cross-entropy plus lambda * sum(s).
    /// `first` must come from the same tape/forward pass as `probs`.
    Tape::Var loss(Tape& tape, Tape::Var probs, const FirstLayer& first,
                   const std::vector<int>& labels, const ClassWeights& weights, double lambda);

    /// SPN scores over the frozen embeddings, eval mode. When the model has
    /// no SPN, returns s = 1 with available = false.
    ImportanceVector feature_importance(double threshold = 0.95);

    ParameterCounts parameter_counts() const;

    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    const WpfsArch& arch() const { return arch_; }
    const EmbeddingMatrix& embedding() const { return embedding_; }

    /// Parameter values plus batch-norm running statistics, for early
    /// stopping snapshots.
    struct Snapshot {
        std::vector<Matrix> values;
        std::vector<Matrix> bn_stats;
    };
    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

    /// Binary container round trip (format: header with shapes and a config
    /// digest, then flat 64-bit parameter blocks in declaration order).
    void save(const std::string& path) const;
    static WpfsModel load(const std::string& path);

private:
    std::vector<BnBuffers*> all_bn_buffers();
    std::vector<const BnBuffers*> all_bn_buffers() const;
    std::string config_digest_input() const;

    WpfsArch arch_;
    EmbeddingMatrix embedding_;
    ParameterStore store_;
    std::optional<Mlp> wpn_;
    std::optional<Mlp> spn_;
    std::size_t w1_slot_ = 0;  // only with use_wpn off
    std::size_t b1_slot_ = 0;
    std::size_t bn1_gamma_slot_ = 0;
    std::size_t bn1_beta_slot_ = 0;
    BnBuffers bn1_;
    std::optional<Mlp> tail_;
};

/// Spec-level helper mirroring WpfsModel::loss for externally assembled
/// pieces: weighted_ce(probs, y, w) + lambda * sum(s).
double total_loss_value(const Matrix& probs, const std::vector<int>& labels,
                        const ClassWeights& weights, const std::vector<double>& s, double lambda);

}  // namespace wpfs
