#pragma once

#include <string>
#include <vector>

#include "wpfs/matrix.hpp"
#include "wpfs/rng.hpp"

namespace wpfs {

enum class EmbedMethod { nmf, svd, dot_histogram, feature_values };
enum class EmbedPreprocessing { minmax, zscore, raw };

EmbedMethod embed_method_from_string(const std::string& s);
std::string to_string(EmbedMethod m);
EmbedPreprocessing embed_preprocessing_from_string(const std::string& s);
std::string to_string(EmbedPreprocessing p);

/// Per-feature embedding vectors: row j holds the M-dimensional embedding of
/// feature j. Always computed from the training split only.
struct EmbeddingMatrix {
    EmbedMethod method = EmbedMethod::nmf;
    std::size_t size = 0;  // M
    Matrix e;              // D x M
};

/// Non-negative factors X ~ W * H from multiplicative updates.
struct NmfFactors {
    Matrix w;  // N x k
    Matrix h;  // k x D
    double final_frobenius_error = 0.0;
    std::vector<double> error_history;  // Frobenius error after each iteration
};

/// Per-column (x - min) / (max - min); constant columns map to all-zeros.
Matrix minmax_scale(const Matrix& x);

/// Per-column (x - mean) / sd with population sd; constant columns map to zeros.
Matrix zscore_scale(const Matrix& x);

Matrix apply_preprocessing(const Matrix& x, EmbedPreprocessing p);

/// Lee-Seung multiplicative updates minimising the Frobenius error.
/// Requires a non-negative input; factors are initialised uniformly on (0,1]
/// scaled by sqrt(mean(X)/k) and floored at 1e-12 to keep the updates alive.
NmfFactors nmf_fit(const Matrix& x01, std::size_t k, std::size_t iters, Rng& rng);

/// Top-k singular triplets via a Jacobi eigendecomposition of the Gram
/// matrix. Embedding of feature j is (Sigma_k V_k^T)[:, j]; the sign of each
/// singular vector pair is fixed so the largest-magnitude entry of the
/// feature-side vector is positive. Requires 1 <= k <= min(N, D).
EmbeddingMatrix svd_embed(const Matrix& x01, std::size_t k);

/// Per feature: equal-width normalised histogram over [min, max] of the
/// column (for min-max-scaled input that is [0, 1]); the embedding is heights
/// (.) centers elementwise. Constant columns yield the all-zero embedding.
EmbeddingMatrix dot_histogram_embed(const Matrix& x, std::size_t bins);

/// Embedding of feature j is column j of the input, so M = N.
EmbeddingMatrix feature_values_embed(const Matrix& x);

/// Applies `preprocessing` to the raw training matrix, then dispatches on
/// method. For dot_histogram, `m` is the bin count so the embedding length
/// matches the other methods.
EmbeddingMatrix compute_embedding(const Matrix& x_train, EmbedMethod method, std::size_t m,
                                  EmbedPreprocessing preprocessing, std::size_t nmf_iters,
                                  Rng& rng);

}  // namespace wpfs
