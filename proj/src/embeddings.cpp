#include "wpfs/embeddings.hpp"

#include <algorithm>
#include <cmath>

#include "wpfs/errors.hpp"

namespace wpfs {

namespace {
constexpr double kEntryFloor = 1e-12;

double frobenius_error(const Matrix& x, const Matrix& w, const Matrix& h) {
    const Matrix wh = matmul(w, h);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - wh[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}
}  // namespace

EmbedMethod embed_method_from_string(const std::string& s) {
    if (s == "nmf") return EmbedMethod::nmf;
    if (s == "svd") return EmbedMethod::svd;
    if (s == "dot_histogram") return EmbedMethod::dot_histogram;
    if (s == "feature_values") return EmbedMethod::feature_values;
    throw InputError("unknown embedding method '" + s +
                     "' (valid: nmf, svd, dot_histogram, feature_values)");
}

std::string to_string(EmbedMethod m) {
    switch (m) {
        case EmbedMethod::nmf: return "nmf";
        case EmbedMethod::svd: return "svd";
        case EmbedMethod::dot_histogram: return "dot_histogram";
        case EmbedMethod::feature_values: return "feature_values";
    }
    return "?";
}

EmbedPreprocessing embed_preprocessing_from_string(const std::string& s) {
    if (s == "minmax") return EmbedPreprocessing::minmax;
    if (s == "zscore") return EmbedPreprocessing::zscore;
    if (s == "raw") return EmbedPreprocessing::raw;
    throw InputError("unknown embedding preprocessing '" + s + "' (valid: minmax, zscore, raw)");
}

std::string to_string(EmbedPreprocessing p) {
    switch (p) {
        case EmbedPreprocessing::minmax: return "minmax";
        case EmbedPreprocessing::zscore: return "zscore";
        case EmbedPreprocessing::raw: return "raw";
    }
    return "?";
}

Matrix minmax_scale(const Matrix& x) {
    Matrix out = Matrix::uninitialized(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double lo = x(0, j), hi = x(0, j);
        for (std::size_t i = 1; i < x.rows(); ++i) {
            lo = std::min(lo, x(i, j));
            hi = std::max(hi, x(i, j));
        }
        const double range = hi - lo;
        if (range == 0.0) {
            for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = 0.0;
        } else {
            for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = (x(i, j) - lo) / range;
        }
    }
    return out;
}

Matrix zscore_scale(const Matrix& x) {
    Matrix out = Matrix::uninitialized(x.rows(), x.cols());
    const double n = static_cast<double>(x.rows());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / n);
        if (sd == 0.0) {
            for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = 0.0;
        } else {
            for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = (x(i, j) - mean) / sd;
        }
    }
    return out;
}

Matrix apply_preprocessing(const Matrix& x, EmbedPreprocessing p) {
    switch (p) {
        case EmbedPreprocessing::minmax: return minmax_scale(x);
        case EmbedPreprocessing::zscore: return zscore_scale(x);
        case EmbedPreprocessing::raw: return x;
    }
    return x;
}

NmfFactors nmf_fit(const Matrix& x01, std::size_t k, std::size_t iters, Rng& rng) {
    if (k < 1) throw ValueError("nmf_fit: k must be at least 1");
    for (std::size_t i = 0; i < x01.size(); ++i)
        if (x01[i] < 0.0)
            throw ValueError("nmf_fit: input has negative entries (row " +
                             std::to_string(i / x01.cols()) + ", col " +
                             std::to_string(i % x01.cols()) + "); min-max scale first");

    const std::size_t n = x01.rows(), d = x01.cols();
    double mean = 0.0;
    for (std::size_t i = 0; i < x01.size(); ++i) mean += x01[i];
    mean /= static_cast<double>(std::max<std::size_t>(1, x01.size()));
    const double scale = std::sqrt(std::max(mean, kEntryFloor) / static_cast<double>(k));

    NmfFactors f;
    f.w = Matrix::uninitialized(n, k);
    f.h = Matrix::uninitialized(k, d);
    for (std::size_t i = 0; i < f.w.size(); ++i)
        f.w[i] = std::max(rng.uniform01() * scale, kEntryFloor);
    for (std::size_t i = 0; i < f.h.size(); ++i)
        f.h[i] = std::max(rng.uniform01() * scale, kEntryFloor);

    f.error_history.reserve(iters);
    for (std::size_t it = 0; it < iters; ++it) {
        // H <- H .* (W^T X) ./ (W^T W H + eps)
        {
            const Matrix wtx = matmul_tn(f.w, x01);
            const Matrix wtw = matmul_tn(f.w, f.w);
            const Matrix wtwh = matmul(wtw, f.h);
            for (std::size_t i = 0; i < f.h.size(); ++i) {
                const double updated = f.h[i] * wtx[i] / (wtwh[i] + kEntryFloor);
                f.h[i] = std::max(updated, kEntryFloor);
            }
        }
        // W <- W .* (X H^T) ./ (W H H^T + eps)
        {
            const Matrix xht = matmul_nt(x01, f.h);
            const Matrix hht = matmul_nt(f.h, f.h);
            const Matrix whht = matmul(f.w, hht);
            for (std::size_t i = 0; i < f.w.size(); ++i) {
                const double updated = f.w[i] * xht[i] / (whht[i] + kEntryFloor);
                f.w[i] = std::max(updated, kEntryFloor);
            }
        }
        f.error_history.push_back(frobenius_error(x01, f.w, f.h));
    }
    f.final_frobenius_error = f.error_history.empty() ? frobenius_error(x01, f.w, f.h)
                                                      : f.error_history.back();
    return f;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues land on
// the diagonal of `a`; columns of `v` are the eigenvectors.
void jacobi_eigen(Matrix& a, Matrix& v) {
    const std::size_t n = a.rows();
    v = Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    double frob2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) frob2 += a[i] * a[i];
    const double tol = frob2 * 1e-28 + 1e-300;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }
}

}  // namespace

EmbeddingMatrix svd_embed(const Matrix& x01, std::size_t k) {
    const std::size_t n = x01.rows(), d = x01.cols();
    if (k < 1 || k > std::min(n, d))
        throw ValueError("svd_embed: k = " + std::to_string(k) + " out of range [1, " +
                         std::to_string(std::min(n, d)) + "]");

    // Work on the smaller Gram matrix; samples are few, features are many.
    // G = X X^T = U S^2 U^T, then Sigma V^T = U^T X.
    Matrix gram = matmul_nt(x01, x01);
    Matrix eigvecs;
    jacobi_eigen(gram, eigvecs);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (gram(a, a) != gram(b, b)) return gram(a, a) > gram(b, b);
        return a < b;
    });

    const double top = std::max(gram(order[0], order[0]), 0.0);
    const double rank_tol = std::sqrt(top) * 1e-12;

    // Row c of `sv` is sigma_c * v_c^T = u_c^T X; the embedding matrix is its
    // transpose (feature j's coordinates in the singular basis).
    Matrix sv(k, d, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t e = order[c];
        const double sigma = std::sqrt(std::max(gram(e, e), 0.0));
        if (sigma <= rank_tol) continue;  // below numerical rank: zero coords
        for (std::size_t i = 0; i < n; ++i) {
            const double u = eigvecs(i, e);
            if (u == 0.0) continue;
            const double* xr = x01.row(i);
            double* svr = sv.row(c);
            for (std::size_t j = 0; j < d; ++j) svr[j] += u * xr[j];
        }
        // Fix the sign so the largest-magnitude entry of v_c is positive.
        double best = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            if (std::fabs(sv(c, j)) > std::fabs(best)) best = sv(c, j);
        if (best < 0.0)
            for (std::size_t j = 0; j < d; ++j) sv(c, j) = -sv(c, j);
    }

    EmbeddingMatrix out;
    out.method = EmbedMethod::svd;
    out.size = k;
    out.e = transpose(sv);
    return out;
}

EmbeddingMatrix dot_histogram_embed(const Matrix& x, std::size_t bins) {
    if (bins < 1) throw ValueError("dot_histogram_embed: bins must be at least 1");
    const std::size_t n = x.rows(), d = x.cols();
    EmbeddingMatrix out;
    out.method = EmbedMethod::dot_histogram;
    out.size = bins;
    out.e = Matrix(d, bins, 0.0);
    std::vector<double> counts(bins);
    for (std::size_t j = 0; j < d; ++j) {
        double lo = x(0, j), hi = x(0, j);
        for (std::size_t i = 1; i < n; ++i) {
            lo = std::min(lo, x(i, j));
            hi = std::max(hi, x(i, j));
        }
        if (hi == lo) continue;  // constant column: all-zero embedding
        std::fill(counts.begin(), counts.end(), 0.0);
        const double width = (hi - lo) / static_cast<double>(bins);
        for (std::size_t i = 0; i < n; ++i) {
            auto b = static_cast<std::size_t>((x(i, j) - lo) / width);
            b = std::min(b, bins - 1);  // x == hi falls into the last bin
            counts[b] += 1.0;
        }
        for (std::size_t b = 0; b < bins; ++b) {
            const double height = counts[b] / static_cast<double>(n);
            const double center = lo + width * (static_cast<double>(b) + 0.5);
            out.e(j, b) = height * center;
        }
    }
    return out;
}

EmbeddingMatrix feature_values_embed(const Matrix& x) {
    EmbeddingMatrix out;
    out.method = EmbedMethod::feature_values;
    out.size = x.rows();
    out.e = transpose(x);
    return out;
}

EmbeddingMatrix compute_embedding(const Matrix& x_train, EmbedMethod method, std::size_t m,
                                  EmbedPreprocessing preprocessing, std::size_t nmf_iters,
                                  Rng& rng) {
    const Matrix prepared = apply_preprocessing(x_train, preprocessing);
    switch (method) {
        case EmbedMethod::nmf: {
            NmfFactors f = nmf_fit(prepared, m, nmf_iters, rng);
            EmbeddingMatrix out;
            out.method = EmbedMethod::nmf;
            out.size = m;
            out.e = transpose(f.h);
            return out;
        }
        case EmbedMethod::svd: return svd_embed(prepared, m);
        case EmbedMethod::dot_histogram: return dot_histogram_embed(prepared, m);
        case EmbedMethod::feature_values: return feature_values_embed(prepared);
    }
    throw UsageError("compute_embedding: unreachable method");
}

}  // namespace wpfs
