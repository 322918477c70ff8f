#include "wpfs/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "wpfs/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace wpfs {

void tune_allocator_for_training() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    });
#endif
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged initializer list for Matrix");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::uninitialized(std::size_t rows, std::size_t cols) {
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_.resize(rows * cols);
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void Matrix::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

bool Matrix::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Matrix::ensure_finite(const std::string& context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw ValueError(context + ": non-finite value at row " + std::to_string(i / cols_) +
                             ", col " + std::to_string(i % cols_));
        }
    }
}

namespace {

#if defined(__AVX512F__)

// 4 rows x 16 columns of C held in zmm accumulators. Every C element is
// accumulated over k in ascending order, matching the scalar loop exactly.
void matmul_kernel(const double* __restrict a_mat, const double* __restrict b_mat,
                   double* __restrict c_mat, std::size_t m, std::size_t n, std::size_t p) {
    const std::size_t pt = p & ~std::size_t(15);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a_mat + (i + 0) * n;
        const double* a1 = a_mat + (i + 1) * n;
        const double* a2 = a_mat + (i + 2) * n;
        const double* a3 = a_mat + (i + 3) * n;
        std::size_t j = 0;
        for (; j < pt; j += 16) {
            __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd();
            __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd();
            __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd();
            __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd();
            const double* b = b_mat + j;
            for (std::size_t k = 0; k < n; ++k, b += p) {
                const __m512d b0 = _mm512_loadu_pd(b);
                const __m512d b1 = _mm512_loadu_pd(b + 8);
                const __m512d x0 = _mm512_set1_pd(a0[k]);
                const __m512d x1 = _mm512_set1_pd(a1[k]);
                const __m512d x2 = _mm512_set1_pd(a2[k]);
                const __m512d x3 = _mm512_set1_pd(a3[k]);
                c00 = _mm512_fmadd_pd(x0, b0, c00);
                c01 = _mm512_fmadd_pd(x0, b1, c01);
                c10 = _mm512_fmadd_pd(x1, b0, c10);
                c11 = _mm512_fmadd_pd(x1, b1, c11);
                c20 = _mm512_fmadd_pd(x2, b0, c20);
                c21 = _mm512_fmadd_pd(x2, b1, c21);
                c30 = _mm512_fmadd_pd(x3, b0, c30);
                c31 = _mm512_fmadd_pd(x3, b1, c31);
            }
            _mm512_storeu_pd(c_mat + (i + 0) * p + j, c00);
            _mm512_storeu_pd(c_mat + (i + 0) * p + j + 8, c01);
            _mm512_storeu_pd(c_mat + (i + 1) * p + j, c10);
            _mm512_storeu_pd(c_mat + (i + 1) * p + j + 8, c11);
            _mm512_storeu_pd(c_mat + (i + 2) * p + j, c20);
            _mm512_storeu_pd(c_mat + (i + 2) * p + j + 8, c21);
            _mm512_storeu_pd(c_mat + (i + 3) * p + j, c30);
            _mm512_storeu_pd(c_mat + (i + 3) * p + j + 8, c31);
        }
        if (j < p) {
            const unsigned tail = static_cast<unsigned>(p - j);
            const __mmask8 m0 = static_cast<__mmask8>(tail >= 8 ? 0xFFu : ((1u << tail) - 1));
            const __mmask8 m1 = static_cast<__mmask8>(tail > 8 ? ((1u << (tail - 8)) - 1) : 0);
            __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd();
            __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd();
            __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd();
            __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd();
            const double* b = b_mat + j;
            for (std::size_t k = 0; k < n; ++k, b += p) {
                const __m512d b0 = _mm512_maskz_loadu_pd(m0, b);
                const __m512d b1 = _mm512_maskz_loadu_pd(m1, b + 8);
                const __m512d x0 = _mm512_set1_pd(a0[k]);
                const __m512d x1 = _mm512_set1_pd(a1[k]);
                const __m512d x2 = _mm512_set1_pd(a2[k]);
                const __m512d x3 = _mm512_set1_pd(a3[k]);
                c00 = _mm512_fmadd_pd(x0, b0, c00);
                c01 = _mm512_fmadd_pd(x0, b1, c01);
                c10 = _mm512_fmadd_pd(x1, b0, c10);
                c11 = _mm512_fmadd_pd(x1, b1, c11);
                c20 = _mm512_fmadd_pd(x2, b0, c20);
                c21 = _mm512_fmadd_pd(x2, b1, c21);
                c30 = _mm512_fmadd_pd(x3, b0, c30);
                c31 = _mm512_fmadd_pd(x3, b1, c31);
            }
            _mm512_mask_storeu_pd(c_mat + (i + 0) * p + j, m0, c00);
            _mm512_mask_storeu_pd(c_mat + (i + 0) * p + j + 8, m1, c01);
            _mm512_mask_storeu_pd(c_mat + (i + 1) * p + j, m0, c10);
            _mm512_mask_storeu_pd(c_mat + (i + 1) * p + j + 8, m1, c11);
            _mm512_mask_storeu_pd(c_mat + (i + 2) * p + j, m0, c20);
            _mm512_mask_storeu_pd(c_mat + (i + 2) * p + j + 8, m1, c21);
            _mm512_mask_storeu_pd(c_mat + (i + 3) * p + j, m0, c30);
            _mm512_mask_storeu_pd(c_mat + (i + 3) * p + j + 8, m1, c31);
        }
    }
    for (; i < m; ++i) {
        const double* a = a_mat + i * n;
        double* c = c_mat + i * p;
        for (std::size_t j = 0; j < p; ++j) c[j] = 0.0;
        const double* b = b_mat;
        for (std::size_t k = 0; k < n; ++k, b += p) {
            const double x = a[k];
            for (std::size_t j = 0; j < p; ++j) c[j] += x * b[j];
        }
    }
}

#else

// Portable fallback: four rows at a time so each B row load feeds four FMAs.
void matmul_kernel(const double* __restrict a_mat, const double* __restrict b_mat,
                   double* __restrict c_mat, std::size_t m, std::size_t n, std::size_t p) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* __restrict c0 = c_mat + (i + 0) * p;
        double* __restrict c1 = c_mat + (i + 1) * p;
        double* __restrict c2 = c_mat + (i + 2) * p;
        double* __restrict c3 = c_mat + (i + 3) * p;
        for (std::size_t j = 0; j < p; ++j) c0[j] = c1[j] = c2[j] = c3[j] = 0.0;
        const double* a0 = a_mat + (i + 0) * n;
        const double* a1 = a_mat + (i + 1) * n;
        const double* a2 = a_mat + (i + 2) * n;
        const double* a3 = a_mat + (i + 3) * n;
        const double* b = b_mat;
        for (std::size_t k = 0; k < n; ++k, b += p) {
            const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
            for (std::size_t j = 0; j < p; ++j) {
                const double bj = b[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* __restrict c = c_mat + i * p;
        for (std::size_t j = 0; j < p; ++j) c[j] = 0.0;
        const double* a = a_mat + i * n;
        const double* b = b_mat;
        for (std::size_t k = 0; k < n; ++k, b += p) {
            const double x = a[k];
            for (std::size_t j = 0; j < p; ++j) c[j] += x * b[j];
        }
    }
}

#endif

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                         b.shape_str());
    }
    Matrix c = Matrix::uninitialized(a.rows(), b.cols());
    if (c.size() == 0) return c;
    if (a.cols() == 0) {
        c.fill(0.0);
        return c;
    }
    matmul_kernel(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t = Matrix::uninitialized(a.cols(), a.rows());
    constexpr std::size_t kBlock = 32;
    for (std::size_t i0 = 0; i0 < a.rows(); i0 += kBlock) {
        const std::size_t i1 = std::min(i0 + kBlock, a.rows());
        for (std::size_t j0 = 0; j0 < a.cols(); j0 += kBlock) {
            const std::size_t j1 = std::min(j0 + kBlock, a.cols());
            for (std::size_t i = i0; i < i1; ++i)
                for (std::size_t j = j0; j < j1; ++j) t(j, i) = a(i, j);
        }
    }
    return t;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + a.shape_str() + " x " +
                         b.shape_str() + "^T");
    }
    return matmul(a, transpose(b));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn: inner dimensions disagree, " + a.shape_str() + "^T x " +
                         b.shape_str());
    }
    return matmul(transpose(a), b);
}

}  // namespace wpfs
