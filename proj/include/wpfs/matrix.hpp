#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace wpfs {

namespace detail {
/// std::allocator whose construct() default-initialises, so vector::resize
/// does not zero-fill doubles. Kernels that overwrite every entry rely on it.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0) {
            ::new (static_cast<void*>(p)) U;
        } else {
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
        }
    }
};
}  // namespace detail

/// Dense row-major matrix of 64-bit floats. The substrate for every
/// computation in this project; deliberately minimal.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    /// Allocates without zero-filling. Only for kernels that overwrite every entry.
    static Matrix uninitialized(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    void fill(double v);
    bool all_finite() const;
    /// Throws ValueError naming `context` if any entry is NaN or infinite.
    void ensure_finite(const std::string& context) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double, detail::DefaultInitAllocator<double>> data_;
};

/// Raises the allocator's mmap threshold once per process so the large tape
/// buffers recycled every training step come from the reusable heap instead
/// of fresh kernel pages. Safe to call repeatedly.
void tune_allocator_for_training();

/// C = A * B. Throws ShapeError naming both shapes on inner-dimension mismatch.
/// Accumulation order over k is ascending for every output element, so the
/// vectorised kernel agrees with the naive triple loop.
Matrix matmul(const Matrix& a, const Matrix& b);

/// C = A * B^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// C = A^T * B.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

}  // namespace wpfs
