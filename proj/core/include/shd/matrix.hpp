#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "shd/rng.hpp"

namespace shd {

/// Dense row-major matrix of doubles. The single numeric carrier of the
/// library: attention maps, projection weights, head value terms, features.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double std_dev = 1.0);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    double* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const noexcept;
    std::string shape_str() const;  // e.g. "3x4"

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---- arithmetic -----------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);
// a + c * b, shapes equal
Matrix axpy(const Matrix& a, double c, const Matrix& b);

double frobenius_inner(const Matrix& a, const Matrix& b);
double frobenius_norm_sq(const Matrix& a);

// ---- probability ----------------------------------------------------------

// Row-wise softmax(logits / temperature). mask, when given, must match the
// logits' shape; entries != 0 are kept, entries == 0 come out exactly zero.
// Stabilized by per-row max subtraction over the kept entries.
// Throws on temperature <= 0 and on a fully masked row.
Matrix softmax_rows(const Matrix& logits, const Matrix* mask, double temperature);

// Lower-triangular 1/0 matrix; the mask for causal attention.
Matrix causal_mask(std::size_t n);

// Euclidean projection of v onto the probability simplex
// (entries >= 0, sum == 1), by the sort-and-threshold algorithm.
std::vector<double> simplex_project(std::vector<double> v);

// ---- least squares / SVD --------------------------------------------------

// Minimum-norm solution of  A * P = T  in the least-squares sense, row by
// row: returns the A minimizing ||A P - T||_F with smallest ||A||_F among
// minimizers. Singular values of P below rel_threshold * sigma_max are
// treated as zero.
Matrix least_squares_rows(const Matrix& P, const Matrix& T, double rel_threshold = 1e-10);

// Moore-Penrose pseudo-inverse with the same relative rank threshold.
Matrix pseudo_inverse(const Matrix& m, double rel_threshold = 1e-10);

// Singular values in descending order (one-sided Jacobi; small matrices).
std::vector<double> singular_values(const Matrix& m);

struct Svd {
    Matrix u;                    // m x k, orthonormal columns
    std::vector<double> sigma;   // k, descending
    Matrix v;                    // n x k, orthonormal columns
};
// Thin SVD  m = u * diag(sigma) * v^T  with k = min(rows, cols).
Svd svd(const Matrix& m);

}  // namespace shd
