#include "shd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "shd/error.hpp"

namespace shd {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw std::invalid_argument("from_rows: ragged rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::random_normal(std::size_t rows, std::size_t cols, Rng& rng, double std_dev) {
    Matrix m(rows, cols);
    for (double& v : m.data_) v = rng.normal() * std_dev;
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    Matrix out(a.rows(), b.cols());
    // ikj order: contiguous access on b and out.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* a_row = a.row(k);
        const double* b_row = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a_row[i];
            if (aki == 0.0) continue;
            double* out_row = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("add", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("sub", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("hadamard", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix axpy(const Matrix& a, double c, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("axpy", a, b);
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += c * b.data()[i];
    return out;
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error("frobenius_inner", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

double frobenius_norm_sq(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
    return acc;
}

Matrix softmax_rows(const Matrix& logits, const Matrix* mask, double temperature) {
    if (temperature <= 0.0) {
        throw std::invalid_argument("softmax_rows: temperature must be > 0, got " +
                                    std::to_string(temperature));
    }
    if (mask != nullptr && !mask->same_shape(logits)) shape_error("softmax_rows", logits, *mask);

    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double max_kept = -std::numeric_limits<double>::infinity();
        std::size_t kept = 0;
        bool finite = true;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (mask == nullptr || (*mask)(i, j) != 0.0) {
                ++kept;
                if (!std::isfinite(logits(i, j))) finite = false;
                max_kept = std::max(max_kept, logits(i, j));
            }
        }
        if (kept == 0) {
            throw std::invalid_argument("softmax_rows: fully masked row " + std::to_string(i));
        }
        if (!finite) {
            throw NumericError("softmax_rows: non-finite logits in row " + std::to_string(i));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (mask == nullptr || (*mask)(i, j) != 0.0) {
                const double e = std::exp((logits(i, j) - max_kept) / temperature);
                out(i, j) = e;
                sum += e;
            }
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            if (mask == nullptr || (*mask)(i, j) != 0.0) out(i, j) /= sum;
        }
    }
    return out;
}

Matrix causal_mask(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m(i, j) = 1.0;
    return m;
}

std::vector<double> simplex_project(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("simplex_project: empty vector");
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cumsum = 0.0;
    double theta = 0.0;
    std::size_t rho = 0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cumsum += u[j];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            rho = j + 1;
            theta = t;
        }
    }
    for (double& x : v) x = std::max(x - theta, 0.0);
    (void)rho;
    return v;
}

// ---- SVD (one-sided Jacobi) -------------------------------------------------
//
// Orthogonalizes column pairs of a tall copy of the input until convergence.
// Only ever used on desk-scale matrices (N <= 64), where it is plenty fast
// and fully deterministic.

namespace {

Svd svd_tall(Matrix a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix v = Matrix::identity(n);

    const int max_sweeps = 60;
    const double eps = 1e-30;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double* row = a.row(i);
                    app += row[p] * row[p];
                    aqq += row[q] * row[q];
                    apq += row[p] * row[q];
                }
                off = std::max(off, std::abs(apq) / std::sqrt(app * aqq + eps));
                if (std::abs(apq) < eps) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    double* row = a.row(i);
                    const double ap = row[p], aq = row[q];
                    row[p] = c * ap - s * aq;
                    row[q] = s * ap + c * aq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double* row = v.row(i);
                    const double vp = row[p], vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
        if (off < 1e-15) break;
    }

    // Column norms are the singular values; sort descending.
    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) norm_sq += a(i, j) * a(i, j);
        sigma[j] = std::sqrt(norm_sq);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    Svd result;
    result.u = Matrix(m, n);
    result.v = Matrix(n, n);
    result.sigma.resize(n);
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = order[jj];
        result.sigma[jj] = sigma[j];
        const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
        for (std::size_t i = 0; i < m; ++i) result.u(i, jj) = a(i, j) * inv;
        for (std::size_t i = 0; i < n; ++i) result.v(i, jj) = v(i, j);
    }
    return result;
}

}  // namespace

Svd svd(const Matrix& m) {
    if (m.rows() >= m.cols()) return svd_tall(m);
    // Wide: factor the transpose and swap the roles of u and v.
    Svd t = svd_tall(transpose(m));
    return Svd{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

std::vector<double> singular_values(const Matrix& m) { return svd(m).sigma; }

Matrix pseudo_inverse(const Matrix& m, double rel_threshold) {
    const Svd f = svd(m);
    const double cutoff = f.sigma.empty() ? 0.0 : rel_threshold * f.sigma.front();
    // pinv = v * diag(1/sigma) * u^T, zeroing small singular values
    Matrix v_scaled = f.v;
    for (std::size_t j = 0; j < f.sigma.size(); ++j) {
        const double inv = f.sigma[j] > cutoff && f.sigma[j] > 0.0 ? 1.0 / f.sigma[j] : 0.0;
        for (std::size_t i = 0; i < v_scaled.rows(); ++i) v_scaled(i, j) *= inv;
    }
    return matmul_nt(v_scaled, f.u);
}

Matrix least_squares_rows(const Matrix& P, const Matrix& T, double rel_threshold) {
    if (P.cols() != T.cols()) {
        throw std::invalid_argument("least_squares_rows: P " + P.shape_str() +
                                    " and T " + T.shape_str() + " must share column count");
    }
    return matmul(T, pseudo_inverse(P, rel_threshold));
}

}  // namespace shd
