#include "shd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "shd/error.hpp"

namespace shd {

CompressionInstance CompressionInstance::from_group(std::vector<Matrix> maps,
                                                    std::vector<Matrix> head_vals) {
    if (maps.empty() || maps.size() != head_vals.size()) {
        throw std::invalid_argument("CompressionInstance: need equal nonzero map/value counts");
    }
    CompressionInstance inst;
    inst.target = matmul(maps[0], head_vals[0]);
    inst.p_sum = head_vals[0];
    for (std::size_t i = 1; i < maps.size(); ++i) {
        inst.target = add(inst.target, matmul(maps[i], head_vals[i]));
        inst.p_sum = add(inst.p_sum, head_vals[i]);
    }
    inst.maps = std::move(maps);
    inst.head_vals = std::move(head_vals);
    return inst;
}

double residual_energy(const CompressionInstance& inst, const Matrix& a_tilde) {
    if (a_tilde.rows() != inst.target.rows() || a_tilde.cols() != inst.p_sum.rows()) {
        throw std::invalid_argument("residual_energy: A~ is " + a_tilde.shape_str() +
                                    ", expected " + std::to_string(inst.target.rows()) + "x" +
                                    std::to_string(inst.p_sum.rows()));
    }
    return frobenius_norm_sq(sub(matmul(a_tilde, inst.p_sum), inst.target));
}

GridResult grid_search_alpha(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                             const Matrix& x2, double step) {
    if (step <= 0.0 || step > 0.1) {
        throw std::invalid_argument("grid_search_alpha: step must be in (0, 0.1], got " +
                                    std::to_string(step));
    }
    const Matrix x_sum = add(x1, x2);
    const Matrix exact = add(matmul(a1, x1), matmul(a2, x2));

    const auto points = static_cast<std::size_t>(std::llround(1.0 / step));
    GridResult best{0.0, std::numeric_limits<double>::infinity()};
    for (std::size_t k = 0; k <= points; ++k) {
        const double alpha = k == points ? 1.0 : static_cast<double>(k) * step;
        const Matrix combined = axpy(scale(a1, alpha), 1.0 - alpha, a2);
        const double energy = frobenius_norm_sq(sub(matmul(combined, x_sum), exact));
        if (energy < best.energy) best = {alpha, energy};
    }
    return best;
}

OracleSolution exact_unconstrained(const CompressionInstance& inst) {
    OracleSolution sol;
    sol.a_tilde = least_squares_rows(inst.p_sum, inst.target);
    sol.residual = residual_energy(inst, sol.a_tilde);
    return sol;
}

namespace {

// Largest eigenvalue of p p^T by power iteration, deterministic all-ones start.
double spectral_norm_ppt(const Matrix& p) {
    const std::size_t n = p.rows();
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> pt_v(p.cols());
    double lambda = 0.0;
    for (int iter = 0; iter < 20; ++iter) {
        std::fill(pt_v.begin(), pt_v.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = p.row(i);
            for (std::size_t j = 0; j < p.cols(); ++j) pt_v[j] += row[j] * v[i];
        }
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = p.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) acc += row[j] * pt_v[j];
            v[i] = acc;
            norm_sq += acc * acc;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm == 0.0) return 0.0;
        lambda = norm;  // ||(p p^T) v|| with unit v converges to lambda_max
        for (double& x : v) x /= norm;
    }
    return lambda;
}

}  // namespace

OracleSolution constrained_solve(const CompressionInstance& inst, std::size_t max_iters,
                                 double tol) {
    const std::size_t n = inst.target.rows();
    if (n > 64) {
        throw std::invalid_argument("constrained oracle is desk-scale only (N <= 64), got N = " +
                                    std::to_string(n));
    }
    if (max_iters == 0) throw std::invalid_argument("constrained_solve: max_iters must be >= 1");

    const Matrix& p = inst.p_sum;
    const double lambda = spectral_norm_ppt(p);
    const std::size_t rows_of_a = inst.p_sum.rows();

    OracleSolution sol;
    sol.a_tilde = Matrix(n, rows_of_a);

    if (lambda == 0.0) {
        // Objective is constant in A~; any simplex point works. Uniform rows.
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < rows_of_a; ++c)
                sol.a_tilde(r, c) = 1.0 / static_cast<double>(rows_of_a);
        sol.residual = residual_energy(inst, sol.a_tilde);
        return sol;
    }
    const double step_size = 1.0 / lambda;

    std::vector<double> a(rows_of_a), grad(rows_of_a), resid(p.cols());
    for (std::size_t r = 0; r < n; ++r) {
        // min over the simplex of ||a^T p - t||^2 for this row's target t
        std::fill(a.begin(), a.end(), 1.0 / static_cast<double>(rows_of_a));
        const double* t = inst.target.row(r);

        auto objective = [&]() {
            double obj = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < rows_of_a; ++i) acc += a[i] * p(i, j);
                resid[j] = acc - t[j];
                obj += resid[j] * resid[j];
            }
            return obj;
        };

        double prev = objective();  // fills resid as a side effect
        for (std::size_t iter = 0; iter < max_iters; ++iter) {
            // half-gradient p * resid; with step 1/lambda this matches the
            // classic 1/L step for the full gradient 2 p p^T a - 2 p t
            for (std::size_t i = 0; i < rows_of_a; ++i) {
                const double* row = p.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < p.cols(); ++j) acc += row[j] * resid[j];
                grad[i] = acc;
            }
            for (std::size_t i = 0; i < rows_of_a; ++i) a[i] -= step_size * grad[i];
            a = simplex_project(std::move(a));

            const double obj = objective();
#ifndef NDEBUG
            if (obj > prev + 1e-9 * (1.0 + prev)) {
                throw NumericError("constrained_solve: objective increased at row " +
                                   std::to_string(r));
            }
#endif
            if (prev - obj < tol) break;
            prev = obj;
        }
        for (std::size_t i = 0; i < rows_of_a; ++i) sol.a_tilde(r, i) = a[i];
    }
    sol.residual = residual_energy(inst, sol.a_tilde);
    return sol;
}

PairwiseAlpha pairwise_alpha_paper_form(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                                        const Matrix& x2) {
    const Matrix m = matmul(sub(a1, a2), add(x1, x2));
    const Matrix n_paper = sub(matmul(a2, x1), matmul(a1, x2));
    const double m_norm_sq = frobenius_norm_sq(m);

    PairwiseAlpha out;
    if (m_norm_sq < 1e-18) {
        out.alpha = 0.5;
    } else {
        out.alpha = std::clamp(-frobenius_inner(m, n_paper) / m_norm_sq, 0.0, 1.0);
    }
    out.energy = pair_energy(a1, a2, x1, x2, out.alpha);
    return out;
}

}  // namespace shd
