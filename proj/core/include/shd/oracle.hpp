#pragma once

#include <cstddef>
#include <vector>

#include "shd/matrix.hpp"
#include "shd/squeeze.hpp"

namespace shd {

/// One head-compression problem: find A~ with A~ * p_sum close to target,
/// where p_sum = sum X_i and target = sum A_i X_i over the group's heads.
struct CompressionInstance {
    std::vector<Matrix> maps;       // A_i, N x N
    std::vector<Matrix> head_vals;  // X_i, N x d_model
    Matrix target;                  // sum A_i X_i
    Matrix p_sum;                   // sum X_i

    static CompressionInstance from_group(std::vector<Matrix> maps,
                                          std::vector<Matrix> head_vals);
};

// ||A~ p_sum - target||_F^2
double residual_energy(const CompressionInstance& inst, const Matrix& a_tilde);

struct GridResult {
    double alpha = 0.0;
    double energy = 0.0;
};

// Exhaustive scan of alpha in {0, step, 2 step, ..., 1}; every point is
// evaluated by forming the combination and multiplying it out, so the scan
// is independent of the closed-form derivation it verifies.
GridResult grid_search_alpha(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                             const Matrix& x2, double step);

struct OracleSolution {
    Matrix a_tilde;
    double residual = 0.0;
};

// Minimum-norm least-squares solution of A~ p_sum = target.
OracleSolution exact_unconstrained(const CompressionInstance& inst);

// Row-stochastic solution: each row solved over the probability simplex by
// projected gradient descent with step 1 / ||p_sum p_sum^T||_2 (power
// iteration, 20 rounds, all-ones start). Desk-scale only: N <= 64.
OracleSolution constrained_solve(const CompressionInstance& inst, std::size_t max_iters = 50000,
                                 double tol = 1e-12);

// Merge coefficient computed from the uncorrected residual decomposition
// (bias term A2 X1 - A1 X2 instead of (A2 - A1) X1). Kept available so tests
// can demonstrate it is not the minimizer unless X1 == X2.
PairwiseAlpha pairwise_alpha_paper_form(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                                        const Matrix& x2);

}  // namespace shd
