#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shd/oracle.hpp"

using namespace shd;

namespace {

Matrix random_stochastic_map(Rng& rng, std::size_t n) {
    return softmax_rows(Matrix::random_normal(n, n, rng, 2.0), nullptr, 1.0);
}

Matrix random_low_rank(Rng& rng, std::size_t n, std::size_t rank, std::size_t d_model) {
    return matmul(Matrix::random_normal(n, rank, rng), Matrix::random_normal(rank, d_model, rng));
}

CompressionInstance random_pair_instance(Rng& rng, std::size_t n, std::size_t rank,
                                         std::size_t d_model) {
    return CompressionInstance::from_group(
        {random_stochastic_map(rng, n), random_stochastic_map(rng, n)},
        {random_low_rank(rng, n, rank, d_model), random_low_rank(rng, n, rank, d_model)});
}

// Row-space projection residual via Gram-Schmidt on the rows of P; an
// independent route to ||T (I - P^+ P)||_F^2.
double projection_residual(const Matrix& p, const Matrix& t) {
    std::vector<std::vector<double>> basis;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        std::vector<double> v(p.cols());
        for (std::size_t j = 0; j < p.cols(); ++j) v[j] = p(r, j);
        for (const auto& q : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < v.size(); ++j) dot += q[j] * v[j];
            for (std::size_t j = 0; j < v.size(); ++j) v[j] -= dot * q[j];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-10) {
            for (double& x : v) x /= norm;
            basis.push_back(std::move(v));
        }
    }
    double residual = 0.0;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        std::vector<double> v(t.cols());
        for (std::size_t j = 0; j < t.cols(); ++j) v[j] = t(r, j);
        for (const auto& q : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < v.size(); ++j) dot += q[j] * v[j];
            for (std::size_t j = 0; j < v.size(); ++j) v[j] -= dot * q[j];
        }
        for (double x : v) residual += x * x;
    }
    return residual;
}

}  // namespace

TEST_CASE("residual energy basics") {
    Rng rng(61);
    const Matrix a = random_stochastic_map(rng, 5);
    const Matrix x = Matrix::random_normal(5, 6, rng);
    const auto inst = CompressionInstance::from_group({a}, {x});

    CHECK(residual_energy(inst, a) < 1e-16);                       // identity compression
    CHECK(residual_energy(inst, Matrix(5, 5)) ==
          doctest::Approx(frobenius_norm_sq(inst.target)));        // zero candidate
    CHECK_THROWS_AS(residual_energy(inst, Matrix(4, 5)), std::invalid_argument);
}

TEST_CASE("grid search obeys the forced minima") {
    Rng rng(62);
    const Matrix a1 = random_stochastic_map(rng, 6);
    const Matrix a2 = random_stochastic_map(rng, 6);
    const Matrix x1 = Matrix::random_normal(6, 5, rng);
    const Matrix zero(6, 5);
    const auto at_one = grid_search_alpha(a1, a2, x1, zero, 1e-3);
    CHECK(std::abs(at_one.alpha - 1.0) <= 1e-3);
    const auto at_half = grid_search_alpha(a1, a2, x1, x1, 1e-3);
    CHECK(std::abs(at_half.alpha - 0.5) <= 1e-3);
    CHECK_THROWS_AS(grid_search_alpha(a1, a2, x1, x1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(grid_search_alpha(a1, a2, x1, x1, 0.2), std::invalid_argument);
}

TEST_CASE("grid search brackets the closed form") {
    Rng rng(63);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix a1 = random_stochastic_map(rng, 6);
        const Matrix a2 = random_stochastic_map(rng, 6);
        const Matrix x1 = random_low_rank(rng, 6, 2, 8);
        const Matrix x2 = random_low_rank(rng, 6, 2, 8);
        const auto closed = pairwise_alpha(a1, a2, x1, x2);
        const auto grid = grid_search_alpha(a1, a2, x1, x2, 1e-4);
        CHECK(grid.energy >= closed.energy - 1e-9);
        CHECK(std::abs(grid.alpha - closed.alpha) <= 1e-4 + 1e-6);
    }
}

TEST_CASE("unconstrained oracle: identical maps give zero residual") {
    Rng rng(64);
    const Matrix a = random_stochastic_map(rng, 6);
    const Matrix x1 = Matrix::random_normal(6, 8, rng);
    const Matrix x2 = Matrix::random_normal(6, 8, rng);
    const auto sol = exact_unconstrained(CompressionInstance::from_group({a, a}, {x1, x2}));
    CHECK(sol.residual <= 1e-16 * (1.0 + frobenius_norm_sq(x1)));
}

TEST_CASE("unconstrained oracle: generic low-rank pairs compress losslessly") {
    Rng rng(65);
    for (int trial = 0; trial < 10; ++trial) {
        const auto inst = random_pair_instance(rng, 8, 2, 8);
        const auto sol = exact_unconstrained(inst);
        CHECK(sol.residual <= 1e-8 * frobenius_norm_sq(inst.target));
    }
}

TEST_CASE("unconstrained oracle: unreachable targets leave the projection residual") {
    Rng rng(66);
    // Rank-2 P inside a 4x4 frame cannot reach a generic target.
    CompressionInstance inst;
    inst.p_sum = random_low_rank(rng, 4, 2, 4);
    inst.target = Matrix::random_normal(4, 4, rng);
    const auto sol = exact_unconstrained(inst);
    CHECK(sol.residual > 1e-3);
    const double reference = projection_residual(inst.p_sum, inst.target);
    CHECK(sol.residual == doctest::Approx(reference).epsilon(1e-8));
}

TEST_CASE("constrained oracle matches the unconstrained one when feasible") {
    Rng rng(67);
    // Full-rank single-head instance: the unique least-squares solution is
    // the row-stochastic map itself, so the constrained optimum coincides.
    const Matrix a = random_stochastic_map(rng, 6);
    const Matrix x = add(Matrix::random_normal(6, 6, rng), scale(Matrix::identity(6), 3.0));
    const auto inst = CompressionInstance::from_group({a}, {x});
    const auto unconstrained = exact_unconstrained(inst);
    const auto constrained = constrained_solve(inst);
    CHECK(constrained.residual <= unconstrained.residual + 1e-8);
    CHECK(constrained.residual >= unconstrained.residual - 1e-10);
    // Rows land on the simplex.
    for (std::size_t i = 0; i < constrained.a_tilde.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < constrained.a_tilde.cols(); ++j) {
            CHECK(constrained.a_tilde(i, j) >= -1e-12);
            sum += constrained.a_tilde(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-10);
    }
}

TEST_CASE("sandwich chain holds on random pair instances") {
    Rng rng(68);
    for (int trial = 0; trial < 15; ++trial) {
        const auto inst = random_pair_instance(rng, 6, 2, 8);
        const auto& a1 = inst.maps[0];
        const auto& a2 = inst.maps[1];
        const auto& x1 = inst.head_vals[0];
        const auto& x2 = inst.head_vals[1];

        const double unconstrained = exact_unconstrained(inst).residual;
        const double constrained = constrained_solve(inst).residual;
        const auto closed = pairwise_alpha(a1, a2, x1, x2);
        const double e0 = pair_energy(a1, a2, x1, x2, 0.0);
        const double e_half = pair_energy(a1, a2, x1, x2, 0.5);
        const double e1 = pair_energy(a1, a2, x1, x2, 1.0);

        CHECK(unconstrained <= constrained + 1e-8);
        CHECK(constrained <= closed.energy + 1e-8);
        CHECK(closed.energy <= std::min({e0, e_half, e1}) + 1e-8);
        CHECK(e_half <= std::max(e0, e1) + 1e-8);
    }
}

TEST_CASE("constrained oracle rejects beyond desk scale and bad arguments") {
    Rng rng(69);
    CompressionInstance big;
    big.p_sum = Matrix::random_normal(65, 4, rng);
    big.target = Matrix::random_normal(65, 4, rng);
    CHECK_THROWS_AS(constrained_solve(big), std::invalid_argument);
    const auto inst = random_pair_instance(rng, 4, 2, 6);
    CHECK_THROWS_AS(constrained_solve(inst, 0), std::invalid_argument);
}

TEST_CASE("constrained objective is convex along feasible segments") {
    Rng rng(70);
    const auto inst = random_pair_instance(rng, 5, 2, 6);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a_prime(5, 5), a_second(5, 5);
        for (std::size_t i = 0; i < 5; ++i) {
            std::vector<double> row1(5), row2(5);
            for (double& v : row1) v = rng.normal();
            for (double& v : row2) v = rng.normal();
            row1 = simplex_project(row1);
            row2 = simplex_project(row2);
            for (std::size_t j = 0; j < 5; ++j) {
                a_prime(i, j) = row1[j];
                a_second(i, j) = row2[j];
            }
        }
        const double lambda = rng.uniform();
        const Matrix blend = axpy(scale(a_prime, lambda), 1.0 - lambda, a_second);
        const double lhs = residual_energy(inst, blend);
        const double rhs = lambda * residual_energy(inst, a_prime) +
                           (1.0 - lambda) * residual_energy(inst, a_second);
        CHECK(lhs <= rhs + 1e-9);
    }
}

TEST_CASE("degenerate instance with zero value terms") {
    CompressionInstance inst;
    inst.p_sum = Matrix(4, 6);
    inst.target = Matrix(4, 6);
    const auto unconstrained = exact_unconstrained(inst);
    CHECK(frobenius_norm_sq(unconstrained.a_tilde) == 0.0);
    CHECK(unconstrained.residual == 0.0);
    const auto constrained = constrained_solve(inst);
    CHECK(constrained.residual == 0.0);
}
