#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shd/attention.hpp"

using namespace shd;

namespace {

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

// Concat-then-project formulation: heads concatenated to N x (h d), then one
// product with the stacked output projection. The independent route for the
// expanded-sum equivalence check.
Matrix concat_form_forward(const Matrix& x, const AttentionParams& p, bool causal) {
    const std::vector<Matrix> maps = attention_maps(x, p, causal, 1.0);
    Matrix concat(x.rows(), p.h * p.d);
    for (std::size_t i = 0; i < p.h; ++i) {
        const Matrix head = matmul(maps[i], matmul(x, p.v_block(i)));
        for (std::size_t r = 0; r < head.rows(); ++r)
            for (std::size_t c = 0; c < p.d; ++c) concat(r, i * p.d + c) = head(r, c);
    }
    return matmul(concat, p.w_o);
}

double row_entropy(const Matrix& map, std::size_t row, std::size_t valid) {
    double h = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
        const double v = map(row, j);
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

TEST_CASE("zero input gives uniform maps") {
    Rng rng(21);
    const auto params = AttentionParams::random(12, 3, rng);
    const Matrix x(5, 12);
    for (const Matrix& map : attention_maps(x, params, false, 1.0)) {
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) CHECK(map(i, j) == doctest::Approx(0.2));
    }
}

TEST_CASE("single token gives the 1x1 unit map") {
    Rng rng(22);
    const auto params = AttentionParams::random(8, 2, rng);
    const Matrix x = Matrix::random_normal(1, 8, rng);
    for (bool causal : {false, true}) {
        for (const Matrix& map : attention_maps(x, params, causal, 1.0)) {
            REQUIRE(map.rows() == 1);
            CHECK(map(0, 0) == 1.0);
        }
    }
}

TEST_CASE("higher temperature never lowers per-row entropy") {
    Rng rng(23);
    const auto params = AttentionParams::random(16, 4, rng);
    const Matrix x = Matrix::random_normal(6, 16, rng, 2.0);
    const auto cool = attention_maps(x, params, false, 1.0);
    const auto warm = attention_maps(x, params, false, 2.0);
    for (std::size_t head = 0; head < 4; ++head) {
        for (std::size_t row = 0; row < 6; ++row) {
            CHECK(row_entropy(warm[head], row, 6) >= row_entropy(cool[head], row, 6) - 1e-12);
        }
    }
}

TEST_CASE("zero value projection zeroes every head value term") {
    Rng rng(24);
    auto params = AttentionParams::random(12, 3, rng);
    params.w_v = Matrix(12, 12);
    const Matrix x = Matrix::random_normal(4, 12, rng);
    for (const Matrix& xv : head_values(x, params)) {
        CHECK(frobenius_norm_sq(xv) == 0.0);
    }
}

TEST_CASE("single head with identity projections reproduces the input") {
    Rng rng(25);
    auto params = AttentionParams::random(6, 1, rng);
    params.w_v = Matrix::identity(6);
    params.w_o = Matrix::identity(6);
    const Matrix x = Matrix::random_normal(5, 6, rng);
    const auto values = head_values(x, params);
    REQUIRE(values.size() == 1);
    CHECK(max_abs_diff(values[0], x) < 1e-14);
}

TEST_CASE("sum form equals concat form") {
    Rng rng(26);
    for (int trial = 0; trial < 10; ++trial) {
        const auto params = AttentionParams::random(16, 4, rng);
        const Matrix x = Matrix::random_normal(7, 16, rng);
        const auto [output, bundle] = mha_forward(x, params, false);
        const Matrix reference = concat_form_forward(x, params, false);
        CHECK(max_abs_diff(output, reference) < 1e-10);
        const double norm = std::sqrt(frobenius_norm_sq(output));
        CHECK(std::sqrt(frobenius_norm_sq(sub(output, reference))) <= 1e-9 * (norm + 1.0));
    }
}

TEST_CASE("near-identity maps pass the value terms through") {
    // Large diagonal scores force A ~ I to machine precision.
    const std::size_t n = 4;
    AttentionParams params;
    params.d_model = n;
    params.h = 1;
    params.d = n;
    params.w_q = Matrix::identity(n);
    params.w_k = Matrix::identity(n);
    Rng rng(27);
    params.w_v = Matrix::random_normal(n, n, rng);
    params.w_o = Matrix::random_normal(n, n, rng);
    const Matrix x = scale(Matrix::identity(n), 30.0);
    const auto [output, bundle] = mha_forward(x, params, false);
    CHECK(max_abs_diff(bundle.maps[0], Matrix::identity(n)) < 1e-12);
    CHECK(max_abs_diff(output, bundle.head_values[0]) < 1e-10);
}

TEST_CASE("bundle maps are row stochastic and causal maps have a hard zero triangle") {
    Rng rng(28);
    const auto params = AttentionParams::random(16, 4, rng);
    const Matrix x = Matrix::random_normal(6, 16, rng, 1.5);
    for (bool causal : {false, true}) {
        const auto [output, bundle] = mha_forward(x, params, causal);
        for (const Matrix& map : bundle.maps) {
            for (std::size_t i = 0; i < map.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < map.cols(); ++j) {
                    CHECK(map(i, j) >= 0.0);
                    sum += map(i, j);
                    if (causal && j > i) CHECK(map(i, j) == 0.0);
                }
                CHECK(std::abs(sum - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("causal forward: first token ignores the future") {
    Rng rng(29);
    const auto params = AttentionParams::random(12, 3, rng);
    Matrix x = Matrix::random_normal(5, 12, rng);
    const auto [out_a, bundle_a] = mha_forward(x, params, true);
    for (std::size_t j = 0; j < 12; ++j) {
        x(3, j) += 7.0;  // perturb a later token
        x(4, j) -= 2.0;
    }
    const auto [out_b, bundle_b] = mha_forward(x, params, true);
    for (std::size_t j = 0; j < 12; ++j) {
        CHECK(out_a(0, j) == doctest::Approx(out_b(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("pre-softmax score matrices have rank at most d") {
    Rng rng(30);
    const auto params = AttentionParams::random(16, 4, rng);  // d = 4
    const Matrix x = Matrix::random_normal(12, 16, rng);      // N = 12 > d
    for (const Matrix& s : attention_scores(x, params)) {
        const auto sigma = singular_values(s);
        for (std::size_t i = params.d; i < sigma.size(); ++i) {
            CHECK(sigma[i] <= 1e-8 * sigma[0]);
        }
    }
}

TEST_CASE("retemper reuses cached scores") {
    Rng rng(31);
    const auto params = AttentionParams::random(8, 2, rng);
    const Matrix x = Matrix::random_normal(5, 8, rng);
    const auto [output, bundle] = mha_forward(x, params, true);
    const AttentionBundle warm = retemper(bundle, 2.0);
    CHECK(warm.temperature_used == 2.0);
    const auto direct = attention_maps(x, params, true, 2.0);
    for (std::size_t head = 0; head < 2; ++head) {
        CHECK(max_abs_diff(warm.maps[head], direct[head]) < 1e-12);
    }
}

TEST_CASE("attention params validation") {
    Rng rng(32);
    auto params = AttentionParams::random(8, 2, rng);
    params.h = 3;  // 8 % 3 != 0
    const Matrix x = Matrix::random_normal(4, 8, rng);
    CHECK_THROWS_AS(attention_maps(x, params, false, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(AttentionParams::random(9, 2, rng), std::invalid_argument);
}
