#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shd/oracle.hpp"
#include "shd/squeeze.hpp"

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

Matrix random_stochastic_map(Rng& rng, std::size_t n) {
    return softmax_rows(Matrix::random_normal(n, n, rng, 2.0), nullptr, 1.0);
}

Matrix random_low_rank(Rng& rng, std::size_t n, std::size_t rank, std::size_t d_model) {
    return matmul(Matrix::random_normal(n, rank, rng), Matrix::random_normal(rank, d_model, rng));
}

AttentionBundle random_bundle(Rng& rng, std::size_t h, std::size_t n, std::size_t d_model,
                              std::size_t rank) {
    AttentionBundle bundle;
    bundle.seq_len = n;
    bundle.causal = false;
    bundle.temperature_used = 1.0;
    for (std::size_t i = 0; i < h; ++i) {
        Matrix scores = Matrix::random_normal(n, n, rng, 2.0);
        bundle.maps.push_back(softmax_rows(scores, nullptr, 1.0));
        bundle.scores.push_back(std::move(scores));
        bundle.head_values.push_back(random_low_rank(rng, n, rank, d_model));
    }
    return bundle;
}

}  // namespace

TEST_CASE("partition_heads policy") {
    const auto even = partition_heads(6, 3);
    REQUIRE(even.size() == 3);
    CHECK(even[0] == std::vector<std::size_t>{0, 1});
    CHECK(even[1] == std::vector<std::size_t>{2, 3});
    CHECK(even[2] == std::vector<std::size_t>{4, 5});

    const auto identity = partition_heads(4, 4);
    for (std::size_t g = 0; g < 4; ++g) CHECK(identity[g] == std::vector<std::size_t>{g});

    const auto uneven = partition_heads(25, 12);
    REQUIRE(uneven.size() == 12);
    CHECK(uneven[0] == std::vector<std::size_t>{0, 1, 2});
    for (std::size_t g = 1; g < 12; ++g) CHECK(uneven[g].size() == 2);
    CHECK(uneven[11] == std::vector<std::size_t>{23, 24});

    CHECK_THROWS_AS(partition_heads(3, 5), std::invalid_argument);
    CHECK_THROWS_AS(partition_heads(3, 0), std::invalid_argument);
}

TEST_CASE("pairwise alpha tie-breaks to one half when the maps agree") {
    Rng rng(41);
    const Matrix a = random_stochastic_map(rng, 5);
    const Matrix x1 = Matrix::random_normal(5, 6, rng);
    const Matrix x2 = Matrix::random_normal(5, 6, rng);
    const auto pa = pairwise_alpha(a, a, x1, x2);
    CHECK(pa.alpha == 0.5);
    CHECK(pa.energy < 1e-20);
}

TEST_CASE("pairwise alpha is exactly one half for equal value terms") {
    Rng rng(42);
    const Matrix a1 = random_stochastic_map(rng, 6);
    const Matrix a2 = random_stochastic_map(rng, 6);
    const Matrix x = Matrix::random_normal(6, 4, rng);
    const auto pa = pairwise_alpha(a1, a2, x, x);
    CHECK(pa.alpha == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pairwise alpha is one when the second head contributes nothing") {
    Rng rng(43);
    const Matrix a1 = random_stochastic_map(rng, 6);
    const Matrix a2 = random_stochastic_map(rng, 6);
    const Matrix x1 = Matrix::random_normal(6, 4, rng);
    const Matrix x2(6, 4);
    const auto pa = pairwise_alpha(a1, a2, x1, x2);
    CHECK(pa.alpha == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pa.energy < 1e-18);
}

TEST_CASE("pairwise alpha energy matches the grid oracle") {
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix a1 = random_stochastic_map(rng, 6);
        const Matrix a2 = random_stochastic_map(rng, 6);
        const Matrix x1 = random_low_rank(rng, 6, 2, 8);
        const Matrix x2 = random_low_rank(rng, 6, 2, 8);
        const auto pa = pairwise_alpha(a1, a2, x1, x2);
        const auto grid = grid_search_alpha(a1, a2, x1, x2, 1e-4);
        CHECK(std::abs(pa.energy - grid.energy) <= 1e-6 * (1.0 + grid.energy));
        CHECK(pa.energy <= grid.energy + 1e-9);
        CHECK(std::abs(pa.alpha - grid.alpha) <= 1e-3);
    }
}

TEST_CASE("closed-form alpha beats the three canonical coefficients") {
    Rng rng(45);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix a1 = random_stochastic_map(rng, 5);
        const Matrix a2 = random_stochastic_map(rng, 5);
        const Matrix x1 = random_low_rank(rng, 5, 2, 6);
        const Matrix x2 = random_low_rank(rng, 5, 2, 6);
        const auto pa = pairwise_alpha(a1, a2, x1, x2);
        const double floor3 = std::min({pair_energy(a1, a2, x1, x2, 0.0),
                                        pair_energy(a1, a2, x1, x2, 0.5),
                                        pair_energy(a1, a2, x1, x2, 1.0)});
        CHECK(pa.energy <= floor3 + 1e-9);
        CHECK(std::abs(pair_energy(a1, a2, x1, x2, pa.alpha) - pa.energy) <=
              1e-9 * (1.0 + pa.energy));
    }
}

TEST_CASE("uncorrected bias term never wins and loses on a clean instance") {
    Rng rng(46);
    // X2 = 0 forces the corrected coefficient to 1; the uncorrected form
    // lands elsewhere and pays for it.
    const Matrix a1 = random_stochastic_map(rng, 6);
    const Matrix a2 = random_stochastic_map(rng, 6);
    const Matrix x1 = Matrix::random_normal(6, 6, rng);
    const Matrix x2(6, 6);
    const auto good = pairwise_alpha(a1, a2, x1, x2);
    const auto paper = pairwise_alpha_paper_form(a1, a2, x1, x2);
    CHECK(paper.energy >= good.energy + 1e-6);

    for (int trial = 0; trial < 50; ++trial) {
        const Matrix b1 = random_stochastic_map(rng, 5);
        const Matrix b2 = random_stochastic_map(rng, 5);
        const Matrix y1 = random_low_rank(rng, 5, 2, 6);
        const Matrix y2 = random_low_rank(rng, 5, 2, 6);
        const auto g = pairwise_alpha(b1, b2, y1, y2);
        const auto p = pairwise_alpha_paper_form(b1, b2, y1, y2);
        CHECK(p.energy >= g.energy - 1e-9);
    }
}

TEST_CASE("merge_group folds left with accumulated value terms") {
    Rng rng(47);
    const std::size_t n = 5, dm = 6;

    SUBCASE("singleton is the identity") {
        const Matrix a = random_stochastic_map(rng, n);
        const Matrix x = Matrix::random_normal(n, dm, rng);
        const auto merged = merge_group({a}, {x});
        CHECK(max_abs_diff(merged.map, a) == 0.0);
        CHECK(merged.alphas.empty());
        CHECK(max_abs_diff(merged.x_acc, x) == 0.0);
    }

    SUBCASE("two identical heads collapse to themselves at alpha one half") {
        const Matrix a = random_stochastic_map(rng, n);
        const Matrix x = Matrix::random_normal(n, dm, rng);
        const auto merged = merge_group({a, a}, {x, x});
        CHECK(max_abs_diff(merged.map, a) < 1e-15);
        REQUIRE(merged.alphas.size() == 1);
        CHECK(merged.alphas[0] == 0.5);
    }

    SUBCASE("a third head with zero value term is ignored") {
        const Matrix a1 = random_stochastic_map(rng, n);
        const Matrix a2 = random_stochastic_map(rng, n);
        const Matrix a3 = random_stochastic_map(rng, n);
        const Matrix x1 = Matrix::random_normal(n, dm, rng);
        const Matrix x2 = Matrix::random_normal(n, dm, rng);
        const Matrix x3(n, dm);
        const auto two = merge_group({a1, a2}, {x1, x2});
        const auto three = merge_group({a1, a2, a3}, {x1, x2, x3});
        REQUIRE(three.alphas.size() == 2);
        CHECK(three.alphas[1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(max_abs_diff(three.map, two.map) < 1e-12);
    }

    CHECK_THROWS_AS(merge_group({}, {}), std::invalid_argument);
}

TEST_CASE("squeeze_heads with as many student heads as teacher heads is the identity") {
    Rng rng(48);
    const AttentionBundle bundle = random_bundle(rng, 4, 5, 8, 2);
    for (MergeStrategy strategy : {MergeStrategy::Shd, MergeStrategy::ConstantHalf,
                                   MergeStrategy::HardSelect, MergeStrategy::HeadMatch}) {
        MergePlan plan{partition_heads(4, 4), strategy, 123};
        const MergeResult result = squeeze_heads(bundle, plan);
        REQUIRE(result.maps.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(max_abs_diff(result.maps[i], bundle.maps[i]) == 0.0);
        }
    }
}

TEST_CASE("squeezed maps stay row stochastic") {
    Rng rng(49);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = 2 + rng.uniform_int(6);
        const std::size_t h_s = 1 + rng.uniform_int(h);
        const AttentionBundle bundle = random_bundle(rng, h, 4, 6, 2);
        MergePlan plan{partition_heads(h, h_s),
                       trial % 2 == 0 ? MergeStrategy::Shd : MergeStrategy::ConstantHalf, 0};
        const MergeResult result = squeeze_heads(bundle, plan);
        for (const Matrix& map : result.maps) {
            for (std::size_t i = 0; i < map.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < map.cols(); ++j) {
                    CHECK(map(i, j) >= 0.0);
                    sum += map(i, j);
                }
                CHECK(std::abs(sum - 1.0) < 1e-9);
            }
        }
        for (const auto& group_alphas : result.alphas) {
            for (double alpha : group_alphas) {
                CHECK(alpha >= 0.0);
                CHECK(alpha <= 1.0);
            }
        }
    }
}

TEST_CASE("optimal per-pair energy never exceeds the constant-half energy") {
    Rng rng(50);
    for (int trial = 0; trial < 100; ++trial) {
        const AttentionBundle bundle = random_bundle(rng, 2, 5, 6, 2);
        const auto optimal = pairwise_alpha(bundle.maps[0], bundle.maps[1],
                                            bundle.head_values[0], bundle.head_values[1]);
        const double constant = pair_energy(bundle.maps[0], bundle.maps[1],
                                            bundle.head_values[0], bundle.head_values[1], 0.5);
        CHECK(optimal.energy <= constant + 1e-9);
    }
}

TEST_CASE("hard select is deterministic in the stored seed") {
    Rng rng(51);
    const AttentionBundle bundle = random_bundle(rng, 6, 4, 6, 2);
    MergePlan plan{partition_heads(6, 2), MergeStrategy::HardSelect, 987};
    const MergeResult first = squeeze_heads(bundle, plan);
    const MergeResult second = squeeze_heads(bundle, plan);
    REQUIRE(first.maps.size() == second.maps.size());
    for (std::size_t g = 0; g < first.maps.size(); ++g) {
        CHECK(first.maps[g] == second.maps[g]);  // bit identical
        bool is_member = false;
        for (std::size_t head : plan.groups[g]) {
            if (max_abs_diff(first.maps[g], bundle.maps[head]) == 0.0) is_member = true;
        }
        CHECK(is_member);
    }
    MergePlan other{partition_heads(6, 2), MergeStrategy::HardSelect, 988};
    bool any_difference = false;
    for (int probe = 0; probe < 4 && !any_difference; ++probe) {
        const MergeResult alt = squeeze_heads(bundle, other);
        for (std::size_t g = 0; g < alt.maps.size(); ++g) {
            if (!(alt.maps[g] == first.maps[g])) any_difference = true;
        }
        other.hard_select_seed += 1;
    }
    CHECK(any_difference);
}

TEST_CASE("head similarity is symmetric with a unit diagonal") {
    Rng rng(52);
    std::vector<Matrix> maps;
    for (int i = 0; i < 4; ++i) maps.push_back(random_stochastic_map(rng, 5));
    const Matrix sim = head_similarity(maps);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(sim(i, i) == doctest::Approx(1.0));
        for (std::size_t j = 0; j < 4; ++j) CHECK(sim(i, j) == doctest::Approx(sim(j, i)));
    }
    const Matrix sim_same = head_similarity({maps[0], maps[0], maps[0]});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(sim_same(i, j) == doctest::Approx(1.0));
}

TEST_CASE("disjoint equal-mass maps score exactly zero similarity") {
    Matrix a(4, 4), b(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        a(i, 0) = 0.5;
        a(i, 1) = 0.5;
        b(i, 2) = 0.5;
        b(i, 3) = 0.5;
    }
    const Matrix sim = head_similarity({a, b});
    CHECK(sim(0, 1) == doctest::Approx(0.0));
    CHECK(sim(0, 1) < 1.0);
}

TEST_CASE("match_heads groups by maximum similarity") {
    Matrix sim = Matrix::identity(4);
    sim(0, 3) = sim(3, 0) = 0.9;
    sim(1, 2) = sim(2, 1) = 0.8;
    sim(0, 1) = sim(1, 0) = 0.1;
    sim(2, 3) = sim(3, 2) = 0.2;
    sim(0, 2) = sim(2, 0) = 0.15;
    sim(1, 3) = sim(3, 1) = 0.05;
    const auto groups = match_heads(sim, 2);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0] == std::vector<std::size_t>{0, 3});
    CHECK(groups[1] == std::vector<std::size_t>{1, 2});
}

TEST_CASE("match_heads tie-breaks to the contiguous partition") {
    Matrix sim(4, 4, 0.5);
    const auto groups = match_heads(sim, 2);
    CHECK(groups == partition_heads(4, 2));
    Matrix sim5(5, 5, 0.5);
    CHECK(match_heads(sim5, 2) == partition_heads(5, 2));
}

TEST_CASE("match_heads with equal head counts yields singletons") {
    Rng rng(53);
    std::vector<Matrix> maps;
    for (int i = 0; i < 3; ++i) maps.push_back(random_stochastic_map(rng, 4));
    const auto groups = match_heads(head_similarity(maps), 3);
    CHECK(groups == partition_heads(3, 3));
}

TEST_CASE("merge plan validation rejects bad partitions") {
    Rng rng(54);
    const AttentionBundle bundle = random_bundle(rng, 3, 4, 6, 2);
    MergePlan holes{{{0}, {2}}, MergeStrategy::Shd, 0};
    CHECK_THROWS_AS(squeeze_heads(bundle, holes), std::invalid_argument);
    MergePlan dupe{{{0, 1}, {1, 2}}, MergeStrategy::Shd, 0};
    CHECK_THROWS_AS(squeeze_heads(bundle, dupe), std::invalid_argument);
    MergePlan empty_group{{{0, 1, 2}, {}}, MergeStrategy::Shd, 0};
    CHECK_THROWS_AS(squeeze_heads(bundle, empty_group), std::invalid_argument);
}
