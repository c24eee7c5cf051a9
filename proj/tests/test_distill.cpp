#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shd/distill.hpp"

using namespace shd;

namespace {

AttentionBundle random_bundle(Rng& rng, std::size_t h, std::size_t n, std::size_t d_model,
                              bool causal) {
    AttentionBundle bundle;
    bundle.seq_len = n;
    bundle.causal = causal;
    bundle.temperature_used = 1.0;
    const Matrix mask = causal ? causal_mask(n) : Matrix{};
    for (std::size_t i = 0; i < h; ++i) {
        Matrix scores = Matrix::random_normal(n, n, rng, 1.5);
        bundle.maps.push_back(softmax_rows(scores, causal ? &mask : nullptr, 1.0));
        bundle.scores.push_back(std::move(scores));
        bundle.head_values.push_back(Matrix::random_normal(n, d_model, rng));
    }
    return bundle;
}

double row_entropy(const Matrix& map, std::size_t row) {
    double h = 0.0;
    for (std::size_t j = 0; j < map.cols(); ++j) {
        const double v = map(row, j);
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

TEST_CASE("layer map follows the uniform stride rule") {
    const LayerMap lm = layer_map(48, 24);
    CHECK(lm.pairs[3] == std::pair<std::size_t, std::size_t>{4, 8});

    const LayerMap identity = layer_map(6, 6);
    for (std::size_t s = 1; s <= 6; ++s) {
        CHECK(identity.pairs[s - 1] == std::pair<std::size_t, std::size_t>{s, s});
    }

    const LayerMap strided = layer_map(12, 4);
    CHECK(strided.pairs[0].second == 3);
    CHECK(strided.pairs[1].second == 6);
    CHECK(strided.pairs[2].second == 9);
    CHECK(strided.pairs[3].second == 12);

    CHECK_THROWS_AS(layer_map(4, 6), std::invalid_argument);
}

TEST_CASE("attention map loss zeroes on identical maps") {
    Rng rng(81);
    const AttentionBundle bundle = random_bundle(rng, 1, 6, 6, false);
    CHECK(attn_map_loss(bundle.maps[0], bundle.maps[0], AttnLossKind::KL, false) == 0.0);
    CHECK(attn_map_loss(bundle.maps[0], bundle.maps[0], AttnLossKind::MSE, false) == 0.0);
}

TEST_CASE("attention map loss analytic row value") {
    const Matrix teacher = Matrix::from_rows({{1.0, 0.0}});
    const Matrix student = Matrix::from_rows({{0.5, 0.5}});
    CHECK(attn_map_loss(teacher, student, AttnLossKind::KL, false) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(attn_map_loss(teacher, student, AttnLossKind::MSE, false) ==
          doctest::Approx(0.25));
}

TEST_CASE("KL is nonnegative and obeys Pinsker on random stochastic rows") {
    Rng rng(82);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix t = softmax_rows(Matrix::random_normal(1, 6, rng, 2.0), nullptr, 1.0);
        const Matrix s = softmax_rows(Matrix::random_normal(1, 6, rng, 2.0), nullptr, 1.0);
        const double kl = attn_map_loss(t, s, AttnLossKind::KL, false);
        CHECK(kl >= 0.0);
        double l1 = 0.0;
        for (std::size_t j = 0; j < 6; ++j) l1 += std::abs(t(0, j) - s(0, j));
        CHECK(kl >= 0.5 * l1 * l1 - 1e-12);
    }
}

TEST_CASE("MSE attention loss is bounded by the stochastic-map range") {
    Rng rng(83);
    const Matrix t = softmax_rows(Matrix::random_normal(4, 5, rng, 3.0), nullptr, 1.0);
    const Matrix s = softmax_rows(Matrix::random_normal(4, 5, rng, 3.0), nullptr, 1.0);
    const double mse = attn_map_loss(t, s, AttnLossKind::MSE, false);
    CHECK(mse >= 0.0);
    CHECK(mse <= 2.0);
}

TEST_CASE("causal rows restrict the loss to valid entries") {
    Rng rng(84);
    const Matrix mask = causal_mask(4);
    const Matrix t = softmax_rows(Matrix::random_normal(4, 4, rng), &mask, 1.0);
    Matrix s = t;
    s(0, 2) = 0.7;  // outside the causal triangle; must be ignored
    CHECK(attn_map_loss(t, s, AttnLossKind::KL, true) == 0.0);
    CHECK(attn_map_loss(t, s, AttnLossKind::MSE, true) == 0.0);
}

TEST_CASE("shd_loss vanishes when the student is the teacher") {
    Rng rng(85);
    std::vector<AttentionBundle> bundles;
    for (int l = 0; l < 2; ++l) bundles.push_back(random_bundle(rng, 4, 6, 8, true));
    const LayerMap lm = layer_map(2, 2);
    for (MergeStrategy strategy : {MergeStrategy::Shd, MergeStrategy::ConstantHalf,
                                   MergeStrategy::HardSelect, MergeStrategy::HeadMatch}) {
        for (AttnLossKind kind : {AttnLossKind::KL, AttnLossKind::MSE}) {
            DistillConfig cfg;
            cfg.beta = 2.0;
            cfg.attn_temperature = 2.0;
            cfg.strategy = strategy;
            cfg.attn_loss = kind;
            CHECK(std::abs(shd_loss(bundles, bundles, cfg, lm)) <= 1e-12);
        }
    }
}

TEST_CASE("shd_loss scales linearly in beta and vanishes at beta zero") {
    Rng rng(86);
    std::vector<AttentionBundle> teacher{random_bundle(rng, 4, 6, 8, false)};
    std::vector<AttentionBundle> student{random_bundle(rng, 2, 6, 8, false)};
    const LayerMap lm = layer_map(1, 1);
    DistillConfig cfg;
    cfg.beta = 1.0;
    const double base = shd_loss(teacher, student, cfg, lm);
    CHECK(base > 0.0);
    cfg.beta = 2.0;
    CHECK(shd_loss(teacher, student, cfg, lm) == doctest::Approx(2.0 * base).epsilon(1e-12));
    cfg.beta = 0.0;
    CHECK(shd_loss(teacher, student, cfg, lm) == 0.0);
}

TEST_CASE("logit KD loss basics") {
    Rng rng(87);
    const Matrix logits = Matrix::random_normal(5, 7, rng, 2.0);
    CHECK(logit_kd_loss(logits, logits, 2.0) == 0.0);

    Matrix shifted = logits;
    for (std::size_t j = 0; j < 7; ++j) shifted(2, j) += 11.0;
    CHECK(std::abs(logit_kd_loss(logits, shifted, 2.0)) < 1e-10);
}

TEST_CASE("logit KD loss matches the scalar reference on a two-class row") {
    const Matrix t = Matrix::from_rows({{1.0, 0.0}});
    const Matrix s = Matrix::from_rows({{0.0, 1.0}});
    const double e = std::exp(1.0);
    // KL(softmax([1,0]) || softmax([0,1])) = (e-1)/(e+1)
    CHECK(logit_kd_loss(t, s, 1.0) == doctest::Approx((e - 1.0) / (e + 1.0)).epsilon(1e-12));
    // The T^2 factor is part of the contract.
    const double at_t2 = logit_kd_loss(t, s, 2.0);
    const Matrix p = softmax_rows(t, nullptr, 2.0);
    const Matrix q = softmax_rows(s, nullptr, 2.0);
    double kl = 0.0;
    for (std::size_t j = 0; j < 2; ++j) kl += p(0, j) * std::log(p(0, j) / q(0, j));
    CHECK(at_t2 == doctest::Approx(4.0 * kl).epsilon(1e-12));
}

TEST_CASE("logit KD respects the valid-position flags") {
    Rng rng(88);
    const Matrix t = Matrix::random_normal(4, 5, rng);
    Matrix s = t;
    s(1, 0) += 3.0;
    const std::vector<std::uint8_t> valid{1, 0, 1, 1};
    CHECK(logit_kd_loss(t, s, 1.0, &valid) == 0.0);
    CHECK(logit_kd_loss(t, s, 1.0) > 0.0);
}

TEST_CASE("self correlation loss: identity, scale invariance, reference") {
    Rng rng(89);
    const Matrix f = Matrix::random_normal(6, 10, rng);
    CHECK(std::abs(self_correlation_loss(f, f)) < 1e-12);
    CHECK(std::abs(self_correlation_loss(f, scale(f, 3.7))) < 1e-12);

    const Matrix g = Matrix::random_normal(6, 4, rng);  // widths may differ
    const double loss = self_correlation_loss(f, g);
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);

    // Double-loop reference.
    auto gram = [](const Matrix& m) {
        Matrix out(m.rows(), m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.rows(); ++j) {
                double dot = 0.0, ni = 0.0, nj = 0.0;
                for (std::size_t k = 0; k < m.cols(); ++k) {
                    dot += m(i, k) * m(j, k);
                    ni += m(i, k) * m(i, k);
                    nj += m(j, k) * m(j, k);
                }
                out(i, j) = dot / std::sqrt(ni * nj);
            }
        return out;
    };
    const Matrix ct = gram(f), cs = gram(g);
    const double sim = frobenius_inner(ct, cs) /
                       (std::sqrt(frobenius_norm_sq(ct)) * std::sqrt(frobenius_norm_sq(cs)));
    CHECK(loss == doctest::Approx(1.0 - sim).epsilon(1e-10));

    CHECK_THROWS_AS(self_correlation_loss(Matrix(3, 4), f), std::invalid_argument);
}

TEST_CASE("projector feature loss") {
    Rng rng(90);
    const Matrix f_s = Matrix::random_normal(5, 4, rng);
    const Matrix w = Matrix::random_normal(4, 8, rng);
    const Matrix f_t = matmul(f_s, w);
    CHECK(projector_fd_loss(f_t, f_s, w) < 1e-20);
    CHECK(projector_fd_loss(f_t, f_s, Matrix(4, 8)) ==
          doctest::Approx(frobenius_norm_sq(f_t) / static_cast<double>(f_t.size())));

    const Matrix f_t2 = Matrix::random_normal(5, 8, rng);
    double reference = 0.0;
    const Matrix pred = matmul(f_s, w);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            const double d = pred(i, j) - f_t2(i, j);
            reference += d * d;
        }
    reference /= 40.0;
    CHECK(projector_fd_loss(f_t2, f_s, w) == doctest::Approx(reference).epsilon(1e-12));
}

TEST_CASE("temperature monotonicity of tempered maps") {
    Rng rng(91);
    const AttentionBundle bundle = random_bundle(rng, 3, 6, 8, true);
    const AttentionBundle warm = retemper(bundle, 2.0);
    const AttentionBundle warmer = retemper(bundle, 4.0);
    for (std::size_t head = 0; head < 3; ++head) {
        for (std::size_t row = 0; row < 6; ++row) {
            CHECK(row_entropy(warmer.maps[head], row) >=
                  row_entropy(warm.maps[head], row) - 1e-12);
        }
    }
}

TEST_CASE("head match strategy consumes calibrated groups from the config") {
    Rng rng(92);
    DistillConfig cfg;
    cfg.strategy = MergeStrategy::HeadMatch;
    cfg.matched_groups = {{{0, 2}, {1, 3}}};
    const MergePlan plan = cfg.plan_for_layer(0, 4, 2);
    CHECK(plan.groups == cfg.matched_groups[0]);
    // Without calibration the contiguous partition is the fallback.
    const MergePlan fallback = cfg.plan_for_layer(1, 4, 2);
    CHECK(fallback.groups == partition_heads(4, 2));
}
