#include "shd/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace shd {

void AttentionParams::validate() const {
    if (h == 0 || d == 0 || d_model != h * d) {
        throw std::invalid_argument("AttentionParams: need d_model == h*d, got d_model=" +
                                    std::to_string(d_model) + " h=" + std::to_string(h) +
                                    " d=" + std::to_string(d));
    }
    auto check = [&](const Matrix& w, std::size_t r, std::size_t c, const char* name) {
        if (w.rows() != r || w.cols() != c) {
            throw std::invalid_argument(std::string("AttentionParams: ") + name + " is " +
                                        w.shape_str() + ", expected " + std::to_string(r) + "x" +
                                        std::to_string(c));
        }
        if (!w.all_finite()) {
            throw std::invalid_argument(std::string("AttentionParams: ") + name +
                                        " has non-finite entries");
        }
    };
    check(w_q, d_model, d_model, "w_q");
    check(w_k, d_model, d_model, "w_k");
    check(w_v, d_model, d_model, "w_v");
    check(w_o, h * d, d_model, "w_o");
}

Matrix AttentionParams::col_block(const Matrix& w, std::size_t head) const {
    Matrix block(d_model, d);
    for (std::size_t i = 0; i < d_model; ++i)
        for (std::size_t j = 0; j < d; ++j) block(i, j) = w(i, head * d + j);
    return block;
}

Matrix AttentionParams::o_block(std::size_t head) const {
    Matrix block(d, d_model);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d_model; ++j) block(i, j) = w_o(head * d + i, j);
    return block;
}

AttentionParams AttentionParams::random(std::size_t d_model, std::size_t h, Rng& rng) {
    if (h == 0 || d_model % h != 0) {
        throw std::invalid_argument("AttentionParams::random: d_model must be divisible by h");
    }
    AttentionParams p;
    p.d_model = d_model;
    p.h = h;
    p.d = d_model / h;
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(d_model));
    p.w_q = Matrix::random_normal(d_model, d_model, rng, std_dev);
    p.w_k = Matrix::random_normal(d_model, d_model, rng, std_dev);
    p.w_v = Matrix::random_normal(d_model, d_model, rng, std_dev);
    p.w_o = Matrix::random_normal(d_model, d_model, rng, std_dev);
    return p;
}

std::vector<Matrix> attention_scores(const Matrix& x, const AttentionParams& params) {
    params.validate();
    if (x.cols() != params.d_model) {
        throw std::invalid_argument("attention_scores: input is " + x.shape_str() +
                                    ", expected N x " + std::to_string(params.d_model));
    }
    if (!x.all_finite()) throw std::invalid_argument("attention_scores: non-finite input");

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.d));
    std::vector<Matrix> scores;
    scores.reserve(params.h);
    for (std::size_t i = 0; i < params.h; ++i) {
        const Matrix q = matmul(x, params.q_block(i));
        const Matrix k = matmul(x, params.k_block(i));
        scores.push_back(scale(matmul_nt(q, k), inv_sqrt_d));
    }
    return scores;
}

Matrix tempered_map(const Matrix& scores, bool causal, double temperature) {
    if (causal) {
        const Matrix mask = causal_mask(scores.rows());
        return softmax_rows(scores, &mask, temperature);
    }
    return softmax_rows(scores, nullptr, temperature);
}

std::vector<Matrix> attention_maps(const Matrix& x, const AttentionParams& params, bool causal,
                                   double temperature) {
    std::vector<Matrix> maps;
    maps.reserve(params.h);
    for (const Matrix& s : attention_scores(x, params)) {
        maps.push_back(tempered_map(s, causal, temperature));
    }
    return maps;
}

std::vector<Matrix> head_values(const Matrix& x, const AttentionParams& params) {
    params.validate();
    if (x.cols() != params.d_model) {
        throw std::invalid_argument("head_values: input is " + x.shape_str() + ", expected N x " +
                                    std::to_string(params.d_model));
    }
    std::vector<Matrix> values;
    values.reserve(params.h);
    for (std::size_t i = 0; i < params.h; ++i) {
        values.push_back(matmul(matmul(x, params.v_block(i)), params.o_block(i)));
    }
    return values;
}

std::pair<Matrix, AttentionBundle> mha_forward(const Matrix& x, const AttentionParams& params,
                                               bool causal) {
    AttentionBundle bundle;
    bundle.scores = attention_scores(x, params);
    bundle.head_values = head_values(x, params);
    bundle.seq_len = x.rows();
    bundle.causal = causal;
    bundle.temperature_used = 1.0;

    Matrix output(x.rows(), params.d_model);
    for (std::size_t i = 0; i < params.h; ++i) {
        bundle.maps.push_back(tempered_map(bundle.scores[i], causal, 1.0));
        output = add(output, matmul(bundle.maps[i], bundle.head_values[i]));
    }
    return {std::move(output), std::move(bundle)};
}

AttentionBundle retemper(const AttentionBundle& bundle, double temperature) {
    AttentionBundle out = bundle;
    out.temperature_used = temperature;
    for (std::size_t i = 0; i < bundle.scores.size(); ++i) {
        out.maps[i] = tempered_map(bundle.scores[i], bundle.causal, temperature);
    }
    return out;
}

}  // namespace shd
