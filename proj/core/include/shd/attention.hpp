#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "shd/matrix.hpp"

namespace shd {

/// Multi-head self-attention weights. The three input projections are stored
/// as full d_model x d_model matrices whose column blocks of width d belong
/// to the individual heads; the output projection stacks h blocks of d rows.
struct AttentionParams {
    std::size_t d_model = 0;
    std::size_t h = 0;  // head count
    std::size_t d = 0;  // per-head width, d_model == h * d
    Matrix w_q;         // d_model x d_model
    Matrix w_k;         // d_model x d_model
    Matrix w_v;         // d_model x d_model
    Matrix w_o;         // (h*d) x d_model

    void validate() const;  // throws on inconsistent shapes or non-finite entries

    Matrix q_block(std::size_t head) const { return col_block(w_q, head); }
    Matrix k_block(std::size_t head) const { return col_block(w_k, head); }
    Matrix v_block(std::size_t head) const { return col_block(w_v, head); }
    Matrix o_block(std::size_t head) const;  // d x d_model row block of w_o

    static AttentionParams random(std::size_t d_model, std::size_t h, Rng& rng);

private:
    Matrix col_block(const Matrix& w, std::size_t head) const;
};

/// Per-layer artifacts of one forward pass: the row-stochastic attention
/// maps A_i, the pre-softmax scores they came from (kept so maps can be
/// re-derived at any temperature without recomputing the QK product), and
/// the per-head value terms X_i with output = sum_i A_i X_i.
struct AttentionBundle {
    std::vector<Matrix> maps;         // h matrices, N x N
    std::vector<Matrix> scores;       // h matrices, N x N (already scaled by 1/sqrt(d))
    std::vector<Matrix> head_values;  // h matrices, N x d_model
    std::size_t seq_len = 0;
    bool causal = false;
    double temperature_used = 1.0;
};

// Scaled pre-softmax scores (x Wq_i)(x Wk_i)^T / sqrt(d), one per head.
std::vector<Matrix> attention_scores(const Matrix& x, const AttentionParams& params);

// Row-stochastic maps softmax(scores / temperature), causally masked on request.
std::vector<Matrix> attention_maps(const Matrix& x, const AttentionParams& params,
                                   bool causal, double temperature);

// Head value terms X_i = (x Wv_i) Wo_i, each N x d_model.
std::vector<Matrix> head_values(const Matrix& x, const AttentionParams& params);

// Full forward pass at temperature 1. Returns sum_i A_i X_i and the bundle.
std::pair<Matrix, AttentionBundle> mha_forward(const Matrix& x, const AttentionParams& params,
                                               bool causal);

// Map for one head re-derived from cached scores at the given temperature.
Matrix tempered_map(const Matrix& scores, bool causal, double temperature);

// Bundle with all maps re-derived at the given temperature.
AttentionBundle retemper(const AttentionBundle& bundle, double temperature);

}  // namespace shd
