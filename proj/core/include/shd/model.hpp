#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shd/attention.hpp"
#include "shd/autodiff.hpp"
#include "shd/matrix.hpp"

namespace shd {

struct TinyTransformerConfig {
    std::size_t vocab = 0;
    std::size_t d_model = 0;
    std::size_t heads = 0;
    std::size_t layers = 0;
    std::size_t max_seq = 0;
    bool causal = true;

    std::size_t head_dim() const { return d_model / heads; }
    void validate() const;  // throws on vocab < 2, layers < 1, d_model % heads != 0, ...
};

/// Pre-norm decoder block weights: attention projections plus a GELU MLP
/// (d_model -> 4 d_model -> d_model) and the two layer norms.
struct LayerParams {
    AttentionParams attn;
    Matrix ln1_gain, ln1_bias;  // 1 x d_model
    Matrix ln2_gain, ln2_bias;  // 1 x d_model
    Matrix mlp_w1;              // d_model x 4 d_model
    Matrix mlp_b1;              // 1 x 4 d_model
    Matrix mlp_w2;              // 4 d_model x d_model
    Matrix mlp_b2;              // 1 x d_model
};

/// Decoder-only toy transformer: token + learned positional embeddings,
/// pre-norm blocks, untied linear output head. All weights double precision;
/// init is scaled normal (std = 1/sqrt(d_model)) from the seeded generator,
/// layer-norm gains 1 and biases 0.
struct TinyTransformer {
    TinyTransformerConfig cfg;
    Matrix tok_emb;   // vocab x d_model
    Matrix pos_emb;   // max_seq x d_model
    std::vector<LayerParams> layers;
    Matrix out_head;  // d_model x vocab

    static TinyTransformer random_init(const TinyTransformerConfig& cfg, std::uint64_t seed);

    // Stable, ordered view over every trainable matrix; the order defines the
    // serialization layout and the optimizer slot order.
    std::vector<std::pair<std::string, Matrix*>> parameters();
    std::vector<std::pair<std::string, const Matrix*>> parameters() const;

    struct Trace {
        Matrix logits;                        // N x vocab
        std::vector<AttentionBundle> bundles; // one per layer, maps at T=1
        std::vector<Matrix> features;         // per-layer block outputs, N x d_model
    };
    // Forward pass without gradients (runs the same graph as the tape path).
    Trace forward(const std::vector<int>& tokens) const;
};

/// Tape handles for one registration of the model's parameter matrices.
struct TapeParams {
    ad::Var tok_emb, pos_emb, out_head;
    struct Layer {
        ad::Var w_q, w_k, w_v, w_o;
        ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<Layer> layers;
    std::vector<ad::Var> ordered;  // aligned with TinyTransformer::parameters()
};

struct TapeTrace {
    ad::Var logits;
    std::vector<std::vector<ad::Var>> head_scores;  // [layer][head], pre-softmax, scaled
    std::vector<std::vector<ad::Var>> head_values;  // [layer][head], X_i terms
    std::vector<ad::Var> features;                  // per-layer block outputs
};

// Copies the current weights onto the tape as leaves.
TapeParams register_params(ad::Tape& tape, const TinyTransformer& model);

// Differentiable forward pass; mirrors TinyTransformer::forward exactly.
TapeTrace forward_on_tape(ad::Tape& tape, const TinyTransformerConfig& cfg,
                          const TapeParams& params, const std::vector<int>& tokens);

}  // namespace shd
