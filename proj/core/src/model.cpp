#include "shd/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace shd {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

void TinyTransformerConfig::validate() const {
    if (vocab < 2) throw std::invalid_argument("TinyTransformerConfig: vocab must be >= 2");
    if (layers < 1) throw std::invalid_argument("TinyTransformerConfig: layers must be >= 1");
    if (heads == 0 || d_model == 0 || d_model % heads != 0) {
        throw std::invalid_argument("TinyTransformerConfig: d_model must be a positive multiple "
                                    "of heads, got d_model=" +
                                    std::to_string(d_model) + " heads=" + std::to_string(heads));
    }
    if (max_seq == 0) throw std::invalid_argument("TinyTransformerConfig: max_seq must be >= 1");
}

TinyTransformer TinyTransformer::random_init(const TinyTransformerConfig& cfg,
                                             std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    TinyTransformer model;
    model.cfg = cfg;
    model.tok_emb = Matrix::random_normal(cfg.vocab, cfg.d_model, rng, std_dev);
    model.pos_emb = Matrix::random_normal(cfg.max_seq, cfg.d_model, rng, std_dev);
    model.layers.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerParams layer;
        layer.attn.d_model = cfg.d_model;
        layer.attn.h = cfg.heads;
        layer.attn.d = cfg.head_dim();
        layer.attn.w_q = Matrix::random_normal(cfg.d_model, cfg.d_model, rng, std_dev);
        layer.attn.w_k = Matrix::random_normal(cfg.d_model, cfg.d_model, rng, std_dev);
        layer.attn.w_v = Matrix::random_normal(cfg.d_model, cfg.d_model, rng, std_dev);
        layer.attn.w_o = Matrix::random_normal(cfg.d_model, cfg.d_model, rng, std_dev);
        layer.ln1_gain = Matrix(1, cfg.d_model, 1.0);
        layer.ln1_bias = Matrix(1, cfg.d_model, 0.0);
        layer.ln2_gain = Matrix(1, cfg.d_model, 1.0);
        layer.ln2_bias = Matrix(1, cfg.d_model, 0.0);
        layer.mlp_w1 = Matrix::random_normal(cfg.d_model, 4 * cfg.d_model, rng, std_dev);
        layer.mlp_b1 = Matrix(1, 4 * cfg.d_model, 0.0);
        layer.mlp_w2 = Matrix::random_normal(4 * cfg.d_model, cfg.d_model, rng, std_dev);
        layer.mlp_b2 = Matrix(1, cfg.d_model, 0.0);
        model.layers.push_back(std::move(layer));
    }
    model.out_head = Matrix::random_normal(cfg.d_model, cfg.vocab, rng, std_dev);
    return model;
}

std::vector<std::pair<std::string, Matrix*>> TinyTransformer::parameters() {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerParams& layer = layers[l];
        out.emplace_back(p + "w_q", &layer.attn.w_q);
        out.emplace_back(p + "w_k", &layer.attn.w_k);
        out.emplace_back(p + "w_v", &layer.attn.w_v);
        out.emplace_back(p + "w_o", &layer.attn.w_o);
        out.emplace_back(p + "ln1_gain", &layer.ln1_gain);
        out.emplace_back(p + "ln1_bias", &layer.ln1_bias);
        out.emplace_back(p + "ln2_gain", &layer.ln2_gain);
        out.emplace_back(p + "ln2_bias", &layer.ln2_bias);
        out.emplace_back(p + "mlp_w1", &layer.mlp_w1);
        out.emplace_back(p + "mlp_b1", &layer.mlp_b1);
        out.emplace_back(p + "mlp_w2", &layer.mlp_w2);
        out.emplace_back(p + "mlp_b2", &layer.mlp_b2);
    }
    out.emplace_back("out_head", &out_head);
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> TinyTransformer::parameters() const {
    auto mutable_view = const_cast<TinyTransformer*>(this)->parameters();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, ptr] : mutable_view) out.emplace_back(name, ptr);
    return out;
}

TapeParams register_params(ad::Tape& tape, const TinyTransformer& model) {
    TapeParams vars;
    vars.tok_emb = tape.leaf(model.tok_emb);
    vars.pos_emb = tape.leaf(model.pos_emb);
    vars.ordered.push_back(vars.tok_emb);
    vars.ordered.push_back(vars.pos_emb);
    for (const LayerParams& layer : model.layers) {
        TapeParams::Layer lv;
        lv.w_q = tape.leaf(layer.attn.w_q);
        lv.w_k = tape.leaf(layer.attn.w_k);
        lv.w_v = tape.leaf(layer.attn.w_v);
        lv.w_o = tape.leaf(layer.attn.w_o);
        lv.ln1_gain = tape.leaf(layer.ln1_gain);
        lv.ln1_bias = tape.leaf(layer.ln1_bias);
        lv.ln2_gain = tape.leaf(layer.ln2_gain);
        lv.ln2_bias = tape.leaf(layer.ln2_bias);
        lv.mlp_w1 = tape.leaf(layer.mlp_w1);
        lv.mlp_b1 = tape.leaf(layer.mlp_b1);
        lv.mlp_w2 = tape.leaf(layer.mlp_w2);
        lv.mlp_b2 = tape.leaf(layer.mlp_b2);
        for (ad::Var v : {lv.w_q, lv.w_k, lv.w_v, lv.w_o, lv.ln1_gain, lv.ln1_bias, lv.ln2_gain,
                          lv.ln2_bias, lv.mlp_w1, lv.mlp_b1, lv.mlp_w2, lv.mlp_b2}) {
            vars.ordered.push_back(v);
        }
        vars.layers.push_back(lv);
    }
    vars.out_head = tape.leaf(model.out_head);
    vars.ordered.push_back(vars.out_head);
    return vars;
}

TapeTrace forward_on_tape(ad::Tape& tape, const TinyTransformerConfig& cfg,
                          const TapeParams& params, const std::vector<int>& tokens) {
    const std::size_t n = tokens.size();
    if (n == 0) throw std::invalid_argument("forward_on_tape: empty token sequence");
    if (n > cfg.max_seq) {
        throw std::invalid_argument("forward_on_tape: sequence length " + std::to_string(n) +
                                    " exceeds max_seq " + std::to_string(cfg.max_seq));
    }
    const std::size_t d = cfg.head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    TapeTrace trace;
    ad::Var x = tape.add(tape.embedding(params.tok_emb, tokens),
                         tape.slice_rows(params.pos_emb, 0, n));

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const TapeParams::Layer& lv = params.layers[l];
        const ad::Var normed = tape.layer_norm(x, lv.ln1_gain, lv.ln1_bias, kLayerNormEps);

        std::vector<ad::Var> scores;
        std::vector<ad::Var> values;
        ad::Var attn_out;
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const ad::Var q = tape.matmul(normed, tape.slice_cols(lv.w_q, head * d, d));
            const ad::Var k = tape.matmul(normed, tape.slice_cols(lv.w_k, head * d, d));
            const ad::Var s = tape.scale(tape.matmul_nt(q, k), inv_sqrt_d);
            scores.push_back(s);
            const ad::Var map = tape.softmax_rows(s, cfg.causal, 1.0);
            const ad::Var v = tape.matmul(normed, tape.slice_cols(lv.w_v, head * d, d));
            const ad::Var x_i = tape.matmul(v, tape.slice_rows(lv.w_o, head * d, d));
            values.push_back(x_i);
            const ad::Var contribution = tape.matmul(map, x_i);
            attn_out = head == 0 ? contribution : tape.add(attn_out, contribution);
        }
        trace.head_scores.push_back(std::move(scores));
        trace.head_values.push_back(std::move(values));
        x = tape.add(x, attn_out);

        const ad::Var normed2 = tape.layer_norm(x, lv.ln2_gain, lv.ln2_bias, kLayerNormEps);
        const ad::Var hidden = tape.gelu(
            tape.add_row_vector(tape.matmul(normed2, lv.mlp_w1), lv.mlp_b1));
        const ad::Var mlp_out =
            tape.add_row_vector(tape.matmul(hidden, lv.mlp_w2), lv.mlp_b2);
        x = tape.add(x, mlp_out);
        trace.features.push_back(x);
    }

    trace.logits = tape.matmul(x, params.out_head);
    return trace;
}

TinyTransformer::Trace TinyTransformer::forward(const std::vector<int>& tokens) const {
    ad::Tape tape;
    const TapeParams vars = register_params(tape, *this);
    const TapeTrace tape_trace = forward_on_tape(tape, cfg, vars, tokens);

    Trace trace;
    trace.logits = tape.value(tape_trace.logits);
    if (!trace.logits.all_finite()) {
        throw std::invalid_argument("TinyTransformer::forward: non-finite logits");
    }
    trace.features.reserve(cfg.layers);
    for (ad::Var f : tape_trace.features) trace.features.push_back(tape.value(f));

    trace.bundles.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        AttentionBundle bundle;
        bundle.seq_len = tokens.size();
        bundle.causal = cfg.causal;
        bundle.temperature_used = 1.0;
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            Matrix scores = tape.value(tape_trace.head_scores[l][head]);
            bundle.maps.push_back(tempered_map(scores, cfg.causal, 1.0));
            bundle.scores.push_back(std::move(scores));
            bundle.head_values.push_back(tape.value(tape_trace.head_values[l][head]));
        }
        trace.bundles.push_back(std::move(bundle));
    }
    return trace;
}

}  // namespace shd
