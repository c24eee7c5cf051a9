#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "shd/attention.hpp"
#include "shd/matrix.hpp"
#include "shd/squeeze.hpp"

namespace shd {

enum class AttnLossKind { KL, MSE };
enum class BaselineKind { None, SelfCorrelation, Projector };

/// Which teacher layer supervises which student layer: 1-indexed pairs
/// (student, teacher), strictly increasing, one per student layer.
struct LayerMap {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Uniform-stride correspondence: student layer s maps to teacher layer
// round(s * l_t / l_s). Requires l_s <= l_t.
LayerMap layer_map(std::size_t l_t, std::size_t l_s);

struct DistillConfig {
    double beta = 2.0;              // weight on the squeezed-map loss
    double attn_temperature = 2.0;  // T applied to both sides' cached scores
    double logit_temperature = 2.0;
    bool use_logit_kd = false;
    MergeStrategy strategy = MergeStrategy::Shd;
    AttnLossKind attn_loss = AttnLossKind::KL;
    BaselineKind baseline = BaselineKind::None;
    std::uint64_t hard_select_seed = 0;
    // Head groups per teacher layer when strategy == HeadMatch, produced by a
    // calibration pass before training; empty means "not calibrated yet".
    std::vector<std::vector<std::vector<std::size_t>>> matched_groups;
    // Samples used by that calibration pass.
    std::size_t head_match_calibration = 8;

    // Plan for squeezing h_t teacher heads down to h_s for a given teacher
    // layer (0-indexed), honoring strategy and any matched groups.
    MergePlan plan_for_layer(std::size_t teacher_layer, std::size_t h_t, std::size_t h_s) const;
};

// Divergence between two row-stochastic maps of equal shape. KL is the mean
// over rows of sum_j t_ij ln(t_ij / s_ij) with 0 ln 0 = 0 and s floored at
// 1e-12; MSE is the mean over entries. With causal set, only entries at or
// below the diagonal participate.
double attn_map_loss(const Matrix& teacher_map, const Matrix& student_map, AttnLossKind kind,
                     bool causal);

// The squeezed-attention supervision term: for every mapped layer pair,
// re-derive both sides' maps at cfg.attn_temperature from cached scores,
// squeeze the teacher maps to the student's head count, and accumulate
// attn_map_loss over (merged teacher, student) head pairs. Sum over layers
// and heads, scaled by beta.
double shd_loss(const std::vector<AttentionBundle>& teacher_bundles,
                const std::vector<AttentionBundle>& student_bundles, const DistillConfig& cfg,
                const LayerMap& lm);

// Mean over valid rows of KL(softmax(t/T) || softmax(s/T)) * T^2. A null
// valid pointer means every row counts.
double logit_kd_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                     double temperature, const std::vector<std::uint8_t>* valid = nullptr);

// Row-wise cosine Gram matrices compared by cosine similarity: 1 - Sim.
// Feature widths may differ; row counts must match.
double self_correlation_loss(const Matrix& f_t, const Matrix& f_s);

// Mean squared error of f_s * projector against f_t.
double projector_fd_loss(const Matrix& f_t, const Matrix& f_s, const Matrix& projector);

}  // namespace shd
