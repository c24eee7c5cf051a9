#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "shd/dataset.hpp"
#include "shd/distill.hpp"
#include "shd/model.hpp"

namespace shd {

struct TrainOptions {
    std::size_t steps = 1000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::size_t batch_size = 8;
    std::size_t val_every = 100;       // validation CE cadence (also at step 1 and last step)
    std::size_t alpha_log_every = 1;   // alpha record cadence during distillation
    std::size_t alpha_hist_every = 100;
};

struct StepRecord {
    std::size_t step = 0;
    double task_loss = 0.0;
    double shd_loss = 0.0;
    double aux_loss = 0.0;   // logit KD + feature-distillation baseline
    double total_loss = 0.0;
    double val_loss = 0.0;   // most recently computed validation CE
};

struct AlphaRecord {
    std::size_t step = 0;
    std::size_t teacher_layer = 0;  // 1-indexed
    std::size_t group = 0;
    std::size_t sample = 0;  // dataset index
    double alpha = 0.0;
};

struct AlphaHistogram {
    std::size_t step = 0;
    std::size_t teacher_layer = 0;  // 1-indexed
    std::array<std::size_t, 20> counts{};  // bins over [0, 1]
};

struct RunMetrics {
    std::vector<StepRecord> steps;
    std::vector<AlphaRecord> alphas;
    std::vector<AlphaHistogram> histograms;
    double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Plain cross-entropy training with Adam (beta1 0.9, beta2 0.999, eps 1e-8),
// deterministic given opts.seed. Throws NumericError on divergence.
TinyTransformer train_teacher(const TinyTransformerConfig& cfg, const Dataset& train_set,
                              const Dataset& val_set, const TrainOptions& opts,
                              RunMetrics* metrics = nullptr);

// Distillation run: the teacher is frozen; the student trains on task CE
// plus the configured supervision terms. With beta == 0, logit KD off and no
// baseline, the trajectory is bit-identical to train_teacher on the student
// config with the same options.
TinyTransformer distill_student(const TinyTransformer& teacher,
                                const TinyTransformerConfig& student_cfg,
                                const Dataset& train_set, const Dataset& val_set,
                                const DistillConfig& dcfg, const TrainOptions& opts,
                                RunMetrics* metrics = nullptr,
                                std::vector<Matrix>* projectors_out = nullptr);

// Mean over sequences of the per-sequence mean cross entropy.
double evaluate_ce(const TinyTransformer& model, const Dataset& data);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t params_checked = 0;
};

// Compares the tape's analytic gradients of the full distillation objective
// against central finite differences (eps = 1e-5) for every trainable
// parameter. Relative error is |a - fd| / max(|a|, |fd|, 1e-6). Intended for
// tiny shapes only.
GradCheckReport grad_check(const TinyTransformerConfig& teacher_cfg,
                           const TinyTransformerConfig& student_cfg, const DistillConfig& dcfg,
                           std::uint64_t seed);

}  // namespace shd
