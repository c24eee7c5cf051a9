#include "shd/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "shd/error.hpp"

namespace shd {

namespace {

constexpr std::uint64_t kInitSalt = 0xA1;
constexpr std::uint64_t kBatchSalt = 0xB2;
constexpr std::uint64_t kProjectorSalt = 0xC3;

struct Adam {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<Matrix> m, v;

    explicit Adam(double learning_rate, const std::vector<Matrix*>& params) : lr(learning_rate) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const Matrix* p : params) {
            m.emplace_back(p->rows(), p->cols());
            v.emplace_back(p->rows(), p->cols());
        }
    }

    void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Matrix& p = *params[k];
            const Matrix& g = grads[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g.empty() ? 0.0 : g.data()[i];
                m[k].data()[i] = beta1 * m[k].data()[i] + (1.0 - beta1) * gi;
                v[k].data()[i] = beta2 * v[k].data()[i] + (1.0 - beta2) * gi * gi;
                const double m_hat = m[k].data()[i] / bc1;
                const double v_hat = v[k].data()[i] / bc2;
                p.data()[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            }
        }
    }
};

// Frozen per-sample teacher artifacts. The teacher never changes during a
// run, so supervision for a dataset index is computed once and reused.
struct Supervision {
    std::vector<std::vector<Matrix>> merged_maps;          // [pair][student head]
    std::vector<std::vector<std::vector<double>>> alphas;  // [pair][group][fold step]
    Matrix teacher_logits;
    std::vector<Matrix> teacher_cor;       // [pair] cosine Gram of teacher features
    std::vector<Matrix> teacher_features;  // [pair] raw features (projector baseline)
};

struct TeacherSide {
    const TinyTransformer* model = nullptr;
    DistillConfig cfg;
    LayerMap lm;
    std::size_t student_heads = 0;
    std::vector<std::unique_ptr<Supervision>> cache;

    bool wants_maps() const { return cfg.beta != 0.0; }
    bool wants_logits() const { return cfg.use_logit_kd; }
    bool wants_features() const { return cfg.baseline != BaselineKind::None; }

    const Supervision& supervision(std::size_t sample_idx, const std::vector<int>& tokens) {
        if (cache[sample_idx]) return *cache[sample_idx];
        auto sup = std::make_unique<Supervision>();
        const TinyTransformer::Trace trace = model->forward(tokens);
        for (const auto& [s_layer, t_layer] : lm.pairs) {
            (void)s_layer;
            const AttentionBundle& bundle = trace.bundles[t_layer - 1];
            if (wants_maps()) {
                const AttentionBundle tempered = retemper(bundle, cfg.attn_temperature);
                const MergePlan plan =
                    cfg.plan_for_layer(t_layer - 1, bundle.maps.size(), student_heads);
                MergeResult merged = squeeze_heads(tempered, plan);
                sup->merged_maps.push_back(std::move(merged.maps));
                sup->alphas.push_back(std::move(merged.alphas));
            }
            if (cfg.baseline == BaselineKind::SelfCorrelation) {
                // Row-wise cosine Gram, cached so the per-step loss is a
                // single cosine against a constant.
                const Matrix& f = trace.features[t_layer - 1];
                Matrix gram = matmul_nt(f, f);
                for (std::size_t i = 0; i < f.rows(); ++i) {
                    double norm_i = 0.0;
                    for (std::size_t j = 0; j < f.cols(); ++j) norm_i += f(i, j) * f(i, j);
                    norm_i = std::sqrt(norm_i);
                    if (norm_i == 0.0) throw NumericError("teacher feature row has zero norm");
                    for (std::size_t j = 0; j < f.rows(); ++j) gram(i, j) /= norm_i;
                }
                for (std::size_t j = 0; j < f.rows(); ++j) {
                    double norm_j = 0.0;
                    for (std::size_t k = 0; k < f.cols(); ++k) norm_j += f(j, k) * f(j, k);
                    norm_j = std::sqrt(norm_j);
                    for (std::size_t i = 0; i < f.rows(); ++i) gram(i, j) /= norm_j;
                }
                sup->teacher_cor.push_back(std::move(gram));
            } else if (cfg.baseline == BaselineKind::Projector) {
                sup->teacher_features.push_back(trace.features[t_layer - 1]);
            }
        }
        if (wants_logits()) sup->teacher_logits = trace.logits;
        cache[sample_idx] = std::move(sup);
        return *cache[sample_idx];
    }
};

struct BatchLosses {
    ad::Var task, shd, aux, total;
};

// One batch's objective on the tape. Teacher-side quantities enter as
// constants; only student parameters (and projectors) get gradients.
BatchLosses build_batch_objective(ad::Tape& tape, const TinyTransformerConfig& cfg,
                                  const TapeParams& pvars, const Dataset& data,
                                  const std::vector<std::size_t>& batch, TeacherSide* teacher,
                                  const std::vector<ad::Var>& projector_vars) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<ad::Var> task_terms, shd_terms, kd_terms, baseline_terms;

    for (const std::size_t idx : batch) {
        const std::vector<int>& tokens = data.inputs[idx];
        const TapeTrace trace = forward_on_tape(tape, cfg, pvars, tokens);
        task_terms.push_back(tape.cross_entropy_mean(trace.logits, data.targets[idx]));

        if (teacher == nullptr) continue;
        const Supervision& sup = teacher->supervision(idx, tokens);
        const DistillConfig& dcfg = teacher->cfg;

        for (std::size_t p = 0; p < teacher->lm.pairs.size(); ++p) {
            const std::size_t s_layer = teacher->lm.pairs[p].first;
            if (dcfg.beta != 0.0) {
                for (std::size_t head = 0; head < cfg.heads; ++head) {
                    const ad::Var tempered = tape.softmax_rows(
                        trace.head_scores[s_layer - 1][head], cfg.causal, dcfg.attn_temperature);
                    shd_terms.push_back(
                        dcfg.attn_loss == AttnLossKind::KL
                            ? tape.kl_vs_const(sup.merged_maps[p][head], tempered, cfg.causal)
                            : tape.mse_vs_const(sup.merged_maps[p][head], tempered, cfg.causal));
                }
            }
            if (dcfg.baseline == BaselineKind::SelfCorrelation) {
                const ad::Var unit_rows = tape.rownorm(trace.features[s_layer - 1]);
                const ad::Var gram = tape.matmul_nt(unit_rows, unit_rows);
                const ad::Var sim = tape.cosine_vs_const(sup.teacher_cor[p], gram);
                baseline_terms.push_back(tape.weighted_sum({sim}, {-1.0}, 1.0));
            } else if (dcfg.baseline == BaselineKind::Projector) {
                const ad::Var projected =
                    tape.matmul(trace.features[s_layer - 1], projector_vars[p]);
                baseline_terms.push_back(
                    tape.mse_vs_const(sup.teacher_features[p], projected, false));
            }
        }
        if (dcfg.use_logit_kd) {
            kd_terms.push_back(tape.logit_kd_vs_const(sup.teacher_logits, trace.logits,
                                                      dcfg.logit_temperature));
        }
    }

    BatchLosses losses;
    losses.task = tape.weighted_sum(task_terms,
                                    std::vector<double>(task_terms.size(), inv_b));
    const double beta = teacher != nullptr ? teacher->cfg.beta : 0.0;
    losses.shd = shd_terms.empty()
                     ? tape.zero_scalar()
                     : tape.weighted_sum(shd_terms,
                                         std::vector<double>(shd_terms.size(), beta * inv_b));
    std::vector<ad::Var> aux_terms;
    std::vector<double> aux_coeffs;
    for (ad::Var v : kd_terms) {
        aux_terms.push_back(v);
        aux_coeffs.push_back(inv_b);
    }
    for (ad::Var v : baseline_terms) {
        aux_terms.push_back(v);
        aux_coeffs.push_back(inv_b);
    }
    losses.aux = aux_terms.empty() ? tape.zero_scalar()
                                   : tape.weighted_sum(aux_terms, aux_coeffs);
    losses.total = tape.weighted_sum({losses.task, losses.shd, losses.aux}, {1.0, 1.0, 1.0});
    return losses;
}

void record_alphas(RunMetrics& metrics, const TeacherSide& teacher, std::size_t step,
                   const std::vector<std::size_t>& batch, const TrainOptions& opts) {
    const bool log_rows = opts.alpha_log_every != 0 && step % opts.alpha_log_every == 0;
    const bool log_hist = opts.alpha_hist_every != 0 && step % opts.alpha_hist_every == 0;
    if (!log_rows && !log_hist) return;

    std::vector<AlphaHistogram> hists;
    if (log_hist) {
        for (const auto& [s_layer, t_layer] : teacher.lm.pairs) {
            (void)s_layer;
            hists.push_back(AlphaHistogram{step, t_layer, {}});
        }
    }
    for (const std::size_t idx : batch) {
        const Supervision& sup = *teacher.cache[idx];
        for (std::size_t p = 0; p < teacher.lm.pairs.size(); ++p) {
            const std::size_t t_layer = teacher.lm.pairs[p].second;
            for (std::size_t g = 0; g < sup.alphas[p].size(); ++g) {
                for (const double alpha : sup.alphas[p][g]) {
                    if (log_rows) {
                        metrics.alphas.push_back(AlphaRecord{step, t_layer, g, idx, alpha});
                    }
                    if (log_hist) {
                        auto bin = static_cast<std::size_t>(alpha * 20.0);
                        if (bin >= 20) bin = 19;
                        ++hists[p].counts[bin];
                    }
                }
            }
        }
    }
    if (log_hist) {
        for (auto& h : hists) metrics.histograms.push_back(h);
    }
}

TinyTransformer run_training(const TinyTransformerConfig& cfg, const Dataset& train_set,
                             const Dataset& val_set, const TrainOptions& opts,
                             TeacherSide* teacher, RunMetrics* metrics,
                             std::vector<Matrix>* projectors_out) {
    cfg.validate();
    if (train_set.seq_len > cfg.max_seq) {
        throw ConfigError("training sequences longer than the model's max_seq");
    }
    if (train_set.vocab != cfg.vocab) {
        throw ConfigError("dataset vocab " + std::to_string(train_set.vocab) +
                          " != model vocab " + std::to_string(cfg.vocab));
    }
    if (opts.batch_size == 0) throw ConfigError("batch_size must be >= 1");

    TinyTransformer model = TinyTransformer::random_init(cfg, Rng::mix(opts.seed, kInitSalt));

    // Projector baseline: one trainable d_s x d_t matrix per mapped layer.
    std::vector<Matrix> projectors;
    if (teacher != nullptr && teacher->cfg.baseline == BaselineKind::Projector) {
        Rng proj_rng(Rng::mix(opts.seed, kProjectorSalt));
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        for (std::size_t p = 0; p < teacher->lm.pairs.size(); ++p) {
            projectors.push_back(Matrix::random_normal(
                cfg.d_model, teacher->model->cfg.d_model, proj_rng, std_dev));
        }
    }

    std::vector<Matrix*> param_ptrs;
    for (auto& [name, ptr] : model.parameters()) param_ptrs.push_back(ptr);
    for (Matrix& proj : projectors) param_ptrs.push_back(&proj);
    Adam adam(opts.lr, param_ptrs);

    Rng batch_rng(Rng::mix(opts.seed, kBatchSalt));
    double last_val = evaluate_ce(model, val_set);

    for (std::size_t step = 1; step <= opts.steps; ++step) {
        std::vector<std::size_t> batch(opts.batch_size);
        for (std::size_t& idx : batch) idx = batch_rng.uniform_int(train_set.size());

        ad::Tape tape;
        const TapeParams pvars = register_params(tape, model);
        std::vector<ad::Var> projector_vars;
        for (const Matrix& proj : projectors) projector_vars.push_back(tape.leaf(proj));

        BatchLosses losses;
        try {
            losses =
                build_batch_objective(tape, cfg, pvars, train_set, batch, teacher, projector_vars);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": " +
                               e.what());
        }
        const double total = tape.scalar(losses.total);
        if (!std::isfinite(total)) {
            throw NumericError("training diverged at step " + std::to_string(step) +
                               ": total loss is not finite");
        }
        tape.backward(losses.total);

        std::vector<Matrix> grads;
        grads.reserve(param_ptrs.size());
        for (ad::Var v : pvars.ordered) grads.push_back(tape.grad(v));
        for (ad::Var v : projector_vars) grads.push_back(tape.grad(v));
        adam.step(param_ptrs, grads);

        const bool val_now = step == 1 || step == opts.steps ||
                             (opts.val_every != 0 && step % opts.val_every == 0);
        if (val_now) {
            try {
                last_val = evaluate_ce(model, val_set);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at step " + std::to_string(step) + ": " +
                                   e.what());
            }
        }

        if (metrics != nullptr) {
            metrics->steps.push_back(StepRecord{step, tape.scalar(losses.task),
                                                tape.scalar(losses.shd), tape.scalar(losses.aux),
                                                total, last_val});
            if (teacher != nullptr && teacher->wants_maps()) {
                record_alphas(*metrics, *teacher, step, batch, opts);
            }
        }
    }

    if (metrics != nullptr) metrics->final_val_loss = evaluate_ce(model, val_set);
    if (projectors_out != nullptr) *projectors_out = std::move(projectors);
    return model;
}

}  // namespace

double evaluate_ce(const TinyTransformer& model, const Dataset& data) {
    if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TinyTransformer::Trace trace = model.forward(data.inputs[i]);
        const Matrix probs = softmax_rows(trace.logits, nullptr, 1.0);
        double sample_loss = 0.0;
        std::size_t count = 0;
        for (std::size_t t = 0; t < data.targets[i].size(); ++t) {
            const int target = data.targets[i][t];
            if (target < 0) continue;
            sample_loss -= std::log(std::max(probs(t, static_cast<std::size_t>(target)), 1e-300));
            ++count;
        }
        total += sample_loss / static_cast<double>(count);
    }
    return total / static_cast<double>(data.size());
}

TinyTransformer train_teacher(const TinyTransformerConfig& cfg, const Dataset& train_set,
                              const Dataset& val_set, const TrainOptions& opts,
                              RunMetrics* metrics) {
    return run_training(cfg, train_set, val_set, opts, nullptr, metrics, nullptr);
}

TinyTransformer distill_student(const TinyTransformer& teacher,
                                const TinyTransformerConfig& student_cfg,
                                const Dataset& train_set, const Dataset& val_set,
                                const DistillConfig& dcfg, const TrainOptions& opts,
                                RunMetrics* metrics, std::vector<Matrix>* projectors_out) {
    student_cfg.validate();
    if (student_cfg.heads > teacher.cfg.heads) {
        throw ConfigError("student has more heads than the teacher");
    }
    if (student_cfg.layers > teacher.cfg.layers) {
        throw ConfigError("student has more layers than the teacher");
    }
    if (student_cfg.vocab != teacher.cfg.vocab) {
        throw ConfigError("student and teacher must share the vocabulary");
    }
    if (student_cfg.causal != teacher.cfg.causal) {
        throw ConfigError("student and teacher must agree on causal masking");
    }

    TeacherSide side;
    side.model = &teacher;
    side.cfg = dcfg;
    side.lm = layer_map(teacher.cfg.layers, student_cfg.layers);
    side.student_heads = student_cfg.heads;
    side.cache.resize(train_set.size());

    // Head matching groups come from a one-time calibration pass over the
    // first samples, before any training step.
    if (side.cfg.strategy == MergeStrategy::HeadMatch && side.cfg.matched_groups.empty() &&
        side.cfg.beta != 0.0) {
        const std::size_t calib =
            std::min<std::size_t>(std::max<std::size_t>(side.cfg.head_match_calibration, 1),
                                  train_set.size());
        side.cfg.matched_groups.resize(teacher.cfg.layers);
        for (const auto& [s_layer, t_layer] : side.lm.pairs) {
            (void)s_layer;
            Matrix mean_sim(teacher.cfg.heads, teacher.cfg.heads);
            for (std::size_t i = 0; i < calib; ++i) {
                const TinyTransformer::Trace trace = teacher.forward(train_set.inputs[i]);
                const AttentionBundle tempered =
                    retemper(trace.bundles[t_layer - 1], side.cfg.attn_temperature);
                mean_sim = add(mean_sim, head_similarity(tempered.maps));
            }
            mean_sim = scale(mean_sim, 1.0 / static_cast<double>(calib));
            side.cfg.matched_groups[t_layer - 1] = match_heads(mean_sim, student_cfg.heads);
        }
    }

    const bool needs_teacher =
        side.wants_maps() || side.wants_logits() || side.wants_features();
    return run_training(student_cfg, train_set, val_set, opts,
                        needs_teacher ? &side : nullptr, metrics, projectors_out);
}

GradCheckReport grad_check(const TinyTransformerConfig& teacher_cfg,
                           const TinyTransformerConfig& student_cfg, const DistillConfig& dcfg,
                           std::uint64_t seed) {
    const TinyTransformer teacher =
        TinyTransformer::random_init(teacher_cfg, Rng::mix(seed, 11));
    TinyTransformer student = TinyTransformer::random_init(student_cfg, Rng::mix(seed, 12));
    const std::size_t seq_len = std::min<std::size_t>(student_cfg.max_seq, 8);
    const Dataset data = make_dataset(TaskKind::Copy, Rng::mix(seed, 13), 2, seq_len,
                                      student_cfg.vocab);
    const std::vector<std::size_t> batch{0, 1};

    TeacherSide side;
    side.model = &teacher;
    side.cfg = dcfg;
    side.lm = layer_map(teacher_cfg.layers, student_cfg.layers);
    side.student_heads = student_cfg.heads;
    side.cache.resize(data.size());

    std::vector<Matrix> projectors;
    if (dcfg.baseline == BaselineKind::Projector) {
        Rng proj_rng(Rng::mix(seed, 14));
        for (std::size_t p = 0; p < side.lm.pairs.size(); ++p) {
            projectors.push_back(Matrix::random_normal(
                student_cfg.d_model, teacher_cfg.d_model, proj_rng,
                1.0 / std::sqrt(static_cast<double>(student_cfg.d_model))));
        }
    }

    auto objective = [&]() {
        ad::Tape tape;
        const TapeParams pvars = register_params(tape, student);
        std::vector<ad::Var> projector_vars;
        for (const Matrix& proj : projectors) projector_vars.push_back(tape.leaf(proj));
        const BatchLosses losses =
            build_batch_objective(tape, student_cfg, pvars, data, batch, &side, projector_vars);
        return tape.scalar(losses.total);
    };

    // Analytic gradients, one tape.
    std::vector<Matrix> analytic;
    std::vector<std::string> names;
    {
        ad::Tape tape;
        const TapeParams pvars = register_params(tape, student);
        std::vector<ad::Var> projector_vars;
        for (const Matrix& proj : projectors) projector_vars.push_back(tape.leaf(proj));
        const BatchLosses losses =
            build_batch_objective(tape, student_cfg, pvars, data, batch, &side, projector_vars);
        tape.backward(losses.total);
        for (auto& [name, ptr] : student.parameters()) names.push_back(name);
        for (ad::Var v : pvars.ordered) {
            Matrix g = tape.grad(v);
            if (g.empty()) g = Matrix(tape.value(v).rows(), tape.value(v).cols());
            analytic.push_back(std::move(g));
        }
        for (std::size_t p = 0; p < projector_vars.size(); ++p) {
            names.push_back("projector" + std::to_string(p));
            Matrix g = tape.grad(projector_vars[p]);
            if (g.empty()) g = Matrix(projectors[p].rows(), projectors[p].cols());
            analytic.push_back(std::move(g));
        }
    }

    std::vector<Matrix*> storage;
    for (auto& [name, ptr] : student.parameters()) storage.push_back(ptr);
    for (Matrix& proj : projectors) storage.push_back(&proj);

    const double fd_eps = 1e-5;
    GradCheckReport report;
    for (std::size_t k = 0; k < storage.size(); ++k) {
        Matrix& param = *storage[k];
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double original = param.data()[i];
            param.data()[i] = original + fd_eps;
            const double up = objective();
            param.data()[i] = original - fd_eps;
            const double down = objective();
            param.data()[i] = original;
            const double fd = (up - down) / (2.0 * fd_eps);
            const double a = analytic[k].data()[i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = names[k];
            }
            ++report.params_checked;
        }
    }
    return report;
}

}  // namespace shd
