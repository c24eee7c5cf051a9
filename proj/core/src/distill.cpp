#include "shd/distill.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace shd {

LayerMap layer_map(std::size_t l_t, std::size_t l_s) {
    if (l_s == 0 || l_s > l_t) {
        throw std::invalid_argument("layer_map: need 1 <= student layers <= teacher layers, got " +
                                    std::to_string(l_s) + " > " + std::to_string(l_t));
    }
    LayerMap lm;
    lm.pairs.reserve(l_s);
    for (std::size_t s = 1; s <= l_s; ++s) {
        const double exact = static_cast<double>(s * l_t) / static_cast<double>(l_s);
        const auto t = static_cast<std::size_t>(std::llround(exact));
        lm.pairs.emplace_back(s, t);
    }
    return lm;
}

MergePlan DistillConfig::plan_for_layer(std::size_t teacher_layer, std::size_t h_t,
                                        std::size_t h_s) const {
    MergePlan plan;
    plan.strategy = strategy;
    plan.hard_select_seed = hard_select_seed;
    if (strategy == MergeStrategy::HeadMatch && teacher_layer < matched_groups.size() &&
        !matched_groups[teacher_layer].empty()) {
        plan.groups = matched_groups[teacher_layer];
    } else {
        plan.groups = partition_heads(h_t, h_s);
    }
    return plan;
}

double attn_map_loss(const Matrix& teacher_map, const Matrix& student_map, AttnLossKind kind,
                     bool causal) {
    if (!teacher_map.same_shape(student_map)) {
        throw std::invalid_argument("attn_map_loss: shape mismatch " + teacher_map.shape_str() +
                                    " vs " + student_map.shape_str());
    }
    const std::size_t rows = teacher_map.rows();
    const std::size_t cols = teacher_map.cols();

    if (kind == AttnLossKind::KL) {
        double total = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const std::size_t valid = causal ? std::min(i + 1, cols) : cols;
            double row_kl = 0.0;
            for (std::size_t j = 0; j < valid; ++j) {
                const double t = teacher_map(i, j);
                if (t <= 0.0) continue;
                const double s = std::max(student_map(i, j), 1e-12);
                row_kl += t * std::log(t / s);
            }
            total += row_kl;
        }
        return total / static_cast<double>(rows);
    }

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t valid = causal ? std::min(i + 1, cols) : cols;
        for (std::size_t j = 0; j < valid; ++j) {
            const double diff = teacher_map(i, j) - student_map(i, j);
            total += diff * diff;
        }
        count += valid;
    }
    return total / static_cast<double>(count);
}

double shd_loss(const std::vector<AttentionBundle>& teacher_bundles,
                const std::vector<AttentionBundle>& student_bundles, const DistillConfig& cfg,
                const LayerMap& lm) {
    if (cfg.beta == 0.0) return 0.0;
    double total = 0.0;
    for (const auto& [s_layer, t_layer] : lm.pairs) {
        if (s_layer == 0 || s_layer > student_bundles.size() || t_layer == 0 ||
            t_layer > teacher_bundles.size()) {
            throw std::invalid_argument("shd_loss: layer pair (" + std::to_string(s_layer) + "," +
                                        std::to_string(t_layer) + ") out of range");
        }
        const AttentionBundle& tb = teacher_bundles[t_layer - 1];
        const AttentionBundle& sb = student_bundles[s_layer - 1];
        if (tb.seq_len != sb.seq_len || tb.causal != sb.causal) {
            throw std::invalid_argument("shd_loss: teacher/student bundles disagree on sequence");
        }
        const AttentionBundle teacher_tempered = retemper(tb, cfg.attn_temperature);
        const MergePlan plan =
            cfg.plan_for_layer(t_layer - 1, tb.maps.size(), sb.maps.size());
        const MergeResult merged = squeeze_heads(teacher_tempered, plan);

        for (std::size_t head = 0; head < sb.maps.size(); ++head) {
            const Matrix student_map =
                tempered_map(sb.scores[head], sb.causal, cfg.attn_temperature);
            total += attn_map_loss(merged.maps[head], student_map, cfg.attn_loss, sb.causal);
        }
    }
    return cfg.beta * total;
}

double logit_kd_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                     double temperature, const std::vector<std::uint8_t>* valid) {
    if (!teacher_logits.same_shape(student_logits)) {
        throw std::invalid_argument("logit_kd_loss: shape mismatch " +
                                    teacher_logits.shape_str() + " vs " +
                                    student_logits.shape_str());
    }
    if (valid != nullptr && valid->size() != teacher_logits.rows()) {
        throw std::invalid_argument("logit_kd_loss: valid flags length mismatch");
    }
    const Matrix p = softmax_rows(teacher_logits, nullptr, temperature);
    const Matrix q = softmax_rows(student_logits, nullptr, temperature);

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (valid != nullptr && (*valid)[i] == 0) continue;
        double row_kl = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            const double t = p(i, j);
            if (t <= 0.0) continue;
            row_kl += t * std::log(t / std::max(q(i, j), 1e-12));
        }
        total += row_kl;
        ++count;
    }
    if (count == 0) return 0.0;
    return total / static_cast<double>(count) * temperature * temperature;
}

namespace {

// Row-wise cosine Gram: entry (i, j) is the cosine of feature rows i and j.
Matrix cosine_gram(const Matrix& f, const char* who) {
    const std::size_t n = f.rows();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* row = f.row(i);
        for (std::size_t j = 0; j < f.cols(); ++j) acc += row[j] * row[j];
        norms[i] = std::sqrt(acc);
        if (norms[i] == 0.0) {
            throw std::invalid_argument(std::string("self_correlation_loss: zero-norm row ") +
                                        std::to_string(i) + " in " + who);
        }
    }
    Matrix gram = matmul_nt(f, f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gram(i, j) /= norms[i] * norms[j];
    return gram;
}

}  // namespace

double self_correlation_loss(const Matrix& f_t, const Matrix& f_s) {
    if (f_t.rows() != f_s.rows()) {
        throw std::invalid_argument("self_correlation_loss: row counts differ, " +
                                    f_t.shape_str() + " vs " + f_s.shape_str());
    }
    const Matrix cor_t = cosine_gram(f_t, "teacher features");
    const Matrix cor_s = cosine_gram(f_s, "student features");
    const double sim = frobenius_inner(cor_t, cor_s) /
                       (std::sqrt(frobenius_norm_sq(cor_t)) * std::sqrt(frobenius_norm_sq(cor_s)));
    return 1.0 - sim;
}

double projector_fd_loss(const Matrix& f_t, const Matrix& f_s, const Matrix& projector) {
    if (f_s.cols() != projector.rows() || projector.cols() != f_t.cols() ||
        f_s.rows() != f_t.rows()) {
        throw std::invalid_argument("projector_fd_loss: shapes " + f_t.shape_str() + ", " +
                                    f_s.shape_str() + ", " + projector.shape_str() +
                                    " are inconsistent");
    }
    const Matrix diff = sub(matmul(f_s, projector), f_t);
    return frobenius_norm_sq(diff) / static_cast<double>(diff.size());
}

}  // namespace shd
