#include "shd/squeeze.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "shd/rng.hpp"

namespace shd {

void MergePlan::validate(std::size_t h_t) const {
    std::vector<bool> seen(h_t, false);
    std::size_t covered = 0;
    for (const auto& group : groups) {
        if (group.empty()) throw std::invalid_argument("MergePlan: empty group");
        for (std::size_t head : group) {
            if (head >= h_t || seen[head]) {
                throw std::invalid_argument("MergePlan: head " + std::to_string(head) +
                                            " out of range or repeated");
            }
            seen[head] = true;
            ++covered;
        }
    }
    if (covered != h_t) {
        throw std::invalid_argument("MergePlan: groups cover " + std::to_string(covered) +
                                    " of " + std::to_string(h_t) + " heads");
    }
}

std::vector<std::vector<std::size_t>> partition_heads(std::size_t h_t, std::size_t h_s) {
    if (h_s == 0 || h_s > h_t) {
        throw std::invalid_argument("partition_heads: need 1 <= h_s <= h_t, got h_s=" +
                                    std::to_string(h_s) + " h_t=" + std::to_string(h_t));
    }
    const std::size_t base = h_t / h_s;
    const std::size_t extra = h_t % h_s;  // first `extra` groups get base+1 heads
    std::vector<std::vector<std::size_t>> groups(h_s);
    std::size_t next = 0;
    for (std::size_t g = 0; g < h_s; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k) groups[g].push_back(next++);
    }
    return groups;
}

PairwiseAlpha pairwise_alpha(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                             const Matrix& x2) {
    if (!a1.same_shape(a2) || !x1.same_shape(x2) || a1.cols() != x1.rows()) {
        throw std::invalid_argument("pairwise_alpha: inconsistent shapes A1=" + a1.shape_str() +
                                    " A2=" + a2.shape_str() + " X1=" + x1.shape_str() +
                                    " X2=" + x2.shape_str());
    }
    const Matrix m = matmul(sub(a1, a2), add(x1, x2));
    const Matrix residual_bias = matmul(sub(a2, a1), x1);
    const double m_norm_sq = frobenius_norm_sq(m);

    PairwiseAlpha out;
    if (m_norm_sq < 1e-18) {
        out.alpha = 0.5;  // objective constant in alpha; match the constant-merge ablation
    } else {
        out.alpha = std::clamp(-frobenius_inner(m, residual_bias) / m_norm_sq, 0.0, 1.0);
    }
    out.energy = frobenius_norm_sq(axpy(residual_bias, out.alpha, m));
    return out;
}

double pair_energy(const Matrix& a1, const Matrix& a2, const Matrix& x1, const Matrix& x2,
                   double alpha) {
    const Matrix combined = axpy(scale(a1, alpha), 1.0 - alpha, a2);
    const Matrix approx = matmul(combined, add(x1, x2));
    const Matrix exact = add(matmul(a1, x1), matmul(a2, x2));
    return frobenius_norm_sq(sub(approx, exact));
}

GroupMerge merge_group(const std::vector<Matrix>& maps, const std::vector<Matrix>& head_vals) {
    if (maps.empty()) throw std::invalid_argument("merge_group: empty group");
    if (maps.size() != head_vals.size()) {
        throw std::invalid_argument("merge_group: " + std::to_string(maps.size()) + " maps vs " +
                                    std::to_string(head_vals.size()) + " head values");
    }
    GroupMerge acc{maps[0], {}, head_vals[0]};
    for (std::size_t i = 1; i < maps.size(); ++i) {
        const PairwiseAlpha pa = pairwise_alpha(acc.map, maps[i], acc.x_acc, head_vals[i]);
        acc.map = axpy(scale(acc.map, pa.alpha), 1.0 - pa.alpha, maps[i]);
        acc.x_acc = add(acc.x_acc, head_vals[i]);
        acc.alphas.push_back(pa.alpha);
    }
    return acc;
}

namespace {

// Group-level reconstruction error of the final merged map:
// ||A~ (sum X_i) - sum A_i X_i||_F^2 over the group's heads.
double group_energy(const Matrix& merged, const AttentionBundle& bundle,
                    const std::vector<std::size_t>& group) {
    Matrix x_sum = bundle.head_values[group[0]];
    Matrix target = matmul(bundle.maps[group[0]], bundle.head_values[group[0]]);
    for (std::size_t k = 1; k < group.size(); ++k) {
        x_sum = add(x_sum, bundle.head_values[group[k]]);
        target = add(target, matmul(bundle.maps[group[k]], bundle.head_values[group[k]]));
    }
    return frobenius_norm_sq(sub(matmul(merged, x_sum), target));
}

GroupMerge merge_group_constant(const std::vector<Matrix>& maps,
                                const std::vector<Matrix>& head_vals) {
    GroupMerge acc{maps[0], {}, head_vals[0]};
    for (std::size_t i = 1; i < maps.size(); ++i) {
        acc.map = axpy(scale(acc.map, 0.5), 0.5, maps[i]);
        acc.x_acc = add(acc.x_acc, head_vals[i]);
        acc.alphas.push_back(0.5);
    }
    return acc;
}

}  // namespace

MergeResult squeeze_heads(const AttentionBundle& bundle, const MergePlan& plan) {
    plan.validate(bundle.maps.size());
    MergeResult result;
    result.maps.reserve(plan.groups.size());
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        const auto& group = plan.groups[g];
        std::vector<Matrix> maps, vals;
        maps.reserve(group.size());
        vals.reserve(group.size());
        for (std::size_t head : group) {
            maps.push_back(bundle.maps[head]);
            vals.push_back(bundle.head_values[head]);
        }

        switch (plan.strategy) {
            case MergeStrategy::Shd:
            case MergeStrategy::HeadMatch: {  // matched groups arrive via the plan
                GroupMerge merged = merge_group(maps, vals);
                result.alphas.push_back(std::move(merged.alphas));
                result.residuals.push_back(group_energy(merged.map, bundle, group));
                result.maps.push_back(std::move(merged.map));
                break;
            }
            case MergeStrategy::ConstantHalf: {
                GroupMerge merged = merge_group_constant(maps, vals);
                result.alphas.push_back(std::move(merged.alphas));
                result.residuals.push_back(group_energy(merged.map, bundle, group));
                result.maps.push_back(std::move(merged.map));
                break;
            }
            case MergeStrategy::HardSelect: {
                // One deterministic pick per group, a pure function of
                // (seed, group index): the same run always keeps the same head.
                const std::size_t pick = group[Rng::mix(plan.hard_select_seed, g) % group.size()];
                result.alphas.emplace_back();
                result.residuals.push_back(group_energy(bundle.maps[pick], bundle, group));
                result.maps.push_back(bundle.maps[pick]);
                break;
            }
        }
    }
    return result;
}

Matrix head_similarity(const std::vector<Matrix>& maps) {
    if (maps.size() < 2) throw std::invalid_argument("head_similarity: need at least 2 maps");
    for (const Matrix& m : maps) {
        if (!m.same_shape(maps.front())) {
            throw std::invalid_argument("head_similarity: map shape mismatch " + m.shape_str() +
                                        " vs " + maps.front().shape_str());
        }
    }
    const std::size_t h = maps.size();
    std::vector<double> norms(h);
    for (std::size_t i = 0; i < h; ++i) {
        norms[i] = std::sqrt(frobenius_norm_sq(maps[i]));
        if (norms[i] == 0.0) {
            throw std::invalid_argument("head_similarity: zero-norm map " + std::to_string(i));
        }
    }
    Matrix sim(h, h);
    for (std::size_t i = 0; i < h; ++i) {
        sim(i, i) = 1.0;
        for (std::size_t j = i + 1; j < h; ++j) {
            const double s = frobenius_inner(maps[i], maps[j]) / (norms[i] * norms[j]);
            sim(i, j) = s;
            sim(j, i) = s;
        }
    }
    return sim;
}

std::vector<std::vector<std::size_t>> match_heads(const Matrix& sim, std::size_t h_s) {
    if (sim.rows() != sim.cols()) {
        throw std::invalid_argument("match_heads: similarity matrix must be square, got " +
                                    sim.shape_str());
    }
    const std::size_t h_t = sim.rows();
    const auto profile = partition_heads(h_t, h_s);  // only the size profile is used

    std::vector<bool> assigned(h_t, false);
    std::vector<std::vector<std::size_t>> groups;
    groups.reserve(h_s);

    for (const auto& slot : profile) {
        const std::size_t capacity = slot.size();
        if (capacity < 2) break;  // leftover heads fill singleton groups below
        // Seed with the most similar unassigned pair, lowest indices on ties.
        std::size_t best_i = 0, best_j = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < h_t; ++i) {
            if (assigned[i]) continue;
            for (std::size_t j = i + 1; j < h_t; ++j) {
                if (assigned[j]) continue;
                if (sim(i, j) > best) {
                    best = sim(i, j);
                    best_i = i;
                    best_j = j;
                }
            }
        }
        std::vector<std::size_t> group{best_i, best_j};
        assigned[best_i] = assigned[best_j] = true;
        while (group.size() < capacity) {
            std::size_t best_head = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < h_t; ++c) {
                if (assigned[c]) continue;
                double score = -std::numeric_limits<double>::infinity();
                for (std::size_t member : group) score = std::max(score, sim(member, c));
                if (score > best_score) {
                    best_score = score;
                    best_head = c;
                }
            }
            group.push_back(best_head);
            assigned[best_head] = true;
        }
        std::sort(group.begin(), group.end());
        groups.push_back(std::move(group));
    }

    // Remaining capacity-1 slots take the unassigned heads in index order.
    for (std::size_t head = 0; head < h_t; ++head) {
        if (!assigned[head]) groups.push_back({head});
    }
    return groups;
}

}  // namespace shd
