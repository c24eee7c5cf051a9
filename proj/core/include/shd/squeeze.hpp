#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "shd/attention.hpp"
#include "shd/matrix.hpp"

namespace shd {

enum class MergeStrategy {
    Shd,           // closed-form per-pair coefficient, left fold per group
    ConstantHalf,  // same fold with every coefficient pinned to 0.5
    HardSelect,    // one seeded pick of a teacher head per group, no merging
    HeadMatch,     // groups chosen by map similarity, then Shd merging
};

/// How teacher heads collapse into supervision heads: an ordered partition of
/// 0..h_t-1 into h_s groups, plus the merge strategy.
struct MergePlan {
    std::vector<std::vector<std::size_t>> groups;
    MergeStrategy strategy = MergeStrategy::Shd;
    std::uint64_t hard_select_seed = 0;

    void validate(std::size_t h_t) const;  // groups partition 0..h_t-1
};

struct MergeResult {
    std::vector<Matrix> maps;                 // h_s merged maps
    std::vector<std::vector<double>> alphas;  // per group, one per fold step
    std::vector<double> residuals;            // per group: ||A~ sum(X) - sum(A_i X_i)||_F^2
};

struct PairwiseAlpha {
    double alpha = 0.0;   // clamped to [0, 1]
    double energy = 0.0;  // objective value at the returned alpha
};

// Contiguous partition of h_t teacher heads into h_s groups; the first
// (h_t mod h_s) groups take the extra head.
std::vector<std::vector<std::size_t>> partition_heads(std::size_t h_t, std::size_t h_s);

// Optimal coefficient for merging two heads:
//   residual(a) = (a*A1 + (1-a)*A2)(X1+X2) - (A1 X1 + A2 X2) = a*M + R
// with M = (A1-A2)(X1+X2) and R = (A2-A1) X1, minimized at
// a = -<M,R> / ||M||_F^2, clamped to [0,1]. Ties (||M||_F^2 < 1e-18) break
// to 0.5, where the objective is constant in a.
PairwiseAlpha pairwise_alpha(const Matrix& a1, const Matrix& a2, const Matrix& x1,
                             const Matrix& x2);

// Direct evaluation of the pair objective at a given coefficient, no M/R
// factoring: forms the combination and multiplies it out.
double pair_energy(const Matrix& a1, const Matrix& a2, const Matrix& x1, const Matrix& x2,
                   double alpha);

struct GroupMerge {
    Matrix map;                  // final merged map
    std::vector<double> alphas;  // one coefficient per fold step (size-1 groups: none)
    Matrix x_acc;                // accumulated sum of the group's head values
};

// Left fold over a group: start at (maps[0], vals[0]); each next head merges
// in with its pairwise-optimal coefficient while head values accumulate.
GroupMerge merge_group(const std::vector<Matrix>& maps, const std::vector<Matrix>& head_vals);

// Collapse a bundle's maps (at whatever temperature the bundle carries) into
// plan.groups.size() supervision maps using the plan's strategy.
MergeResult squeeze_heads(const AttentionBundle& bundle, const MergePlan& plan);

// Cosine similarity of flattened maps; symmetric with unit diagonal.
Matrix head_similarity(const std::vector<Matrix>& maps);

// Greedy grouping by similarity: groups are built one at a time to the
// partition_heads size profile, each seeded with the most similar unassigned
// pair and grown by best similarity to any member. Ties break to the lowest
// head index; capacity-1 groups take the leftover heads in index order.
std::vector<std::vector<std::size_t>> match_heads(const Matrix& sim, std::size_t h_s);

}  // namespace shd
