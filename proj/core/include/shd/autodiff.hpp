#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "shd/matrix.hpp"

namespace shd::ad {

/// Handle into a Tape. Cheap to copy; only meaningful for the tape that
/// issued it.
struct Var {
    std::int32_t id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape over Matrix values. Nodes are appended in evaluation
/// order, so one backward sweep in reverse index order is a valid
/// topological traversal. Scalars are 1x1 matrices.
///
/// The tape is rebuilt per training step; leaves hold copies of the current
/// parameter values and gradients are read back by Var after backward().
class Tape {
public:
    Var leaf(Matrix value);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
    const Matrix& grad(Var v) const;  // valid after backward()

    // ---- structural ops ----
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var add_row_vector(Var a, Var row);               // row is 1 x cols, broadcast over rows
    Var slice_cols(Var a, std::size_t c0, std::size_t width);
    Var slice_rows(Var a, std::size_t r0, std::size_t height);
    Var embedding(Var table, std::vector<int> tokens);  // gather rows by token id

    // ---- nonlinearities ----
    Var softmax_rows(Var logits, bool causal, double temperature);
    Var layer_norm(Var x, Var gain, Var bias, double eps);
    Var gelu(Var x);  // exact erf form
    Var rownorm(Var x);  // rows scaled to unit Euclidean norm; throws on zero rows

    // ---- scalar losses ----
    // Mean over non-ignored rows of -log softmax(logits)[target]; target -1 ignores a row.
    Var cross_entropy_mean(Var logits, std::vector<int> targets);
    // Divergences against a constant (teacher-side) matrix; the constant gets no gradient.
    Var kl_vs_const(Matrix teacher_map, Var student_map, bool causal);
    Var mse_vs_const(Matrix teacher, Var student, bool causal);
    Var logit_kd_vs_const(Matrix teacher_logits, Var student_logits, double temperature);
    Var cosine_vs_const(Matrix a_const, Var b);
    Var inner_vs_const(Matrix c, Var x);  // scalar <c, x>
    // sum_i coeffs[i] * scalars[i] + constant
    Var weighted_sum(std::vector<Var> scalars, std::vector<double> coeffs, double constant = 0.0);
    Var zero_scalar();

    void backward(Var loss);  // seeds with 1 and sweeps the whole tape
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&)> back;  // null for leaves
    };

    Var push(Matrix value, std::function<void(Tape&)> back);
    Matrix& grad_ref(std::int32_t id);

    std::vector<Node> nodes_;
};

}  // namespace shd::ad
