#include "shd/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "shd/distill.hpp"

namespace shd::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

Var Tape::push(Matrix value, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(back)});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad_ref(std::int32_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Matrix(node.value.rows(), node.value.cols());
    return node.grad;
}

const Matrix& Tape::grad(Var v) const {
    const Node& node = nodes_[v.id];
    if (node.grad.empty()) {
        static const Matrix kEmpty;
        return kEmpty;
    }
    return node.grad;
}

Var Tape::leaf(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::matmul(Var a, Var b) {
    Matrix out = shd::matmul(value(a), value(b));
    return push(std::move(out), [a, b, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        t.grad_ref(a.id) = shd::add(t.grad_ref(a.id), shd::matmul_nt(g, t.value(b)));
        t.grad_ref(b.id) = shd::add(t.grad_ref(b.id), shd::matmul_tn(t.value(a), g));
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    Matrix out = shd::matmul_nt(value(a), value(b));
    return push(std::move(out), [a, b, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        t.grad_ref(a.id) = shd::add(t.grad_ref(a.id), shd::matmul(g, t.value(b)));
        t.grad_ref(b.id) = shd::add(t.grad_ref(b.id), shd::matmul_tn(g, t.value(a)));
    });
}

Var Tape::add(Var a, Var b) {
    Matrix out = shd::add(value(a), value(b));
    return push(std::move(out), [a, b, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        t.grad_ref(a.id) = shd::add(t.grad_ref(a.id), g);
        t.grad_ref(b.id) = shd::add(t.grad_ref(b.id), g);
    });
}

Var Tape::sub(Var a, Var b) {
    Matrix out = shd::sub(value(a), value(b));
    return push(std::move(out), [a, b, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        t.grad_ref(a.id) = shd::add(t.grad_ref(a.id), g);
        t.grad_ref(b.id) = shd::sub(t.grad_ref(b.id), g);
    });
}

Var Tape::scale(Var a, double c) {
    Matrix out = shd::scale(value(a), c);
    return push(std::move(out), [a, c, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        t.grad_ref(a.id) = shd::axpy(t.grad_ref(a.id), c, g);
    });
}

Var Tape::add_row_vector(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw std::invalid_argument("add_row_vector: row is " + rv.shape_str() + ", expected 1x" +
                                    std::to_string(av.cols()));
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    return push(std::move(out),
                [a, row, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    t.grad_ref(a.id) = shd::add(t.grad_ref(a.id), g);
                    Matrix& rg = t.grad_ref(row.id);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) rg(0, j) += g(i, j);
                });
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t width) {
    const Matrix& av = value(a);
    Matrix out(av.rows(), width);
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < width; ++j) out(i, j) = av(i, c0 + j);
    return push(std::move(out),
                [a, c0, width, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    Matrix& ag = t.grad_ref(a.id);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < width; ++j) ag(i, c0 + j) += g(i, j);
                });
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t height) {
    const Matrix& av = value(a);
    Matrix out(height, av.cols());
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(r0 + i, j);
    return push(std::move(out),
                [a, r0, height, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    Matrix& ag = t.grad_ref(a.id);
                    for (std::size_t i = 0; i < height; ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) ag(r0 + i, j) += g(i, j);
                });
}

Var Tape::embedding(Var table, std::vector<int> tokens) {
    const Matrix& tv = value(table);
    Matrix out(tokens.size(), tv.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto tok = static_cast<std::size_t>(tokens[i]);
        if (tok >= tv.rows()) {
            throw std::invalid_argument("embedding: token " + std::to_string(tokens[i]) +
                                        " out of range for table " + tv.shape_str());
        }
        for (std::size_t j = 0; j < tv.cols(); ++j) out(i, j) = tv(tok, j);
    }
    return push(std::move(out), [table, tokens = std::move(tokens),
                                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        Matrix& tg = t.grad_ref(table.id);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const auto tok = static_cast<std::size_t>(tokens[i]);
            for (std::size_t j = 0; j < g.cols(); ++j) tg(tok, j) += g(i, j);
        }
    });
}

Var Tape::softmax_rows(Var logits, bool causal, double temperature) {
    const Matrix& z = value(logits);
    Matrix probs;
    if (causal) {
        const Matrix mask = shd::causal_mask(z.rows());
        probs = shd::softmax_rows(z, &mask, temperature);
    } else {
        probs = shd::softmax_rows(z, nullptr, temperature);
    }
    return push(std::move(probs), [logits, causal, temperature,
                                   out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        const Matrix& p = t.nodes_[out_id].value;
        Matrix& zg = t.grad_ref(logits.id);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            const std::size_t valid = causal ? std::min(i + 1, p.cols()) : p.cols();
            double dot = 0.0;
            for (std::size_t j = 0; j < valid; ++j) dot += g(i, j) * p(i, j);
            for (std::size_t j = 0; j < valid; ++j) {
                zg(i, j) += p(i, j) * (g(i, j) - dot) / temperature;
            }
        }
    });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = value(x);
    const Matrix& gv = value(gain);
    const Matrix& bv = value(bias);
    if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw std::invalid_argument("layer_norm: gain/bias must be 1x" +
                                    std::to_string(xv.cols()));
    }
    const std::size_t n = xv.cols();
    Matrix xhat(xv.rows(), n);
    std::vector<double> inv_std(xv.rows());
    Matrix out(xv.rows(), n);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double c = xv(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
            out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
        }
    }
    return push(std::move(out),
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    const Matrix& gv = t.value(gain);
                    const std::size_t n = xhat.cols();
                    Matrix& xg = t.grad_ref(x.id);
                    Matrix& gg = t.grad_ref(gain.id);
                    Matrix& bg = t.grad_ref(bias.id);
                    for (std::size_t i = 0; i < xhat.rows(); ++i) {
                        double mean_dxhat = 0.0;
                        double mean_dxhat_xhat = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double dy = g(i, j);
                            gg(0, j) += dy * xhat(i, j);
                            bg(0, j) += dy;
                            const double dxhat = dy * gv(0, j);
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat(i, j);
                        }
                        mean_dxhat /= static_cast<double>(n);
                        mean_dxhat_xhat /= static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                            const double dxhat = g(i, j) * gv(0, j);
                            xg(i, j) += inv_std[i] *
                                        (dxhat - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
                        }
                    }
                });
}

Var Tape::gelu(Var x) {
    const Matrix& xv = value(x);
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out.data()[i] = xv.data()[i] * gauss_cdf(xv.data()[i]);
    }
    return push(std::move(out), [x, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        const Matrix& xv = t.value(x);
        Matrix& xg = t.grad_ref(x.id);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv.data()[i];
            xg.data()[i] += g.data()[i] * (gauss_cdf(v) + v * gauss_pdf(v));
        }
    });
}

Var Tape::rownorm(Var x) {
    const Matrix& xv = value(x);
    std::vector<double> norms(xv.rows());
    Matrix out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) acc += xv(i, j) * xv(i, j);
        norms[i] = std::sqrt(acc);
        if (norms[i] == 0.0) {
            throw std::invalid_argument("rownorm: zero-norm row " + std::to_string(i));
        }
        for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / norms[i];
    }
    return push(std::move(out), [x, norms = std::move(norms),
                                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
        const Matrix& g = t.nodes_[out_id].grad;
        if (g.empty()) return;
        const Matrix& u = t.nodes_[out_id].value;
        Matrix& xg = t.grad_ref(x.id);
        for (std::size_t i = 0; i < u.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < u.cols(); ++j) dot += g(i, j) * u(i, j);
            for (std::size_t j = 0; j < u.cols(); ++j) {
                xg(i, j) += (g(i, j) - u(i, j) * dot) / norms[i];
            }
        }
    });
}

Var Tape::cross_entropy_mean(Var logits, std::vector<int> targets) {
    const Matrix& z = value(logits);
    if (targets.size() != z.rows()) {
        throw std::invalid_argument("cross_entropy_mean: " + std::to_string(targets.size()) +
                                    " targets for " + z.shape_str() + " logits");
    }
    Matrix probs = shd::softmax_rows(z, nullptr, 1.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        if (targets[i] < 0) continue;
        total -= std::log(std::max(probs(i, static_cast<std::size_t>(targets[i])), 1e-300));
        ++count;
    }
    Matrix out(1, 1, count > 0 ? total / static_cast<double>(count) : 0.0);
    return push(std::move(out),
                [logits, targets = std::move(targets), probs = std::move(probs), count,
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty() || count == 0) return;
                    const double scale = g(0, 0) / static_cast<double>(count);
                    Matrix& zg = t.grad_ref(logits.id);
                    for (std::size_t i = 0; i < probs.rows(); ++i) {
                        if (targets[i] < 0) continue;
                        for (std::size_t j = 0; j < probs.cols(); ++j) {
                            zg(i, j) += scale * probs(i, j);
                        }
                        zg(i, static_cast<std::size_t>(targets[i])) -= scale;
                    }
                });
}

Var Tape::kl_vs_const(Matrix teacher_map, Var student_map, bool causal) {
    const double loss = attn_map_loss(teacher_map, value(student_map), AttnLossKind::KL, causal);
    return push(Matrix(1, 1, loss),
                [teacher = std::move(teacher_map), student_map, causal,
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    const Matrix& s = t.value(student_map);
                    const double scale = g(0, 0) / static_cast<double>(teacher.rows());
                    Matrix& sg = t.grad_ref(student_map.id);
                    for (std::size_t i = 0; i < teacher.rows(); ++i) {
                        const std::size_t valid =
                            causal ? std::min(i + 1, teacher.cols()) : teacher.cols();
                        for (std::size_t j = 0; j < valid; ++j) {
                            const double tv = teacher(i, j);
                            if (tv <= 0.0) continue;
                            const double sv = s(i, j);
                            if (sv > 1e-12) sg(i, j) -= scale * tv / sv;
                        }
                    }
                });
}

Var Tape::mse_vs_const(Matrix teacher, Var student, bool causal) {
    const double loss = attn_map_loss(teacher, value(student), AttnLossKind::MSE, causal);
    std::size_t count = 0;
    for (std::size_t i = 0; i < teacher.rows(); ++i) {
        count += causal ? std::min(i + 1, teacher.cols()) : teacher.cols();
    }
    return push(Matrix(1, 1, loss),
                [teacher = std::move(teacher), student, causal, count,
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    const Matrix& s = t.value(student);
                    const double scale = 2.0 * g(0, 0) / static_cast<double>(count);
                    Matrix& sg = t.grad_ref(student.id);
                    for (std::size_t i = 0; i < teacher.rows(); ++i) {
                        const std::size_t valid =
                            causal ? std::min(i + 1, teacher.cols()) : teacher.cols();
                        for (std::size_t j = 0; j < valid; ++j) {
                            sg(i, j) += scale * (s(i, j) - teacher(i, j));
                        }
                    }
                });
}

Var Tape::logit_kd_vs_const(Matrix teacher_logits, Var student_logits, double temperature) {
    const double loss = logit_kd_loss(teacher_logits, value(student_logits), temperature);
    const Matrix p = shd::softmax_rows(teacher_logits, nullptr, temperature);
    return push(Matrix(1, 1, loss),
                [p = std::move(p), student_logits, temperature,
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    const Matrix q = shd::softmax_rows(t.value(student_logits), nullptr,
                                                       temperature);
                    // d/dz of mean-row KL(p||q) * T^2 is T * (q - p) / rows
                    const double scale = g(0, 0) * temperature / static_cast<double>(p.rows());
                    Matrix& zg = t.grad_ref(student_logits.id);
                    for (std::size_t i = 0; i < p.rows(); ++i)
                        for (std::size_t j = 0; j < p.cols(); ++j)
                            zg(i, j) += scale * (q(i, j) - p(i, j));
                });
}

Var Tape::cosine_vs_const(Matrix a_const, Var b) {
    const Matrix& bv = value(b);
    if (!a_const.same_shape(bv)) {
        throw std::invalid_argument("cosine_vs_const: shape mismatch " + a_const.shape_str() +
                                    " vs " + bv.shape_str());
    }
    const double norm_a = std::sqrt(frobenius_norm_sq(a_const));
    const double norm_b = std::sqrt(frobenius_norm_sq(bv));
    if (norm_a == 0.0 || norm_b == 0.0) {
        throw std::invalid_argument("cosine_vs_const: zero-norm operand");
    }
    const double sim = frobenius_inner(a_const, bv) / (norm_a * norm_b);
    return push(Matrix(1, 1, sim),
                [a = std::move(a_const), b, norm_a, sim,
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    const Matrix& bv = t.value(b);
                    const double norm_b = std::sqrt(frobenius_norm_sq(bv));
                    const double s = g(0, 0);
                    Matrix& bg = t.grad_ref(b.id);
                    for (std::size_t i = 0; i < bv.size(); ++i) {
                        bg.data()[i] += s * (a.data()[i] / (norm_a * norm_b) -
                                             sim * bv.data()[i] / (norm_b * norm_b));
                    }
                });
}

Var Tape::inner_vs_const(Matrix c, Var x) {
    const double v = frobenius_inner(c, value(x));
    return push(Matrix(1, 1, v),
                [c = std::move(c), x, out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    Matrix& xg = t.grad_ref(x.id);
                    for (std::size_t i = 0; i < c.size(); ++i) {
                        xg.data()[i] += g(0, 0) * c.data()[i];
                    }
                });
}

Var Tape::weighted_sum(std::vector<Var> scalars, std::vector<double> coeffs, double constant) {
    if (scalars.size() != coeffs.size()) {
        throw std::invalid_argument("weighted_sum: size mismatch");
    }
    double total = constant;
    for (std::size_t i = 0; i < scalars.size(); ++i) total += coeffs[i] * scalar(scalars[i]);
    return push(Matrix(1, 1, total),
                [scalars = std::move(scalars), coeffs = std::move(coeffs),
                 out_id = static_cast<std::int32_t>(nodes_.size())](Tape& t) {
                    const Matrix& g = t.nodes_[out_id].grad;
                    if (g.empty()) return;
                    for (std::size_t i = 0; i < scalars.size(); ++i) {
                        t.grad_ref(scalars[i].id)(0, 0) += coeffs[i] * g(0, 0);
                    }
                });
}

Var Tape::zero_scalar() { return leaf(Matrix(1, 1, 0.0)); }

void Tape::backward(Var loss) {
    if (!loss.valid() || value(loss).rows() != 1 || value(loss).cols() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar var");
    }
    grad_ref(loss.id)(0, 0) += 1.0;
    for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1; id >= 0; --id) {
        if (nodes_[id].back && !nodes_[id].grad.empty()) nodes_[id].back(*this);
    }
}

}  // namespace shd::ad
