#include "fedner/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedner {

namespace {

void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": rank-2 operand required, got " +
                                    shape_to_string(t.shape()));
    }
}

}  // namespace

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> pull) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(pull)});
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::input(Tensor value) { return Var{push(std::move(value), true, nullptr)}; }

Var Tape::constant(Tensor value) { return Var{push(std::move(value), false, nullptr)}; }

const Tensor& Tape::value(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw std::logic_error("tape: invalid var");
    }
    return nodes_[v.id].value;
}

void Tape::accumulate(int id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    if (adjoints_[id].size() == 0) adjoints_[id] = Tensor(nodes_[id].value.shape());
    adjoints_[id] += g;
}

Tensor& Tape::adjoint_slot(int id) {
    if (adjoints_[id].size() == 0) adjoints_[id] = Tensor(nodes_[id].value.shape());
    return adjoints_[id];
}

Var Tape::matmul(Var a, Var b) {
    Tensor out = fedner::matmul(val(a), val(b));
    const bool rg = needs(a) || needs(b);
    return Var{push(std::move(out), rg, [a, b](Tape& t, const Tensor& g) {
        if (t.needs(a)) t.accumulate(a.id, fedner::matmul(g, transpose(t.val(b))));
        if (t.needs(b)) t.accumulate(b.id, fedner::matmul(transpose(t.val(a)), g));
    })};
}

Var Tape::add(Var a, Var b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("tape add: shape mismatch");
    Tensor out = val(a);
    out += val(b);
    return Var{push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
    })};
}

Var Tape::sub(Var a, Var b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("tape sub: shape mismatch");
    Tensor out = val(a);
    out -= val(b);
    return Var{push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a.id, g);
        Tensor neg = g;
        neg *= -1.0;
        t.accumulate(b.id, neg);
    })};
}

Var Tape::scale(Var a, double s) {
    Tensor out = val(a);
    out *= s;
    return Var{push(std::move(out), needs(a), [a, s](Tape& t, const Tensor& g) {
        Tensor gs = g;
        gs *= s;
        t.accumulate(a.id, gs);
    })};
}

Var Tape::tanh(Var a) {
    Tensor out = val(a);
    for (double& v : out.data()) v = std::tanh(v);
    int id = push(out, needs(a), nullptr);
    nodes_[id].pull = [a, id](Tape& t, const Tensor& g) {
        const Tensor& y = t.nodes_[id].value;
        Tensor ga(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) ga[i] = g[i] * (1.0 - y[i] * y[i]);
        t.accumulate(a.id, ga);
    };
    return Var{id};
}

Var Tape::add_row(Var m, Var row) {
    check_rank2(val(m), "add_row");
    const Tensor& rv = val(row);
    if (rv.rank() != 2 || rv.rows() != 1 || rv.cols() != val(m).cols()) {
        throw std::invalid_argument("add_row: row must be 1 x cols(m)");
    }
    Tensor out = val(m);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    return Var{push(std::move(out), needs(m) || needs(row), [m, row](Tape& t, const Tensor& g) {
        t.accumulate(m.id, g);
        if (t.needs(row)) {
            Tensor gr = Tensor::matrix(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
            t.accumulate(row.id, gr);
        }
    })};
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check_rank2(av, "concat_cols");
    check_rank2(bv, "concat_cols");
    if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row count mismatch");
    const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor out = Tensor::matrix(n, ca + cb);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = av(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = bv(i, j);
    }
    return Var{push(std::move(out), needs(a) || needs(b), [a, b, ca, cb](Tape& t, const Tensor& g) {
        if (t.needs(a)) {
            Tensor ga = Tensor::matrix(g.rows(), ca);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
            t.accumulate(a.id, ga);
        }
        if (t.needs(b)) {
            Tensor gb = Tensor::matrix(g.rows(), cb);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
            t.accumulate(b.id, gb);
        }
    })};
}

Var Tape::slice_cols(Var m, std::size_t first, std::size_t count) {
    const Tensor& mv = val(m);
    check_rank2(mv, "slice_cols");
    if (first + count > mv.cols()) throw std::invalid_argument("slice_cols: out of range");
    Tensor out = Tensor::matrix(mv.rows(), count);
    for (std::size_t i = 0; i < mv.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = mv(i, first + j);
    return Var{push(std::move(out), needs(m), [m, first, count](Tape& t, const Tensor& g) {
        Tensor gm(t.val(m).shape());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) gm(i, first + j) = g(i, j);
        t.accumulate(m.id, gm);
    })};
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
    const std::size_t c = val(rows[0]).cols();
    Tensor out = Tensor::matrix(rows.size(), c);
    bool rg = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& rv = val(rows[i]);
        if (rv.rank() != 2 || rv.rows() != 1 || rv.cols() != c) {
            throw std::invalid_argument("stack_rows: all rows must be 1 x c");
        }
        for (std::size_t j = 0; j < c; ++j) out(i, j) = rv(0, j);
        rg = rg || needs(rows[i]);
    }
    return Var{push(std::move(out), rg, [rows, c](Tape& t, const Tensor& g) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!t.needs(rows[i])) continue;
            Tensor gr = Tensor::matrix(1, c);
            for (std::size_t j = 0; j < c; ++j) gr(0, j) = g(i, j);
            t.accumulate(rows[i].id, gr);
        }
    })};
}

Var Tape::gather_row(Var m, std::size_t row) {
    const Tensor& mv = val(m);
    check_rank2(mv, "gather_row");
    if (row >= mv.rows()) throw std::invalid_argument("gather_row: out of range");
    Tensor out = Tensor::matrix(1, mv.cols());
    for (std::size_t j = 0; j < mv.cols(); ++j) out(0, j) = mv(row, j);
    return Var{push(std::move(out), needs(m), [m, row](Tape& t, const Tensor& g) {
        if (!t.needs(m)) return;
        Tensor& gm = t.adjoint_slot(m.id);  // row-sparse update
        for (std::size_t j = 0; j < g.cols(); ++j) gm(row, j) += g(0, j);
    })};
}

Var Tape::rnn_cell(Var x, Var prev, Var w, Var u, Var b) {
    const Tensor& xv = val(x);
    const Tensor& pv = val(prev);
    const Tensor& wv = val(w);
    const Tensor& uv = val(u);
    const Tensor& bv = val(b);
    const std::size_t e = wv.rows(), h = wv.cols();
    if (xv.rows() != 1 || xv.cols() != e || pv.rows() != 1 || pv.cols() != h ||
        uv.rows() != h || uv.cols() != h || bv.rows() != 1 || bv.cols() != h) {
        throw std::invalid_argument("rnn_cell: operand shape mismatch");
    }
    Tensor out = Tensor::matrix(1, h);
    for (std::size_t c = 0; c < h; ++c) {
        double acc = bv(0, c);
        for (std::size_t i = 0; i < e; ++i) acc += xv(0, i) * wv(i, c);
        for (std::size_t i = 0; i < h; ++i) acc += pv(0, i) * uv(i, c);
        out(0, c) = std::tanh(acc);
    }
    const bool rg = needs(x) || needs(prev) || needs(w) || needs(u) || needs(b);
    int id = push(std::move(out), rg, nullptr);
    nodes_[id].pull = [x, prev, w, u, b, id, e, h](Tape& t, const Tensor& g) {
        const Tensor& y = t.nodes_[id].value;
        std::vector<double> dpre(h);
        for (std::size_t c = 0; c < h; ++c) dpre[c] = g(0, c) * (1.0 - y(0, c) * y(0, c));
        const Tensor& xv2 = t.val(x);
        const Tensor& pv2 = t.val(prev);
        const Tensor& wv2 = t.val(w);
        const Tensor& uv2 = t.val(u);
        if (t.needs(x)) {
            Tensor& gx = t.adjoint_slot(x.id);
            for (std::size_t i = 0; i < e; ++i) {
                double acc = 0.0;
                for (std::size_t c = 0; c < h; ++c) acc += dpre[c] * wv2(i, c);
                gx(0, i) += acc;
            }
        }
        if (t.needs(prev)) {
            Tensor& gp = t.adjoint_slot(prev.id);
            for (std::size_t i = 0; i < h; ++i) {
                double acc = 0.0;
                for (std::size_t c = 0; c < h; ++c) acc += dpre[c] * uv2(i, c);
                gp(0, i) += acc;
            }
        }
        if (t.needs(w)) {
            Tensor& gw = t.adjoint_slot(w.id);
            for (std::size_t i = 0; i < e; ++i) {
                const double xi = xv2(0, i);
                if (xi == 0.0) continue;
                for (std::size_t c = 0; c < h; ++c) gw(i, c) += xi * dpre[c];
            }
        }
        if (t.needs(u)) {
            Tensor& gu = t.adjoint_slot(u.id);
            for (std::size_t i = 0; i < h; ++i) {
                const double pi = pv2(0, i);
                if (pi == 0.0) continue;
                for (std::size_t c = 0; c < h; ++c) gu(i, c) += pi * dpre[c];
            }
        }
        if (t.needs(b)) {
            Tensor& gb = t.adjoint_slot(b.id);
            for (std::size_t c = 0; c < h; ++c) gb(0, c) += dpre[c];
        }
    };
    return Var{id};
}

Var Tape::sum_rows(Var m, std::vector<std::size_t> rows) {
    const Tensor& mv = val(m);
    check_rank2(mv, "sum_rows");
    Tensor out = Tensor::matrix(1, mv.cols());
    for (std::size_t r : rows) {
        if (r >= mv.rows()) throw std::invalid_argument("sum_rows: out of range");
        for (std::size_t j = 0; j < mv.cols(); ++j) out(0, j) += mv(r, j);
    }
    return Var{push(std::move(out), needs(m), [m, rows = std::move(rows)](Tape& t, const Tensor& g) {
        Tensor gm(t.val(m).shape());
        for (std::size_t r : rows)
            for (std::size_t j = 0; j < g.cols(); ++j) gm(r, j) += g(0, j);
        t.accumulate(m.id, gm);
    })};
}

Var Tape::dot(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("dot: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    return Var{push(Tensor::scalar(acc), needs(a) || needs(b), [a, b](Tape& t, const Tensor& g) {
        const double gs = g[0];
        if (t.needs(a)) {
            Tensor ga = t.val(b);
            ga *= gs;
            t.accumulate(a.id, ga);
        }
        if (t.needs(b)) {
            Tensor gb = t.val(a);
            gb *= gs;
            t.accumulate(b.id, gb);
        }
    })};
}

Var Tape::sum(Var a) {
    double acc = 0.0;
    for (double v : val(a).data()) acc += v;
    return Var{push(Tensor::scalar(acc), needs(a), [a](Tape& t, const Tensor& g) {
        Tensor ga(t.val(a).shape());
        for (double& v : ga.data()) v = g[0];
        t.accumulate(a.id, ga);
    })};
}

Var Tape::mse_against(Var a, Tensor target) {
    const Tensor& av = val(a);
    if (!av.same_shape(target)) {
        throw std::invalid_argument("mse_against: shape mismatch " + shape_to_string(av.shape()) +
                                    " vs " + shape_to_string(target.shape()));
    }
    const double loss = fedner::mse(av, target);
    const double inv_n = 1.0 / static_cast<double>(av.size());
    return Var{push(Tensor::scalar(loss), needs(a),
                    [a, target = std::move(target), inv_n](Tape& t, const Tensor& g) {
                        const Tensor& av2 = t.val(a);
                        Tensor ga(av2.shape());
                        for (std::size_t i = 0; i < av2.size(); ++i) {
                            ga[i] = 2.0 * (av2[i] - target[i]) * inv_n * g[0];
                        }
                        t.accumulate(a.id, ga);
                    })};
}

Var Tape::cross_entropy_mean(Var logits, std::vector<std::size_t> rows, std::vector<int> targets) {
    const Tensor& lv = val(logits);
    check_rank2(lv, "cross_entropy_mean");
    if (rows.size() != targets.size()) {
        throw std::invalid_argument("cross_entropy_mean: rows/targets length mismatch");
    }
    if (rows.empty()) return constant(Tensor::scalar(0.0));
    const std::size_t c = lv.cols();
    double loss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= lv.rows()) throw std::invalid_argument("cross_entropy_mean: row out of range");
        if (targets[k] < 0 || static_cast<std::size_t>(targets[k]) >= c) {
            throw std::invalid_argument("cross_entropy_mean: label id " +
                                        std::to_string(targets[k]) + " outside logit range " +
                                        std::to_string(c));
        }
        std::vector<double> p(lv.data().begin() + rows[k] * c, lv.data().begin() + (rows[k] + 1) * c);
        softmax_row_inplace(p);
        loss -= std::log(std::max(p[targets[k]], 1e-300));
    }
    loss /= static_cast<double>(rows.size());
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    return Var{push(Tensor::scalar(loss), needs(logits),
                    [logits, rows = std::move(rows), targets = std::move(targets), c,
                     inv_n](Tape& t, const Tensor& g) {
                        const Tensor& lv2 = t.val(logits);
                        Tensor gl(lv2.shape());
                        for (std::size_t k = 0; k < rows.size(); ++k) {
                            std::vector<double> p(lv2.data().begin() + rows[k] * c,
                                                  lv2.data().begin() + (rows[k] + 1) * c);
                            softmax_row_inplace(p);
                            p[targets[k]] -= 1.0;
                            for (std::size_t j = 0; j < c; ++j) {
                                gl(rows[k], j) += p[j] * inv_n * g[0];
                            }
                        }
                        t.accumulate(logits.id, gl);
                    })};
}

Var Tape::kl_mean(Tensor p_ref, Var logits, std::vector<std::size_t> rows, std::size_t cols) {
    const Tensor& lv = val(logits);
    check_rank2(lv, "kl_mean");
    if (cols > lv.cols()) throw std::invalid_argument("kl_mean: cols out of range");
    if (p_ref.rank() != 2 || p_ref.rows() != rows.size() || p_ref.cols() != cols) {
        throw std::invalid_argument("kl_mean: reference shape mismatch");
    }
    if (rows.empty()) return constant(Tensor::scalar(0.0));
    const std::size_t stride = lv.cols();
    double loss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        std::vector<double> q(lv.data().begin() + rows[k] * stride,
                              lv.data().begin() + rows[k] * stride + cols);
        softmax_row_inplace(q);
        for (std::size_t j = 0; j < cols; ++j) {
            const double p = p_ref(k, j);
            if (p > 0.0) loss += p * (std::log(p) - std::log(std::max(q[j], 1e-300)));
        }
    }
    loss /= static_cast<double>(rows.size());
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    return Var{push(Tensor::scalar(loss), needs(logits),
                    [logits, p_ref = std::move(p_ref), rows = std::move(rows), cols, stride,
                     inv_n](Tape& t, const Tensor& g) {
                        const Tensor& lv2 = t.val(logits);
                        Tensor gl(lv2.shape());
                        for (std::size_t k = 0; k < rows.size(); ++k) {
                            std::vector<double> q(lv2.data().begin() + rows[k] * stride,
                                                  lv2.data().begin() + rows[k] * stride + cols);
                            softmax_row_inplace(q);
                            // d/dz KL(p || softmax(z)) = softmax(z) - p
                            for (std::size_t j = 0; j < cols; ++j) {
                                gl(rows[k], j) += (q[j] - p_ref(k, j)) * inv_n * g[0];
                            }
                        }
                        t.accumulate(logits.id, gl);
                    })};
}

Var Tape::log_sum_exp(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    double mx = val(scalars[0]).item();
    bool rg = false;
    for (Var s : scalars) {
        mx = std::max(mx, val(s).item());
        rg = rg || needs(s);
    }
    double acc = 0.0;
    for (Var s : scalars) acc += std::exp(val(s).item() - mx);
    const double out = mx + std::log(acc);
    return Var{push(Tensor::scalar(out), rg, [scalars, out](Tape& t, const Tensor& g) {
        for (Var s : scalars) {
            if (!t.needs(s)) continue;
            const double w = std::exp(t.val(s).item() - out);
            t.accumulate(s.id, Tensor::scalar(w * g[0]));
        }
    })};
}

Var Tape::svd_left_vectors(Var m) {
    SvdFactors factors = svd(val(m));
    Tensor u = factors.u;
    return Var{push(std::move(u), needs(m),
                    [m, factors = std::move(factors)](Tape& t, const Tensor& g) {
                        t.accumulate(m.id, svd_backward(t.val(m), factors, g));
                    })};
}

void Tape::backward(Var root) {
    if (ran_backward_) throw std::logic_error("tape: backward already ran");
    ran_backward_ = true;
    if (!root.valid()) throw std::logic_error("tape: invalid root");
    if (val(root).size() != 1) throw std::logic_error("tape: backward root must be scalar");
    adjoints_.assign(nodes_.size(), Tensor());
    if (!nodes_[root.id].requires_grad) return;
    adjoints_[root.id] = Tensor::scalar(1.0);
    for (int id = root.id; id >= 0; --id) {
        if (adjoints_[id].size() == 0 || !nodes_[id].pull) continue;
        nodes_[id].pull(*this, adjoints_[id]);
    }
}

Tensor Tape::gradient(Var v) const {
    if (!ran_backward_) throw std::logic_error("tape: gradient before backward");
    if (adjoints_[v.id].size() == 0) return Tensor(nodes_[v.id].value.shape());
    return adjoints_[v.id];
}

}  // namespace fedner
