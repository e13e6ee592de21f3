#pragma once

#include <functional>
#include <vector>

#include "fedner/svd.hpp"
#include "fedner/tensor.hpp"

namespace fedner {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode gradient tape over Tensor values. Operations append nodes
/// (value + adjoint rule); backward() walks the tape in reverse and
/// accumulates adjoints. Single-owner: one tape per loss evaluation, not
/// shared across threads.
class Tape {
public:
    /// Differentiable leaf (model parameter or loss input under test).
    Var input(Tensor value);
    /// Non-differentiable leaf; gradients never flow into it.
    Var constant(Tensor value);

    const Tensor& value(Var v) const;
    std::size_t node_count() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double s);
    Var tanh(Var a);
    /// Fused recurrent cell: tanh(x * w + prev * u + b) for row vectors.
    Var rnn_cell(Var x, Var prev, Var w, Var u, Var b);
    /// m (n x c) plus a 1 x c row broadcast over all rows.
    Var add_row(Var m, Var row);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var m, std::size_t first, std::size_t count);
    Var stack_rows(const std::vector<Var>& rows);
    Var gather_row(Var m, std::size_t row);
    /// 1 x c sum of a subset of rows of m.
    Var sum_rows(Var m, std::vector<std::size_t> rows);
    /// Scalar inner product of two tensors of identical shape.
    Var dot(Var a, Var b);
    Var sum(Var a);
    /// Mean squared error of a against a fixed target.
    Var mse_against(Var a, Tensor target);
    /// Mean over `rows` of -log softmax(logits[row])[target[row]]. Rows and
    /// targets must be aligned; empty rows gives a constant zero.
    Var cross_entropy_mean(Var logits, std::vector<std::size_t> rows, std::vector<int> targets);
    /// Mean over `rows` of KL(p_ref || softmax of the first `cols` logits of
    /// that row). p_ref has one row per entry of `rows`.
    Var kl_mean(Tensor p_ref, Var logits, std::vector<std::size_t> rows, std::size_t cols);
    /// log(sum_i exp(s_i)) over scalar vars, stabilized.
    Var log_sum_exp(const std::vector<Var>& scalars);
    /// Sign-normalized left singular vectors; gradients via svd_backward.
    Var svd_left_vectors(Var m);

    /// Propagates from a scalar root. May be called once per tape.
    void backward(Var root);
    /// Gradient of the root w.r.t. v, zeros if the node was never reached.
    Tensor gradient(Var v) const;

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::function<void(Tape&, const Tensor&)> pull;  // adjoint rule
    };

    int push(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> pull);
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }
    void accumulate(int id, const Tensor& g);
    /// Mutable adjoint storage, lazily zero-initialized. Lets row-sparse
    /// backward rules (gather_row) skip materializing full-size gradients.
    Tensor& adjoint_slot(int id);
    const Tensor& val(Var v) const { return nodes_[v.id].value; }

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    bool ran_backward_ = false;
};

}  // namespace fedner
