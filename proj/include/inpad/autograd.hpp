// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "inpad/tensor.hpp"

namespace inpad {

/// Trainable tensor with a persistent gradient buffer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.rows(), value.cols());
    }
    void zero_grad() { grad = Tensor::zeros(value.rows(), value.cols()); }
};

/// Handle into a Tape node.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Built define-by-run, one tape per training step.
/// Backward closures accumulate into input gradients; parameter leaves
/// flush their accumulated gradient into Param::grad at sweep end.
class Tape {
public:
    static constexpr double kNormEps = 1e-8;

    Var leaf(Tensor value);
    Var param(Param& p);
    /// Value copy with no backward edge.
    Var stop_gradient(Var x);

    Var matmul(Var a, Var b);
    /// a (n x c) * b^T (m x c) -> n x m
    Var matmul_nt(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    /// y = alpha * x + beta
    Var affine(Var x, double alpha, double beta);
    /// y = a + beta * b
    Var add_scaled(Var a, Var b, double beta);
    Var add_n(const std::vector<Var>& xs);
    /// x (n x c) plus row vector b (1 x c) broadcast over rows
    Var add_rowvec(Var x, Var b);

    Var relu(Var x);
    Var gelu(Var x);
    Var sigmoid(Var x);
    Var softmax_rows(Var x);

    /// Pairwise cosine: f (n x c), p (m x c) -> n x m.
    Var cosine_cross(Var f, Var p);
    /// Per-row cosine of equal-shape matrices -> n x 1.
    Var cosine_rows(Var a, Var b);
    /// Row-wise minimum -> n x 1; ties resolved to lowest column index.
    Var row_min(Var x);
    Var mean_all(Var x);
    Var sum_all(Var x);
    /// 1 - cos(vec(a), vec(b)) -> 1 x 1
    Var global_cosine_dist(Var a, Var b);
    /// mean over all entries of (a - b)^2 -> 1 x 1
    Var mse_mean(Var a, Var b);

    /// Identity forward; backward multiplies row i of the upstream gradient
    /// by weights(i, 0). Weights are constants, no gradient flows into them.
    Var grad_scale_rows(Var x, const Tensor& weights);

    /// Per-row residual (1 - cos(q_i, d_i)) * |q_i - d_i|, elementwise over
    /// channels; rows are grid cells.
    Var residual_rows(Var q, Var d);

    /// Dice loss 1 - 2*sum(p*g) / (sum(p^2) + sum(g^2)) over all entries of
    /// all listed predictions; empty-empty case yields 0.
    Var dice_loss(const std::vector<Var>& preds, const std::vector<Tensor>& gts);

    /// Token matrix (h*w x c) to channel planes (c x h*w); row-major cells.
    Var tokens_to_chw(Var x, int64_t h, int64_t w);
    Var reshape(Var x, int64_t rows, int64_t cols);

    /// x: planes (in_c x h*w); weight (out_c x in_c*kh*kw); bias (1 x out_c).
    Var conv2d(Var x, Var w, Var b, int64_t in_c, int64_t h, int64_t wdt, int64_t out_c,
               int64_t kh, int64_t kw, int64_t stride, int64_t pad);
    /// weight (in_c x out_c*kh*kw); output size (h-1)*stride - 2*pad + kh.
    Var conv_transpose2d(Var x, Var w, Var b, int64_t in_c, int64_t h, int64_t wdt, int64_t out_c,
                         int64_t kh, int64_t kw, int64_t stride, int64_t pad);
    Var upsample_bilinear(Var x, int64_t c, int64_t h, int64_t w, int64_t out_h, int64_t out_w);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    /// Gradient accumulated at v after backward(); zero tensor if untouched.
    const Tensor& grad(Var v);

    void backward(Var root);

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_alloc = false;
        std::function<void(Tape&)> back;
        Param* bound_param = nullptr;
    };

    std::vector<Node> nodes_;

    Var push(Tensor value, std::function<void(Tape&)> back = nullptr);
    Tensor& grad_ref(int32_t id);
    const Tensor& val(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
};

} // namespace inpad
