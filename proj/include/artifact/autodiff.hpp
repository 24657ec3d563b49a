#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "artifact/tensor.hpp"

namespace artifact::ad {

// Define-by-run reverse-mode autodiff over Tensor. Each op builds a Node;
// nodes that do not require gradients carry no tape, so inference-only
// evaluation pays nothing for the graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;  // grad-requiring inputs only
    std::function<void(Node&)> backward;

    void accumulate(const Tensor& g);
};

using NodePtr = std::shared_ptr<Node>;

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    static Var constant(Tensor value) { return Var(std::move(value), false); }
    static Var param(Tensor value) { return Var(std::move(value), true); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    void zero_grad();
    // Runs backpropagation from this scalar.
    void backward() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var square(const Var& a);
Var sqrt_eps(const Var& a, double eps = 0.0);
Var exp_of(const Var& a);
Var log_of(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var tanh_of(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);
Var pick(const Var& v, int index);
// Scalar var replicated to a shape; gradient sums back into the scalar.
Var broadcast_scalar(const Var& s, std::vector<int> shape);
// y = W x for W [m,n], x [n].
Var matvec(const Var& w, const Var& x);
enum class PadMode { zero, replicate };

// Same-size padded 2D convolution; x [Cin,H,W], k [Cout,Cin,kh,kw] with odd
// kh, kw; optional bias [Cout].
Var conv2d(const Var& x, const Var& k, const Var& bias = Var(),
           PadMode pad = PadMode::zero);
// y[c] = x[c] * s[c] + t[c] broadcast over H, W (feature-wise modulation).
Var channel_affine(const Var& x, const Var& s, const Var& t);
// Hard clamp to [0,1]; gradient passes through where the input is in range.
Var clamp01(const Var& a);
// Weighted sum over the channel axis: x [C,H,W], w length C -> [1,H,W].
Var channel_weighted_sum(const Var& x, const std::vector<double>& w);
// Mean of table rows (table [V,d]) selected by ids -> [d].
Var embedding_mean(const Var& table, const std::vector<int>& ids);
Var l2_normalize(const Var& v, double eps = 1e-12);
// log(sum_i exp(x_i)) over scalar vars, max-shifted for stability.
Var log_sum_exp(const std::vector<Var>& xs);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace artifact::ad
