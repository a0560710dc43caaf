#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ifmatch/tensor.hpp"

namespace ifm {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Ordered record of executed primitives for reverse-mode differentiation.
///
/// A tape is single-use: it is built for one training step, `backward` runs
/// at most once, and `reset()` clears it for reuse. A tape constructed with
/// gradients disabled records values only (teacher passes).
class Tape {
public:
    // Accumulates into the gradient buffers of the op's inputs.
    using Backward = std::function<void(Tape&, std::span<const double> out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var constant(Tensor value);
    // Leaf bound to a live parameter; its gradient accumulates into `param.grad()`
    // when `param.requires_grad()`.
    Var parameter(Tensor& param);
    // Leaf with a tape-owned gradient, readable through `grad()` after backward.
    Var input(Tensor value, bool requires_grad);

    // Records an op output. `inputs` lists producer ids; the node needs a gradient
    // iff any input does. Values are checked for finiteness.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

    const Tensor& value(int id) const { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    // Gradient buffer of node `id`, allocated on first use. Only valid during backward.
    std::span<double> grad_buffer(int id);
    // Tape-owned gradient of an input leaf after backward; empty if none reached it.
    std::span<const double> grad(Var v) const;

    void backward(Var loss);
    void reset();
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* param = nullptr;
        Backward backward;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool backward_done_ = false;
};

enum class NormMode {
    Batch,   // per-channel statistics over N*H*W; identity when N < 2
    Sample,  // per-sample statistics over C*H*W
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kLogEpsilon = 1e-12;

// input [N,C,H,W], kernel [Cout,Cin,k,k]. Zero padding, cross-correlation.
Var conv2d(Var input, Var kernel, int stride, int pad);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
// gamma/beta are per-channel [C].
Var normalize(Var x, Var gamma, Var beta, NormMode mode);
// [N,C,H,W] -> [N,C]
Var global_avg_pool(Var x);
// [N,...] -> [N, prod(rest)]
Var flatten(Var x);
// x [N,F], weight [O,F], bias [O] -> [N,O]
Var affine(Var x, Var weight, Var bias);
// Row-wise softmax over the last axis of a rank-2 tensor.
Var softmax(Var logits);
// Per-row -sum_c target_c * ln(max(pred_c, 1e-12)) -> [N]
Var cross_entropy_rows(const Tensor& target, Var pred);
// Mean of cross_entropy_rows -> scalar.
Var cross_entropy(const Tensor& target, Var pred);
// sum_i w_i * x_i / divisor for x of shape [N] -> scalar
Var weighted_sum(Var x, std::span<const double> weights, double divisor);
Var sum(Var x);

// Plain (tape-free) helpers.
Tensor softmax_rows(const Tensor& logits);
Tensor one_hot(std::span<const int> classes, int num_classes);

}  // namespace ifm
