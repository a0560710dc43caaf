#include "ifmatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace ifm {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
    require_finite(value.data(), "constant");
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Tensor& param) {
    Node node;
    node.value = Tensor(param.shape(), param.values());
    node.needs_grad = grad_enabled_ && param.requires_grad();
    node.param = node.needs_grad ? &param : nullptr;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Tensor value, bool requires_grad) {
    require_finite(value.data(), "input");
    Node node;
    node.value = std::move(value);
    node.needs_grad = grad_enabled_ && requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    require_finite(value.data(), "op output");
    Node node;
    node.value = std::move(value);
    if (grad_enabled_) {
        for (const Var& in : inputs) {
            if (&in.tape() != this) throw std::logic_error("op mixes variables from different tapes");
            node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
        }
        if (node.needs_grad) node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::span<double> Tape::grad_buffer(int id) {
    Node& node = nodes_[id];
    if (node.grad.size() != node.value.numel()) node.grad.assign(node.value.numel(), 0.0);
    return node.grad;
}

std::span<const double> Tape::grad(Var v) const { return nodes_[v.id()].grad; }

void Tape::backward(Var loss) {
    if (&loss.tape() != this) throw std::logic_error("backward on a variable from another tape");
    if (loss.value().numel() != 1) {
        throw ShapeError("backward needs a scalar loss, got shape " + loss.shape().str());
    }
    if (backward_done_) throw std::logic_error("backward called twice on the same tape without reset");
    backward_done_ = true;
    if (!nodes_[loss.id()].needs_grad) return;

    grad_buffer(loss.id())[0] = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
        Node& node = nodes_[id];
        if (!node.needs_grad || node.grad.empty()) continue;
        require_finite(node.grad, "gradient");
        if (node.backward) {
            node.backward(*this, node.grad);
        } else if (node.param != nullptr) {
            node.param->ensure_grad();
            auto dst = node.param->grad();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape " + a.str() + " does not match " + b.str());
}

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
    if (s.rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         s.str());
    }
}

// Builds the transposed patch matrix colT[p][k] for one sample, p = output pixel,
// k = (ci, kh, kw).
void im2col_t(const double* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
              std::vector<double>& colT) {
    const int K = C * k * k;
    colT.assign(static_cast<std::size_t>(Ho) * Wo * K, 0.0);
    for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
            double* row = &colT[(static_cast<std::size_t>(oh) * Wo + ow) * K];
            int idx = 0;
            for (int c = 0; c < C; ++c) {
                for (int kh = 0; kh < k; ++kh) {
                    const int ih = oh * stride - pad + kh;
                    for (int kw = 0; kw < k; ++kw, ++idx) {
                        const int iw = ow * stride - pad + kw;
                        if (ih >= 0 && ih < H && iw >= 0 && iw < W) {
                            row[idx] = x[(static_cast<std::size_t>(c) * H + ih) * W + iw];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var input, Var kernel, int stride, int pad) {
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    require_rank(xs, 4, "conv2d", "input");
    require_rank(ks, 4, "conv2d", "kernel");
    if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
    if (pad < 0) throw ShapeError("conv2d: pad must be non-negative");
    const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int Co = ks[0], k = ks[2];
    if (ks[1] != C) {
        throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(C) + " but kernel expects " +
                         std::to_string(ks[1]));
    }
    if (ks[3] != k) throw ShapeError("conv2d: kernel must be square, got " + ks.str());
    if (k > H + 2 * pad) throw ShapeError("conv2d: kernel height exceeds padded input height (dim 2)");
    if (k > W + 2 * pad) throw ShapeError("conv2d: kernel width exceeds padded input width (dim 3)");

    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    const int K = C * k * k;
    const int P = Ho * Wo;

    Tensor out(Shape{N, Co, Ho, Wo});
    const double* x = input.value().data().data();
    const double* w = kernel.value().data().data();
    std::vector<double> colT;
    std::vector<double> col(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        im2col_t(x + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, colT);
        for (int p = 0; p < P; ++p) {
            for (int q = 0; q < K; ++q) col[static_cast<std::size_t>(q) * P + p] = colT[static_cast<std::size_t>(p) * K + q];
        }
        double* o = &out[static_cast<std::size_t>(n) * Co * P];
        for (int co = 0; co < Co; ++co) {
            double* orow = o + static_cast<std::size_t>(co) * P;
            const double* wrow = w + static_cast<std::size_t>(co) * K;
            for (int q = 0; q < K; ++q) {
                const double a = wrow[q];
                const double* crow = &col[static_cast<std::size_t>(q) * P];
                for (int p = 0; p < P; ++p) orow[p] += a * crow[p];
            }
        }
    }

    const int xid = input.id(), kid = kernel.id();
    return input.tape().record(std::move(out), {input, kernel}, [=](Tape& t, std::span<const double> g) {
        const double* xv = t.value(xid).data().data();
        const double* wv = t.value(kid).data().data();
        const bool need_x = t.needs_grad(xid), need_w = t.needs_grad(kid);
        double* gx = need_x ? t.grad_buffer(xid).data() : nullptr;
        double* gw = need_w ? t.grad_buffer(kid).data() : nullptr;
        std::vector<double> colT;
        std::vector<double> dcolT(static_cast<std::size_t>(P) * K);
        for (int n = 0; n < N; ++n) {
            const double* gn = g.data() + static_cast<std::size_t>(n) * Co * P;
            if (need_w) {
                im2col_t(xv + static_cast<std::size_t>(n) * C * H * W, C, H, W, k, stride, pad, Ho, Wo, colT);
                for (int co = 0; co < Co; ++co) {
                    double* gwrow = gw + static_cast<std::size_t>(co) * K;
                    for (int p = 0; p < P; ++p) {
                        const double gv = gn[static_cast<std::size_t>(co) * P + p];
                        const double* crow = &colT[static_cast<std::size_t>(p) * K];
                        for (int q = 0; q < K; ++q) gwrow[q] += gv * crow[q];
                    }
                }
            }
            if (need_x) {
                std::fill(dcolT.begin(), dcolT.end(), 0.0);
                for (int co = 0; co < Co; ++co) {
                    const double* wrow = wv + static_cast<std::size_t>(co) * K;
                    for (int p = 0; p < P; ++p) {
                        const double gv = gn[static_cast<std::size_t>(co) * P + p];
                        double* drow = &dcolT[static_cast<std::size_t>(p) * K];
                        for (int q = 0; q < K; ++q) drow[q] += gv * wrow[q];
                    }
                }
                double* gxn = gx + static_cast<std::size_t>(n) * C * H * W;
                for (int oh = 0; oh < Ho; ++oh) {
                    for (int ow = 0; ow < Wo; ++ow) {
                        const double* drow = &dcolT[(static_cast<std::size_t>(oh) * Wo + ow) * K];
                        int idx = 0;
                        for (int c = 0; c < C; ++c) {
                            for (int kh = 0; kh < k; ++kh) {
                                const int ih = oh * stride - pad + kh;
                                for (int kw = 0; kw < k; ++kw, ++idx) {
                                    const int iw = ow * stride - pad + kw;
                                    if (ih >= 0 && ih < H && iw >= 0 && iw < W) {
                                        gxn[(static_cast<std::size_t>(c) * H + ih) * W + iw] += drow[idx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    const int aid = a.id(), bid = b.id();
    return a.tape().record(std::move(out), {a, b}, [=](Tape& t, std::span<const double> g) {
        for (int id : {aid, bid}) {
            if (!t.needs_grad(id)) continue;
            auto dst = t.grad_buffer(id);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor out(a.shape());
    const auto av = a.value().data();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    const int aid = a.id(), bid = b.id();
    return a.tape().record(std::move(out), {a, b}, [=](Tape& t, std::span<const double> g) {
        const auto av2 = t.value(aid).data();
        const auto bv2 = t.value(bid).data();
        if (t.needs_grad(aid)) {
            auto dst = t.grad_buffer(aid);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv2[i];
        }
        if (t.needs_grad(bid)) {
            auto dst = t.grad_buffer(bid);
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * av2[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out(a.shape());
    const auto av = a.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
    const int aid = a.id();
    return a.tape().record(std::move(out), {a}, [=](Tape& t, std::span<const double> g) {
        auto dst = t.grad_buffer(aid);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * s;
    });
}

Var relu(Var x) {
    Tensor out(x.shape());
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    const int xid = x.id();
    return x.tape().record(std::move(out), {x}, [=](Tape& t, std::span<const double> g) {
        const auto xv2 = t.value(xid).data();
        auto dst = t.grad_buffer(xid);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xv2[i] > 0.0) dst[i] += g[i];
        }
    });
}

Var normalize(Var x, Var gamma, Var beta, NormMode mode) {
    const Shape& xs = x.shape();
    require_rank(xs, 4, "normalize", "input");
    const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    if (gamma.shape() != Shape{C}) throw ShapeError("normalize: gamma must be [" + std::to_string(C) + "]");
    if (beta.shape() != Shape{C}) throw ShapeError("normalize: beta must be [" + std::to_string(C) + "]");

    const auto xv = x.value().data();
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();
    const bool identity = (mode == NormMode::Batch && N < 2);

    // Normalized values and per-group inverse std, kept for backward.
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    const int groups = (mode == NormMode::Sample) ? N : C;
    auto inv_std = std::make_shared<std::vector<double>>(groups, 1.0);

    auto idx = [&](int n, int c, int i) { return (static_cast<std::size_t>(n) * C + c) * HW + i; };
    if (identity) {
        std::copy(xv.begin(), xv.end(), xhat->begin());
    } else if (mode == NormMode::Sample) {
        const double m = static_cast<double>(C) * HW;
        for (int n = 0; n < N; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * C * HW;
            double mean = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(C) * HW; ++i) mean += xv[base + i];
            mean /= m;
            double var = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(C) * HW; ++i) {
                const double d = xv[base + i] - mean;
                var += d * d;
            }
            var /= m;
            const double is = 1.0 / std::sqrt(var + kNormEpsilon);
            (*inv_std)[n] = is;
            for (std::size_t i = 0; i < static_cast<std::size_t>(C) * HW; ++i) (*xhat)[base + i] = (xv[base + i] - mean) * is;
        }
    } else {
        const double m = static_cast<double>(N) * HW;
        for (int c = 0; c < C; ++c) {
            double mean = 0.0;
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < HW; ++i) mean += xv[idx(n, c, i)];
            mean /= m;
            double var = 0.0;
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < HW; ++i) {
                    const double d = xv[idx(n, c, i)] - mean;
                    var += d * d;
                }
            var /= m;
            const double is = 1.0 / std::sqrt(var + kNormEpsilon);
            (*inv_std)[c] = is;
            for (int n = 0; n < N; ++n)
                for (int i = 0; i < HW; ++i) (*xhat)[idx(n, c, i)] = (xv[idx(n, c, i)] - mean) * is;
        }
    }

    Tensor out(xs);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i) out[idx(n, c, i)] = gv[c] * (*xhat)[idx(n, c, i)] + bv[c];

    const int xid = x.id(), gid = gamma.id(), bid = beta.id();
    return x.tape().record(std::move(out), {x, gamma, beta}, [=](Tape& t, std::span<const double> g) {
        auto id4 = [&](int n, int c, int i) { return (static_cast<std::size_t>(n) * C + c) * HW + i; };
        const auto gam = t.value(gid).data();
        if (t.needs_grad(gid) || t.needs_grad(bid)) {
            std::vector<double> dg(C, 0.0), db(C, 0.0);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < HW; ++i) {
                        dg[c] += g[id4(n, c, i)] * (*xhat)[id4(n, c, i)];
                        db[c] += g[id4(n, c, i)];
                    }
            if (t.needs_grad(gid)) {
                auto dst = t.grad_buffer(gid);
                for (int c = 0; c < C; ++c) dst[c] += dg[c];
            }
            if (t.needs_grad(bid)) {
                auto dst = t.grad_buffer(bid);
                for (int c = 0; c < C; ++c) dst[c] += db[c];
            }
        }
        if (!t.needs_grad(xid)) return;
        auto gx = t.grad_buffer(xid);
        if (identity) {
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < HW; ++i) gx[id4(n, c, i)] += g[id4(n, c, i)] * gam[c];
            return;
        }
        if (mode == NormMode::Sample) {
            const double m = static_cast<double>(C) * HW;
            for (int n = 0; n < N; ++n) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < HW; ++i) {
                        const double d = g[id4(n, c, i)] * gam[c];
                        mean_d += d;
                        mean_dx += d * (*xhat)[id4(n, c, i)];
                    }
                mean_d /= m;
                mean_dx /= m;
                const double is = (*inv_std)[n];
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < HW; ++i) {
                        const double d = g[id4(n, c, i)] * gam[c];
                        gx[id4(n, c, i)] += is * (d - mean_d - (*xhat)[id4(n, c, i)] * mean_dx);
                    }
            }
        } else {
            const double m = static_cast<double>(N) * HW;
            for (int c = 0; c < C; ++c) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < HW; ++i) {
                        const double d = g[id4(n, c, i)] * gam[c];
                        mean_d += d;
                        mean_dx += d * (*xhat)[id4(n, c, i)];
                    }
                mean_d /= m;
                mean_dx /= m;
                const double is = (*inv_std)[c];
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < HW; ++i) {
                        const double d = g[id4(n, c, i)] * gam[c];
                        gx[id4(n, c, i)] += is * (d - mean_d - (*xhat)[id4(n, c, i)] * mean_dx);
                    }
            }
        }
    });
}

Var global_avg_pool(Var x) {
    const Shape& xs = x.shape();
    require_rank(xs, 4, "global_avg_pool", "input");
    const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor out(Shape{N, C});
    const auto xv = x.value().data();
    for (int nc = 0; nc < N * C; ++nc) {
        double s = 0.0;
        for (int i = 0; i < HW; ++i) s += xv[static_cast<std::size_t>(nc) * HW + i];
        out[nc] = s / HW;
    }
    const int xid = x.id();
    return x.tape().record(std::move(out), {x}, [=](Tape& t, std::span<const double> g) {
        auto dst = t.grad_buffer(xid);
        for (int nc = 0; nc < N * C; ++nc) {
            const double v = g[nc] / HW;
            for (int i = 0; i < HW; ++i) dst[static_cast<std::size_t>(nc) * HW + i] += v;
        }
    });
}

Var flatten(Var x) {
    const Shape& xs = x.shape();
    if (xs.rank() < 1) throw ShapeError("flatten: input must have a batch axis");
    const int N = xs[0];
    const int F = static_cast<int>(xs.numel() / N);
    const int xid = x.id();
    return x.tape().record(x.value().reshaped(Shape{N, F}), {x}, [=](Tape& t, std::span<const double> g) {
        auto dst = t.grad_buffer(xid);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
}

Var affine(Var x, Var weight, Var bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require_rank(xs, 2, "affine", "input");
    require_rank(ws, 2, "affine", "weight");
    const int N = xs[0], F = xs[1], O = ws[0];
    if (ws[1] != F) {
        throw ShapeError("affine: input features (dim 1) = " + std::to_string(F) + " but weight expects " +
                         std::to_string(ws[1]));
    }
    if (bias.shape() != Shape{O}) throw ShapeError("affine: bias must be [" + std::to_string(O) + "]");
    Tensor out(Shape{N, O});
    const auto xv = x.value().data();
    const auto wv = weight.value().data();
    const auto bv = bias.value().data();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            double s = bv[o];
            for (int f = 0; f < F; ++f) s += wv[static_cast<std::size_t>(o) * F + f] * xv[static_cast<std::size_t>(n) * F + f];
            out[static_cast<std::size_t>(n) * O + o] = s;
        }
    const int xid = x.id(), wid = weight.id(), bid = bias.id();
    return x.tape().record(std::move(out), {x, weight, bias}, [=](Tape& t, std::span<const double> g) {
        const auto xv2 = t.value(xid).data();
        const auto wv2 = t.value(wid).data();
        if (t.needs_grad(xid)) {
            auto dst = t.grad_buffer(xid);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                    const double gv = g[static_cast<std::size_t>(n) * O + o];
                    for (int f = 0; f < F; ++f) dst[static_cast<std::size_t>(n) * F + f] += gv * wv2[static_cast<std::size_t>(o) * F + f];
                }
        }
        if (t.needs_grad(wid)) {
            auto dst = t.grad_buffer(wid);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) {
                    const double gv = g[static_cast<std::size_t>(n) * O + o];
                    for (int f = 0; f < F; ++f) dst[static_cast<std::size_t>(o) * F + f] += gv * xv2[static_cast<std::size_t>(n) * F + f];
                }
        }
        if (t.needs_grad(bid)) {
            auto dst = t.grad_buffer(bid);
            for (int n = 0; n < N; ++n)
                for (int o = 0; o < O; ++o) dst[o] += g[static_cast<std::size_t>(n) * O + o];
        }
    });
}

Tensor softmax_rows(const Tensor& logits) {
    const Shape& s = logits.shape();
    if (s.rank() != 2) throw ShapeError("softmax: logits must be [N,C], got " + s.str());
    const int N = s[0], C = s[1];
    Tensor out(s);
    for (int n = 0; n < N; ++n) {
        double mx = logits.at(n, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(n, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(logits.at(n, c) - mx);
            out.at(n, c) = e;
            z += e;
        }
        for (int c = 0; c < C; ++c) out.at(n, c) /= z;
    }
    return out;
}

Var softmax(Var logits) {
    Tensor out = softmax_rows(logits.value());
    const int N = out.shape()[0], C = out.shape()[1];
    const int lid = logits.id();
    Tape& tape = logits.tape();
    const int out_id = static_cast<int>(tape.size());
    return tape.record(std::move(out), {logits}, [=](Tape& t, std::span<const double> g) {
        const Tensor& y = t.value(out_id);
        auto dst = t.grad_buffer(lid);
        for (int n = 0; n < N; ++n) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += g[static_cast<std::size_t>(n) * C + c] * y.at(n, c);
            for (int c = 0; c < C; ++c) dst[static_cast<std::size_t>(n) * C + c] += y.at(n, c) * (g[static_cast<std::size_t>(n) * C + c] - dot);
        }
    });
}

Var cross_entropy_rows(const Tensor& target, Var pred) {
    const Shape& ps = pred.shape();
    if (ps.rank() != 2) throw ShapeError("cross_entropy: pred must be [N,C], got " + ps.str());
    if (target.shape() != ps) {
        throw ShapeError("cross_entropy: target shape " + target.shape().str() + " does not match pred " + ps.str() +
                         " (class count, dim 1)");
    }
    const int N = ps[0], C = ps[1];
    Tensor out(Shape{N});
    const Tensor& p = pred.value();
    for (int n = 0; n < N; ++n) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            const double tc = target.at(n, c);
            if (tc != 0.0) s -= tc * std::log(std::max(p.at(n, c), kLogEpsilon));
        }
        out[n] = s;
    }
    const int pid = pred.id();
    return pred.tape().record(std::move(out), {pred}, [=](Tape& t, std::span<const double> g) {
        const Tensor& pv = t.value(pid);
        auto dst = t.grad_buffer(pid);
        for (int n = 0; n < N; ++n) {
            if (g[n] == 0.0) continue;
            for (int c = 0; c < C; ++c) {
                const double tc = target.at(n, c);
                const double pc = pv.at(n, c);
                if (tc != 0.0 && pc > kLogEpsilon) dst[static_cast<std::size_t>(n) * C + c] -= g[n] * tc / pc;
            }
        }
    });
}

Var cross_entropy(const Tensor& target, Var pred) {
    Var rows = cross_entropy_rows(target, pred);
    const int N = rows.shape()[0];
    std::vector<double> ones(N, 1.0);
    return weighted_sum(rows, ones, static_cast<double>(N));
}

Var weighted_sum(Var x, std::span<const double> weights, double divisor) {
    const Shape& xs = x.shape();
    if (xs.rank() != 1 || static_cast<std::size_t>(xs[0]) != weights.size()) {
        throw ShapeError("weighted_sum: expected [" + std::to_string(weights.size()) + "], got " + xs.str());
    }
    if (divisor <= 0.0) throw std::invalid_argument("weighted_sum: divisor must be positive");
    const auto xv = x.value().data();
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] != 0.0) s += weights[i] * xv[i];
    }
    std::vector<double> w(weights.begin(), weights.end());
    const int xid = x.id();
    return x.tape().record(Tensor::scalar(s / divisor), {x}, [=](Tape& t, std::span<const double> g) {
        auto dst = t.grad_buffer(xid);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] != 0.0) dst[i] += g[0] * w[i] / divisor;
        }
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const int xid = x.id();
    return x.tape().record(Tensor::scalar(s), {x}, [=](Tape& t, std::span<const double> g) {
        auto dst = t.grad_buffer(xid);
        for (double& d : dst) d += g[0];
    });
}

Tensor one_hot(std::span<const int> classes, int num_classes) {
    Tensor out(Shape{static_cast<int>(classes.size()), num_classes});
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] < 0 || classes[i] >= num_classes) {
            throw std::out_of_range("one_hot: class " + std::to_string(classes[i]) + " outside [0," +
                                    std::to_string(num_classes) + ")");
        }
        out.at(static_cast<int>(i), classes[i]) = 1.0;
    }
    return out;
}

}  // namespace ifm
