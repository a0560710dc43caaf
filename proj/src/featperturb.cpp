#include "ifmatch/featperturb.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace ifm::feat {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::ChannelDrop: return "channel_drop";
        case Strategy::SpatialDrop: return "spatial_drop";
        case Strategy::Translate: return "translate";
        case Strategy::Shear: return "shear";
        case Strategy::ValueSmooth: return "value_smooth";
    }
    return "?";
}

std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::Up: return "up";
        case Direction::Down: return "down";
        case Direction::Left: return "left";
        case Direction::Right: return "right";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    for (Strategy s : kAllStrategies) {
        if (to_string(s) == name) return s;
    }
    throw std::invalid_argument("unknown perturbation strategy '" + std::string(name) + "'");
}

Direction parse_direction(std::string_view name) {
    for (Direction d : {Direction::Up, Direction::Down, Direction::Left, Direction::Right}) {
        if (to_string(d) == name) return d;
    }
    throw std::invalid_argument("unknown direction '" + std::string(name) + "'");
}

bool horizontal(Direction d) { return d == Direction::Left || d == Direction::Right; }

bool eligible(Strategy s, const FeatureShape& shape) {
    if (s == Strategy::ValueSmooth) return std::min(shape.height, shape.width) >= 3;
    return true;
}

std::vector<int> shear_offsets(int length, int lines) {
    std::vector<int> out(lines, 0);
    if (lines <= 1) return out;
    for (int j = 0; j < lines; ++j) {
        const double v = static_cast<double>(length) * j / (lines - 1);
        out[j] = static_cast<int>(std::round(v));
    }
    return out;
}

PerturbDraw sample_draw(std::span<const Strategy> pool, const FeatureShape& shape, Intensity intensity,
                        RngStream& rng) {
    if (pool.empty()) throw std::invalid_argument("sample_draw: empty strategy pool");
    std::vector<Strategy> usable;
    for (Strategy s : pool) {
        if (eligible(s, shape)) usable.push_back(s);
    }
    if (usable.empty()) {
        throw std::invalid_argument("sample_draw: feature map " + std::to_string(shape.height) + "x" +
                                    std::to_string(shape.width) + " is too small for every pooled strategy");
    }
    PerturbDraw draw;
    draw.intensity = intensity;
    draw.strategy = usable[rng.below(usable.size())];
    const int H = shape.height, W = shape.width;
    switch (draw.strategy) {
        case Strategy::ChannelDrop: {
            ChannelDropParams p;
            p.keep.resize(shape.channels);
            for (auto& k : p.keep) k = rng.bernoulli(kChannelDropProb) ? 0 : 1;
            draw.params = std::move(p);
            break;
        }
        case Strategy::SpatialDrop: {
            SpatialDropParams p;
            p.h = static_cast<int>(kSpatialDropRatio * H);
            p.w = static_cast<int>(kSpatialDropRatio * W);
            p.x = rng.between(0, H - p.h);
            p.y = rng.between(0, W - p.w);
            draw.params = p;
            break;
        }
        case Strategy::Translate: {
            TranslateParams p;
            p.direction = static_cast<Direction>(rng.below(4));
            const double alpha = rng.uniform(0.0, kTranslateAlphaMax);
            p.length = static_cast<int>(alpha * (horizontal(p.direction) ? W : H));
            draw.params = p;
            break;
        }
        case Strategy::Shear: {
            ShearParams p;
            p.direction = static_cast<Direction>(rng.below(4));
            const double alpha = rng.uniform(0.0, kShearAlphaMax);
            const bool hz = horizontal(p.direction);
            p.length = static_cast<int>(alpha * (hz ? W : H));
            p.offsets = shear_offsets(p.length, hz ? H : W);
            draw.params = std::move(p);
            break;
        }
        case Strategy::ValueSmooth: {
            ValueSmoothParams p;
            const int max_k = std::min(H, W);
            const int choices = (max_k - 3) / 2 + 1;  // odd sizes 3, 5, ..., <= max_k
            p.kernel = 3 + 2 * static_cast<int>(rng.below(choices));
            p.alpha = rng.uniform(kSmoothAlphaMin, kSmoothAlphaMax);
            draw.params = p;
            break;
        }
    }
    return draw;
}

namespace {

FeatureShape feature_shape_of(const Tensor& f) {
    if (f.shape().rank() != 4) throw ShapeError("feature perturbation needs [N,C,H,W], got " + f.shape().str());
    return {f.shape()[1], f.shape()[2], f.shape()[3]};
}

void check_mask(std::span<const std::uint8_t> mask, int batch) {
    if (!mask.empty() && static_cast<int>(mask.size()) != batch) {
        throw ShapeError("sample mask length " + std::to_string(mask.size()) + " does not match batch size (dim 0) " +
                         std::to_string(batch));
    }
}

bool selected(std::span<const std::uint8_t> mask, int n) { return mask.empty() || mask[n] != 0; }

void check_line_shift(Direction d, std::span<const int> offsets, const FeatureShape& s, const char* what) {
    const int lines = horizontal(d) ? s.height : s.width;
    const int extent = horizontal(d) ? s.width : s.height;
    if (static_cast<int>(offsets.size()) != lines) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(lines) + " line offsets, got " +
                         std::to_string(offsets.size()));
    }
    for (int o : offsets) {
        if (o < 0 || o > extent) {
            throw ShapeError(std::string(what) + ": shift " + std::to_string(o) + " outside [0, " +
                             std::to_string(extent) + "]");
        }
    }
}

// Source coordinate of output cell (h, w) for a per-line shift, or false when
// the cell is vacated.
inline bool shift_source(Direction d, std::span<const int> off, int H, int W, int h, int w, int& sh, int& sw) {
    sh = h;
    sw = w;
    switch (d) {
        case Direction::Right: sw = w - off[h]; return sw >= 0;
        case Direction::Left: sw = w + off[h]; return sw < W;
        case Direction::Down: sh = h - off[w]; return sh >= 0;
        case Direction::Up: sh = h + off[w]; return sh < H;
    }
    return false;
}

// True when input cell (h, w) is pushed past the border.
inline bool shifted_out(Direction d, std::span<const int> off, int H, int W, int h, int w) {
    switch (d) {
        case Direction::Right: return w >= W - off[h];
        case Direction::Left: return w < off[h];
        case Direction::Down: return h >= H - off[w];
        case Direction::Up: return h < off[w];
    }
    return false;
}

// Moves every line by its offset; vacated cells get the per-channel mean of the
// values pushed out, summed in row-major order of the input.
void line_shift_sample(const double* in, double* out, int C, int H, int W, Direction d, std::span<const int> off) {
    for (int c = 0; c < C; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * H * W;
        double* op = out + static_cast<std::size_t>(c) * H * W;
        double sum = 0.0;
        int count = 0;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                if (shifted_out(d, off, H, W, h, w)) {
                    sum += ip[h * W + w];
                    ++count;
                }
        const double fill = count > 0 ? sum / count : 0.0;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                int sh, sw;
                op[h * W + w] = shift_source(d, off, H, W, h, w, sh, sw) ? ip[sh * W + sw] : fill;
            }
    }
}

void line_shift_adjoint_sample(const double* g, double* out, int C, int H, int W, Direction d,
                               std::span<const int> off) {
    for (int c = 0; c < C; ++c) {
        const double* gp = g + static_cast<std::size_t>(c) * H * W;
        double* op = out + static_cast<std::size_t>(c) * H * W;
        std::fill(op, op + H * W, 0.0);
        double vacated = 0.0;
        int count = 0;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                int sh, sw;
                if (shift_source(d, off, H, W, h, w, sh, sw)) {
                    op[sh * W + sw] += gp[h * W + w];
                } else {
                    vacated += gp[h * W + w];
                }
                if (shifted_out(d, off, H, W, h, w)) ++count;
            }
        if (count == 0) continue;
        const double share = vacated / count;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                if (shifted_out(d, off, H, W, h, w)) op[h * W + w] += share;
    }
}

// out = x + alpha * (mean over the in-bounds k x k window - x). Constant maps
// are exact fixed points of this form.
void smooth_sample(const double* in, double* out, int C, int H, int W, int k, double alpha) {
    const int r = k / 2;
    for (int c = 0; c < C; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * H * W;
        double* op = out + static_cast<std::size_t>(c) * H * W;
        for (int h = 0; h < H; ++h) {
            const int h0 = std::max(0, h - r), h1 = std::min(H - 1, h + r);
            for (int w = 0; w < W; ++w) {
                const int w0 = std::max(0, w - r), w1 = std::min(W - 1, w + r);
                const double x = ip[h * W + w];
                double s = 0.0;
                for (int i = h0; i <= h1; ++i)
                    for (int j = w0; j <= w1; ++j) s += ip[i * W + j] - x;
                const int count = (h1 - h0 + 1) * (w1 - w0 + 1);
                op[h * W + w] = x + alpha * (s / count);
            }
        }
    }
}

void smooth_adjoint_sample(const double* g, double* out, int C, int H, int W, int k, double alpha) {
    const int r = k / 2;
    for (int c = 0; c < C; ++c) {
        const double* gp = g + static_cast<std::size_t>(c) * H * W;
        double* op = out + static_cast<std::size_t>(c) * H * W;
        std::fill(op, op + H * W, 0.0);
        for (int h = 0; h < H; ++h) {
            const int h0 = std::max(0, h - r), h1 = std::min(H - 1, h + r);
            for (int w = 0; w < W; ++w) {
                const int w0 = std::max(0, w - r), w1 = std::min(W - 1, w + r);
                const int count = (h1 - h0 + 1) * (w1 - w0 + 1);
                const double gv = gp[h * W + w];
                const double share = alpha * gv / count;
                for (int i = h0; i <= h1; ++i)
                    for (int j = w0; j <= w1; ++j) op[i * W + j] += share;
                op[h * W + w] += gv - alpha * gv;
            }
        }
    }
}

double spatial_scale(const SpatialDropParams& p, int H, int W) {
    const int area = H * W;
    const int dropped = p.h * p.w;
    if (dropped == 0) return 1.0;
    return static_cast<double>(area) / static_cast<double>(area - dropped);
}

inline bool in_rect(const SpatialDropParams& p, int h, int w) {
    return h >= p.x && h < p.x + p.h && w >= p.y && w < p.y + p.w;
}

std::vector<int> translate_offsets(const TranslateParams& p, const FeatureShape& s) {
    return std::vector<int>(horizontal(p.direction) ? s.height : s.width, p.length);
}

// Shared driver: runs `fn(in_sample, out_sample)` on selected samples and copies the rest.
template <class Fn>
Tensor per_sample(const Tensor& f, std::span<const std::uint8_t> mask, Fn&& fn) {
    const FeatureShape s = feature_shape_of(f);
    const int N = f.shape()[0];
    check_mask(mask, N);
    const std::size_t plane = static_cast<std::size_t>(s.channels) * s.height * s.width;
    Tensor out(f.shape());
    for (int n = 0; n < N; ++n) {
        const double* in = f.data().data() + n * plane;
        double* dst = out.data().data() + n * plane;
        if (selected(mask, n)) {
            fn(in, dst);
        } else {
            std::copy(in, in + plane, dst);
        }
    }
    return out;
}

Tensor forward_impl(const Tensor& f, const PerturbDraw& draw, std::span<const std::uint8_t> mask) {
    const FeatureShape s = feature_shape_of(f);
    validate(draw, s);
    const int C = s.channels, H = s.height, W = s.width;
    return std::visit(
        [&](const auto& p) -> Tensor {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ChannelDropParams>) {
                const double kept_scale = 1.0 / (1.0 - kChannelDropProb);
                return per_sample(f, mask, [&](const double* in, double* out) {
                    for (int c = 0; c < C; ++c) {
                        const std::size_t base = static_cast<std::size_t>(c) * H * W;
                        for (int i = 0; i < H * W; ++i) out[base + i] = p.keep[c] ? in[base + i] * kept_scale : 0.0;
                    }
                });
            } else if constexpr (std::is_same_v<P, SpatialDropParams>) {
                const double sc = spatial_scale(p, H, W);
                return per_sample(f, mask, [&](const double* in, double* out) {
                    for (int c = 0; c < C; ++c)
                        for (int h = 0; h < H; ++h)
                            for (int w = 0; w < W; ++w) {
                                const std::size_t i = (static_cast<std::size_t>(c) * H + h) * W + w;
                                out[i] = in_rect(p, h, w) ? 0.0 : in[i] * sc;
                            }
                });
            } else if constexpr (std::is_same_v<P, TranslateParams>) {
                if (p.length == 0) return per_sample(f, mask, [&](const double* in, double* out) {
                    std::copy(in, in + static_cast<std::size_t>(C) * H * W, out);
                });
                const auto off = translate_offsets(p, s);
                return per_sample(f, mask, [&](const double* in, double* out) {
                    line_shift_sample(in, out, C, H, W, p.direction, off);
                });
            } else if constexpr (std::is_same_v<P, ShearParams>) {
                return per_sample(f, mask, [&](const double* in, double* out) {
                    line_shift_sample(in, out, C, H, W, p.direction, p.offsets);
                });
            } else {
                return per_sample(f, mask, [&](const double* in, double* out) {
                    smooth_sample(in, out, C, H, W, p.kernel, p.alpha);
                });
            }
        },
        draw.params);
}

}  // namespace

void validate(const PerturbDraw& draw, const FeatureShape& s) {
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ChannelDropParams>) {
                if (draw.strategy != Strategy::ChannelDrop) throw std::invalid_argument("draw strategy/params mismatch");
                if (static_cast<int>(p.keep.size()) != s.channels) {
                    throw ShapeError("channel_dropout: keep-mask length " + std::to_string(p.keep.size()) +
                                     " does not match channels (dim 1) " + std::to_string(s.channels));
                }
            } else if constexpr (std::is_same_v<P, SpatialDropParams>) {
                if (draw.strategy != Strategy::SpatialDrop) throw std::invalid_argument("draw strategy/params mismatch");
                if (p.h < 0 || p.w < 0 || p.x < 0 || p.y < 0 || p.x + p.h > s.height || p.y + p.w > s.width) {
                    throw ShapeError("spatial_dropout: rectangle (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                     "," + std::to_string(p.h) + "," + std::to_string(p.w) + ") outside " +
                                     std::to_string(s.height) + "x" + std::to_string(s.width));
                }
            } else if constexpr (std::is_same_v<P, TranslateParams>) {
                if (draw.strategy != Strategy::Translate) throw std::invalid_argument("draw strategy/params mismatch");
                const int extent = horizontal(p.direction) ? s.width : s.height;
                if (p.length < 0 || p.length > extent) {
                    throw ShapeError("translate: length " + std::to_string(p.length) + " outside [0, " +
                                     std::to_string(extent) + "]");
                }
            } else if constexpr (std::is_same_v<P, ShearParams>) {
                if (draw.strategy != Strategy::Shear) throw std::invalid_argument("draw strategy/params mismatch");
                const int extent = horizontal(p.direction) ? s.width : s.height;
                if (p.length < 0 || p.length > extent) {
                    throw ShapeError("shear: length " + std::to_string(p.length) + " outside [0, " +
                                     std::to_string(extent) + "]");
                }
                check_line_shift(p.direction, p.offsets, s, "shear");
            } else {
                if (draw.strategy != Strategy::ValueSmooth) throw std::invalid_argument("draw strategy/params mismatch");
                if (p.kernel % 2 == 0 || p.kernel < 3 || p.kernel > std::min(s.height, s.width)) {
                    throw ShapeError("value_smooth: kernel " + std::to_string(p.kernel) + " must be odd within [3, " +
                                     std::to_string(std::min(s.height, s.width)) + "]");
                }
                if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) throw ShapeError("value_smooth: alpha outside [0, 1]");
            }
        },
        draw.params);
}

Tensor channel_dropout(const Tensor& f, const ChannelDropParams& p) {
    return forward_impl(f, PerturbDraw{Strategy::ChannelDrop, Intensity::Strong, p}, {});
}

Tensor spatial_dropout(const Tensor& f, const SpatialDropParams& p) {
    return forward_impl(f, PerturbDraw{Strategy::SpatialDrop, Intensity::Strong, p}, {});
}

Tensor translate(const Tensor& f, const TranslateParams& p) {
    return forward_impl(f, PerturbDraw{Strategy::Translate, Intensity::Strong, p}, {});
}

Tensor shear(const Tensor& f, const ShearParams& p) {
    return forward_impl(f, PerturbDraw{Strategy::Shear, Intensity::Strong, p}, {});
}

Tensor value_smooth(const Tensor& f, const ValueSmoothParams& p) {
    return forward_impl(f, PerturbDraw{Strategy::ValueSmooth, Intensity::Strong, p}, {});
}

Tensor apply(const Tensor& f, const PerturbDraw& draw, std::span<const std::uint8_t> mask) {
    return forward_impl(f, draw, mask);
}

Tensor apply_adjoint(const Tensor& g, const PerturbDraw& draw, std::span<const std::uint8_t> mask) {
    const FeatureShape s = feature_shape_of(g);
    validate(draw, s);
    const int C = s.channels, H = s.height, W = s.width;
    return std::visit(
        [&](const auto& p) -> Tensor {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ChannelDropParams> || std::is_same_v<P, SpatialDropParams>) {
                // Diagonal operators are self-adjoint.
                return forward_impl(g, draw, mask);
            } else if constexpr (std::is_same_v<P, TranslateParams>) {
                const auto off = translate_offsets(p, s);
                return per_sample(g, mask, [&](const double* in, double* out) {
                    line_shift_adjoint_sample(in, out, C, H, W, p.direction, off);
                });
            } else if constexpr (std::is_same_v<P, ShearParams>) {
                return per_sample(g, mask, [&](const double* in, double* out) {
                    line_shift_adjoint_sample(in, out, C, H, W, p.direction, p.offsets);
                });
            } else {
                return per_sample(g, mask, [&](const double* in, double* out) {
                    smooth_adjoint_sample(in, out, C, H, W, p.kernel, p.alpha);
                });
            }
        },
        draw.params);
}

Var perturb(Var f, const PerturbDraw& draw, std::span<const std::uint8_t> mask) {
    Tensor out = apply(f.value(), draw, mask);
    auto saved = std::make_shared<PerturbDraw>(draw);
    auto saved_mask = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
    const int fid = f.id();
    const Shape shape = f.shape();
    return f.tape().record(std::move(out), {f}, [=](Tape& t, std::span<const double> g) {
        Tensor gt(shape, std::vector<double>(g.begin(), g.end()));
        Tensor gin = apply_adjoint(gt, *saved, *saved_mask);
        auto dst = t.grad_buffer(fid);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gin[i];
    });
}

}  // namespace ifm::feat
