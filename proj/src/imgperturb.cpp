#include "ifmatch/imgperturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ifm::img {

namespace {

constexpr double kMoveFraction = 0.3;  // full-magnitude translate/shear as a fraction of the extent
constexpr double kValueGain = 0.9;     // full-magnitude brightness/contrast factor change

void require_image(const Tensor& img) {
    if (img.shape().rank() != 3) throw ShapeError("image must be [C,H,W], got " + img.shape().str());
}

double fill_for(std::span<const double> fill, int c) {
    if (fill.empty()) return 0.5;
    if (static_cast<std::size_t>(c) >= fill.size()) throw ShapeError("fill has fewer entries than image channels");
    return fill[c];
}

// Nearest-neighbour resampling with out-of-range reads replaced by the fill.
template <typename Map>
Tensor resample(const Tensor& img, std::span<const double> fill, Map src) {
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    Tensor out(img.shape());
    for (int c = 0; c < C; ++c) {
        const double f = fill_for(fill, c);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                auto [sy, sx] = src(y, x, H, W);
                const std::size_t o = (static_cast<std::size_t>(c) * H + y) * W + x;
                out[o] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? img[(static_cast<std::size_t>(c) * H + sy) * W + sx]
                                                                   : f;
            }
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Op op) {
    switch (op) {
        case Op::TranslateX: return "translate_x";
        case Op::TranslateY: return "translate_y";
        case Op::ShearX: return "shear_x";
        case Op::ShearY: return "shear_y";
        case Op::Brightness: return "brightness";
        case Op::Contrast: return "contrast";
        case Op::Posterize: return "posterize";
        case Op::Solarize: return "solarize";
    }
    return "?";
}

Op parse_op(std::string_view name) {
    for (Op op : kAllOps) {
        if (to_string(op) == name) return op;
    }
    throw std::invalid_argument("unknown image op '" + std::string(name) + "'");
}

int ImageAugPolicy::effective_pad(int height) const {
    if (pad >= 0) return pad;
    return std::max(1, static_cast<int>(std::lround(4.0 * height / 32.0)));
}

Tensor flip_horizontal(const Tensor& img) {
    require_image(img);
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    Tensor out(img.shape());
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            const std::size_t row = (static_cast<std::size_t>(c) * H + y) * W;
            for (int x = 0; x < W; ++x) out[row + x] = img[row + (W - 1 - x)];
        }
    }
    return out;
}

Tensor pad_crop(const Tensor& img, int pad, int dy, int dx) {
    require_image(img);
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    if (pad < 0) throw std::invalid_argument("pad must be non-negative");
    if (pad >= H || pad >= W) {
        throw ShapeError("image " + img.shape().str() + " is too small for reflect padding of " + std::to_string(pad));
    }
    if (dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad) throw std::out_of_range("crop offset outside the padded image");
    auto reflect = [](int i, int n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * n - 2 - i;
        return i;
    };
    Tensor out(img.shape());
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            const int sy = reflect(y + dy - pad, H);
            for (int x = 0; x < W; ++x) {
                const int sx = reflect(x + dx - pad, W);
                out[(static_cast<std::size_t>(c) * H + y) * W + x] = img[(static_cast<std::size_t>(c) * H + sy) * W + sx];
            }
        }
    }
    return out;
}

Tensor apply_weak(const Tensor& img, const WeakDraw& draw, int pad) {
    Tensor out = pad_crop(img, pad, draw.dy, draw.dx);
    return draw.flip ? flip_horizontal(out) : out;
}

WeakDraw sample_weak(const ImageAugPolicy& policy, int height, RngStream& rng) {
    const int pad = policy.effective_pad(height);
    WeakDraw d;
    d.flip = rng.bernoulli(policy.flip_prob);
    d.dy = rng.between(0, 2 * pad);
    d.dx = rng.between(0, 2 * pad);
    return d;
}

Tensor apply_op(const Tensor& img, Op op, double magnitude, std::span<const double> fill) {
    require_image(img);
    if (magnitude < -1.0 || magnitude > 1.0) throw std::out_of_range("op magnitude must lie in [-1, 1]");
    if (magnitude == 0.0) return img;
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    switch (op) {
        case Op::TranslateX: {
            const int s = static_cast<int>(std::lround(magnitude * kMoveFraction * W));
            return resample(img, fill, [s](int y, int x, int, int) { return std::pair{y, x - s}; });
        }
        case Op::TranslateY: {
            const int s = static_cast<int>(std::lround(magnitude * kMoveFraction * H));
            return resample(img, fill, [s](int y, int x, int, int) { return std::pair{y - s, x}; });
        }
        case Op::ShearX: {
            const double k = magnitude * kMoveFraction;
            return resample(img, fill, [k](int y, int x, int h, int) {
                return std::pair{y, x + static_cast<int>(std::lround(k * (y - (h - 1) / 2.0)))};
            });
        }
        case Op::ShearY: {
            const double k = magnitude * kMoveFraction;
            return resample(img, fill, [k](int y, int x, int, int w) {
                return std::pair{y + static_cast<int>(std::lround(k * (x - (w - 1) / 2.0))), x};
            });
        }
        case Op::Brightness: {
            Tensor out = img;
            const double g = 1.0 + kValueGain * magnitude;
            for (double& v : out.data()) v *= g;
            return out;
        }
        case Op::Contrast: {
            Tensor out = img;
            const double g = 1.0 + kValueGain * magnitude;
            for (int c = 0; c < C; ++c) {
                double mean = 0.0;
                for (std::size_t i = 0; i < plane; ++i) mean += img[c * plane + i];
                mean /= static_cast<double>(plane);
                for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = mean + (img[c * plane + i] - mean) * g;
            }
            return out;
        }
        case Op::Posterize: {
            const int bits = 8 - static_cast<int>(std::lround(4.0 * std::abs(magnitude)));
            const double levels = std::ldexp(1.0, bits) - 1.0;
            Tensor out = img;
            for (double& v : out.data()) v = std::floor(std::clamp(v, 0.0, 1.0) * levels + 0.5) / levels;
            return out;
        }
        case Op::Solarize: {
            const double t = 1.0 - std::abs(magnitude);
            Tensor out = img;
            for (double& v : out.data()) {
                if (v >= t) v = 1.0 - v;
            }
            return out;
        }
    }
    return img;
}

Tensor cutout(const Tensor& img, int y, int x, int size, std::span<const double> fill) {
    require_image(img);
    if (size <= 0) return img;
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    Tensor out = img;
    for (int c = 0; c < C; ++c) {
        const double f = fill_for(fill, c);
        for (int yy = std::max(0, y); yy < std::min(H, y + size); ++yy) {
            for (int xx = std::max(0, x); xx < std::min(W, x + size); ++xx) {
                out[(static_cast<std::size_t>(c) * H + yy) * W + xx] = f;
            }
        }
    }
    return out;
}

Tensor weak_aug(const Tensor& img, const ImageAugPolicy& policy, RngStream& rng) {
    require_image(img);
    const WeakDraw d = sample_weak(policy, img.shape()[1], rng);
    return apply_weak(img, d, policy.effective_pad(img.shape()[1]));
}

Tensor strong_aug(const Tensor& img, const ImageAugPolicy& policy, RngStream& rng) {
    require_image(img);
    const int H = img.shape()[1], W = img.shape()[2];
    Tensor out = policy.strong_base_weak ? weak_aug(img, policy, rng) : img;
    if (!policy.pool.empty()) {
        for (int i = 0; i < policy.n_ops; ++i) {
            const Op op = policy.pool[rng.below(policy.pool.size())];
            double m = rng.uniform(0.0, policy.max_magnitude);
            if (rng.bernoulli(0.5)) m = -m;
            out = apply_op(out, op, m, policy.fill);
        }
    }
    const int size = static_cast<int>(rng.uniform(0.0, policy.cutout) * H);
    const int y = rng.between(0, H - std::min(size, H));
    const int x = rng.between(0, W - std::min(size, W));
    out = cutout(out, y, x, size, policy.fill);
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace ifm::img
