#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ifmatch/rng.hpp"
#include "ifmatch/tensor.hpp"

namespace ifm::img {

// Reduced RandAugment pool: movement (translate, shear), value (brightness,
// contrast, posterize, solarize); cutout supplies the dropout group.
enum class Op { TranslateX, TranslateY, ShearX, ShearY, Brightness, Contrast, Posterize, Solarize };

inline constexpr Op kAllOps[] = {Op::TranslateX, Op::TranslateY, Op::ShearX,    Op::ShearY,
                                 Op::Brightness, Op::Contrast,   Op::Posterize, Op::Solarize};

std::string_view to_string(Op op);
Op parse_op(std::string_view name);

struct ImageAugPolicy {
    int pad = -1;             // reflect padding before the random crop; -1 scales 4 px at 32x32
    double flip_prob = 0.5;
    int n_ops = 2;
    std::vector<Op> pool{std::begin(kAllOps), std::end(kAllOps)};
    double max_magnitude = 1.0;  // magnitudes are drawn from U[0, max_magnitude], 0 is the identity
    double cutout = 0.5;         // cutout side is int(v * H) with v ~ U[0, cutout]
    bool strong_base_weak = true;  // strong view starts with its own flip and crop
    std::vector<double> fill;      // per-channel fill value; empty means 0.5

    int effective_pad(int height) const;
};

struct WeakDraw {
    bool flip = false;
    int dy = 0, dx = 0;  // crop offset into the padded image, in [0, 2 pad]
};

Tensor flip_horizontal(const Tensor& img);
// Reflect-pads by `pad` and crops the original size at (dy, dx). Throws if pad >= H or W.
Tensor pad_crop(const Tensor& img, int pad, int dy, int dx);
Tensor apply_weak(const Tensor& img, const WeakDraw& draw, int pad);

WeakDraw sample_weak(const ImageAugPolicy& policy, int height, RngStream& rng);

// Signed magnitude in [-1, 1]. Exactly 0 returns the input unchanged.
Tensor apply_op(const Tensor& img, Op op, double magnitude, std::span<const double> fill);
// Square of side `size` with its top-left corner at (y, x), clipped to the image.
Tensor cutout(const Tensor& img, int y, int x, int size, std::span<const double> fill);

/// img [C,H,W] with values in [0,1].
Tensor weak_aug(const Tensor& img, const ImageAugPolicy& policy, RngStream& rng);
Tensor strong_aug(const Tensor& img, const ImageAugPolicy& policy, RngStream& rng);

}  // namespace ifm::img
