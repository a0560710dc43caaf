#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ifmatch/autodiff.hpp"
#include "ifmatch/rng.hpp"
#include "ifmatch/tensor.hpp"

namespace ifm::feat {

enum class Strategy { ChannelDrop, SpatialDrop, Translate, Shear, ValueSmooth };
// Weak perturbations sit inside a residual component (position B), strong ones
// at a block output (position A).
enum class Intensity { Weak, Strong };
enum class Direction { Up, Down, Left, Right };

inline constexpr double kChannelDropProb = 0.5;
inline constexpr double kSpatialDropRatio = 0.5;
inline constexpr double kTranslateAlphaMax = 0.5;
inline constexpr double kShearAlphaMax = 1.0;
inline constexpr double kSmoothAlphaMin = 0.50;
inline constexpr double kSmoothAlphaMax = 0.95;

inline constexpr Strategy kAllStrategies[] = {Strategy::ChannelDrop, Strategy::SpatialDrop, Strategy::Translate,
                                              Strategy::Shear, Strategy::ValueSmooth};

struct ChannelDropParams {
    std::vector<std::uint8_t> keep;  // one flag per channel
};

// Rectangle rows [x, x+h), columns [y, y+w).
struct SpatialDropParams {
    int x = 0, y = 0, h = 0, w = 0;
};

struct TranslateParams {
    Direction direction = Direction::Right;
    int length = 0;
};

// Line j (a row for Left/Right, a column for Up/Down) moves by offsets[j].
struct ShearParams {
    Direction direction = Direction::Right;
    int length = 0;
    std::vector<int> offsets;
};

struct ValueSmoothParams {
    int kernel = 3;
    double alpha = 0.5;
};

using DrawParams = std::variant<ChannelDropParams, SpatialDropParams, TranslateParams, ShearParams, ValueSmoothParams>;

/// A fully sampled perturbation. Applying the same draw twice gives bitwise
/// identical results, which is what makes finite-difference checks possible.
struct PerturbDraw {
    Strategy strategy = Strategy::Translate;
    Intensity intensity = Intensity::Strong;
    DrawParams params = TranslateParams{};
};

struct FeatureShape {
    int channels = 1, height = 1, width = 1;
};

std::string_view to_string(Strategy s);
std::string_view to_string(Direction d);
Strategy parse_strategy(std::string_view name);
Direction parse_direction(std::string_view name);

bool horizontal(Direction d);
bool eligible(Strategy s, const FeatureShape& shape);

// Offsets round(linspace(0, length, lines)), nearest with halves away from zero.
std::vector<int> shear_offsets(int length, int lines);

/// Uniform strategy from the eligible part of `pool`, then its parameters.
/// Throws std::invalid_argument for an empty pool or when no strategy fits the shape.
PerturbDraw sample_draw(std::span<const Strategy> pool, const FeatureShape& shape, Intensity intensity,
                        RngStream& rng);

// Checks a draw against a feature shape; throws ShapeError on mismatch.
void validate(const PerturbDraw& draw, const FeatureShape& shape);

// Per-strategy operators on [N,C,H,W]; every sample in the batch is perturbed.
Tensor channel_dropout(const Tensor& f, const ChannelDropParams& p);
Tensor spatial_dropout(const Tensor& f, const SpatialDropParams& p);
Tensor translate(const Tensor& f, const TranslateParams& p);
Tensor shear(const Tensor& f, const ShearParams& p);
Tensor value_smooth(const Tensor& f, const ValueSmoothParams& p);

/// Applies the draw to samples whose mask entry is nonzero (all when the mask is empty).
Tensor apply(const Tensor& f, const PerturbDraw& draw, std::span<const std::uint8_t> mask = {});

/// Transpose of `apply` for the same draw and mask. All five operators are
/// linear in f, so this is their exact gradient.
Tensor apply_adjoint(const Tensor& grad_out, const PerturbDraw& draw, std::span<const std::uint8_t> mask = {});

/// Differentiable application on a tape.
Var perturb(Var f, const PerturbDraw& draw, std::span<const std::uint8_t> mask = {});

}  // namespace ifm::feat
