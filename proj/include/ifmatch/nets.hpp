#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifmatch/autodiff.hpp"
#include "ifmatch/featperturb.hpp"
#include "ifmatch/tensor.hpp"

namespace ifm {

enum class ModelKind { ResidualCnn, Mlp };

struct ModelSpec {
    std::vector<int> stage_widths{8, 16, 32};
    int blocks_per_stage = 1;
    int num_classes = 10;
    int in_channels = 1;
    int height = 12;
    int width = 12;
    ModelKind kind = ModelKind::ResidualCnn;
    NormMode norm = NormMode::Sample;

    // Throws std::invalid_argument on an unusable spec.
    void validate() const;
    int total_blocks() const;
};

// Position A: block output (after the residual sum). Position B: output of
// convolution 1 or 2 inside the residual component.
enum class HookPosition { A, B };

struct HookPoint {
    int block = 0;
    HookPosition position = HookPosition::A;
    int conv = 1;  // 1 or 2, meaningful for position B only

    bool operator==(const HookPoint&) const = default;
};

/// Perturbation installed for one forward pass. An empty sample mask means
/// every sample is perturbed.
struct Hook {
    HookPoint point;
    feat::PerturbDraw draw;
    std::vector<std::uint8_t> sample_mask;
};

struct Parameter {
    std::string name;
    Tensor value;
    bool weight_decay = true;
};

/// Pre-activation residual CNN (or an MLP fallback) with named hook points.
class Model {
public:
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& parameter(const std::string& name);

    std::vector<HookPoint> hook_points() const;
    // Feature shape (C, H, W) observed at a hook for the spec's input size.
    feat::FeatureShape feature_shape(const HookPoint& point) const;

    /// Logits [N, num_classes]. When `block_outputs` is given it receives the
    /// output of every residual block in order.
    Var forward(Tape& tape, Var input, const Hook* hook = nullptr, std::vector<Var>* block_outputs = nullptr) const;
    // Convenience: logits of a gradient-free pass.
    Tensor predict_logits(const Tensor& input, const Hook* hook = nullptr) const;

    void zero_grad();

private:
    struct Block {
        int in_channels, out_channels, stride;
        int out_height, out_width;
        int norm1_gamma, norm1_beta, conv1, norm2_gamma, norm2_beta, conv2;
        int projection;  // -1 when the identity path needs no projection
    };

    int add_param(std::string name, Tensor value, bool decay);
    Var maybe_hook(Var x, const Hook* hook, int block, HookPosition pos, int conv) const;

    ModelSpec spec_;
    std::vector<Parameter> params_;
    std::vector<Block> blocks_;
    int stem_ = -1;
    int head_gamma_ = -1, head_beta_ = -1;
    int fc_weight_ = -1, fc_bias_ = -1;
    std::vector<int> mlp_layers_;  // pairs of (weight, bias) indices
};

}  // namespace ifm
