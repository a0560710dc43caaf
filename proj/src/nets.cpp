#include "ifmatch/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "ifmatch/rng.hpp"

namespace ifm {

void ModelSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be at least 2");
    if (in_channels < 1 || height < 1 || width < 1) throw std::invalid_argument("model: input shape must be positive");
    if (stage_widths.empty()) throw std::invalid_argument("model: stage_widths must not be empty");
    for (int w : stage_widths) {
        if (w < 1) throw std::invalid_argument("model: stage widths must be positive");
    }
    if (kind == ModelKind::ResidualCnn && blocks_per_stage < 1) {
        throw std::invalid_argument("model: a residual CNN needs at least one residual block");
    }
}

int ModelSpec::total_blocks() const {
    return kind == ModelKind::ResidualCnn ? static_cast<int>(stage_widths.size()) * blocks_per_stage : 0;
}

int Model::add_param(std::string name, Tensor value, bool decay) {
    value.set_requires_grad(true);
    params_.push_back(Parameter{std::move(name), std::move(value), decay});
    return static_cast<int>(params_.size()) - 1;
}

Parameter& Model::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw std::out_of_range("model has no parameter '" + name + "'");
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    RngStream rng(seed, "init");

    auto he = [&](Shape shape, int fan_in, double gain) {
        Tensor t(shape);
        const double sd = std::sqrt(gain / fan_in);
        for (double& v : t.data()) v = sd * rng.normal();
        return t;
    };
    auto conv_param = [&](const std::string& name, int co, int ci, int k) {
        return m.add_param(name, he(Shape{co, ci, k, k}, ci * k * k, 2.0), true);
    };
    auto norm_params = [&](const std::string& name, int c, int& gamma, int& beta) {
        gamma = m.add_param(name + ".gamma", Tensor(Shape{c}, 1.0), false);
        beta = m.add_param(name + ".beta", Tensor(Shape{c}, 0.0), false);
    };

    if (spec.kind == ModelKind::Mlp) {
        int fan_in = spec.in_channels * spec.height * spec.width;
        int layer = 0;
        for (int w : spec.stage_widths) {
            const std::string name = "mlp" + std::to_string(layer++);
            m.mlp_layers_.push_back(m.add_param(name + ".w", he(Shape{w, fan_in}, fan_in, 2.0), true));
            m.mlp_layers_.push_back(m.add_param(name + ".b", Tensor(Shape{w}), true));
            fan_in = w;
        }
        m.fc_weight_ = m.add_param("fc.w", he(Shape{spec.num_classes, fan_in}, fan_in, 1.0), true);
        m.fc_bias_ = m.add_param("fc.b", Tensor(Shape{spec.num_classes}), true);
        return m;
    }

    int channels = spec.stage_widths.front();
    int H = spec.height, W = spec.width;
    m.stem_ = conv_param("stem.w", channels, spec.in_channels, 3);
    int index = 0;
    for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
        for (int b = 0; b < spec.blocks_per_stage; ++b, ++index) {
            Block blk{};
            blk.in_channels = channels;
            blk.out_channels = spec.stage_widths[s];
            blk.stride = (s > 0 && b == 0) ? 2 : 1;
            H = (H + 2 - 3) / blk.stride + 1;
            W = (W + 2 - 3) / blk.stride + 1;
            blk.out_height = H;
            blk.out_width = W;
            const std::string name = "block" + std::to_string(index);
            norm_params(name + ".norm1", blk.in_channels, blk.norm1_gamma, blk.norm1_beta);
            blk.conv1 = conv_param(name + ".conv1.w", blk.out_channels, blk.in_channels, 3);
            norm_params(name + ".norm2", blk.out_channels, blk.norm2_gamma, blk.norm2_beta);
            blk.conv2 = conv_param(name + ".conv2.w", blk.out_channels, blk.out_channels, 3);
            blk.projection = -1;
            if (blk.in_channels != blk.out_channels || blk.stride != 1) {
                blk.projection = conv_param(name + ".proj.w", blk.out_channels, blk.in_channels, 1);
            }
            m.blocks_.push_back(blk);
            channels = blk.out_channels;
        }
    }
    norm_params("head.norm", channels, m.head_gamma_, m.head_beta_);
    m.fc_weight_ = m.add_param("fc.w", he(Shape{spec.num_classes, channels}, channels, 1.0), true);
    m.fc_bias_ = m.add_param("fc.b", Tensor(Shape{spec.num_classes}), true);
    return m;
}

std::vector<HookPoint> Model::hook_points() const {
    std::vector<HookPoint> out;
    for (int b = 0; b < static_cast<int>(blocks_.size()); ++b) {
        out.push_back({b, HookPosition::A, 1});
        out.push_back({b, HookPosition::B, 1});
        out.push_back({b, HookPosition::B, 2});
    }
    return out;
}

feat::FeatureShape Model::feature_shape(const HookPoint& point) const {
    if (point.block < 0 || point.block >= static_cast<int>(blocks_.size())) {
        throw std::out_of_range("hook block " + std::to_string(point.block) + " outside [0, " +
                                std::to_string(blocks_.size()) + ")");
    }
    if (point.position == HookPosition::B && point.conv != 1 && point.conv != 2) {
        throw std::out_of_range("hook conv index must be 1 or 2");
    }
    // Convolution 1 carries the stride, so every hook of a block sees its output shape.
    const Block& b = blocks_[point.block];
    return {b.out_channels, b.out_height, b.out_width};
}

Var Model::maybe_hook(Var x, const Hook* hook, int block, HookPosition pos, int conv) const {
    if (hook == nullptr || hook->point.block != block || hook->point.position != pos) return x;
    if (pos == HookPosition::B && hook->point.conv != conv) return x;
    return feat::perturb(x, hook->draw, hook->sample_mask);
}

Var Model::forward(Tape& tape, Var input, const Hook* hook, std::vector<Var>* block_outputs) const {
    const Shape& xs = input.shape();
    if (xs.rank() != 4 || xs[1] != spec_.in_channels || xs[2] != spec_.height || xs[3] != spec_.width) {
        throw ShapeError("model input must be [N," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "], got " + xs.str());
    }
    if (hook != nullptr) {
        feature_shape(hook->point);  // range checks
        if (!hook->sample_mask.empty() && static_cast<int>(hook->sample_mask.size()) != xs[0]) {
            throw ShapeError("sample mask length " + std::to_string(hook->sample_mask.size()) +
                             " does not match batch size " + std::to_string(xs[0]));
        }
        feat::validate(hook->draw, feature_shape(hook->point));
    }
    auto P = [&](int idx) { return tape.parameter(const_cast<Tensor&>(params_[idx].value)); };

    if (spec_.kind == ModelKind::Mlp) {
        if (hook != nullptr) throw std::invalid_argument("the MLP model has no hook points");
        Var h = flatten(input);
        for (std::size_t i = 0; i < mlp_layers_.size(); i += 2) h = relu(affine(h, P(mlp_layers_[i]), P(mlp_layers_[i + 1])));
        return affine(h, P(fc_weight_), P(fc_bias_));
    }

    Var x = conv2d(input, P(stem_), 1, 1);
    for (int bi = 0; bi < static_cast<int>(blocks_.size()); ++bi) {
        const Block& b = blocks_[bi];
        Var o = relu(normalize(x, P(b.norm1_gamma), P(b.norm1_beta), spec_.norm));
        Var c1 = maybe_hook(conv2d(o, P(b.conv1), b.stride, 1), hook, bi, HookPosition::B, 1);
        Var t = relu(normalize(c1, P(b.norm2_gamma), P(b.norm2_beta), spec_.norm));
        Var c2 = maybe_hook(conv2d(t, P(b.conv2), 1, 1), hook, bi, HookPosition::B, 2);
        Var shortcut = b.projection >= 0 ? conv2d(o, P(b.projection), b.stride, 0) : x;
        x = maybe_hook(add(c2, shortcut), hook, bi, HookPosition::A, 0);
        if (block_outputs != nullptr) block_outputs->push_back(x);
    }
    Var h = relu(normalize(x, P(head_gamma_), P(head_beta_), spec_.norm));
    return affine(global_avg_pool(h), P(fc_weight_), P(fc_bias_));
}

Tensor Model::predict_logits(const Tensor& input, const Hook* hook) const {
    Tape tape(false);
    Var logits = forward(tape, tape.constant(input), hook);
    return logits.value();
}

void Model::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

}  // namespace ifm
