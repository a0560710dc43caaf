#include "ifmatch/schedulers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ifm::sched {

std::string_view to_string(ThresholdKind k) {
    switch (k) {
        case ThresholdKind::Constant: return "constant";
        case ThresholdKind::Flex: return "flex";
        case ThresholdKind::Free: return "free";
        case ThresholdKind::Soft: return "soft";
    }
    return "?";
}

ThresholdKind parse_threshold_kind(std::string_view name) {
    if (name == "constant") return ThresholdKind::Constant;
    if (name == "flex") return ThresholdKind::Flex;
    if (name == "free") return ThresholdKind::Free;
    if (name == "soft") return ThresholdKind::Soft;
    throw std::invalid_argument("unknown threshold kind '" + std::string(name) + "' (constant|flex|free|soft)");
}

ThresholdState ThresholdState::make(ThresholdKind kind, int num_classes, double tau_base, std::size_t num_unlabeled,
                                    std::optional<Clamp> clamp) {
    if (num_classes < 2) throw std::invalid_argument("threshold state needs at least 2 classes");
    if (!(tau_base > 0.0 && tau_base <= 1.0)) throw std::invalid_argument("tau_base must lie in (0, 1]");
    if (clamp && !(0.0 <= clamp->lo && clamp->lo <= clamp->hi && clamp->hi <= 1.0)) {
        throw std::invalid_argument("threshold clamp must satisfy 0 <= lo <= hi <= 1");
    }
    ThresholdState s;
    s.kind = kind;
    s.tau_base = tau_base;
    s.num_classes = num_classes;
    s.clamp = clamp;
    const double inv_c = 1.0 / num_classes;
    switch (kind) {
        case ThresholdKind::Constant: break;
        case ThresholdKind::Flex:
            s.selected.assign(num_unlabeled, -1);
            s.sigma.assign(num_classes, 0.0);
            break;
        case ThresholdKind::Free:
            s.mu = inv_c;
            s.p_tilde.assign(num_classes, inv_c);
            break;
        case ThresholdKind::Soft:
            s.mu = inv_c;
            s.var = inv_c * inv_c;
            break;
    }
    return s;
}

namespace {

double finish(const ThresholdState& s, double t) {
    if (s.clamp) t = std::clamp(t, s.clamp->lo, s.clamp->hi);
    return std::clamp(t, 0.0, 1.0);
}

int require_class(const ThresholdState& s, std::optional<int> cls) {
    if (!cls) throw std::invalid_argument(std::string(to_string(s.kind)) + " threshold needs a class");
    if (*cls < 0 || *cls >= s.num_classes) {
        throw std::out_of_range("class " + std::to_string(*cls) + " outside [0, " + std::to_string(s.num_classes) + ")");
    }
    return *cls;
}

}  // namespace

double threshold_value(const ThresholdState& s, std::optional<int> cls) {
    switch (s.kind) {
        case ThresholdKind::Constant: return finish(s, s.tau_base);
        case ThresholdKind::Flex: {
            const int c = require_class(s, cls);
            const double top = *std::max_element(s.sigma.begin(), s.sigma.end());
            return finish(s, s.tau_base * s.sigma[c] / std::max(top, 1.0));
        }
        case ThresholdKind::Free: {
            const int c = require_class(s, cls);
            const double top = *std::max_element(s.p_tilde.begin(), s.p_tilde.end());
            return finish(s, s.mu * s.p_tilde[c] / top);
        }
        case ThresholdKind::Soft: return finish(s, s.mu);
    }
    return 1.0;
}

double soft_weight(double conf, const ThresholdState& s) {
    const double mu = threshold_value(s);
    if (conf >= mu) return 1.0;
    const double var = std::max(s.var, kSoftVarianceFloor);
    const double d = conf - mu;
    return std::exp(-(d * d) / (2.0 * var));
}

double gate_weight(const ThresholdState& s, double conf, int cls) {
    if (s.kind == ThresholdKind::Soft) return soft_weight(conf, s);
    return conf >= threshold_value(s, cls) ? 1.0 : 0.0;
}

void update(ThresholdState& s, const Tensor& probs, std::span<const std::int64_t> ids) {
    if (probs.shape().rank() != 2 || probs.shape()[1] != s.num_classes) {
        throw ShapeError("threshold update expects [N," + std::to_string(s.num_classes) + "] predictions, got " +
                         probs.shape().str());
    }
    const int N = probs.shape()[0], C = s.num_classes;
    std::vector<double> maxp(N);
    std::vector<int> arg(N);
    for (int i = 0; i < N; ++i) {
        const double* row = probs.data().data() + static_cast<std::size_t>(i) * C;
        arg[i] = static_cast<int>(std::max_element(row, row + C) - row);
        maxp[i] = row[arg[i]];
    }
    const double d = s.decay;
    switch (s.kind) {
        case ThresholdKind::Constant: break;
        case ThresholdKind::Flex: {
            if (static_cast<int>(ids.size()) != N) throw ShapeError("flex update: ids length does not match batch");
            for (int i = 0; i < N; ++i) {
                if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= s.selected.size()) {
                    throw std::out_of_range("flex update: unlabeled id " + std::to_string(ids[i]) + " out of range");
                }
                if (maxp[i] < s.tau_base) continue;
                int& slot = s.selected[static_cast<std::size_t>(ids[i])];
                if (slot >= 0) s.sigma[slot] -= 1.0;
                slot = arg[i];
                s.sigma[slot] += 1.0;
            }
            break;
        }
        case ThresholdKind::Free: {
            double mean_max = 0.0;
            for (double v : maxp) mean_max += v;
            mean_max /= N;
            s.mu = d * s.mu + (1.0 - d) * mean_max;
            for (int c = 0; c < C; ++c) {
                double m = 0.0;
                for (int i = 0; i < N; ++i) m += probs[static_cast<std::size_t>(i) * C + c];
                s.p_tilde[c] = d * s.p_tilde[c] + (1.0 - d) * (m / N);
            }
            break;
        }
        case ThresholdKind::Soft: {
            double mean = 0.0;
            for (double v : maxp) mean += v;
            mean /= N;
            double var = 0.0;
            if (N > 1) {
                for (double v : maxp) var += (v - mean) * (v - mean);
                var /= (N - 1);
            }
            s.mu = d * s.mu + (1.0 - d) * mean;
            s.var = d * s.var + (1.0 - d) * var;
            break;
        }
    }
}

DAState DAState::make(std::vector<double> target) {
    if (target.size() < 2) throw std::invalid_argument("DA target needs at least 2 classes");
    double total = 0.0;
    for (double v : target) {
        if (!(v > 0.0)) throw std::invalid_argument("DA target entries must be positive");
        total += v;
    }
    for (double& v : target) v /= total;
    DAState s;
    s.p_bar = target;
    s.target = std::move(target);
    return s;
}

DAState DAState::uniform(int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("DA needs at least 2 classes");
    return make(std::vector<double>(num_classes, 1.0 / num_classes));
}

Tensor da_refine(const Tensor& probs, DAState& state) {
    const int C = static_cast<int>(state.target.size());
    if (probs.shape().rank() != 2 || probs.shape()[1] != C) {
        throw ShapeError("da_refine expects [N," + std::to_string(C) + "] predictions, got " + probs.shape().str());
    }
    const int N = probs.shape()[0];
    Tensor out(probs.shape());
    std::vector<double> ratio(C);
    for (int c = 0; c < C; ++c) ratio[c] = state.target[c] / std::max(state.p_bar[c], kDAEpsilon);
    for (int i = 0; i < N; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * C;
        double total = 0.0;
        for (int c = 0; c < C; ++c) {
            out[base + c] = probs[base + c] * ratio[c];
            total += out[base + c];
        }
        for (int c = 0; c < C; ++c) out[base + c] /= total;
    }
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int i = 0; i < N; ++i) m += probs[static_cast<std::size_t>(i) * C + c];
        state.p_bar[c] = state.decay * state.p_bar[c] + (1.0 - state.decay) * (m / N);
    }
    return out;
}

double lr_at(const LrSchedule& s, long k) {
    if (k < 0 || k > s.total_steps) {
        throw std::out_of_range("lr_at: step " + std::to_string(k) + " outside [0, " + std::to_string(s.total_steps) +
                                "]");
    }
    if (k == 0) return s.eta0;
    return s.eta0 * std::cos(7.0 * std::numbers::pi * static_cast<double>(k) / (16.0 * static_cast<double>(s.total_steps)));
}

void ema_update(Model& shadow, const Model& live, double decay) {
    auto& sp = shadow.parameters();
    const auto& lp = live.parameters();
    if (sp.size() != lp.size()) throw ShapeError("EMA: parameter count mismatch");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i].value.shape() != lp[i].value.shape()) {
            throw ShapeError("EMA: shape mismatch for '" + lp[i].name + "'");
        }
        auto s = sp[i].value.data();
        auto l = lp[i].value.data();
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = decay * s[j] + (1.0 - decay) * l[j];
    }
}

EmaModel::EmaModel(const Model& live, double decay) : shadow_(live), decay_(decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1]");
    for (auto& p : shadow_.parameters()) p.value.clear_grad();
}

void EmaModel::update(const Model& live) { ema_update(shadow_, live, decay_); }

Sgd::Sgd(const Model& model, double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : model.parameters()) {
        names_.push_back(p.name);
        velocity_.emplace_back(p.value.numel(), 0.0);
    }
}

void Sgd::step(Model& model, double lr) {
    auto& params = model.parameters();
    if (params.size() != velocity_.size()) throw ShapeError("optimizer: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].value;
        auto& v = velocity_[i];
        const double wd = params[i].weight_decay ? weight_decay_ : 0.0;
        const bool has_grad = w.has_grad();
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double g = has_grad ? w.grad()[j] : 0.0;
            v[j] = momentum_ * v[j] + (g + wd * w[j]);
            w[j] -= lr * v[j];
        }
    }
}

std::vector<NamedTensor> Sgd::state(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        out.push_back({prefix + names_[i], Tensor(Shape{static_cast<int>(velocity_[i].size())}, velocity_[i])});
    }
    return out;
}

void Sgd::load_state(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        const NamedTensor* t = find_tensor(tensors, prefix + names_[i]);
        if (t == nullptr) throw DataError("checkpoint lacks optimizer state '" + prefix + names_[i] + "'");
        if (t->value.numel() != velocity_[i].size()) throw DataError("optimizer state size mismatch for " + names_[i]);
        velocity_[i] = t->value.values();
    }
}

namespace {

Tensor vec(const std::vector<double>& v) {
    if (v.empty()) return Tensor(Shape{1}, 0.0);
    return Tensor(Shape{static_cast<int>(v.size())}, v);
}

const Tensor& need(const std::vector<NamedTensor>& tensors, const std::string& name) {
    const NamedTensor* t = find_tensor(tensors, name);
    if (t == nullptr) throw DataError("checkpoint lacks '" + name + "'");
    return t->value;
}

}  // namespace

std::vector<NamedTensor> threshold_state_tensors(const ThresholdState& s, const std::string& prefix) {
    std::vector<NamedTensor> out{{prefix + "mu", Tensor::scalar(s.mu)}, {prefix + "var", Tensor::scalar(s.var)}};
    // Vectors a mechanism does not use are empty and left out.
    const std::vector<double> sel(s.selected.begin(), s.selected.end());
    for (const auto& [name, v] : {std::pair{"sigma", &s.sigma}, std::pair{"p_tilde", &s.p_tilde}, std::pair{"selected", &sel}}) {
        if (!v->empty()) out.push_back({prefix + name, vec(*v)});
    }
    return out;
}

void load_threshold_state(ThresholdState& s, const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    s.mu = need(tensors, prefix + "mu").item();
    s.var = need(tensors, prefix + "var").item();
    if (!s.sigma.empty()) s.sigma = need(tensors, prefix + "sigma").values();
    if (!s.p_tilde.empty()) s.p_tilde = need(tensors, prefix + "p_tilde").values();
    if (!s.selected.empty()) {
        const auto& v = need(tensors, prefix + "selected").values();
        if (v.size() != s.selected.size()) throw DataError("flex state size mismatch in checkpoint");
        for (std::size_t i = 0; i < v.size(); ++i) s.selected[i] = static_cast<int>(v[i]);
    }
}

std::vector<NamedTensor> da_state_tensors(const DAState& s, const std::string& prefix) {
    return {{prefix + "p_bar", vec(s.p_bar)}, {prefix + "target", vec(s.target)}};
}

void load_da_state(DAState& s, const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    s.p_bar = need(tensors, prefix + "p_bar").values();
    s.target = need(tensors, prefix + "target").values();
}

}  // namespace ifm::sched
