#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ifmatch/checkpoint.hpp"
#include "ifmatch/nets.hpp"
#include "ifmatch/tensor.hpp"

namespace ifm::sched {

enum class ThresholdKind { Constant, Flex, Free, Soft };

std::string_view to_string(ThresholdKind k);
ThresholdKind parse_threshold_kind(std::string_view name);

inline constexpr double kDefaultTau = 0.95;
inline constexpr double kStateDecay = 0.999;
inline constexpr double kSoftVarianceFloor = 1e-6;

struct Clamp {
    double lo = 0.0, hi = 1.0;
};

/// State of one threshold mechanism.
///
/// Flex keeps, per unlabeled id, the last pseudo-label that cleared tau_base
/// (-1 if none); sigma_c counts ids per class. Free tracks an EMA of the
/// batch-mean max confidence (mu) and of the mean prediction (p_tilde). Soft
/// tracks the EMA mean (mu) and variance (var) of the max confidence.
struct ThresholdState {
    ThresholdKind kind = ThresholdKind::Constant;
    double tau_base = kDefaultTau;
    int num_classes = 2;
    double decay = kStateDecay;
    std::optional<Clamp> clamp;

    std::vector<int> selected;       // Flex: per unlabeled id
    std::vector<double> sigma;       // Flex: per class
    double mu = 0.0;                 // Free, Soft
    double var = 0.0;                // Soft
    std::vector<double> p_tilde;     // Free

    static ThresholdState make(ThresholdKind kind, int num_classes, double tau_base = kDefaultTau,
                               std::size_t num_unlabeled = 0, std::optional<Clamp> clamp = std::nullopt);
};

/// Threshold for class `cls`. Flex and Free need a class; Soft returns mu.
double threshold_value(const ThresholdState& s, std::optional<int> cls = std::nullopt);

/// 1 when conf >= mu, else the Gaussian exp(-(conf - mu)^2 / (2 var)), var floored.
double soft_weight(double conf, const ThresholdState& s);

/// Per-sample gate: the soft weight for Soft, otherwise 1(conf >= threshold(cls)).
double gate_weight(const ThresholdState& s, double conf, int cls);

/// Folds in one batch of teacher predictions [N, C]; `ids` index unlabeled samples (Flex).
void update(ThresholdState& s, const Tensor& probs, std::span<const std::int64_t> ids);

struct DAState {
    std::vector<double> p_bar;
    std::vector<double> target;
    double decay = kStateDecay;

    // p_bar starts at the target, so the first refinement is the identity.
    static DAState make(std::vector<double> target);
    static DAState uniform(int num_classes);
};

inline constexpr double kDAEpsilon = 1e-8;

/// Row-wise Normalize(p * target / max(p_bar, eps)) with the current p_bar, then
/// p_bar <- decay * p_bar + (1 - decay) * batch mean of the unrefined rows.
Tensor da_refine(const Tensor& probs, DAState& state);

struct LrSchedule {
    double eta0 = 0.03;
    long total_steps = 1;
};

// eta0 * cos(7 pi k / (16 K)); throws std::out_of_range outside [0, K].
double lr_at(const LrSchedule& s, long k);

/// Exponential moving average of model parameters, held as a full model so it
/// can be evaluated directly.
class EmaModel {
public:
    EmaModel(const Model& live, double decay);

    // shadow <- decay * shadow + (1 - decay) * live for every parameter.
    void update(const Model& live);
    double decay() const { return decay_; }
    Model& model() { return shadow_; }
    const Model& model() const { return shadow_; }

private:
    Model shadow_;
    double decay_;
};

void ema_update(Model& shadow, const Model& live, double decay);

/// Momentum SGD with decoupled-from-norm weight decay:
/// v <- m v + (g + wd w), w <- w - lr v. Parameters flagged without decay skip wd.
class Sgd {
public:
    Sgd(const Model& model, double momentum, double weight_decay);
    void step(Model& model, double lr);

    std::vector<NamedTensor> state(const std::string& prefix) const;
    void load_state(const std::vector<NamedTensor>& tensors, const std::string& prefix);

private:
    std::vector<std::string> names_;
    std::vector<std::vector<double>> velocity_;
    double momentum_, weight_decay_;
};

std::vector<NamedTensor> threshold_state_tensors(const ThresholdState& s, const std::string& prefix);
void load_threshold_state(ThresholdState& s, const std::vector<NamedTensor>& tensors, const std::string& prefix);
std::vector<NamedTensor> da_state_tensors(const DAState& s, const std::string& prefix);
void load_da_state(DAState& s, const std::vector<NamedTensor>& tensors, const std::string& prefix);

}  // namespace ifm::sched
