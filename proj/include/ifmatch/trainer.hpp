#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ifmatch/cbi.hpp"
#include "ifmatch/checkpoint.hpp"
#include "ifmatch/datahub.hpp"
#include "ifmatch/featperturb.hpp"
#include "ifmatch/imgperturb.hpp"
#include "ifmatch/metrics.hpp"
#include "ifmatch/nets.hpp"
#include "ifmatch/rng.hpp"
#include "ifmatch/schedulers.hpp"

namespace ifm {

/// fixmatch_baseline: strong image view only (one student branch).
/// ifmatch: branch 1 = weak image + strong feature perturbation at A with the
///   constant tau; branch 2 = strong image + weak feature perturbation at B on
///   identified samples, gated by the dynamic threshold.
/// toy_combined: one branch, strong image + strong feature perturbation at A.
/// separate_branches: branch 1 as in ifmatch, branch 2 strong image only.
/// supervised_only: labeled loss only; random streams advance as in the others.
enum class Paradigm { FixmatchBaseline, Ifmatch, ToyCombined, SeparateBranches, SupervisedOnly };
// Which samples get the weak feature perturbation in branch 2 (ifmatch only).
enum class Identification { Cbi, Saa, All };
// Branch-1 gate: the constant tau, or the same mechanism as branch 2.
enum class Branch1Threshold { Constant, Mirror };

std::string_view to_string(Paradigm p);
std::string_view to_string(Identification i);
std::string_view to_string(Branch1Threshold b);
Paradigm parse_paradigm(std::string_view s);
Identification parse_identification(std::string_view s);
Branch1Threshold parse_branch1(std::string_view s);

struct TrainConfig {
    Paradigm paradigm = Paradigm::Ifmatch;
    int batch_labeled = 8;
    int batch_unlabeled = 16;
    double lambda_u = 1.0;
    double tau = sched::kDefaultTau;
    sched::ThresholdKind threshold = sched::ThresholdKind::Constant;
    std::optional<sched::Clamp> threshold_clamp;
    Branch1Threshold branch1 = Branch1Threshold::Constant;
    Identification identification = Identification::Cbi;
    long steps = 3000;
    double lr = 0.03;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    double ema_decay = 0.999;
    bool da = true;
    bool da_labeled_prior = false;  // DA target = labeled class prior instead of uniform
    long eval_every = 0;            // 0: max(T / 100, 50)
    std::vector<feat::Strategy> feat_pool{std::begin(feat::kAllStrategies), std::end(feat::kAllStrategies)};
    std::uint64_t seed = 0;

    // Throws ConfigError naming the offending field.
    void validate() const;
    long eval_interval() const;
};

struct BatchOutcome {
    long step = 0;  // index of the step just taken
    double lr = 0.0;
    double loss_s = 0.0, loss_u1 = 0.0, loss_u2 = 0.0, loss_total = 0.0;
    double util_b1 = 0.0, util_b2 = 0.0;
    double cbi_mask_rate = 0.0, naive_ratio = 0.0;
    double wall_ms = 0.0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::optional<double>> per_class;  // nullopt: class absent from the test set
    std::size_t count = 0;
};

EvalResult evaluate(const Model& model, const std::vector<data::Sample>& test, int batch = 250);

// [N,C,H,W] from N images of shape [C,H,W].
Tensor stack_images(std::span<const Tensor> images);

/// Mean cross-entropy of the labeled batch.
Var supervised_loss(Tape& tape, const Model& model, const Tensor& images, std::span<const int> labels);

struct TeacherOutput {
    Tensor probs;  // after DA when enabled
    std::vector<int> pseudo;
    std::vector<double> conf;
};

// Gradient-free teacher pass; DA (when given) refines and updates its state.
TeacherOutput teacher_predict(const Model& model, const Tensor& weak_view, sched::DAState* da);

struct BranchOutput {
    Var loss;                      // sum_i w_i H(onehot(pseudo_i), p_i) / N
    Tensor probs;                  // student predictions [N, C]
    std::vector<double> ce;        // per-sample cross-entropy
};

BranchOutput branch_loss(Tape& tape, const Model& model, const Tensor& view, const Hook* hook,
                         std::span<const int> pseudo, std::span<const double> weights);

/// Everything a step decided, kept for inspection.
struct StepTrace {
    std::vector<std::int64_t> unlabeled_ids;
    Tensor weak_u, strong_u;
    std::vector<int> pseudo;
    std::vector<double> conf, tau, w1, w2;
    std::vector<std::uint8_t> pass2, M;
    std::optional<Hook> hook_b1, hook_b2;
    Tensor probs_b2;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const ModelSpec& spec, const img::ImageAugPolicy& policy,
            const data::DatasetSplit& split);

    /// One iteration: losses, back-propagation, SGD and EMA updates, then the
    /// ledger records the branch-2 predictions of this step's forward.
    BatchOutcome step();
    long steps_done() const { return step_; }

    const TrainConfig& config() const { return cfg_; }
    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const Model& ema_model() const { return ema_.model(); }
    const cbi::ConfidenceLedger& ledger() const { return ledger_; }
    const sched::ThresholdState& threshold_state() const { return threshold_; }
    const sched::DAState& da_state() const { return da_; }
    const StepTrace& last_trace() const { return trace_; }
    const img::ImageAugPolicy& policy() const { return policy_; }
    const data::DatasetSplit& split() const { return split_; }

    // Model, EMA, optimizer, threshold, DA, ledger and random-stream state:
    // a loaded checkpoint continues exactly as the uninterrupted run would.
    std::vector<NamedTensor> checkpoint() const;
    void load_checkpoint(const std::vector<NamedTensor>& tensors);

private:
    std::vector<std::pair<std::string, RngStream*>> streams() const;

    TrainConfig cfg_;
    img::ImageAugPolicy policy_;
    const data::DatasetSplit& split_;
    Model model_;
    sched::EmaModel ema_;
    sched::Sgd sgd_;
    sched::ThresholdState threshold_;
    sched::DAState da_;
    sched::LrSchedule schedule_;
    cbi::ConfidenceLedger ledger_;
    RngStream shuffle_, img_weak_, img_strong_, feat_;
    long step_ = 0;
    StepTrace trace_;
};

// Restores model parameters from "<prefix><name>" tensors; throws DataError on mismatch.
void load_model_parameters(Model& model, const std::vector<NamedTensor>& tensors, const std::string& prefix);
std::vector<NamedTensor> model_tensors(const Model& model, const std::string& prefix);

using ProgressFn = std::function<void(const MetricsRow&)>;

/// Runs the remaining steps up to T with evaluations at step 0, every eval
/// interval and at T.
ExperimentRecord train(Trainer& trainer, const ProgressFn& progress = {});
ExperimentRecord train(const TrainConfig& cfg, const ModelSpec& spec, const img::ImageAugPolicy& policy,
                       const data::DatasetSplit& split, const ProgressFn& progress = {});

}  // namespace ifm
