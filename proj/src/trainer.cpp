#include "ifmatch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ifm {

std::string_view to_string(Paradigm p) {
    switch (p) {
        case Paradigm::FixmatchBaseline: return "fixmatch_baseline";
        case Paradigm::Ifmatch: return "ifmatch";
        case Paradigm::ToyCombined: return "toy_combined";
        case Paradigm::SeparateBranches: return "separate_branches";
        case Paradigm::SupervisedOnly: return "supervised_only";
    }
    return "?";
}

std::string_view to_string(Identification i) {
    switch (i) {
        case Identification::Cbi: return "cbi";
        case Identification::Saa: return "saa";
        case Identification::All: return "all";
    }
    return "?";
}

std::string_view to_string(Branch1Threshold b) { return b == Branch1Threshold::Constant ? "constant" : "mirror"; }

Paradigm parse_paradigm(std::string_view s) {
    for (Paradigm p : {Paradigm::FixmatchBaseline, Paradigm::Ifmatch, Paradigm::ToyCombined, Paradigm::SeparateBranches,
                       Paradigm::SupervisedOnly}) {
        if (to_string(p) == s) return p;
    }
    throw std::invalid_argument("unknown paradigm '" + std::string(s) +
                                "' (fixmatch_baseline|ifmatch|toy_combined|separate_branches|supervised_only)");
}

Identification parse_identification(std::string_view s) {
    for (Identification i : {Identification::Cbi, Identification::Saa, Identification::All}) {
        if (to_string(i) == s) return i;
    }
    throw std::invalid_argument("unknown identification '" + std::string(s) + "' (cbi|saa|all)");
}

Branch1Threshold parse_branch1(std::string_view s) {
    if (s == "constant") return Branch1Threshold::Constant;
    if (s == "mirror") return Branch1Threshold::Mirror;
    throw std::invalid_argument("unknown branch-1 threshold '" + std::string(s) + "' (constant|mirror)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (batch_labeled < 1) fail("trainer.batch_labeled must be at least 1");
    if (batch_unlabeled < 1) fail("trainer.batch_unlabeled must be at least 1");
    if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u)) fail("trainer.lambda_u must be non-negative");
    if (!(tau > 0.0 && tau <= 1.0)) fail("trainer.tau must lie in (0, 1]");
    if (steps < 0) fail("trainer.steps must be non-negative");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("trainer.lr must be positive");
    if (!(weight_decay >= 0.0)) fail("trainer.weight_decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("trainer.momentum must lie in [0, 1)");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("trainer.ema_decay must lie in [0, 1]");
    if (eval_every < 0) fail("trainer.eval_every must be non-negative");
    if (feat_pool.empty()) fail("trainer.feat_pool must not be empty");
    if (threshold_clamp && !(0.0 <= threshold_clamp->lo && threshold_clamp->lo <= threshold_clamp->hi &&
                             threshold_clamp->hi <= 1.0)) {
        fail("trainer.threshold_clamp must satisfy 0 <= lo <= hi <= 1");
    }
}

long TrainConfig::eval_interval() const { return eval_every > 0 ? eval_every : std::max(steps / 100, 50L); }

Tensor stack_images(std::span<const Tensor> images) {
    if (images.empty()) throw ShapeError("cannot stack an empty image list");
    const Shape& s = images.front().shape();
    if (s.rank() != 3) throw ShapeError("images must be [C,H,W], got " + s.str());
    Tensor out(Shape{static_cast<int>(images.size()), s[0], s[1], s[2]});
    const std::size_t n = s.numel();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].shape() != s) throw ShapeError("image " + std::to_string(i) + " has shape " + images[i].shape().str());
        std::copy(images[i].data().begin(), images[i].data().end(), out.data().begin() + i * n);
    }
    return out;
}

EvalResult evaluate(const Model& model, const std::vector<data::Sample>& test, int batch) {
    if (test.empty()) throw DataError("evaluation needs a non-empty test set");
    const int C = model.spec().num_classes;
    std::vector<std::size_t> seen(C, 0), right(C, 0);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < test.size(); start += batch) {
        const std::size_t end = std::min(test.size(), start + static_cast<std::size_t>(batch));
        std::vector<Tensor> imgs;
        for (std::size_t i = start; i < end; ++i) imgs.push_back(test[i].image);
        const Tensor logits = model.predict_logits(stack_images(imgs));
        for (std::size_t i = start; i < end; ++i) {
            const double* row = logits.data().data() + (i - start) * C;
            const int pred = static_cast<int>(std::max_element(row, row + C) - row);
            const int y = test[i].label;
            if (y < 0 || y >= C) throw DataError("test label " + std::to_string(y) + " outside the model's classes");
            ++seen[y];
            if (pred == y) {
                ++right[y];
                ++correct;
            }
        }
    }
    EvalResult r;
    r.count = test.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    for (int c = 0; c < C; ++c) {
        if (seen[c] == 0) {
            r.per_class.push_back(std::nullopt);
        } else {
            r.per_class.push_back(static_cast<double>(right[c]) / static_cast<double>(seen[c]));
        }
    }
    return r;
}

Var supervised_loss(Tape& tape, const Model& model, const Tensor& images, std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("supervised loss needs a non-empty labeled batch");
    if (images.shape().rank() != 4 || static_cast<std::size_t>(images.shape()[0]) != labels.size()) {
        throw ShapeError("labeled batch of " + images.shape().str() + " does not match " +
                         std::to_string(labels.size()) + " labels");
    }
    Var logits = model.forward(tape, tape.constant(images));
    return cross_entropy(one_hot(labels, model.spec().num_classes), softmax(logits));
}

TeacherOutput teacher_predict(const Model& model, const Tensor& weak_view, sched::DAState* da) {
    TeacherOutput t;
    t.probs = softmax_rows(model.predict_logits(weak_view));
    if (da != nullptr) t.probs = sched::da_refine(t.probs, *da);
    const int N = t.probs.shape()[0], C = t.probs.shape()[1];
    for (int i = 0; i < N; ++i) {
        const double* row = t.probs.data().data() + static_cast<std::size_t>(i) * C;
        const int j = static_cast<int>(std::max_element(row, row + C) - row);
        t.pseudo.push_back(j);
        t.conf.push_back(row[j]);
    }
    return t;
}

BranchOutput branch_loss(Tape& tape, const Model& model, const Tensor& view, const Hook* hook,
                         std::span<const int> pseudo, std::span<const double> weights) {
    const int N = view.shape()[0];
    if (static_cast<int>(pseudo.size()) != N || static_cast<int>(weights.size()) != N) {
        throw ShapeError("branch batch size mismatch");
    }
    Var p = softmax(model.forward(tape, tape.constant(view), hook));
    Var ce = cross_entropy_rows(one_hot(pseudo, model.spec().num_classes), p);
    BranchOutput out;
    out.loss = weighted_sum(ce, weights, static_cast<double>(N));
    out.probs = p.value();
    out.ce = ce.value().values();
    return out;
}

std::vector<NamedTensor> model_tensors(const Model& model, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& p : model.parameters()) out.push_back({prefix + p.name, Tensor(p.value.shape(), p.value.values())});
    return out;
}

void load_model_parameters(Model& model, const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    for (auto& p : model.parameters()) {
        const NamedTensor* t = find_tensor(tensors, prefix + p.name);
        if (t == nullptr) throw DataError("checkpoint lacks parameter '" + prefix + p.name + "'");
        if (t->value.shape() != p.value.shape()) {
            throw DataError("checkpoint parameter '" + prefix + p.name + "' has shape " + t->value.shape().str() +
                            " but the model expects " + p.value.shape().str());
        }
        std::copy(t->value.data().begin(), t->value.data().end(), p.value.data().begin());
    }
}

namespace {

Model build_checked(const TrainConfig& cfg, const ModelSpec& spec, const data::DatasetSplit& split) {
    cfg.validate();
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (spec.num_classes != split.num_classes) {
        throw ConfigError("model has " + std::to_string(spec.num_classes) + " classes but the data has " +
                          std::to_string(split.num_classes));
    }
    if (spec.in_channels != split.channels || spec.height != split.height || spec.width != split.width) {
        throw ConfigError("model input does not match the data's image shape");
    }
    if (split.labeled.empty()) throw DataError("training needs labeled samples");
    if (split.unlabeled.empty() && cfg.paradigm != Paradigm::SupervisedOnly) {
        throw DataError("paradigm " + std::string(to_string(cfg.paradigm)) + " needs unlabeled samples");
    }
    const bool hooks = cfg.paradigm == Paradigm::Ifmatch || cfg.paradigm == Paradigm::ToyCombined ||
                       cfg.paradigm == Paradigm::SeparateBranches;
    if (hooks && spec.kind != ModelKind::ResidualCnn) {
        throw ConfigError("paradigm " + std::string(to_string(cfg.paradigm)) + " needs a residual CNN for feature hooks");
    }
    return Model::build(spec, cfg.seed);
}

img::ImageAugPolicy with_fill(img::ImageAugPolicy policy, const data::DatasetSplit& split) {
    if (policy.fill.empty()) {
        std::vector<data::Sample> all = split.labeled;
        all.insert(all.end(), split.unlabeled.begin(), split.unlabeled.end());
        policy.fill = data::channel_means(all);
    }
    return policy;
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const ModelSpec& spec, const img::ImageAugPolicy& policy,
                 const data::DatasetSplit& split)
    : cfg_(cfg),
      policy_(with_fill(policy, split)),
      split_(split),
      model_(build_checked(cfg, spec, split)),
      ema_(model_, cfg.ema_decay),
      sgd_(model_, cfg.momentum, cfg.weight_decay),
      threshold_(sched::ThresholdState::make(cfg.threshold, spec.num_classes, cfg.tau, split.unlabeled.size(),
                                             cfg.threshold_clamp)),
      da_(cfg.da_labeled_prior ? sched::DAState::make(data::labeled_prior(split))
                               : sched::DAState::uniform(spec.num_classes)),
      schedule_{cfg.lr, cfg.steps},
      shuffle_(cfg.seed, "shuffle"),
      img_weak_(cfg.seed, "img_weak"),
      img_strong_(cfg.seed, "img_strong"),
      feat_(cfg.seed, "feat") {}

BatchOutcome Trainer::step() {
    if (step_ >= cfg_.steps) throw std::logic_error("training already ran all " + std::to_string(cfg_.steps) + " steps");
    const auto t0 = std::chrono::steady_clock::now();
    const long k = step_;
    const double lr = sched::lr_at(schedule_, k);
    const int BL = cfg_.batch_labeled;
    const int BU = split_.unlabeled.empty() ? 0 : cfg_.batch_unlabeled;

    // Batches with replacement, then views, then feature draws: each from its own stream.
    std::vector<std::size_t> li(BL), ui(BU);
    for (auto& i : li) i = shuffle_.below(split_.labeled.size());
    for (auto& i : ui) i = shuffle_.below(split_.unlabeled.size());
    std::vector<Tensor> wl, wu, su;
    std::vector<int> labels;
    for (auto i : li) {
        wl.push_back(img::weak_aug(split_.labeled[i].image, policy_, img_weak_));
        labels.push_back(split_.labeled[i].label);
    }
    for (auto i : ui) wu.push_back(img::weak_aug(split_.unlabeled[i].image, policy_, img_weak_));
    for (auto i : ui) su.push_back(img::strong_aug(split_.unlabeled[i].image, policy_, img_strong_));

    std::optional<Hook> hook_a, hook_b;
    if (model_.spec().total_blocks() > 0) {
        const int block = static_cast<int>(feat_.below(static_cast<std::uint64_t>(model_.spec().total_blocks())));
        const int conv = 1 + static_cast<int>(feat_.below(2));
        const HookPoint pa{block, HookPosition::A, 1}, pb{block, HookPosition::B, conv};
        hook_a = Hook{pa, feat::sample_draw(cfg_.feat_pool, model_.feature_shape(pa), feat::Intensity::Strong, feat_), {}};
        hook_b = Hook{pb, feat::sample_draw(cfg_.feat_pool, model_.feature_shape(pb), feat::Intensity::Weak, feat_), {}};
    }

    BatchOutcome out;
    out.step = k;
    out.lr = lr;
    trace_ = StepTrace{};
    model_.zero_grad();
    Tape tape(true);
    try {
        Var total = supervised_loss(tape, model_, stack_images(wl), labels);
        out.loss_s = total.value().item();

        if (cfg_.paradigm != Paradigm::SupervisedOnly) {
            const Tensor xw = stack_images(wu), xs = stack_images(su);
            TeacherOutput teacher = teacher_predict(model_, xw, cfg_.da ? &da_ : nullptr);
            std::vector<std::int64_t> positions(ui.begin(), ui.end());
            sched::update(threshold_, teacher.probs, positions);

            StepTrace& tr = trace_;
            for (auto i : ui) tr.unlabeled_ids.push_back(split_.unlabeled[i].id);
            tr.pseudo = teacher.pseudo;
            tr.conf = teacher.conf;
            std::vector<std::uint8_t> pass1(BU);
            tr.tau.resize(BU);
            tr.w1.resize(BU);
            tr.w2.resize(BU);
            tr.pass2.resize(BU);
            tr.M.assign(BU, 0);
            for (int i = 0; i < BU; ++i) {
                tr.tau[i] = sched::threshold_value(threshold_, tr.pseudo[i]);
                tr.pass2[i] = tr.conf[i] >= tr.tau[i] ? 1 : 0;
                tr.w2[i] = sched::gate_weight(threshold_, tr.conf[i], tr.pseudo[i]);
                if (cfg_.branch1 == Branch1Threshold::Constant) {
                    pass1[i] = tr.conf[i] >= cfg_.tau ? 1 : 0;
                    tr.w1[i] = pass1[i];
                } else {
                    pass1[i] = tr.pass2[i];
                    tr.w1[i] = tr.w2[i];
                }
            }
            switch (cfg_.identification) {
                case Identification::Cbi:
                    for (int i = 0; i < BU; ++i) tr.M[i] = ledger_.mask(tr.unlabeled_ids[i], tr.tau[i]);
                    break;
                case Identification::Saa: {
                    std::vector<std::optional<double>> losses;
                    for (auto id : tr.unlabeled_ids) losses.push_back(ledger_.loss(id));
                    const auto roles = cbi::saa_identify(losses);
                    for (int i = 0; i < BU; ++i) tr.M[i] = roles[i] == cbi::Role::Naive ? 1 : 0;
                    break;
                }
                case Identification::All: tr.M.assign(BU, 1); break;
            }

            // Mask actually applied with feature perturbation in branch 2.
            std::vector<std::uint8_t> applied(BU, 0);
            bool branch1 = false;
            switch (cfg_.paradigm) {
                case Paradigm::Ifmatch:
                    branch1 = true;
                    tr.hook_b1 = hook_a;
                    tr.hook_b2 = hook_b;
                    tr.hook_b2->sample_mask = tr.M;
                    applied = tr.M;
                    break;
                case Paradigm::ToyCombined:
                    tr.hook_b2 = hook_a;
                    applied.assign(BU, 1);
                    break;
                case Paradigm::SeparateBranches:
                    branch1 = true;
                    tr.hook_b1 = hook_a;
                    break;
                case Paradigm::FixmatchBaseline:
                case Paradigm::SupervisedOnly: break;
            }

            Var unlabeled;
            if (branch1) {
                BranchOutput b1 = branch_loss(tape, model_, xw, &*tr.hook_b1, tr.pseudo, tr.w1);
                out.loss_u1 = b1.loss.value().item();
                unlabeled = b1.loss;
            }
            BranchOutput b2 = branch_loss(tape, model_, xs, tr.hook_b2 ? &*tr.hook_b2 : nullptr, tr.pseudo, tr.w2);
            out.loss_u2 = b2.loss.value().item();
            unlabeled = unlabeled.valid() ? add(unlabeled, b2.loss) : b2.loss;
            total = add(total, scale(unlabeled, cfg_.lambda_u));

            double u1 = 0.0, u2 = 0.0, m = 0.0;
            for (int i = 0; i < BU; ++i) {
                u1 += pass1[i];
                u2 += tr.pass2[i];
                m += applied[i];
            }
            out.util_b1 = branch1 ? u1 / BU : 0.0;
            out.util_b2 = u2 / BU;
            out.cbi_mask_rate = m / BU;
            out.naive_ratio = cbi::naive_ratio(tr.pass2, applied);
            tr.probs_b2 = b2.probs;
            tr.weak_u = xw;
            tr.strong_u = xs;

            out.loss_total = total.value().item();
            tape.backward(total);
            sgd_.step(model_, lr);
            ema_.update(model_);

            // Record after the update, from this step's forward.
            const int C = model_.spec().num_classes;
            for (int i = 0; i < BU; ++i) {
                std::span<const double> row(b2.probs.data().data() + static_cast<std::size_t>(i) * C, C);
                ledger_.record(tr.unlabeled_ids[i], row, tr.pseudo[i], tr.tau[i]);
                ledger_.record_loss(tr.unlabeled_ids[i], b2.ce[i]);
            }
        } else {
            out.loss_total = out.loss_s;
            tape.backward(total);
            sgd_.step(model_, lr);
            ema_.update(model_);
        }
    } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(k) + " (lr " + std::to_string(lr) + "): " + e.what());
    }
    if (!std::isfinite(out.loss_total)) throw NumericError("step " + std::to_string(k) + ": non-finite loss");
    ++step_;
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

namespace {

// 64-bit words split into exact 32-bit halves so they survive the f64 container.
Tensor rng_tensor(const RngStream& rng) {
    const auto words = rng.state();
    std::vector<double> v;
    for (std::uint64_t w : words) {
        v.push_back(static_cast<double>(w >> 32));
        v.push_back(static_cast<double>(w & 0xffffffffu));
    }
    const Shape shape{static_cast<int>(v.size())};
    return Tensor(shape, std::move(v));
}

void load_rng(RngStream& rng, const Tensor& t) {
    if (t.numel() % 2 != 0) throw DataError("checkpoint random stream state has odd length");
    std::vector<std::uint64_t> words;
    for (std::size_t i = 0; i < t.numel(); i += 2) {
        words.push_back((static_cast<std::uint64_t>(t[i]) << 32) | static_cast<std::uint64_t>(t[i + 1]));
    }
    try {
        rng.set_state(words);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint random stream: ") + e.what());
    }
}

}  // namespace

std::vector<std::pair<std::string, RngStream*>> Trainer::streams() const {
    auto* self = const_cast<Trainer*>(this);
    return {{"shuffle", &self->shuffle_}, {"img_weak", &self->img_weak_}, {"img_strong", &self->img_strong_},
            {"feat", &self->feat_}};
}

std::vector<NamedTensor> Trainer::checkpoint() const {
    std::vector<NamedTensor> out = model_tensors(model_, "model/");
    auto append = [&](std::vector<NamedTensor> more) {
        for (auto& t : more) out.push_back(std::move(t));
    };
    append(model_tensors(ema_.model(), "ema/"));
    append(sgd_.state("optim/"));
    append(sched::threshold_state_tensors(threshold_, "threshold/"));
    append(sched::da_state_tensors(da_, "da/"));
    append(ledger_.tensors("ledger/"));
    for (const auto& [name, stream] : streams()) out.push_back({"rng/" + name, rng_tensor(*stream)});
    out.push_back({"meta/step", Tensor::scalar(static_cast<double>(step_))});
    return out;
}

void Trainer::load_checkpoint(const std::vector<NamedTensor>& tensors) {
    load_model_parameters(model_, tensors, "model/");
    load_model_parameters(ema_.model(), tensors, "ema/");
    sgd_.load_state(tensors, "optim/");
    sched::load_threshold_state(threshold_, tensors, "threshold/");
    sched::load_da_state(da_, tensors, "da/");
    ledger_ = cbi::ConfidenceLedger::from_tensors(tensors, "ledger/");
    for (const auto& [name, stream] : streams()) {
        const NamedTensor* t = find_tensor(tensors, "rng/" + name);
        if (t == nullptr) throw DataError("checkpoint lacks random stream 'rng/" + name + "'");
        load_rng(*stream, t->value);
    }
    const NamedTensor* s = find_tensor(tensors, "meta/step");
    if (s == nullptr) throw DataError("checkpoint lacks meta/step");
    step_ = static_cast<long>(s->value.item());
}

ExperimentRecord train(Trainer& trainer, const ProgressFn& progress) {
    const TrainConfig& cfg = trainer.config();
    const long T = cfg.steps, every = cfg.eval_interval();
    const sched::LrSchedule schedule{cfg.lr, T};
    const auto start = std::chrono::steady_clock::now();
    ExperimentRecord record;
    MetricsRow window;
    long window_steps = 0;
    double naive_total = 0.0;
    long total_steps = 0;

    auto emit = [&](long step) {
        MetricsRow row;
        row.step = step;
        row.lr = sched::lr_at(schedule, step);
        if (window_steps > 0) {
            const double n = static_cast<double>(window_steps);
            row.loss_s = window.loss_s / n;
            row.loss_u1 = window.loss_u1 / n;
            row.loss_u2 = window.loss_u2 / n;
            row.util_b1 = window.util_b1 / n;
            row.util_b2 = window.util_b2 / n;
            row.cbi_mask_rate = window.cbi_mask_rate / n;
            row.naive_ratio = window.naive_ratio / n;
        }
        row.acc = evaluate(trainer.model(), trainer.split().test).accuracy;
        row.ema_acc = evaluate(trainer.ema_model(), trainer.split().test).accuracy;
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        record.rows.push_back(row);
        if (progress) progress(row);
        window = MetricsRow{};
        window_steps = 0;
    };

    if (trainer.steps_done() == 0) emit(0);
    while (trainer.steps_done() < T) {
        const BatchOutcome o = trainer.step();
        window.loss_s += o.loss_s;
        window.loss_u1 += o.loss_u1;
        window.loss_u2 += o.loss_u2;
        window.util_b1 += o.util_b1;
        window.util_b2 += o.util_b2;
        window.cbi_mask_rate += o.cbi_mask_rate;
        window.naive_ratio += o.naive_ratio;
        ++window_steps;
        naive_total += o.naive_ratio;
        ++total_steps;
        const long done = trainer.steps_done();
        if (done % every == 0 || done == T) emit(done);
    }
    for (const auto& r : record.rows) record.best_ema_acc = std::max(record.best_ema_acc, r.ema_acc);
    if (!record.rows.empty()) record.last_ema_acc = record.rows.back().ema_acc;
    record.mean_naive_ratio = total_steps > 0 ? naive_total / static_cast<double>(total_steps) : 0.0;
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return record;
}

ExperimentRecord train(const TrainConfig& cfg, const ModelSpec& spec, const img::ImageAugPolicy& policy,
                       const data::DatasetSplit& split, const ProgressFn& progress) {
    Trainer trainer(cfg, spec, policy, split);
    return train(trainer, progress);
}

}  // namespace ifm
