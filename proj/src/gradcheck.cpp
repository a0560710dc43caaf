#include "ifmatch/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace ifm {

namespace {

double evaluate(const LossBuilder& loss) {
    Tape tape(false);
    return loss(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(std::span<const GradTarget> targets, const LossBuilder& loss, double tol, double step) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    for (const auto& t : targets) {
        t.tensor->set_requires_grad(true);
        t.tensor->ensure_grad();
        t.tensor->zero_grad();
    }
    double base = 0.0;
    {
        Tape tape(true);
        Var l = loss(tape);
        base = l.value().item();
        tape.backward(l);
    }
    const double again = evaluate(loss);
    if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(base)) {
        throw NumericError("grad_check: forward is not deterministic (two evaluations differ)");
    }

    GradCheckReport report;
    report.tol = tol;
    for (const auto& t : targets) {
        Tensor& x = *t.tensor;
        std::vector<double> analytic(x.grad().begin(), x.grad().end());
        GradCheckEntry e;
        e.name = t.name;
        e.count = x.numel();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double orig = x[i];
            x[i] = orig + step;
            const double fp = evaluate(loss);
            x[i] = orig - step;
            const double fm = evaluate(loss);
            x[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double d = analytic[i] - numeric;
            diff2 += d * d;
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            e.max_abs_error = std::max(e.max_abs_error, std::abs(d));
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
        e.rel_error = diff2 == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        report.entries.push_back(std::move(e));
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

GradCheckReport grad_check(Model& model, const Tensor& input, std::span<const int> labels, const Hook* hook,
                           double tol, double step) {
    const Tensor target = one_hot(labels, model.spec().num_classes);
    std::vector<GradTarget> targets;
    for (auto& p : model.parameters()) targets.push_back({p.name, &p.value});
    LossBuilder loss = [&](Tape& tape) {
        Var logits = model.forward(tape, tape.constant(input), hook);
        return cross_entropy(target, softmax(logits));
    };
    return grad_check(targets, loss, tol, step);
}

}  // namespace ifm
