#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ifmatch/autodiff.hpp"
#include "ifmatch/nets.hpp"

namespace ifm {

struct GradCheckEntry {
    std::string name;
    std::size_t count = 0;
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tol = 0.0;
    bool pass = false;
};

struct GradTarget {
    std::string name;
    Tensor* tensor;
};

// Builds a scalar loss on the tape; targets must enter through tape.parameter().
using LossBuilder = std::function<Var(Tape&)>;

/// Compares tape gradients against central finite differences with step `step`.
/// Throws NumericError if two identical evaluations of the loss disagree.
GradCheckReport grad_check(std::span<const GradTarget> targets, const LossBuilder& loss, double tol,
                           double step = 1e-5);

/// Mean cross-entropy of the model on (input, labels) with an optional frozen hook,
/// checked for every model parameter.
GradCheckReport grad_check(Model& model, const Tensor& input, std::span<const int> labels, const Hook* hook,
                           double tol, double step = 1e-5);

}  // namespace ifm
