#include "ifmatch/cbi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "ifmatch/errors.hpp"

namespace ifm::cbi {

void ConfidenceLedger::record(std::int64_t id, std::span<const double> pred, int j, double tau_now) {
    if (j < 0 || static_cast<std::size_t>(j) >= pred.size()) {
        throw std::out_of_range("ledger: pseudo class " + std::to_string(j) + " outside prediction of size " +
                                std::to_string(pred.size()));
    }
    LedgerEntry& e = entries_[id];
    e.h = std::clamp(pred[j], 0.0, 1.0);
    e.M = e.h >= tau_now ? 1 : 0;
}

void ConfidenceLedger::record_loss(std::int64_t id, double loss) {
    if (!(loss >= 0.0)) throw std::invalid_argument("ledger: loss must be non-negative");
    entries_[id].loss = loss;
}

std::uint8_t ConfidenceLedger::mask(std::int64_t id, double tau) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) return 0;
    return it->second.h >= tau ? 1 : 0;
}

const LedgerEntry* ConfidenceLedger::find(std::int64_t id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

std::optional<double> ConfidenceLedger::loss(std::int64_t id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? std::nullopt : it->second.loss;
}

void ConfidenceLedger::write_csv(std::ostream& os) const {
    os << "id,h,M\n";
    char buf[64];
    for (const auto& [id, e] : entries_) {
        std::snprintf(buf, sizeof buf, "%.6g", e.h);
        os << id << ',' << buf << ',' << int(e.M) << '\n';
    }
}

std::vector<NamedTensor> ConfidenceLedger::tensors(const std::string& prefix) const {
    const int n = static_cast<int>(entries_.size());
    if (n == 0) return {};
    std::vector<double> ids, h, m, loss;
    for (const auto& [id, e] : entries_) {
        ids.push_back(static_cast<double>(id));
        h.push_back(e.h);
        m.push_back(e.M);
        loss.push_back(e.loss ? *e.loss : -1.0);
    }
    return {{prefix + "ids", Tensor(Shape{n}, ids)},
            {prefix + "h", Tensor(Shape{n}, h)},
            {prefix + "M", Tensor(Shape{n}, m)},
            {prefix + "loss", Tensor(Shape{n}, loss)}};
}

ConfidenceLedger ConfidenceLedger::from_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    ConfidenceLedger ledger;
    const NamedTensor* ids = find_tensor(tensors, prefix + "ids");
    if (ids == nullptr) return ledger;
    const NamedTensor* h = find_tensor(tensors, prefix + "h");
    const NamedTensor* m = find_tensor(tensors, prefix + "M");
    const NamedTensor* loss = find_tensor(tensors, prefix + "loss");
    if (!h || !m || !loss || h->value.numel() != ids->value.numel() || m->value.numel() != ids->value.numel() ||
        loss->value.numel() != ids->value.numel()) {
        throw DataError("checkpoint ledger tensors are incomplete");
    }
    for (std::size_t i = 0; i < ids->value.numel(); ++i) {
        LedgerEntry e;
        e.h = h->value[i];
        e.M = m->value[i] != 0.0 ? 1 : 0;
        if (loss->value[i] >= 0.0) e.loss = loss->value[i];
        ledger.entries_[static_cast<std::int64_t>(ids->value[i])] = e;
    }
    return ledger;
}

PerturbationSet select_perturbations(std::uint8_t M) { return {true, M != 0}; }

std::optional<double> otsu_threshold(std::span<const double> values) {
    if (values.empty()) return std::nullopt;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) return std::nullopt;
    const double width = (hi - lo) / kOtsuBins;
    std::vector<double> hist(kOtsuBins, 0.0);
    for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * kOtsuBins);
        hist[std::clamp(b, 0, kOtsuBins - 1)] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < kOtsuBins; ++b) sum_all += hist[b] * (b + 0.5);

    // Running sums over bins [0, t): class 0 is everything below the split.
    double w0 = 0.0, s0 = 0.0, best = -1.0;
    int best_t = 1;
    for (int t = 1; t < kOtsuBins; ++t) {
        w0 += hist[t - 1];
        s0 += hist[t - 1] * (t - 1 + 0.5);
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = s0 / w0, m1 = (sum_all - s0) / w1;
        const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return lo + best_t * width;
}

std::vector<Role> saa_identify(std::span<const std::optional<double>> losses) {
    std::vector<double> recorded;
    for (const auto& l : losses) {
        if (!l) continue;
        if (!(*l >= 0.0)) throw std::invalid_argument("saa_identify: losses must be non-negative");
        recorded.push_back(*l);
    }
    const std::optional<double> threshold = otsu_threshold(recorded);
    std::vector<Role> out(losses.size(), Role::Challenging);
    std::size_t fresh = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!losses[i]) {
            out[i] = (fresh++ % 2 == 0) ? Role::Naive : Role::Challenging;
        } else if (threshold && *losses[i] < *threshold) {
            out[i] = Role::Naive;
        }
    }
    return out;
}

double naive_ratio(std::span<const std::uint8_t> teacher_pass, std::span<const std::uint8_t> M) {
    if (teacher_pass.empty()) throw std::invalid_argument("naive_ratio: empty batch");
    if (teacher_pass.size() != M.size()) throw std::invalid_argument("naive_ratio: pass and mask lengths differ");
    std::size_t n = 0;
    for (std::size_t i = 0; i < M.size(); ++i) n += (teacher_pass[i] && M[i]) ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(M.size());
}

double loss_to_confidence(double loss) { return std::exp(-loss); }

double confidence_to_loss(double conf) {
    if (!(conf > 0.0 && conf <= 1.0)) throw std::invalid_argument("confidence must lie in (0, 1]");
    return -std::log(conf);
}

std::string saa_report(double loss_threshold, double naive_fraction) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "SAA loss threshold L = %.4f -> confidence exp(-L) = %.4f; naive ratio = %.4f",
                  loss_threshold, loss_to_confidence(loss_threshold), naive_fraction);
    return buf;
}

}  // namespace ifm::cbi
