#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ifmatch/checkpoint.hpp"

namespace ifm::cbi {

struct LedgerEntry {
    double h = 0.0;              // last recorded target confidence
    std::uint8_t M = 0;          // mask at record time
    std::optional<double> loss;  // last branch-2 loss, for SAA
};

/// Per-unlabeled-sample record of branch-2 target confidence. Ids never seen
/// have no entry and are treated as M = 0.
class ConfidenceLedger {
public:
    /// h <- pred[j]; M <- 1(h >= tau_now), kept for the CSV dump.
    void record(std::int64_t id, std::span<const double> pred, int j, double tau_now = 1.0);
    void record_loss(std::int64_t id, double loss);

    /// 1(h >= tau) for the recorded h; 0 for an unseen id.
    std::uint8_t mask(std::int64_t id, double tau) const;
    const LedgerEntry* find(std::int64_t id) const;
    std::optional<double> loss(std::int64_t id) const;

    std::size_t size() const { return entries_.size(); }
    const std::map<std::int64_t, LedgerEntry>& entries() const { return entries_; }

    // CSV "id,h,M" in ascending id order.
    void write_csv(std::ostream& os) const;

    std::vector<NamedTensor> tensors(const std::string& prefix) const;
    static ConfidenceLedger from_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix);

private:
    std::map<std::int64_t, LedgerEntry> entries_;
};

struct PerturbationSet {
    bool image_strong = true;
    bool feature_weak = false;
};

// M = 1 adds the weak feature perturbation to the strong image view.
PerturbationSet select_perturbations(std::uint8_t M);

inline constexpr int kOtsuBins = 256;

/// OTSU split of `values` over a 256-bin histogram on [min, max]. Returns the
/// threshold min + t (max - min) / 256 for the first split t maximizing the
/// between-class variance (bin centres as class values), or nullopt when all
/// values are equal.
std::optional<double> otsu_threshold(std::span<const double> values);

enum class Role : std::uint8_t { Challenging = 0, Naive = 1 };

/// SAA identification. Recorded losses are split by OTSU (loss < threshold is
/// naive; a degenerate histogram makes every recorded sample challenging).
/// Samples without a recorded loss alternate naive/challenging by position,
/// so a cold start reports a naive ratio of one half.
std::vector<Role> saa_identify(std::span<const std::optional<double>> losses);

/// Fraction of samples whose teacher passed the gate and whose M is 1.
double naive_ratio(std::span<const std::uint8_t> teacher_pass, std::span<const std::uint8_t> M);

// Under cross-entropy with a one-hot target, loss L corresponds to confidence exp(-L).
double loss_to_confidence(double loss);
double confidence_to_loss(double conf);

/// Human-readable SAA summary: threshold in loss space, its confidence
/// equivalent and the naive ratio.
std::string saa_report(double loss_threshold, double naive_fraction);

}  // namespace ifm::cbi
