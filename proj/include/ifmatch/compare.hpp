#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ifmatch/config.hpp"
#include "ifmatch/metrics.hpp"

namespace ifm {

struct CompareCell {
    Paradigm paradigm = Paradigm::Ifmatch;
    sched::ThresholdKind threshold = sched::ThresholdKind::Constant;
    Branch1Threshold branch1 = Branch1Threshold::Constant;
    Identification identification = Identification::Cbi;

    std::string label() const;
    bool operator==(const CompareCell&) const = default;
};

/// Cartesian product of the configured axes. Axes a paradigm ignores are
/// pinned to their first value and the resulting duplicates dropped.
std::vector<CompareCell> compare_cells(const CompareConfig& cfg);

struct CompareRun {
    CompareCell cell;
    std::uint64_t seed = 0;
    ExperimentRecord record;
};

struct CompareSummary {
    CompareCell cell;
    std::vector<double> final_ema_acc;  // one per seed, in seed order
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation; 0 for a single seed
};

struct CompareResult {
    std::vector<CompareRun> runs;
    std::vector<CompareSummary> ranked;  // by mean, best first; ties keep matrix order
};

using RunDoneFn = std::function<void(const CompareRun&)>;

/// Runs every cell for seeds base.seed, base.seed + 1, ... Each seed builds its
/// own data split, shared by all cells. Up to `workers` runs execute at once.
CompareResult run_compare(const ExperimentConfig& base, int workers, const RunDoneFn& on_done = {});

CompareSummary summarize(const CompareCell& cell, const std::vector<double>& final_ema_acc);

// Fixed-width text table and CSV of the ranked summary.
std::string format_compare_table(const CompareResult& result);
void write_compare_csv(const CompareResult& result, std::ostream& os);

// Worker count: IFMATCH_THREADS when set and positive, otherwise the hardware concurrency.
int worker_count();

}  // namespace ifm
