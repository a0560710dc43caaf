#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ifm {

inline constexpr std::string_view kMetricsHeader =
    "step,lr,loss_s,loss_u1,loss_u2,util_b1,util_b2,cbi_mask_rate,naive_ratio,acc,ema_acc,wall_ms";

/// One evaluation row. Loss and ratio columns are means over the steps since
/// the previous row (zero on the step-0 row).
struct MetricsRow {
    long step = 0;
    double lr = 0.0;
    double loss_s = 0.0, loss_u1 = 0.0, loss_u2 = 0.0;
    double util_b1 = 0.0, util_b2 = 0.0;
    double cbi_mask_rate = 0.0, naive_ratio = 0.0;
    double acc = 0.0, ema_acc = 0.0;
    double wall_ms = 0.0;
};

struct ExperimentRecord {
    std::string config_snapshot;
    std::vector<MetricsRow> rows;
    double best_ema_acc = 0.0;
    double last_ema_acc = 0.0;
    double mean_naive_ratio = 0.0;
    double wall_ms = 0.0;
};

/// Writes the metrics CSV. Floats use 6 significant digits. Wall time is
/// written as 0 unless `include_wall`, so identical runs give identical bytes.
/// Throws std::logic_error if steps are not strictly increasing.
void emit_metrics(const ExperimentRecord& record, std::ostream& os, bool include_wall = false);
void emit_metrics(const ExperimentRecord& record, const std::string& path, bool include_wall = false);

std::string format_metrics_row(const MetricsRow& row, bool include_wall);

}  // namespace ifm
