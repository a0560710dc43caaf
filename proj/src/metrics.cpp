#include "ifmatch/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "ifmatch/errors.hpp"

namespace ifm {

std::string format_metrics_row(const MetricsRow& r, bool include_wall) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%ld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g", r.step, r.lr, r.loss_s,
                  r.loss_u1, r.loss_u2, r.util_b1, r.util_b2, r.cbi_mask_rate, r.naive_ratio, r.acc, r.ema_acc,
                  include_wall ? r.wall_ms : 0.0);
    return buf;
}

void emit_metrics(const ExperimentRecord& record, std::ostream& os, bool include_wall) {
    for (std::size_t i = 1; i < record.rows.size(); ++i) {
        if (record.rows[i].step <= record.rows[i - 1].step) {
            throw std::logic_error("metrics rows must have strictly increasing steps (row " + std::to_string(i) + ")");
        }
    }
    os << kMetricsHeader << '\n';
    for (const auto& r : record.rows) os << format_metrics_row(r, include_wall) << '\n';
}

void emit_metrics(const ExperimentRecord& record, const std::string& path, bool include_wall) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    emit_metrics(record, os, include_wall);
    if (!os) throw DataError("failed writing '" + path + "'");
}

}  // namespace ifm
