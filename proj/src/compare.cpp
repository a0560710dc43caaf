#include "ifmatch/compare.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace ifm {

std::string CompareCell::label() const {
    return std::string(to_string(paradigm)) + "/" + std::string(sched::to_string(threshold)) + "/b1=" +
           std::string(to_string(branch1)) + "/id=" + std::string(to_string(identification));
}

std::vector<CompareCell> compare_cells(const CompareConfig& cfg) {
    std::vector<CompareCell> out;
    for (Paradigm p : cfg.paradigms) {
        const bool uses_b1 = p == Paradigm::Ifmatch || p == Paradigm::SeparateBranches;
        const bool uses_id = p == Paradigm::Ifmatch;
        const bool uses_thr = p != Paradigm::SupervisedOnly;
        for (auto t : cfg.thresholds) {
            for (auto b : cfg.branch1) {
                for (auto i : cfg.identifications) {
                    CompareCell c{p, uses_thr ? t : cfg.thresholds.front(), uses_b1 ? b : cfg.branch1.front(),
                                  uses_id ? i : cfg.identifications.front()};
                    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
                }
            }
        }
    }
    return out;
}

CompareSummary summarize(const CompareCell& cell, const std::vector<double>& acc) {
    CompareSummary s;
    s.cell = cell;
    s.final_ema_acc = acc;
    if (acc.empty()) return s;
    double total = 0.0;
    for (double a : acc) total += a;
    s.mean = total / static_cast<double>(acc.size());
    if (acc.size() > 1) {
        double ss = 0.0;
        for (double a : acc) ss += (a - s.mean) * (a - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    return s;
}

int worker_count() {
    if (const char* env = std::getenv("IFMATCH_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

CompareResult run_compare(const ExperimentConfig& base, int workers, const RunDoneFn& on_done) {
    const auto cells = compare_cells(base.compare);
    const int seeds = base.compare.seeds;
    std::map<std::uint64_t, data::DatasetSplit> splits;
    for (int s = 0; s < seeds; ++s) {
        ExperimentConfig c = base;
        c.seed = base.seed + static_cast<std::uint64_t>(s);
        splits.emplace(c.seed, build_split(c));
    }

    CompareResult result;
    for (const auto& cell : cells) {
        for (int s = 0; s < seeds; ++s) result.runs.push_back({cell, base.seed + static_cast<std::uint64_t>(s), {}});
    }

    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto work = [&] {
        for (std::size_t j = next++; j < result.runs.size(); j = next++) {
            CompareRun& run = result.runs[j];
            try {
                ExperimentConfig c = base;
                c.seed = run.seed;
                c.trainer.paradigm = run.cell.paradigm;
                c.trainer.threshold = run.cell.threshold;
                c.trainer.branch1 = run.cell.branch1;
                c.trainer.identification = run.cell.identification;
                const auto& split = splits.at(run.seed);
                run.record = train(train_config_for(c), model_spec_for(c, split), c.aug, split);
                run.record.config_snapshot = to_text(c);
                std::lock_guard<std::mutex> lock(mu);
                if (on_done) on_done(run);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                next = result.runs.size();
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(result.runs.size())));
    if (n == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (const auto& cell : cells) {
        std::vector<double> acc;
        for (const auto& r : result.runs) {
            if (r.cell == cell) acc.push_back(r.record.last_ema_acc);
        }
        result.ranked.push_back(summarize(cell, acc));
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const CompareSummary& a, const CompareSummary& b) { return a.mean > b.mean; });
    return result;
}

std::string format_compare_table(const CompareResult& result) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-4s  %-18s  %-9s  %-8s  %-6s  %5s  %-17s\n", "rank", "paradigm", "threshold",
                  "branch1", "ident", "seeds", "final ema_acc");
    out += buf;
    int rank = 1;
    for (const auto& s : result.ranked) {
        std::snprintf(buf, sizeof buf, "%-4d  %-18s  %-9s  %-8s  %-6s  %5zu  %.4f +- %.4f\n", rank++,
                      std::string(to_string(s.cell.paradigm)).c_str(),
                      std::string(sched::to_string(s.cell.threshold)).c_str(),
                      std::string(to_string(s.cell.branch1)).c_str(),
                      std::string(to_string(s.cell.identification)).c_str(), s.final_ema_acc.size(), s.mean, s.sd);
        out += buf;
    }
    return out;
}

void write_compare_csv(const CompareResult& result, std::ostream& os) {
    os << "rank,paradigm,threshold,branch1,identification,seeds,mean_ema_acc,sd_ema_acc\n";
    int rank = 1;
    char buf[64];
    for (const auto& s : result.ranked) {
        os << rank++ << ',' << to_string(s.cell.paradigm) << ',' << sched::to_string(s.cell.threshold) << ','
           << to_string(s.cell.branch1) << ',' << to_string(s.cell.identification) << ',' << s.final_ema_acc.size();
        std::snprintf(buf, sizeof buf, ",%.6g,%.6g\n", s.mean, s.sd);
        os << buf;
    }
}

}  // namespace ifm
