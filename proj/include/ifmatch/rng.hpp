#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ifm {

/// Independent, reproducible random stream derived from a master seed and a name.
///
/// Streams used by the trainer: init, shuffle, img_weak, img_strong, feat, split.
/// Only the raw 64-bit engine output is consumed; the conversions below are
/// written out so results do not depend on the standard library's distributions.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view name);

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). Requires n > 0.
    std::uint64_t below(std::uint64_t n);
    // Uniform integer in [lo, hi] inclusive.
    int between(int lo, int hi);
    bool bernoulli(double p) { return uniform() < p; }
    double normal();

    // Engine state as 64-bit words, for checkpoints.
    std::vector<std::uint64_t> state() const;
    void set_state(const std::vector<std::uint64_t>& words);

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t master_seed, std::string_view name);

}  // namespace ifm
