#include "ifmatch/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ifm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t master_seed, std::string_view name) {
    return splitmix64(splitmix64(master_seed) ^ fnv1a(name));
}

RngStream::RngStream(std::uint64_t master_seed, std::string_view name) : engine_(mix_seed(master_seed, name)) {}

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below(0)");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

int RngStream::between(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("RngStream::between: empty range");
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double RngStream::normal() {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::uint64_t> RngStream::state() const {
    std::stringstream ss;
    ss << engine_;
    std::vector<std::uint64_t> words;
    for (std::uint64_t w; ss >> w;) words.push_back(w);
    return words;
}

void RngStream::set_state(const std::vector<std::uint64_t>& words) {
    std::stringstream ss;
    for (std::uint64_t w : words) ss << w << ' ';
    std::mt19937_64 engine;
    if (!(ss >> engine)) throw std::invalid_argument("RngStream::set_state: malformed engine state");
    engine_ = engine;
}

}  // namespace ifm
