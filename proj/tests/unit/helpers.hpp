#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ifmatch/rng.hpp"
#include "ifmatch/tensor.hpp"
#include "oracle.hpp"

namespace testing {

inline oracle::Grid to_grid(const ifm::Tensor& t) {
    oracle::Grid g(t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    g.v.assign(t.data().begin(), t.data().end());
    return g;
}

inline ifm::Tensor random_tensor(ifm::Shape shape, ifm::RngStream& rng, double lo = -1.0, double hi = 1.0) {
    ifm::Tensor t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline std::vector<double> values(const ifm::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ifmatch_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
