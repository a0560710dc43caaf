#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ifmatch/tensor.hpp"

namespace ifm {

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Flat binary container: magic "IFM1", then per tensor a u32 name length,
/// the UTF-8 name, u32 rank, u32 extents and f64 values, all little-endian.
/// Records continue until end of file.
void write_container(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container(std::istream& is);

void save_container(const std::string& path, const std::vector<NamedTensor>& tensors);
// Throws DataError for a missing file, wrong magic or truncated record.
std::vector<NamedTensor> load_container(const std::string& path);

// First tensor called `name`, or nullptr.
const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace ifm
