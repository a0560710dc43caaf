#pragma once

#include <stdexcept>
#include <string>

namespace ifm {

// Incompatible tensor extents. The message names the offending dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed, or a non-finite training loss.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or missing input files, insufficient samples for a split.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ifm
