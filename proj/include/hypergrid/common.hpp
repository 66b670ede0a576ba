#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hypergrid {

/// Row index into a PointSet. Indexes store ids as 32-bit integers, so a
/// dataset holds at most 2^32 - 1 points.
using PointId = std::uint32_t;

/// Raised for malformed files, missing sidecars and other data/index problems.
/// Precondition violations on arguments use std::invalid_argument instead.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hypergrid
