#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "hypergrid/dataset.hpp"
#include "hypergrid/rng.hpp"

namespace testing_support {

inline hypergrid::PointSet uniform_points(std::uint64_t seed, std::size_t n, std::size_t dim, double lo = 0.0,
                                          double hi = 1.0) {
    hypergrid::Rng rng(seed);
    std::vector<double> rows(n * dim);
    for (double& v : rows) v = rng.uniform(lo, hi);
    return hypergrid::PointSet::from_rows(dim, rows);
}

/// Temporary directory removed at scope exit.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("hypergrid_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

} // namespace testing_support
