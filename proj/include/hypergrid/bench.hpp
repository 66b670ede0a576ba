#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hypergrid/kdtree.hpp"

namespace hypergrid {

/**
 * Randomly rotated cube centered on a random data point: 2 * dim halfspaces at
 * distance r from the center, r chosen as the quantile of a subsample of ps
 * that puts about `selectivity` of it inside.
 */
Polytope random_polytope(const PointSet& ps, double selectivity, std::uint64_t seed);

struct PolytopeTrial {
    double target = 0.0;
    double selectivity = 0.0; // returned / N
    std::size_t returned = 0;
    std::size_t tested = 0;
    double kd_seconds = 0.0;
    double scan_seconds = 0.0;
    bool exact = false; // kd result equals the full scan
};

/// One trial per (selectivity, repetition); polytope seeds derive from seed.
std::vector<PolytopeTrial> run_polytope_trials(const PointSet& ps, const KdTree& tree, std::span<const double> selectivities,
                                               std::size_t queries_per_selectivity, std::uint64_t seed);

struct PolytopeBenchRow {
    double target = 0.0;
    std::size_t queries = 0;
    double mean_selectivity = 0.0;
    std::size_t returned = 0; // totals over the queries
    std::size_t tested = 0;
    double tested_per_returned = 0.0;
    double kd_seconds = 0.0;
    double scan_seconds = 0.0;
    double speedup = 0.0; // scan_seconds / kd_seconds
    bool exact = true;
};

/// Groups trials by target selectivity, in first-seen order.
std::vector<PolytopeBenchRow> summarize_trials(std::span<const PolytopeTrial> trials);

} // namespace hypergrid
