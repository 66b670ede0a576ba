#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hypergrid/voronoi.hpp"

namespace hypergrid {

enum class DensityMode {
    count_over_volume, // members / volume
    inverse_volume,    // 1 / volume
};

struct BstConfig {
    DensityMode mode = DensityMode::count_over_volume;
    /// Merge adjacent basins whose density dip is below merge_tau times the
    /// lower peak; 0 disables merging.
    double merge_tau = 0.0;
};

/**
 * Basin spanning forest over the cell graph.
 *
 * Each active cell links to its densest neighbor when that neighbor is
 * strictly denser (ties to the smaller id); otherwise it is a root, i.e. a
 * local density peak. A cluster is the set of cells draining to one root.
 * Inactive (empty) cells carry kNone.
 */
struct BasinForest {
    static constexpr std::uint32_t kNone = 0xffffffffu;

    std::vector<std::uint32_t> parent;
    std::vector<std::uint32_t> cluster; // representative root per cell
    std::vector<double> density;
    /// Cells whose Monte-Carlo volume was zero and got the fallback volume.
    std::vector<std::uint8_t> fallback;
    std::vector<std::uint32_t> roots;       // local peaks, ascending
    std::vector<std::uint32_t> cluster_ids; // distinct representatives, ascending

    std::size_t cluster_count() const { return cluster_ids.size(); }
};

/// Forest on an explicit graph; inactive cells are ignored.
BasinForest build_bst(const Adjacency& graph, std::span<const double> density, std::span<const std::uint8_t> active,
                      double merge_tau = 0.0);

/**
 * Forest over a Voronoi index. Cells without members are inactive. A zero
 * volume estimate is replaced by half the volume one sample represents,
 * vol(box) / (2 * samples), and flagged.
 */
BasinForest build_bst(const VoronoiIndex& idx, const BstConfig& cfg = {});

/// Cluster of every point through its cell.
std::vector<std::uint32_t> point_clusters(const BasinForest& forest, std::span<const std::uint32_t> assignment);

struct ClusterPurity {
    std::uint32_t cluster = 0;
    std::size_t size = 0;
    std::int32_t majority_label = 0; // ties to the smaller label
    std::size_t majority_count = 0;
};

struct PurityReport {
    std::vector<ClusterPurity> clusters; // ascending cluster id
    /// Share of points whose label equals their cluster's majority label.
    double accuracy = 0.0;
};

PurityReport evaluate_purity(const BasinForest& forest, std::span<const std::uint32_t> assignment,
                             std::span<const std::int32_t> labels);

} // namespace hypergrid
