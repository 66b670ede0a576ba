#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypergrid/kdtree.hpp"

namespace hypergrid {

/// Seed-to-seed graph in compressed sparse row form; neighbors sorted per seed.
struct Adjacency {
    std::vector<std::uint64_t> offsets{0}; // size n_seed + 1
    std::vector<std::uint32_t> neighbors;

    std::size_t seed_count() const { return offsets.size() - 1; }
    std::span<const std::uint32_t> of(std::size_t s) const {
        return {neighbors.data() + offsets[s], static_cast<std::size_t>(offsets[s + 1] - offsets[s])};
    }
    std::size_t edge_count() const { return neighbors.size() / 2; }
};

struct CellVolumes {
    BoundingBox box;
    std::uint64_t samples = 0;
    std::vector<std::uint64_t> hits;
    std::vector<double> volume;    // box volume * hits / samples
    std::vector<double> std_error; // box volume * sqrt(p (1 - p) / samples)
};

/**
 * Sampled Voronoi tessellation of a point set.
 *
 * Seeds are data points. All geometry (seed coordinates, assignment, volumes,
 * adjacency) lives in index space, which is the data space or, when built
 * with whitening, the whitened space; queries in data coordinates are mapped
 * through the stored transform. member_box() is kept in data coordinates for
 * polytope queries.
 */
struct VoronoiIndex {
    std::vector<PointId> seed_ids; // rows of the source point set, ascending
    PointSet seeds;                // index-space coordinates, one row per seed
    std::optional<LinearTransform> transform;
    std::vector<std::uint32_t> assignment; // per data point
    Adjacency adjacency;
    CellVolumes volumes;
    std::vector<std::uint32_t> cell_order;
    KdTree seed_tree;

    // Members of each cell (ascending point ids) and their data-space bounds.
    std::vector<std::uint64_t> member_offsets;
    std::vector<PointId> members;
    std::vector<BoundingBox> member_boxes; // empty cells get an empty box

    std::size_t seed_count() const { return seed_ids.size(); }
    std::size_t dim() const { return seeds.dim(); }
    std::span<const PointId> cell_members(std::size_t c) const {
        return {members.data() + member_offsets[c], static_cast<std::size_t>(member_offsets[c + 1] - member_offsets[c])};
    }
};

/// Uniform sample of n_seed distinct row ids, returned ascending.
std::vector<PointId> pick_seeds(const PointSet& ps, std::size_t n_seed, std::uint64_t seed);

/// Nearest seed of every point (ties to the smaller seed index), through a kd-tree over the seeds.
std::vector<std::uint32_t> assign_cells(const PointSet& ps, const KdTree& seed_tree, unsigned threads = 1);

/**
 * Approximate Delaunay graph: (a, b) is an edge when some probe has a as its
 * nearest and b as its second-nearest seed. Probes are every point of ps plus
 * probe_budget uniform samples in ps's bounding box. The edge set is made
 * symmetric.
 */
Adjacency build_adjacency(const PointSet& ps, const KdTree& seed_tree, std::size_t probe_budget, std::uint64_t seed,
                          unsigned threads = 1);

/// Morton order of the seeds: 21-bit quantized coordinates interleaved with
/// axis 0 least significant; more than 3 dimensions use the first 3 principal axes.
std::vector<std::uint32_t> order_cells(const PointSet& seeds);

/// Monte-Carlo cell volumes from uniform samples in box.
CellVolumes estimate_volumes(const KdTree& seed_tree, const BoundingBox& box, std::uint64_t samples, std::uint64_t seed,
                             unsigned threads = 1);

struct LocateResult {
    std::uint32_t cell = 0;
    std::size_t steps = 0;
    bool walk_miss = false; // the walk stopped at a wrong cell; cell holds the exact answer
};

/**
 * Greedy walk over the adjacency graph from the first cell in cell_order,
 * always moving to the neighbor closest to p while it is strictly closer than
 * the current seed (ties to the smaller id). The stopping cell is checked
 * against an exact nearest-seed search. p is in data coordinates.
 */
LocateResult locate_cell(const VoronoiIndex& idx, std::span<const double> p);

struct VoronoiBuildConfig {
    std::size_t n_seed = 10'000;
    std::uint64_t seed = 0;
    std::size_t probe_budget = 0;    // 0: 10 * n_seed
    std::uint64_t volume_samples = 0; // 0: 100 * n_seed
    bool whiten = false;
    unsigned threads = 1;
};

VoronoiIndex build_voronoi(const PointSet& ps, const VoronoiBuildConfig& cfg);

struct VoronoiQueryStats {
    std::size_t cells_inside = 0;
    std::size_t cells_outside = 0;
    std::size_t cells_partial = 0;
    /// Partial cells whose member sample already showed points on both sides.
    std::size_t cells_confirmed_partial = 0;
    std::size_t points_filtered = 0;
    std::size_t returned = 0;
};

struct VoronoiQueryResult {
    std::vector<PointId> ids; // ascending
    VoronoiQueryStats stats;
};

/**
 * Polytope query answered cell by cell: a cell whose member bounding box is
 * inside (outside) the polytope contributes all (none) of its members without
 * tests; other cells test up to sample_per_cell members first for the
 * statistics, then filter every member.
 */
VoronoiQueryResult voronoi_query_polytope(const VoronoiIndex& idx, const PointSet& ps, const Polytope& poly,
                                          std::size_t sample_per_cell);

void save_voronoi(const VoronoiIndex& idx, const std::string& path);
/// ps must be the indexed point set; the seed tree and member lists are rebuilt.
VoronoiIndex load_voronoi(const std::string& path, const PointSet& ps);

} // namespace hypergrid
