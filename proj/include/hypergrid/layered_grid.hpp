#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hypergrid/dataset.hpp"

namespace hypergrid {

/**
 * Layered uniform grid over three chosen coordinates of a PointSet.
 *
 * Every point gets a random rank (random_id, a permutation of 0..N-1). Ranks
 * [0, B) form layer 1, the next 8B ranks layer 2, and in general layer l holds
 * the 8^(l-1) * B ranks following the previous layers. Layer l carries a
 * uniform 2^l x 2^l x 2^l grid over the index box, so the expected population
 * of a cell is B/8 on every layer. contained_by is the linearized cell
 * ix + R*iy + R^2*iz, R = 2^l, of the point on its own layer.
 *
 * Points are stored ordered by (layer, contained_by, random_id) so that a
 * cell's members are one contiguous range.
 */
class LayeredGridIndex {
public:
    static constexpr std::uint32_t kBranching = 8;

    std::size_t base() const { return base_; }
    std::size_t size() const { return random_id_.size(); }
    std::uint32_t layer_count() const { return layer_count_; }
    const std::array<std::size_t, 3>& coord_indices() const { return coord_indices_; }
    const BoundingBox& box() const { return box_; }

    static std::uint32_t resolution(std::uint32_t layer) { return 1u << layer; }
    static std::uint64_t cell_count(std::uint32_t layer) {
        const std::uint64_t r = resolution(layer);
        return r * r * r;
    }
    /// First rank of a layer: B * (8^(layer-1) - 1) / 7.
    std::uint64_t layer_begin(std::uint32_t layer) const;
    /// Number of points actually stored on a layer (the last one may be partial).
    std::size_t layer_population(std::uint32_t layer) const;

    std::span<const std::uint32_t> random_id() const { return random_id_; }
    std::span<const std::uint8_t> layer() const { return layer_; }
    std::span<const std::uint32_t> contained_by() const { return contained_by_; }

    /// Point ids of one cell, ordered by random_id.
    std::span<const PointId> cell_points(std::uint32_t layer, std::uint32_t cell) const;

    /// Per-axis cell index of coordinate value x on a layer (clamped to the grid).
    std::uint32_t axis_cell(std::uint32_t layer, std::size_t axis, double x) const;
    std::uint32_t cell_of(std::uint32_t layer, std::span<const double> xyz) const;

    friend LayeredGridIndex build_grid(const PointSet&, std::array<std::size_t, 3>, std::size_t, std::uint64_t);
    friend LayeredGridIndex load_grid(const std::string&);

private:
    void rebuild_storage();

    std::size_t base_ = 1024;
    std::uint32_t layer_count_ = 0;
    std::array<std::size_t, 3> coord_indices_{0, 1, 2};
    BoundingBox box_;
    std::vector<std::uint32_t> random_id_;
    std::vector<std::uint8_t> layer_;
    std::vector<std::uint32_t> contained_by_;
    // Derived: storage order and per-layer CSR offsets into it.
    std::vector<PointId> order_;
    std::vector<std::vector<std::uint32_t>> cell_offsets_;
    std::vector<std::uint32_t> layer_offset_;
};

/// Smallest L with B * (8^L - 1) / 7 >= n.
std::uint32_t grid_layer_count(std::size_t n, std::size_t base);

LayeredGridIndex build_grid(const PointSet& ps, std::array<std::size_t, 3> coord_indices, std::size_t base = 1024,
                            std::uint64_t seed = 0);

struct SampleResult {
    /// Ordered by random_id, so every prefix is itself a uniform subsample.
    std::vector<PointId> ids;
    /// Points read from the touched cells (the work measure).
    std::size_t examined = 0;
    std::uint32_t layers_used = 0;
};

/**
 * Returns at least n points of the closed box q (over the three indexed
 * coordinates) following the data distribution: whole layers are scanned in
 * order and the scan stops after the layer on which the running count reaches
 * n. Returns every point of q if it holds fewer than n.
 */
SampleResult sample_box(const LayeredGridIndex& idx, const PointSet& ps, const BoundingBox& q, std::size_t n);

/// Cells of a layer whose half-open extent meets the closed box q, ascending.
std::vector<std::uint32_t> cells_intersecting(const LayeredGridIndex& idx, std::uint32_t layer, const BoundingBox& q);

void save_grid(const LayeredGridIndex& idx, const std::string& path);
LayeredGridIndex load_grid(const std::string& path);

} // namespace hypergrid
