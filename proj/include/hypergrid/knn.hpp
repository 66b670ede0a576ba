#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hypergrid/kdtree.hpp"

namespace hypergrid {

struct Neighbor {
    PointId id = 0;
    double distance = 0.0; // Euclidean

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Up to k neighbors ordered by (distance, id).
using NeighborList = std::vector<Neighbor>;

struct KnnStats {
    std::size_t leaves_examined = 0; // leaves whose points were scanned
    std::size_t leaves_admitted = 0; // leaves put on the frontier, including the start leaf
    std::size_t leaves_skipped = 0;  // admitted, but the tight box was already beyond m
    std::size_t points_scanned = 0;
    std::size_t faces_probed = 0;    // boundary points close enough to trigger a neighbor lookup
    /// Largest entry bound among examined leaves other than the start leaf.
    double max_entry_bound = 0.0;
};

/**
 * Exact k nearest neighbors of p by growing the searched region one leaf at a
 * time.
 *
 * The search starts in the leaf whose cell contains p (clamped into the root
 * cell when p is outside the data). For every examined leaf, each face of its
 * cell yields a boundary point, the point of that face nearest to p. A face
 * whose boundary point lies within m, the current k-th distance, admits every
 * leaf whose closed cell touches the face; vertex-adjacent leaves are among
 * them because closed faces include their vertices. Admitted leaves wait on a
 * frontier ordered by the distance from p to their cell, and the search ends
 * when the nearest waiting cell is farther than m.
 *
 * When a leaf is examined, list entries closer than the leaf's entry bound
 * cannot be displaced; if f entries qualify, only the best k - f points of the
 * leaf are merged in.
 *
 * Ties are broken by smaller point id. Returns min(k, N) neighbors.
 */
NeighborList knn_search(const KdTree& tree, std::span<const double> p, std::size_t k, KnnStats* stats = nullptr);

/// Full scan, sorted by (distance, id), truncated to k.
NeighborList knn_brute(const PointSet& ps, std::span<const double> p, std::size_t k);

/// Nearest neighbors of a member of the indexed set, the member itself excluded.
NeighborList similar_objects(const KdTree& tree, const PointSet& features, PointId query_id, std::size_t k);
/// Convenience overload building the tree first.
NeighborList similar_objects(const PointSet& features, PointId query_id, std::size_t k);

} // namespace hypergrid
