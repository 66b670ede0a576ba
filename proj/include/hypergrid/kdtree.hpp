#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hypergrid/dataset.hpp"

namespace hypergrid {

/// Number of leaves for n points: the power of two nearest to sqrt(n) on a log
/// scale, 2^round(log2(sqrt(n))), so that leaf population ~ leaf count.
std::size_t kd_leaf_count(std::size_t n);

struct KdNode {
    std::uint32_t split_dim = 0;  // internal nodes only
    double split_value = 0.0;     // left: x[split_dim] <= value, right: >= value
    std::uint32_t post_order_id = 0;
    std::uint32_t first_leaf = 0; // leaf ordinals below this node, inclusive
    std::uint32_t last_leaf = 0;
    std::uint32_t begin = 0;      // range into the permutation
    std::uint32_t end = 0;
    std::uint32_t level = 0;

    std::uint32_t population() const { return end - begin; }
};

/**
 * Balanced kd-tree in implicit heap layout (children of i at 2i+1, 2i+2).
 *
 * All leaves sit on the same level. Each node keeps two boxes: box() is tight
 * around its points; cell() is the region carved out by the split planes,
 * starting from the dataset bounding box at the root, so the leaf cells tile
 * the root box. The permutation lists point ids so that every node's points
 * are the contiguous range [begin, end); leaf ordinals increase left to right,
 * so any subtree's leaves form the interval [first_leaf, last_leaf].
 *
 * The tree also keeps a row-major copy of the coordinates in permutation
 * order, so leaf scans read contiguous memory.
 */
class KdTree {
public:
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return permutation_.size(); }
    /// Levels including the root level 0.
    std::uint32_t levels() const { return levels_; }
    std::size_t leaf_count() const { return leaf_count_; }
    std::size_t node_count() const { return nodes_.size(); }

    const KdNode& node(std::size_t i) const { return nodes_[i]; }
    bool is_leaf(std::size_t i) const { return i >= leaf_count_ - 1; }
    static std::size_t left(std::size_t i) { return 2 * i + 1; }
    static std::size_t right(std::size_t i) { return 2 * i + 2; }
    std::size_t leaf_node(std::size_t ordinal) const { return leaf_count_ - 1 + ordinal; }
    std::size_t node_by_post_order(std::uint32_t id) const { return by_post_order_[id]; }

    std::span<const double> box_lo(std::size_t i) const { return {box_lo_.data() + i * dim_, dim_}; }
    std::span<const double> box_hi(std::size_t i) const { return {box_hi_.data() + i * dim_, dim_}; }
    std::span<const double> cell_lo(std::size_t i) const { return {cell_lo_.data() + i * dim_, dim_}; }
    std::span<const double> cell_hi(std::size_t i) const { return {cell_hi_.data() + i * dim_, dim_}; }
    BoundingBox box(std::size_t i) const;
    BoundingBox cell(std::size_t i) const;

    std::span<const PointId> permutation() const { return permutation_; }
    std::span<const PointId> points(std::size_t i) const {
        return {permutation_.data() + nodes_[i].begin, nodes_[i].population()};
    }
    /// Coordinates of the point at permutation position pos.
    std::span<const double> row_at(std::size_t pos) const { return {rows_.data() + pos * dim_, dim_}; }
    /// Coordinate d of every point, in permutation order.
    std::span<const double> column_at(std::size_t d) const { return {cols_.data() + d * size(), size()}; }

    friend KdTree build_kdtree(const PointSet&);
    friend KdTree load_kdtree(const std::string&, const PointSet&);

private:
    void finish_layout(const PointSet& ps);

    std::size_t dim_ = 0;
    std::uint32_t levels_ = 0;
    std::size_t leaf_count_ = 0;
    std::vector<KdNode> nodes_;
    std::vector<double> box_lo_, box_hi_, cell_lo_, cell_hi_;
    std::vector<PointId> permutation_;
    std::vector<std::size_t> by_post_order_;
    std::vector<double> rows_; // permuted copies, row- and column-major
    std::vector<double> cols_;
};

/**
 * Builds the tree level by level. At each node the split dimension is the
 * widest extent of the node's tight box (lowest index on ties) and the split
 * is a rank cut at the lower median, ordering by (coordinate, point id): the
 * left child receives ceil(n/2) points.
 */
KdTree build_kdtree(const PointSet& ps);

void save_kdtree(const KdTree& tree, const std::string& path);
/// Loads the node array and permutation; ps must be the indexed point set.
KdTree load_kdtree(const std::string& path, const PointSet& ps);

/// normal . x <= offset
struct Halfspace {
    std::vector<double> normal;
    double offset = 0.0;
};

/// Convex region as an intersection of halfspaces.
class Polytope {
public:
    Polytope() = default;
    explicit Polytope(std::vector<Halfspace> halfspaces);

    std::size_t dim() const { return halfspaces_.empty() ? 0 : halfspaces_.front().normal.size(); }
    const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }
    bool contains(std::span<const double> x) const;

    /// A single halfspace with +infinity offset: satisfied everywhere.
    static Polytope whole_space(std::size_t dim);

private:
    std::vector<Halfspace> halfspaces_;
};

/// Evaluates normal . x with the summation order every query path shares, so
/// box-corner bounds and per-point tests round consistently.
inline double dot(std::span<const double> normal, std::span<const double> x) {
    double sum = 0.0;
    for (std::size_t d = 0; d < normal.size(); ++d) sum += normal[d] * x[d];
    return sum;
}

enum class BoxClass { inside, outside, partial };

BoxClass classify_box(std::span<const double> lo, std::span<const double> hi, const Polytope& poly);
inline BoxClass classify_box(const BoundingBox& box, const Polytope& poly) { return classify_box(box.lo, box.hi, poly); }

struct PolytopeStats {
    std::size_t returned = 0;
    /// Points evaluated one by one against the halfspaces.
    std::size_t tested = 0;
    std::size_t leaves_touched = 0; // leaves reached as partial
    std::size_t nodes_visited = 0;
    std::size_t inside_nodes = 0;   // subtrees taken whole
    std::size_t taken_whole = 0;    // points returned from those subtrees without a test
    std::size_t nodes_pruned = 0;   // partial by single halfspaces, disjoint by bound propagation
};

struct PolytopeResult {
    std::vector<PointId> ids; // ascending
    PolytopeStats stats;
};

PolytopeResult query_polytope(const KdTree& tree, const Polytope& poly);

/// Full-scan filter over the column store; the baseline the index competes with.
std::vector<PointId> scan_polytope(const PointSet& ps, const Polytope& poly);

struct KdBoxDescriptor {
    std::size_t node = 0;
    std::uint32_t post_order_id = 0;
    std::uint32_t level = 0;
    BoundingBox box;
    std::uint32_t population = 0;
};

struct SubtreeLevel {
    std::uint32_t level = 0;
    std::vector<KdBoxDescriptor> nodes;
};

/// Shallowest level with at least min_nodes node boxes meeting the closed box
/// (or the leaf level if none has that many), with those nodes.
SubtreeLevel subtree_at_depth(const KdTree& tree, const BoundingBox& box, std::size_t min_nodes);

} // namespace hypergrid
