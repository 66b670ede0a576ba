#include "hypergrid/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace hypergrid {

namespace {

struct Candidate {
    double d2;
    PointId id;

    bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && id < o.id); }
};

void check_query(std::size_t dim, std::span<const double> p, std::size_t k, std::size_t n) {
    if (k == 0) throw std::invalid_argument("k must be >= 1");
    if (n == 0) throw std::invalid_argument("empty dataset");
    if (p.size() != dim) throw std::invalid_argument("query point dimension differs from the data");
    for (double v : p) {
        if (!std::isfinite(v)) throw std::invalid_argument("query point must be finite");
    }
}

double cell_distance2(std::span<const double> lo, std::span<const double> hi, std::span<const double> p) {
    double sum = 0.0;
    for (std::size_t d = 0; d < p.size(); ++d) {
        const double gap = p[d] < lo[d] ? lo[d] - p[d] : (p[d] > hi[d] ? p[d] - hi[d] : 0.0);
        sum += gap * gap;
    }
    return sum;
}

NeighborList finish(const std::vector<Candidate>& list) {
    NeighborList out;
    out.reserve(list.size());
    for (const auto& c : list) out.push_back({c.id, std::sqrt(c.d2)});
    return out;
}

class Search {
public:
    Search(const KdTree& tree, std::span<const double> p, std::size_t k, KnnStats& stats)
        : tree_(tree), p_(p), k_(std::min(k, tree.size())), stats_(stats), admitted_(tree.leaf_count(), 0) {}

    std::vector<Candidate> run() {
        admit(start_leaf());
        bool first = true;
        while (!frontier_.empty()) {
            const auto [bound2, node] = frontier_.top();
            frontier_.pop();
            if (full() && bound2 > m2()) break;
            const double tight2 = cell_distance2(tree_.box_lo(node), tree_.box_hi(node), p_);
            if (full() && tight2 > m2()) {
                ++stats_.leaves_skipped;
            } else {
                scan(node, bound2);
                if (!first) stats_.max_entry_bound = std::max(stats_.max_entry_bound, std::sqrt(bound2));
            }
            first = false;
            expand(node);
        }
        return std::move(list_);
    }

private:
    bool full() const { return list_.size() == k_; }
    double m2() const { return full() ? list_.back().d2 : std::numeric_limits<double>::infinity(); }

    std::size_t start_leaf() const {
        const auto root_lo = tree_.cell_lo(0);
        const auto root_hi = tree_.cell_hi(0);
        std::size_t i = 0;
        while (!tree_.is_leaf(i)) {
            const KdNode& n = tree_.node(i);
            const double x = std::clamp(p_[n.split_dim], root_lo[n.split_dim], root_hi[n.split_dim]);
            i = x <= n.split_value ? KdTree::left(i) : KdTree::right(i);
        }
        return i;
    }

    void admit(std::size_t node) {
        auto& flag = admitted_[node - (tree_.leaf_count() - 1)];
        if (flag) return;
        flag = 1;
        ++stats_.leaves_admitted;
        frontier_.push({cell_distance2(tree_.cell_lo(node), tree_.cell_hi(node), p_), node});
    }

    void scan(std::size_t node, double bound2) {
        ++stats_.leaves_examined;
        const KdNode& leaf = tree_.node(node);
        stats_.points_scanned += leaf.population();
        // Entries closer than every point of this leaf keep their places.
        const auto fixed = static_cast<std::size_t>(
            std::lower_bound(list_.begin(), list_.end(), bound2, [](const Candidate& c, double b) { return c.d2 < b; }) -
            list_.begin());
        const std::size_t take = k_ - fixed;
        const double limit = m2();

        pending_.clear();
        const std::size_t dim = tree_.dim();
        for (std::uint32_t pos = leaf.begin; pos < leaf.end; ++pos) {
            const auto x = tree_.row_at(pos);
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = x[d] - p_[d];
                d2 += diff * diff;
            }
            if (d2 <= limit) pending_.push_back({d2, tree_.permutation()[pos]});
        }
        if (pending_.size() > take) {
            std::partial_sort(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(take), pending_.end());
            pending_.resize(take);
        }
        list_.insert(list_.end(), pending_.begin(), pending_.end());
        std::sort(list_.begin() + static_cast<std::ptrdiff_t>(fixed), list_.end());
        if (list_.size() > k_) list_.resize(k_);
    }

    // One boundary point per face: p clamped into the cell, then moved onto the face.
    void expand(std::size_t node) {
        const std::size_t dim = tree_.dim();
        const auto lo = tree_.cell_lo(node);
        const auto hi = tree_.cell_hi(node);
        const double inside2 = cell_distance2(lo, hi, p_);
        for (std::size_t d = 0; d < dim; ++d) {
            const double clamped = std::clamp(p_[d], lo[d], hi[d]);
            const double own = (p_[d] - clamped) * (p_[d] - clamped);
            for (int side = 0; side < 2; ++side) {
                const double v = side == 0 ? lo[d] : hi[d];
                const double b2 = inside2 - own + (p_[d] - v) * (p_[d] - v);
                if (b2 > m2()) continue;
                ++stats_.faces_probed;
                admit_touching(0, node, d, v);
            }
        }
    }

    // Admits every leaf whose closed cell meets the face {x in cell(from) : x[axis] = v}.
    void admit_touching(std::size_t i, std::size_t from, std::size_t axis, double v) {
        const auto flo = tree_.cell_lo(from);
        const auto fhi = tree_.cell_hi(from);
        while (true) {
            if (tree_.is_leaf(i)) {
                if (i != from) admit(i);
                return;
            }
            const KdNode& n = tree_.node(i);
            const double face_lo = n.split_dim == axis ? v : flo[n.split_dim];
            const double face_hi = n.split_dim == axis ? v : fhi[n.split_dim];
            const bool go_left = face_lo <= n.split_value;
            const bool go_right = face_hi >= n.split_value;
            if (go_left && go_right) {
                admit_touching(KdTree::left(i), from, axis, v);
                i = KdTree::right(i);
            } else {
                i = go_left ? KdTree::left(i) : KdTree::right(i);
            }
        }
    }

    using Entry = std::pair<double, std::size_t>;

    const KdTree& tree_;
    std::span<const double> p_;
    std::size_t k_;
    KnnStats& stats_;
    std::vector<char> admitted_;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier_;
    std::vector<Candidate> list_;
    std::vector<Candidate> pending_;
};

} // namespace

NeighborList knn_search(const KdTree& tree, std::span<const double> p, std::size_t k, KnnStats* stats) {
    check_query(tree.dim(), p, k, tree.size());
    KnnStats local;
    Search search(tree, p, k, stats ? *stats : local);
    return finish(search.run());
}

NeighborList knn_brute(const PointSet& ps, std::span<const double> p, std::size_t k) {
    check_query(ps.dim(), p, k, ps.size());
    std::vector<Candidate> all(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) all[i] = {0.0, static_cast<PointId>(i)};
    // Same per-point summation order as the tree search: dimension by dimension.
    for (std::size_t i = 0; i < ps.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t d = 0; d < ps.dim(); ++d) {
            const double diff = ps.at(i, d) - p[d];
            d2 += diff * diff;
        }
        all[i].d2 = d2;
    }
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
    all.resize(keep);
    return finish(all);
}

NeighborList similar_objects(const KdTree& tree, const PointSet& features, PointId query_id, std::size_t k) {
    if (query_id >= features.size()) throw std::invalid_argument("query id out of range");
    if (k == 0) throw std::invalid_argument("k must be >= 1");
    const auto q = features.row(query_id);
    NeighborList found = knn_search(tree, q, k + 1);
    const auto self = std::find_if(found.begin(), found.end(), [&](const Neighbor& n) { return n.id == query_id; });
    if (self != found.end()) {
        found.erase(self);
    } else if (found.size() > k) {
        found.pop_back();
    }
    return found;
}

NeighborList similar_objects(const PointSet& features, PointId query_id, std::size_t k) {
    return similar_objects(build_kdtree(features), features, query_id, k);
}

} // namespace hypergrid
