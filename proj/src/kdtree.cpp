#include "hypergrid/kdtree.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "hypergrid/binary_io.hpp"

namespace hypergrid {

namespace {

constexpr char kTreeMagic[] = "HGKD";
constexpr std::uint16_t kTreeVersion = 1;

} // namespace

std::size_t kd_leaf_count(std::size_t n) {
    if (n <= 1) return 1;
    const auto exponent = static_cast<int>(std::lround(0.5 * std::log2(static_cast<double>(n))));
    return std::size_t{1} << std::max(exponent, 0);
}

BoundingBox KdTree::box(std::size_t i) const {
    auto lo = box_lo(i);
    auto hi = box_hi(i);
    return BoundingBox({lo.begin(), lo.end()}, {hi.begin(), hi.end()});
}

BoundingBox KdTree::cell(std::size_t i) const {
    auto lo = cell_lo(i);
    auto hi = cell_hi(i);
    return BoundingBox({lo.begin(), lo.end()}, {hi.begin(), hi.end()});
}

void KdTree::finish_layout(const PointSet& ps) {
    // Post-order ids: children before parents, left before right.
    const std::size_t count = nodes_.size();
    by_post_order_.assign(count, 0);
    std::uint32_t next = 0;
    std::vector<std::pair<std::size_t, bool>> stack{{0, false}};
    while (!stack.empty()) {
        auto [i, expanded] = stack.back();
        stack.pop_back();
        if (is_leaf(i) || expanded) {
            nodes_[i].post_order_id = next;
            by_post_order_[next++] = i;
            continue;
        }
        stack.push_back({i, true});
        stack.push_back({right(i), false});
        stack.push_back({left(i), false});
    }
    for (std::size_t j = 0; j < leaf_count_; ++j) {
        nodes_[leaf_node(j)].first_leaf = static_cast<std::uint32_t>(j);
        nodes_[leaf_node(j)].last_leaf = static_cast<std::uint32_t>(j);
    }
    for (std::size_t i = leaf_count_ - 1; i-- > 0;) {
        nodes_[i].first_leaf = nodes_[left(i)].first_leaf;
        nodes_[i].last_leaf = nodes_[right(i)].last_leaf;
    }

    const std::size_t n = permutation_.size();
    rows_.resize(n * dim_);
    cols_.resize(n * dim_);
    for (std::size_t d = 0; d < dim_; ++d) {
        const auto col = ps.column(d);
        for (std::size_t pos = 0; pos < n; ++pos) {
            rows_[pos * dim_ + d] = col[permutation_[pos]];
            cols_[d * n + pos] = col[permutation_[pos]];
        }
    }
}

KdTree build_kdtree(const PointSet& ps) {
    if (ps.empty()) throw std::invalid_argument("kd-tree needs at least one point");
    const std::size_t n = ps.size();
    const std::size_t dim = ps.dim();

    KdTree tree;
    tree.dim_ = dim;
    tree.leaf_count_ = kd_leaf_count(n);
    tree.levels_ = static_cast<std::uint32_t>(std::countr_zero(tree.leaf_count_)) + 1;
    const std::size_t count = 2 * tree.leaf_count_ - 1;
    tree.nodes_.resize(count);
    tree.box_lo_.resize(count * dim);
    tree.box_hi_.resize(count * dim);
    tree.cell_lo_.resize(count * dim);
    tree.cell_hi_.resize(count * dim);
    tree.permutation_.resize(n);
    std::iota(tree.permutation_.begin(), tree.permutation_.end(), PointId{0});

    const BoundingBox root_cell = bounding_box(ps);
    std::copy(root_cell.lo.begin(), root_cell.lo.end(), tree.cell_lo_.begin());
    std::copy(root_cell.hi.begin(), root_cell.hi.end(), tree.cell_hi_.begin());
    tree.nodes_[0].begin = 0;
    tree.nodes_[0].end = static_cast<std::uint32_t>(n);

    // One pass per level: every node of the level gets its tight box and, above
    // the leaf level, its median cut.
    for (std::uint32_t level = 0; level < tree.levels_; ++level) {
        const std::size_t first = (std::size_t{1} << level) - 1;
        const std::size_t last = (std::size_t{1} << (level + 1)) - 1;
        for (std::size_t i = first; i < last; ++i) {
            KdNode& node = tree.nodes_[i];
            node.level = level;
            double* lo = tree.box_lo_.data() + i * dim;
            double* hi = tree.box_hi_.data() + i * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                const auto col = ps.column(d);
                double mn = std::numeric_limits<double>::infinity();
                double mx = -std::numeric_limits<double>::infinity();
                for (std::uint32_t pos = node.begin; pos < node.end; ++pos) {
                    const double v = col[tree.permutation_[pos]];
                    mn = std::min(mn, v);
                    mx = std::max(mx, v);
                }
                lo[d] = mn;
                hi[d] = mx;
            }
            if (tree.is_leaf(i)) continue;

            std::uint32_t split_dim = 0;
            double widest = -1.0;
            for (std::size_t d = 0; d < dim; ++d) {
                if (hi[d] - lo[d] > widest) {
                    widest = hi[d] - lo[d];
                    split_dim = static_cast<std::uint32_t>(d);
                }
            }
            const auto col = ps.column(split_dim);
            auto* first_pos = tree.permutation_.data() + node.begin;
            auto* end_pos = tree.permutation_.data() + node.end;
            auto* median = first_pos + (node.population() - 1) / 2;
            std::nth_element(first_pos, median, end_pos, [&](PointId a, PointId b) {
                return col[a] < col[b] || (col[a] == col[b] && a < b);
            });
            node.split_dim = split_dim;
            node.split_value = col[*median];

            const auto split_pos = static_cast<std::uint32_t>(median - tree.permutation_.data()) + 1;
            KdNode& l = tree.nodes_[KdTree::left(i)];
            KdNode& r = tree.nodes_[KdTree::right(i)];
            l.begin = node.begin;
            l.end = split_pos;
            r.begin = split_pos;
            r.end = node.end;
            for (std::size_t child : {KdTree::left(i), KdTree::right(i)}) {
                std::copy_n(tree.cell_lo_.data() + i * dim, dim, tree.cell_lo_.data() + child * dim);
                std::copy_n(tree.cell_hi_.data() + i * dim, dim, tree.cell_hi_.data() + child * dim);
            }
            tree.cell_hi_[KdTree::left(i) * dim + split_dim] = node.split_value;
            tree.cell_lo_[KdTree::right(i) * dim + split_dim] = node.split_value;
        }
    }
    tree.finish_layout(ps);
    return tree;
}

void save_kdtree(const KdTree& tree, const std::string& path) {
    io::Writer w(path);
    w.magic(kTreeMagic);
    w.put<std::uint16_t>(kTreeVersion);
    w.put<std::uint64_t>(tree.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.dim()));
    w.put<std::uint64_t>(tree.leaf_count());
    for (std::size_t i = 0; i < tree.node_count(); ++i) {
        const KdNode& n = tree.node(i);
        w.put(n.split_dim);
        w.put(n.split_value);
        w.put(n.post_order_id);
        w.put(n.first_leaf);
        w.put(n.last_leaf);
        w.put(n.begin);
        w.put(n.end);
        w.put(n.level);
        w.put_array(tree.box_lo(i));
        w.put_array(tree.box_hi(i));
        w.put_array(tree.cell_lo(i));
        w.put_array(tree.cell_hi(i));
    }
    w.put_array(tree.permutation());
    w.finish();
}

KdTree load_kdtree(const std::string& path, const PointSet& ps) {
    io::Reader r(path);
    r.expect_magic(kTreeMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kTreeVersion) r.fail("unsupported version " + std::to_string(version));
    const auto n = r.get<std::uint64_t>();
    const auto dim = r.get<std::uint32_t>();
    const auto leaves = r.get<std::uint64_t>();
    if (n != ps.size() || dim != ps.dim()) r.fail("tree was built for a different point set");
    if (leaves != kd_leaf_count(n)) r.fail("leaf count does not match the point count");

    KdTree tree;
    tree.dim_ = dim;
    tree.leaf_count_ = leaves;
    tree.levels_ = static_cast<std::uint32_t>(std::countr_zero(leaves)) + 1;
    const std::size_t count = 2 * leaves - 1;
    tree.nodes_.resize(count);
    tree.box_lo_.resize(count * dim);
    tree.box_hi_.resize(count * dim);
    tree.cell_lo_.resize(count * dim);
    tree.cell_hi_.resize(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
        KdNode& node = tree.nodes_[i];
        node.split_dim = r.get<std::uint32_t>();
        node.split_value = r.get<double>();
        node.post_order_id = r.get<std::uint32_t>();
        node.first_leaf = r.get<std::uint32_t>();
        node.last_leaf = r.get<std::uint32_t>();
        node.begin = r.get<std::uint32_t>();
        node.end = r.get<std::uint32_t>();
        node.level = r.get<std::uint32_t>();
        r.get_array(std::span<double>(tree.box_lo_.data() + i * dim, dim));
        r.get_array(std::span<double>(tree.box_hi_.data() + i * dim, dim));
        r.get_array(std::span<double>(tree.cell_lo_.data() + i * dim, dim));
        r.get_array(std::span<double>(tree.cell_hi_.data() + i * dim, dim));
        if (node.begin > node.end || node.end > n || node.split_dim >= dim || node.post_order_id >= count) {
            r.fail("corrupt node " + std::to_string(i));
        }
    }
    tree.permutation_.resize(n);
    r.get_array(std::span<PointId>(tree.permutation_));
    if (r.remaining() != 0) r.fail("trailing bytes");
    std::vector<bool> seen(n, false);
    for (PointId id : tree.permutation_) {
        if (id >= n || seen[id]) r.fail("permutation is not a bijection");
        seen[id] = true;
    }
    tree.finish_layout(ps);
    return tree;
}

// ---------------------------------------------------------------------------
// Polytopes

Polytope::Polytope(std::vector<Halfspace> halfspaces) : halfspaces_(std::move(halfspaces)) {
    if (halfspaces_.empty()) throw std::invalid_argument("polytope needs at least one halfspace");
    const std::size_t dim = halfspaces_.front().normal.size();
    if (dim == 0) throw std::invalid_argument("halfspace normal must not be empty");
    for (const auto& h : halfspaces_) {
        if (h.normal.size() != dim) throw std::invalid_argument("halfspace dimensions differ");
        bool nonzero = false;
        for (double v : h.normal) {
            if (!std::isfinite(v)) throw std::invalid_argument("halfspace normal must be finite");
            nonzero = nonzero || v != 0.0;
        }
        if (!nonzero) throw std::invalid_argument("halfspace normal must be non-zero");
        if (std::isnan(h.offset)) throw std::invalid_argument("halfspace offset is NaN");
    }
}

bool Polytope::contains(std::span<const double> x) const {
    for (const auto& h : halfspaces_) {
        if (!(dot(h.normal, x) <= h.offset)) return false;
    }
    return true;
}

Polytope Polytope::whole_space(std::size_t dim) {
    Halfspace h;
    h.normal.assign(dim, 0.0);
    h.normal[0] = 1.0;
    h.offset = std::numeric_limits<double>::infinity();
    return Polytope({h});
}

namespace {

// Largest / smallest normal . x over the box, evaluated on the support corners
// with the same summation order as dot().
double support_max(const Halfspace& h, std::span<const double> lo, std::span<const double> hi) {
    double sum = 0.0;
    for (std::size_t d = 0; d < h.normal.size(); ++d) sum += h.normal[d] * (h.normal[d] > 0 ? hi[d] : lo[d]);
    return sum;
}

double support_min(const Halfspace& h, std::span<const double> lo, std::span<const double> hi) {
    double sum = 0.0;
    for (std::size_t d = 0; d < h.normal.size(); ++d) sum += h.normal[d] * (h.normal[d] > 0 ? lo[d] : hi[d]);
    return sum;
}

// Tightens the box against each halfspace in turn (interval bound propagation).
// An empty box proves that no point of the original box satisfies all of them.
// Every bound is relaxed by a small margin, so rounding can only keep a node.
bool provably_disjoint(std::span<const double> lo0, std::span<const double> hi0, const Polytope& poly,
                       std::span<const std::uint32_t> active) {
    constexpr int kRounds = 3;
    constexpr double kSlack = 1e-9;
    const std::size_t dim = lo0.size();
    std::vector<double> lo(lo0.begin(), lo0.end()), hi(hi0.begin(), hi0.end());
    for (int round = 0; round < kRounds; ++round) {
        for (std::uint32_t a : active) {
            const Halfspace& h = poly.halfspaces()[a];
            double smin = 0.0, scale = std::abs(h.offset);
            for (std::size_t d = 0; d < dim; ++d) {
                smin += h.normal[d] * (h.normal[d] > 0 ? lo[d] : hi[d]);
                scale += std::abs(h.normal[d]) * std::max(std::abs(lo[d]), std::abs(hi[d]));
            }
            const double margin = kSlack * (1.0 + scale);
            if (smin > h.offset + margin) return true;
            for (std::size_t d = 0; d < dim; ++d) {
                const double ad = h.normal[d];
                if (ad == 0.0) continue;
                const double rest = smin - ad * (ad > 0 ? lo[d] : hi[d]);
                const double bound = (h.offset + margin - rest) / ad;
                const double pad = kSlack * (1.0 + std::abs(bound) + (hi[d] - lo[d]));
                if (ad > 0) {
                    hi[d] = std::min(hi[d], bound + pad);
                } else {
                    lo[d] = std::max(lo[d], bound - pad);
                }
                if (lo[d] > hi[d]) return true;
            }
        }
    }
    return false;
}

} // namespace

BoxClass classify_box(std::span<const double> lo, std::span<const double> hi, const Polytope& poly) {
    bool inside = true;
    for (const auto& h : poly.halfspaces()) {
        if (support_min(h, lo, hi) > h.offset) return BoxClass::outside;
        if (!(support_max(h, lo, hi) <= h.offset)) inside = false;
    }
    return inside ? BoxClass::inside : BoxClass::partial;
}

namespace {

struct PolytopeWalker {
    const KdTree& tree;
    const Polytope& poly;
    PolytopeResult& out;

    void take_all(std::size_t i) {
        const auto pts = tree.points(i);
        out.ids.insert(out.ids.end(), pts.begin(), pts.end());
    }

    // active: halfspaces not yet known to hold for the whole node box.
    void visit(std::size_t i, std::vector<std::uint32_t> active) {
        ++out.stats.nodes_visited;
        const auto lo = tree.box_lo(i);
        const auto hi = tree.box_hi(i);
        std::vector<std::uint32_t> still;
        still.reserve(active.size());
        for (std::uint32_t a : active) {
            const Halfspace& h = poly.halfspaces()[a];
            if (support_min(h, lo, hi) > h.offset) return;
            if (!(support_max(h, lo, hi) <= h.offset)) still.push_back(a);
        }
        if (!still.empty() && still.size() > 1 && provably_disjoint(lo, hi, poly, still)) {
            ++out.stats.nodes_pruned;
            return;
        }
        if (still.empty()) {
            ++out.stats.inside_nodes;
            out.stats.taken_whole += tree.node(i).population();
            take_all(i);
            return;
        }
        if (!tree.is_leaf(i)) {
            visit(KdTree::left(i), still);
            visit(KdTree::right(i), std::move(still));
            return;
        }
        ++out.stats.leaves_touched;
        const KdNode& node = tree.node(i);
        out.stats.tested += node.population();
        // Halfspace by halfspace over column blocks, the same arithmetic as the full scan.
        constexpr std::uint32_t kBlock = 256;
        std::array<double, kBlock> acc{};
        std::array<unsigned char, kBlock> keep{};
        for (std::uint32_t start = node.begin; start < node.end; start += kBlock) {
            const std::uint32_t len = std::min(kBlock, node.end - start);
            std::fill_n(keep.begin(), len, 1);
            for (std::uint32_t a : still) {
                const Halfspace& h = poly.halfspaces()[a];
                std::fill_n(acc.begin(), len, 0.0);
                for (std::size_t d = 0; d < tree.dim(); ++d) {
                    const double w = h.normal[d];
                    const double* col = tree.column_at(d).data() + start;
                    for (std::uint32_t j = 0; j < len; ++j) acc[j] += w * col[j];
                }
                for (std::uint32_t j = 0; j < len; ++j) keep[j] &= static_cast<unsigned char>(acc[j] <= h.offset);
            }
            for (std::uint32_t j = 0; j < len; ++j) {
                if (keep[j]) out.ids.push_back(tree.permutation()[start + j]);
            }
        }
    }
};

} // namespace

PolytopeResult query_polytope(const KdTree& tree, const Polytope& poly) {
    if (poly.dim() != tree.dim()) throw std::invalid_argument("polytope dimension differs from the tree");
    PolytopeResult out;
    std::vector<std::uint32_t> all(poly.halfspaces().size());
    std::iota(all.begin(), all.end(), 0u);
    PolytopeWalker walker{tree, poly, out};
    walker.visit(0, std::move(all));
    if (out.ids.size() > tree.size() / 32) {
        // Large results: a bitmap pass over the id space beats sorting.
        std::vector<std::uint64_t> bits((tree.size() + 63) / 64);
        for (PointId id : out.ids) bits[id >> 6] |= std::uint64_t{1} << (id & 63);
        std::size_t k = 0;
        for (std::size_t w = 0; w < bits.size(); ++w) {
            for (std::uint64_t b = bits[w]; b; b &= b - 1) {
                out.ids[k++] = static_cast<PointId>(w * 64 + static_cast<std::size_t>(std::countr_zero(b)));
            }
        }
    } else {
        std::sort(out.ids.begin(), out.ids.end());
    }
    out.stats.returned = out.ids.size();
    return out;
}

std::vector<PointId> scan_polytope(const PointSet& ps, const Polytope& poly) {
    if (poly.dim() != ps.dim()) throw std::invalid_argument("polytope dimension differs from the point set");
    constexpr std::size_t kBlock = 1024;
    const std::size_t n = ps.size();
    const std::size_t dim = ps.dim();
    std::vector<PointId> out;
    std::array<double, kBlock> acc{};
    std::array<unsigned char, kBlock> keep{};
    for (std::size_t start = 0; start < n; start += kBlock) {
        const std::size_t len = std::min(kBlock, n - start);
        std::fill_n(keep.begin(), len, 1);
        for (const auto& h : poly.halfspaces()) {
            std::fill_n(acc.begin(), len, 0.0);
            for (std::size_t d = 0; d < dim; ++d) {
                const double w = h.normal[d];
                const double* col = ps.column(d).data() + start;
                for (std::size_t j = 0; j < len; ++j) acc[j] += w * col[j];
            }
            for (std::size_t j = 0; j < len; ++j) keep[j] &= static_cast<unsigned char>(acc[j] <= h.offset);
        }
        for (std::size_t j = 0; j < len; ++j) {
            if (keep[j]) out.push_back(static_cast<PointId>(start + j));
        }
    }
    return out;
}

SubtreeLevel subtree_at_depth(const KdTree& tree, const BoundingBox& box, std::size_t min_nodes) {
    if (box.dim() != tree.dim()) throw std::invalid_argument("box dimension differs from the tree");
    if (!box.valid()) throw std::invalid_argument("degenerate box: lo > hi");
    auto meets = [&](std::size_t i) {
        const auto lo = tree.box_lo(i);
        const auto hi = tree.box_hi(i);
        for (std::size_t d = 0; d < tree.dim(); ++d) {
            if (hi[d] < box.lo[d] || lo[d] > box.hi[d]) return false;
        }
        return true;
    };
    // Child boxes nest inside parent boxes, so only children of meeting nodes can meet.
    std::vector<std::size_t> current;
    if (meets(0)) current.push_back(0);
    std::uint32_t level = 0;
    while (current.size() < min_nodes && level + 1 < tree.levels()) {
        std::vector<std::size_t> next;
        for (std::size_t i : current) {
            if (meets(KdTree::left(i))) next.push_back(KdTree::left(i));
            if (meets(KdTree::right(i))) next.push_back(KdTree::right(i));
        }
        current = std::move(next);
        ++level;
    }
    SubtreeLevel out;
    out.level = level;
    for (std::size_t i : current) {
        out.nodes.push_back({i, tree.node(i).post_order_id, level, tree.box(i), tree.node(i).population()});
    }
    return out;
}

} // namespace hypergrid
