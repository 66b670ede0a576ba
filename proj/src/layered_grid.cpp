#include "hypergrid/layered_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hypergrid/binary_io.hpp"
#include "hypergrid/rng.hpp"

namespace hypergrid {

namespace {

constexpr char kGridMagic[] = "HGLG";
constexpr std::uint16_t kGridVersion = 1;

void check_query_box(const BoundingBox& q) {
    if (q.dim() != 3) throw std::invalid_argument("grid query box must have 3 dimensions");
    if (!q.valid()) throw std::invalid_argument("degenerate query box: lo > hi");
}

} // namespace

std::uint32_t grid_layer_count(std::size_t n, std::size_t base) {
    if (base == 0) throw std::invalid_argument("grid base must be positive");
    std::uint32_t layers = 1;
    std::uint64_t capacity = base;
    std::uint64_t layer_size = base;
    while (capacity < n) {
        layer_size *= LayeredGridIndex::kBranching;
        capacity += layer_size;
        ++layers;
    }
    return layers;
}

std::uint64_t LayeredGridIndex::layer_begin(std::uint32_t layer) const {
    std::uint64_t begin = 0;
    std::uint64_t layer_size = base_;
    for (std::uint32_t l = 1; l < layer; ++l) {
        begin += layer_size;
        layer_size *= kBranching;
    }
    return begin;
}

std::size_t LayeredGridIndex::layer_population(std::uint32_t layer) const {
    return layer_offset_[layer] - layer_offset_[layer - 1];
}

std::span<const PointId> LayeredGridIndex::cell_points(std::uint32_t layer, std::uint32_t cell) const {
    const auto& offsets = cell_offsets_[layer - 1];
    const std::uint32_t base_offset = layer_offset_[layer - 1];
    return {order_.data() + base_offset + offsets[cell], offsets[cell + 1] - offsets[cell]};
}

std::uint32_t LayeredGridIndex::axis_cell(std::uint32_t layer, std::size_t axis, double x) const {
    const std::uint32_t r = resolution(layer);
    const double t = (x - box_.lo[axis]) / (box_.hi[axis] - box_.lo[axis]) * r;
    if (!(t > 0.0)) return 0;
    if (t >= r) return r - 1;
    return std::min(static_cast<std::uint32_t>(t), r - 1);
}

std::uint32_t LayeredGridIndex::cell_of(std::uint32_t layer, std::span<const double> xyz) const {
    const std::uint32_t r = resolution(layer);
    return axis_cell(layer, 0, xyz[0]) + r * (axis_cell(layer, 1, xyz[1]) + r * axis_cell(layer, 2, xyz[2]));
}

void LayeredGridIndex::rebuild_storage() {
    const std::size_t n = random_id_.size();
    // Points in rank order; a stable counting sort per layer keeps rank order within cells.
    std::vector<PointId> by_rank(n);
    for (std::size_t i = 0; i < n; ++i) by_rank[random_id_[i]] = static_cast<PointId>(i);

    order_.assign(n, 0);
    cell_offsets_.assign(layer_count_, {});
    layer_offset_.assign(layer_count_ + 1, 0);
    for (std::uint32_t l = 1; l <= layer_count_; ++l) {
        const std::uint64_t begin = std::min<std::uint64_t>(layer_begin(l), n);
        const std::uint64_t end = l == layer_count_ ? n : std::min<std::uint64_t>(layer_begin(l + 1), n);
        layer_offset_[l] = static_cast<std::uint32_t>(end);
        auto& offsets = cell_offsets_[l - 1];
        offsets.assign(cell_count(l) + 1, 0);
        for (std::uint64_t rank = begin; rank < end; ++rank) ++offsets[contained_by_[by_rank[rank]] + 1];
        std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
        std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::uint64_t rank = begin; rank < end; ++rank) {
            const PointId id = by_rank[rank];
            order_[begin + cursor[contained_by_[id]]++] = id;
        }
    }
}

LayeredGridIndex build_grid(const PointSet& ps, std::array<std::size_t, 3> coord_indices, std::size_t base,
                            std::uint64_t seed) {
    if (ps.empty()) throw std::invalid_argument("grid build needs at least one point");
    if (base < LayeredGridIndex::kBranching) throw std::invalid_argument("grid base must be >= 8");
    for (std::size_t c : coord_indices) {
        if (c >= ps.dim()) throw std::invalid_argument("grid coordinate index out of range");
    }
    const std::size_t n = ps.size();
    LayeredGridIndex idx;
    idx.base_ = base;
    idx.coord_indices_ = coord_indices;
    idx.layer_count_ = grid_layer_count(n, base);
    if (idx.layer_count_ > 8) throw std::invalid_argument("dataset too large for the grid's cell numbering");

    idx.box_.lo.resize(3);
    idx.box_.hi.resize(3);
    for (std::size_t a = 0; a < 3; ++a) {
        const auto col = ps.column(coord_indices[a]);
        const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
        idx.box_.lo[a] = *mn;
        idx.box_.hi[a] = expand_hi(*mn, *mx);
    }

    // Fisher-Yates over ranks.
    std::vector<std::uint32_t> ranks(n);
    std::iota(ranks.begin(), ranks.end(), 0u);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(ranks[i - 1], ranks[j]);
    }
    idx.random_id_ = std::move(ranks);

    idx.layer_.resize(n);
    idx.contained_by_.resize(n);
    std::vector<std::uint64_t> bounds;
    for (std::uint32_t l = 1; l <= idx.layer_count_; ++l) bounds.push_back(idx.layer_begin(l + 1));
    for (std::size_t i = 0; i < n; ++i) {
        const auto layer = static_cast<std::uint32_t>(
            std::upper_bound(bounds.begin(), bounds.end(), std::uint64_t{idx.random_id_[i]}) - bounds.begin() + 1);
        idx.layer_[i] = static_cast<std::uint8_t>(layer);
        const double xyz[3] = {ps.at(i, coord_indices[0]), ps.at(i, coord_indices[1]), ps.at(i, coord_indices[2])};
        idx.contained_by_[i] = idx.cell_of(layer, xyz);
    }
    idx.rebuild_storage();
    return idx;
}

std::vector<std::uint32_t> cells_intersecting(const LayeredGridIndex& idx, std::uint32_t layer, const BoundingBox& q) {
    check_query_box(q);
    if (layer < 1 || layer > idx.layer_count()) throw std::invalid_argument("layer out of range");
    std::array<std::uint32_t, 3> first{}, last{};
    for (std::size_t a = 0; a < 3; ++a) {
        if (q.hi[a] < idx.box().lo[a] || q.lo[a] >= idx.box().hi[a]) return {};
        first[a] = idx.axis_cell(layer, a, q.lo[a]);
        last[a] = idx.axis_cell(layer, a, q.hi[a]);
    }
    const std::uint32_t r = LayeredGridIndex::resolution(layer);
    std::vector<std::uint32_t> cells;
    cells.reserve(std::size_t{last[0] - first[0] + 1} * (last[1] - first[1] + 1) * (last[2] - first[2] + 1));
    for (std::uint32_t z = first[2]; z <= last[2]; ++z) {
        for (std::uint32_t y = first[1]; y <= last[1]; ++y) {
            for (std::uint32_t x = first[0]; x <= last[0]; ++x) cells.push_back(x + r * (y + r * z));
        }
    }
    return cells;
}

SampleResult sample_box(const LayeredGridIndex& idx, const PointSet& ps, const BoundingBox& q, std::size_t n) {
    check_query_box(q);
    if (n == 0) throw std::invalid_argument("sample size n must be >= 1");
    if (ps.size() != idx.size()) throw std::invalid_argument("grid index was built for a different point set");
    const auto& ci = idx.coord_indices();
    const auto cx = ps.column(ci[0]);
    const auto cy = ps.column(ci[1]);
    const auto cz = ps.column(ci[2]);
    const auto rid = idx.random_id();

    SampleResult result;
    for (std::uint32_t layer = 1; layer <= idx.layer_count(); ++layer) {
        const std::size_t layer_start = result.ids.size();
        for (std::uint32_t cell : cells_intersecting(idx, layer, q)) {
            const auto members = idx.cell_points(layer, cell);
            result.examined += members.size();
            for (PointId id : members) {
                if (cx[id] >= q.lo[0] && cx[id] <= q.hi[0] && cy[id] >= q.lo[1] && cy[id] <= q.hi[1] &&
                    cz[id] >= q.lo[2] && cz[id] <= q.hi[2]) {
                    result.ids.push_back(id);
                }
            }
        }
        std::sort(result.ids.begin() + static_cast<std::ptrdiff_t>(layer_start), result.ids.end(),
                  [&](PointId a, PointId b) { return rid[a] < rid[b]; });
        result.layers_used = layer;
        if (result.ids.size() >= n) break;
    }
    return result;
}

void save_grid(const LayeredGridIndex& idx, const std::string& path) {
    io::Writer w(path);
    w.magic(kGridMagic);
    w.put<std::uint16_t>(kGridVersion);
    w.put<std::uint64_t>(idx.base());
    for (std::size_t c : idx.coord_indices()) w.put<std::uint32_t>(static_cast<std::uint32_t>(c));
    w.put<std::uint32_t>(idx.layer_count());
    w.put<std::uint64_t>(idx.size());
    for (std::size_t a = 0; a < 3; ++a) {
        w.put<double>(idx.box().lo[a]);
        w.put<double>(idx.box().hi[a]);
    }
    w.put_array(idx.random_id());
    w.put_array(idx.layer());
    w.put_array(idx.contained_by());
    w.finish();
}

LayeredGridIndex load_grid(const std::string& path) {
    io::Reader r(path);
    r.expect_magic(kGridMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kGridVersion) r.fail("unsupported version " + std::to_string(version));
    LayeredGridIndex idx;
    idx.base_ = r.get<std::uint64_t>();
    for (auto& c : idx.coord_indices_) c = r.get<std::uint32_t>();
    idx.layer_count_ = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    if (idx.base_ < LayeredGridIndex::kBranching || n == 0 || idx.layer_count_ != grid_layer_count(n, idx.base_)) {
        r.fail("inconsistent grid header");
    }
    idx.box_.lo.resize(3);
    idx.box_.hi.resize(3);
    for (std::size_t a = 0; a < 3; ++a) {
        idx.box_.lo[a] = r.get<double>();
        idx.box_.hi[a] = r.get<double>();
    }
    if (r.remaining() != n * 9) r.fail("column sizes do not match the header");
    idx.random_id_.resize(n);
    idx.layer_.resize(n);
    idx.contained_by_.resize(n);
    r.get_array(std::span<std::uint32_t>(idx.random_id_));
    r.get_array(std::span<std::uint8_t>(idx.layer_));
    r.get_array(std::span<std::uint32_t>(idx.contained_by_));
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const auto rid = idx.random_id_[i];
        if (rid >= n || seen[rid]) r.fail("random_id is not a permutation");
        seen[rid] = true;
        const std::uint32_t l = idx.layer_[i];
        if (l < 1 || l > idx.layer_count_ || idx.contained_by_[i] >= LayeredGridIndex::cell_count(l)) {
            r.fail("layer/cell out of range at row " + std::to_string(i));
        }
    }
    idx.rebuild_storage();
    return idx;
}

} // namespace hypergrid
