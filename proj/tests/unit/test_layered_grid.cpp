#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "hypergrid/layered_grid.hpp"
#include "support.hpp"

using namespace hypergrid;
using testing_support::TempDir;
using testing_support::uniform_points;

namespace {

const std::array<std::size_t, 3> kXyz{0, 1, 2};

BoundingBox random_box(Rng& rng, const BoundingBox& within) {
    std::vector<double> lo(3), hi(3);
    for (std::size_t a = 0; a < 3; ++a) {
        const double u = rng.uniform(within.lo[a], within.hi[a]);
        const double v = rng.uniform(within.lo[a], within.hi[a]);
        lo[a] = std::min(u, v);
        hi[a] = std::max(u, v);
    }
    return {lo, hi};
}

// Full-scan reference: in-box points of layers 1..L*, where L* is the first
// layer at which the running count reaches n.
std::vector<PointId> scan_sample(const LayeredGridIndex& idx, const PointSet& ps, const BoundingBox& q, std::size_t n) {
    std::vector<PointId> hits;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double xyz[3] = {ps.at(i, 0), ps.at(i, 1), ps.at(i, 2)};
        if (q.contains_closed(xyz)) hits.push_back(static_cast<PointId>(i));
    }
    std::sort(hits.begin(), hits.end(), [&](PointId a, PointId b) { return idx.random_id()[a] < idx.random_id()[b]; });
    std::vector<PointId> out;
    for (std::uint32_t layer = 1; layer <= idx.layer_count(); ++layer) {
        for (PointId id : hits) {
            if (idx.layer()[id] == layer) out.push_back(id);
        }
        if (out.size() >= n) break;
    }
    return out;
}

} // namespace

TEST_CASE("layer count follows the geometric capacities") {
    CHECK(grid_layer_count(1, 1024) == 1);
    CHECK(grid_layer_count(1024, 1024) == 1);
    CHECK(grid_layer_count(1025, 1024) == 2);
    CHECK(grid_layer_count(9216, 1024) == 2);
    CHECK(grid_layer_count(9217, 1024) == 3);
    CHECK(grid_layer_count(1'000'000, 1024) == 5);
}

TEST_CASE("1024 points fill a single 2x2x2 layer") {
    const PointSet ps = uniform_points(1, 1024, 3);
    const auto idx = build_grid(ps, kXyz, 1024, 7);
    CHECK(idx.layer_count() == 1);
    CHECK(LayeredGridIndex::resolution(1) == 2);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        CHECK(idx.layer()[i] == 1);
        CHECK(idx.contained_by()[i] < 8);
    }
}

TEST_CASE("9216 points split 1024 / 8192 over 2^3 and 4^3 grids") {
    const PointSet ps = uniform_points(2, 9216, 3);
    const auto idx = build_grid(ps, kXyz, 1024, 3);
    REQUIRE(idx.layer_count() == 2);
    CHECK(idx.layer_population(1) == 1024);
    CHECK(idx.layer_population(2) == 8192);
    CHECK(LayeredGridIndex::cell_count(1) == 8);
    CHECK(LayeredGridIndex::cell_count(2) == 64);
    std::vector<bool> seen(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto rid = idx.random_id()[i];
        CHECK_FALSE(seen[rid]);
        seen[rid] = true;
        CHECK(idx.layer()[i] == (rid < 1024 ? 1 : 2));
        const double xyz[3] = {ps.at(i, 0), ps.at(i, 1), ps.at(i, 2)};
        CHECK(idx.contained_by()[i] == idx.cell_of(idx.layer()[i], xyz));
    }
}

TEST_CASE("a single point sits in layer 1") {
    const PointSet ps = PointSet::from_rows(3, std::vector<double>{0.3, 0.4, 0.5});
    const auto idx = build_grid(ps, kXyz, 1024, 0);
    CHECK(idx.layer_count() == 1);
    CHECK(idx.layer()[0] == 1);
    CHECK(idx.random_id()[0] == 0);
    const auto r = sample_box(idx, ps, BoundingBox({0, 0, 0}, {1, 1, 1}), 5);
    CHECK(r.ids == std::vector<PointId>{0});
}

TEST_CASE("grid build rejects bad arguments") {
    const PointSet ps = uniform_points(1, 10, 3);
    CHECK_THROWS_AS(build_grid(ps, kXyz, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(ps, {0, 1, 3}, 1024, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(PointSet(3, {}), kXyz, 1024, 0), std::invalid_argument);
}

TEST_CASE("cells_intersecting matches enumeration over all cells") {
    const PointSet ps = uniform_points(4, 5000, 3, -5.0, 5.0);
    const auto idx = build_grid(ps, kXyz, 8, 1);
    REQUIRE(idx.layer_count() >= 5);
    Rng rng(11);
    const auto& box = idx.box();
    CHECK(cells_intersecting(idx, 1, box).size() == 8);
    for (int t = 0; t < 50; ++t) {
        const BoundingBox q = random_box(rng, box);
        const std::uint32_t layer = 5;
        const std::uint32_t r = LayeredGridIndex::resolution(layer);
        std::vector<std::uint32_t> expected;
        for (std::uint32_t c = 0; c < LayeredGridIndex::cell_count(layer); ++c) {
            const std::uint32_t ix[3] = {c % r, (c / r) % r, c / (r * r)};
            bool meets = true;
            for (std::size_t a = 0; a < 3; ++a) {
                const double w = (box.hi[a] - box.lo[a]) / r;
                const double clo = box.lo[a] + w * ix[a];
                const double chi = box.lo[a] + w * (ix[a] + 1);
                meets = meets && q.lo[a] < chi && q.hi[a] >= clo;
            }
            if (meets) expected.push_back(c);
        }
        CHECK(cells_intersecting(idx, layer, q) == expected);
    }
    // A box strictly inside one cell of layer 2.
    const double w = (box.hi[0] - box.lo[0]) / 4;
    const BoundingBox inner({box.lo[0] + 1.2 * w, box.lo[1] + 0.1 * w, box.lo[2] + 3.5 * w},
                            {box.lo[0] + 1.8 * w, box.lo[1] + 0.2 * w, box.lo[2] + 3.6 * w});
    CHECK(cells_intersecting(idx, 2, inner) == std::vector<std::uint32_t>{1 + 4 * (0 + 4 * 3)});
}

TEST_CASE("global sample of 1024 returns the layer-1 points") {
    const PointSet ps = uniform_points(5, 9216, 3);
    const auto idx = build_grid(ps, kXyz, 1024, 9);
    const auto r = sample_box(idx, ps, idx.box(), 1024);
    CHECK(r.ids.size() == 1024);
    CHECK(r.layers_used == 1);
    for (PointId id : r.ids) CHECK(idx.layer()[id] == 1);
    CHECK(std::is_sorted(r.ids.begin(), r.ids.end(),
                         [&](PointId a, PointId b) { return idx.random_id()[a] < idx.random_id()[b]; }));
}

TEST_CASE("sample_box equals the full-scan reference") {
    const PointSet ps = uniform_points(6, 30000, 4);
    const auto idx = build_grid(ps, kXyz, 64, 2);
    Rng rng(3);
    for (int t = 0; t < 60; ++t) {
        const BoundingBox q = random_box(rng, idx.box());
        const std::size_t n = 1 + rng.below(3000);
        const auto r = sample_box(idx, ps, q, n);
        CHECK(r.ids == scan_sample(idx, ps, q, n));
    }
    const BoundingBox octant({0, 0, 0}, {0.5, 0.5, 0.5});
    CHECK(sample_box(idx, ps, octant, 100).ids == scan_sample(idx, ps, octant, 100));
    CHECK(sample_box(idx, ps, BoundingBox({2, 2, 2}, {3, 3, 3}), 10).ids.empty());
    CHECK_THROWS_AS(sample_box(idx, ps, BoundingBox({0.5, 0, 0}, {0.4, 1, 1}), 10), std::invalid_argument);
    CHECK_THROWS_AS(sample_box(idx, ps, octant, 0), std::invalid_argument);
}

TEST_CASE("sample results are layer prefixes and exhaust to the full scan") {
    const PointSet ps = uniform_points(8, 20000, 3);
    const auto idx = build_grid(ps, kXyz, 32, 4);
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
        const BoundingBox q = random_box(rng, idx.box());
        const auto small = sample_box(idx, ps, q, 10).ids;
        const auto large = sample_box(idx, ps, q, 500).ids;
        CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end(),
                            [&](PointId a, PointId b) { return idx.random_id()[a] < idx.random_id()[b]; }));
        auto all = sample_box(idx, ps, q, ps.size()).ids;
        std::sort(all.begin(), all.end());
        std::vector<PointId> expected;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const double xyz[3] = {ps.at(i, 0), ps.at(i, 1), ps.at(i, 2)};
            if (q.contains_closed(xyz)) expected.push_back(static_cast<PointId>(i));
        }
        CHECK(all == expected);
    }
}

TEST_CASE("grid sidecar round trip and corruption checks") {
    TempDir dir;
    const PointSet ps = uniform_points(9, 5000, 3);
    const auto idx = build_grid(ps, kXyz, 64, 12);
    save_grid(idx, dir.file("g.hglg"));
    const auto loaded = load_grid(dir.file("g.hglg"));
    CHECK(std::ranges::equal(loaded.random_id(), idx.random_id()));
    CHECK(std::ranges::equal(loaded.layer(), idx.layer()));
    CHECK(std::ranges::equal(loaded.contained_by(), idx.contained_by()));
    CHECK(loaded.box().lo == idx.box().lo);
    const BoundingBox q({0.1, 0.2, 0.3}, {0.6, 0.7, 0.9});
    CHECK(sample_box(loaded, ps, q, 200).ids == sample_box(idx, ps, q, 200).ids);

    {
        std::ofstream out(dir.file("bad.hglg"), std::ios::binary);
        out << "HGKD";
    }
    CHECK_THROWS_WITH_AS(load_grid(dir.file("bad.hglg")), doctest::Contains("bad.hglg"), FormatError);
    CHECK_THROWS_AS(load_grid(dir.file("missing.hglg")), FormatError);
}
