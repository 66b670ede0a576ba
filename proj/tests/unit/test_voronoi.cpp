#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hypergrid/voronoi.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hypergrid;
using testing_support::TempDir;
using testing_support::uniform_points;
using namespace testing_support::oracles;

TEST_CASE("seed picking") {
    const PointSet ps = uniform_points(1, 1000, 2);
    const auto all = pick_seeds(ps, 1000, 3);
    CHECK(all.size() == 1000);
    CHECK(all.back() == 999);
    CHECK(pick_seeds(ps, 1, 3).size() == 1);
    const auto a = pick_seeds(ps, 100, 7);
    CHECK(a == pick_seeds(ps, 100, 7));
    CHECK(a != pick_seeds(ps, 100, 8));
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
    CHECK_THROWS_AS(pick_seeds(ps, 1001, 1), std::invalid_argument);
    CHECK_THROWS_AS(pick_seeds(ps, 0, 1), std::invalid_argument);
}

TEST_CASE("assignment equals the brute-force nearest seed") {
    const PointSet ps = uniform_points(2, 20'000, 3);
    const PointSet seeds = ps.subset(pick_seeds(ps, 200, 1));
    const KdTree tree = build_kdtree(seeds);
    const auto got = assign_cells(ps, tree);
    for (std::size_t i = 0; i < ps.size(); ++i) REQUIRE(got[i] == brute_nearest(seeds, ps.row(i)));
    CHECK(assign_cells(ps, tree, 4) == got);

    // Equidistant between seeds 3 and 7: the smaller id wins.
    std::vector<double> rows(8 * 2, 100.0);
    rows[3 * 2] = -1;
    rows[3 * 2 + 1] = 0;
    rows[7 * 2] = 1;
    rows[7 * 2 + 1] = 0;
    for (int s = 0; s < 8; ++s) {
        if (s != 3 && s != 7) rows[s * 2] += s;
    }
    const PointSet tie_seeds = PointSet::from_rows(2, rows);
    const PointSet q = PointSet::from_rows(2, std::vector<double>{0, 0, -1, 0});
    const auto t = assign_cells(q, build_kdtree(tie_seeds));
    CHECK(t == std::vector<std::uint32_t>{3, 3});
}

TEST_CASE("adjacency of tiny configurations") {
    const PointSet two = PointSet::from_rows(2, std::vector<double>{0, 0, 1, 0});
    const PointSet probes = uniform_points(3, 100, 2);
    auto adj = build_adjacency(probes, build_kdtree(two), 100, 1);
    CHECK(edge_set(adj) == std::set<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}});
    const PointSet tri = PointSet::from_rows(2, std::vector<double>{0.2, 0.2, 0.8, 0.25, 0.5, 0.8});
    adj = build_adjacency(uniform_points(4, 5000, 2), build_kdtree(tri), 5000, 2);
    CHECK(edge_set(adj).size() == 3);
    const PointSet one = PointSet::from_rows(2, std::vector<double>{0.5, 0.5});
    CHECK(build_adjacency(probes, build_kdtree(one), 10, 1).edge_count() == 0);
}

TEST_CASE("2-D adjacency recovers the Delaunay graph on interior cells") {
    const PointSet ps = uniform_points(5, 50'000, 2);
    const PointSet seeds = ps.subset(pick_seeds(ps, 50, 9));
    const Adjacency adj = build_adjacency(ps, build_kdtree(seeds), 1'000'000, 4);
    const auto got = edge_set(adj);
    const auto truth = delaunay_oracle(seeds, hull_vertices(seeds));
    std::size_t interior = 0, found = 0;
    for (const auto& e : truth.edges) {
        if (!truth.interior.count(e.first) || !truth.interior.count(e.second)) continue;
        ++interior;
        found += got.count(e);
    }
    MESSAGE("interior Delaunay edges found " << found << " of " << interior);
    REQUIRE(interior > 40);
    CHECK(static_cast<double>(found) / static_cast<double>(interior) >= 0.95);
    // Symmetric, no self edges.
    for (std::uint32_t a = 0; a < adj.seed_count(); ++a) {
        for (auto b : adj.of(a)) {
            CHECK(a != b);
            const auto back = adj.of(b);
            CHECK(std::binary_search(back.begin(), back.end(), a));
        }
    }
}

TEST_CASE("volumes: single seed, symmetry, lattice, closure") {
    const BoundingBox unit({0, 0}, {1, 1});
    const PointSet one = PointSet::from_rows(2, std::vector<double>{0.3, 0.3});
    const auto v1 = estimate_volumes(build_kdtree(one), unit, 1000, 1);
    CHECK(v1.volume[0] == 1.0);
    CHECK(v1.std_error[0] == 0.0);

    const PointSet mirror = PointSet::from_rows(2, std::vector<double>{0.25, 0.5, 0.75, 0.5});
    const auto v2 = estimate_volumes(build_kdtree(mirror), unit, 100'000, 2);
    CHECK(std::abs(v2.volume[0] - v2.volume[1]) <= 3 * std::hypot(v2.std_error[0], v2.std_error[1]));

    std::vector<double> lattice;
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) {
            lattice.push_back((x + 0.5) / 5);
            lattice.push_back((y + 0.5) / 5);
        }
    }
    const auto v3 = estimate_volumes(build_kdtree(PointSet::from_rows(2, lattice)), unit, 250'000, 3, 2);
    std::uint64_t hits = 0;
    double total = 0;
    for (std::size_t c = 0; c < 25; ++c) {
        CHECK(std::abs(v3.volume[c] - 1.0 / 25) <= 3 * v3.std_error[c]);
        hits += v3.hits[c];
        total += v3.volume[c];
    }
    CHECK(hits == v3.samples);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(estimate_volumes(build_kdtree(PointSet::from_rows(2, lattice)), unit, 250'000, 3, 1).hits == v3.hits);
}

TEST_CASE("Morton order") {
    // Corners given out of order.
    const PointSet corners = PointSet::from_rows(2, std::vector<double>{1, 1, 0, 1, 1, 0, 0, 0});
    CHECK(order_cells(corners) == std::vector<std::uint32_t>{3, 2, 1, 0});
    CHECK(order_cells(PointSet::from_rows(2, std::vector<double>{4, 4})) == std::vector<std::uint32_t>{0});

    const PointSet seeds = uniform_points(6, 2000, 5);
    const auto order = order_cells(seeds);
    auto mean_step = [&](const std::vector<std::uint32_t>& o) {
        double sum = 0;
        for (std::size_t i = 1; i < o.size(); ++i) {
            double d2 = 0;
            for (std::size_t d = 0; d < 5; ++d) d2 += std::pow(seeds.at(o[i], d) - seeds.at(o[i - 1], d), 2);
            sum += std::sqrt(d2);
        }
        return sum / static_cast<double>(o.size() - 1);
    };
    std::vector<std::uint32_t> shuffled = order;
    Rng rng(1);
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    CHECK(mean_step(order) < mean_step(shuffled));
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("located cells are exact") {
    const PointSet ps = uniform_points(7, 20'000, 3);
    VoronoiBuildConfig cfg;
    cfg.n_seed = 400;
    cfg.seed = 3;
    const VoronoiIndex idx = build_voronoi(ps, cfg);
    Rng rng(5);
    std::size_t misses = 0;
    for (int t = 0; t < 300; ++t) {
        const std::vector<double> p{rng.uniform(), rng.uniform(), rng.uniform()};
        const auto r = locate_cell(idx, p);
        CHECK(r.cell == brute_nearest(idx.seeds, p));
        misses += r.walk_miss;
    }
    CHECK(misses < 15);
    for (std::uint32_t s : {0u, 10u, 399u}) CHECK(locate_cell(idx, idx.seeds.row(s)).cell == s);

    cfg.n_seed = 1;
    const VoronoiIndex single = build_voronoi(ps, cfg);
    const double p[] = {0.1, 0.2, 0.3};
    const auto r = locate_cell(single, p);
    CHECK(r.cell == 0);
    CHECK(r.steps == 0);
    CHECK(std::all_of(single.assignment.begin(), single.assignment.end(), [](auto c) { return c == 0; }));
}

TEST_CASE("Voronoi polytope query equals the full scan") {
    const std::vector<MixtureComponent> comps{{1, {0, 0, 0, 0, 0}, {1, 1, 1, 1, 1}}, {1, {4, 0, 4, 0, 0}, {0.5, 1, 0.5, 1, 1}}};
    const PointSet ps = generate_mixture(8, 30'000, 5, comps, 0.01);
    VoronoiBuildConfig cfg;
    cfg.n_seed = 300;
    cfg.seed = 2;
    const VoronoiIndex idx = build_voronoi(ps, cfg);
    Rng rng(3);
    for (int t = 0; t < 40; ++t) {
        std::vector<Halfspace> hs;
        for (int f = 0; f < 4; ++f) {
            Halfspace h;
            for (int d = 0; d < 5; ++d) h.normal.push_back(rng.normal());
            h.offset = rng.uniform(-1, 3);
            hs.push_back(h);
        }
        const Polytope poly(hs);
        const auto got = voronoi_query_polytope(idx, ps, poly, 8);
        REQUIRE(got.ids == scan_polytope(ps, poly));
    }
    const auto all = voronoi_query_polytope(idx, ps, Polytope::whole_space(5), 8);
    CHECK(all.ids.size() == ps.size());
    CHECK(all.stats.cells_partial == 0);
    const Polytope empty({{{1, 0, 0, 0, 0}, -100.0}});
    CHECK(voronoi_query_polytope(idx, ps, empty, 8).ids.empty());
}

TEST_CASE("cells have more neighbors in 5-D than in 2-D") {
    auto interior_mean_degree = [](std::size_t dim) {
        const PointSet ps = uniform_points(10 + dim, 60'000, dim);
        VoronoiBuildConfig cfg;
        cfg.n_seed = 500;
        cfg.probe_budget = 200'000;
        const VoronoiIndex idx = build_voronoi(ps, cfg);
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < idx.seed_count(); ++s) {
            bool interior = true;
            for (std::size_t d = 0; d < dim; ++d) interior = interior && std::abs(idx.seeds.at(s, d) - 0.5) < 0.25;
            if (!interior) continue;
            sum += static_cast<double>(idx.adjacency.of(s).size());
            ++count;
        }
        return sum / static_cast<double>(std::max<std::size_t>(count, 1));
    };
    const double d2 = interior_mean_degree(2);
    const double d5 = interior_mean_degree(5);
    MESSAGE("mean interior degree 2-D " << d2 << ", 5-D " << d5);
    CHECK(d2 == doctest::Approx(6.0).epsilon(0.15));
    CHECK(d5 > d2);
    CHECK(d5 >= 20);
    CHECK(d5 <= 100);
}

TEST_CASE("whitened index assigns in the whitened space") {
    const std::vector<MixtureComponent> comps{{1, {0, 0}, {100, 1}}};
    const PointSet ps = generate_mixture(9, 5000, 2, comps, 0.0);
    VoronoiBuildConfig cfg;
    cfg.n_seed = 50;
    cfg.whiten = true;
    const VoronoiIndex idx = build_voronoi(ps, cfg);
    REQUIRE(idx.transform.has_value());
    const PointSet white = apply_transform(*idx.transform, ps);
    for (std::size_t i = 0; i < ps.size(); i += 7) CHECK(idx.assignment[i] == brute_nearest(idx.seeds, white.row(i)));
    CHECK(locate_cell(idx, ps.row(123)).cell == idx.assignment[123]);
}

TEST_CASE("Voronoi sidecar round trip") {
    TempDir dir;
    const PointSet ps = uniform_points(12, 8000, 3);
    VoronoiBuildConfig cfg;
    cfg.n_seed = 100;
    cfg.whiten = true;
    const VoronoiIndex idx = build_voronoi(ps, cfg);
    save_voronoi(idx, dir.file("v.hgvr"));
    const VoronoiIndex back = load_voronoi(dir.file("v.hgvr"), ps);
    CHECK(back.seed_ids == idx.seed_ids);
    CHECK(back.seeds == idx.seeds);
    CHECK(back.assignment == idx.assignment);
    CHECK(back.adjacency.neighbors == idx.adjacency.neighbors);
    CHECK(back.volumes.volume == idx.volumes.volume);
    CHECK(back.cell_order == idx.cell_order);
    CHECK(back.members == idx.members);
    CHECK(back.transform->matrix == idx.transform->matrix);
    CHECK_THROWS_AS(load_voronoi(dir.file("v.hgvr"), uniform_points(1, 10, 3)), FormatError);
}
