#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <iterator>
#include <sstream>

#include "hypergrid/bench.hpp"
#include "hypergrid/cli.hpp"
#include "hypergrid/cluster_bst.hpp"
#include "hypergrid/estimate.hpp"
#include "hypergrid/knn.hpp"
#include "hypergrid/layered_grid.hpp"
#include "hypergrid/voronoi.hpp"
#include "support.hpp"

using namespace hypergrid;
using testing_support::TempDir;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::istringstream l(line);
        std::string c;
        while (std::getline(l, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

} // namespace

TEST_CASE("generate is deterministic for a seed") {
    TempDir dir;
    const auto a = dir.file("a.hgps"), b = dir.file("b.hgps"), c = dir.file("c.hgps");
    CHECK(cli({"generate", "--n", "5000", "--dim", "5", "--components", "3", "--seed", "7", "-o", a}).code == 0);
    CHECK(cli({"--seed", "7", "generate", "--n", "5000", "--dim", "5", "--components", "3", "-o", b}).code == 0);
    CHECK(cli({"generate", "--n", "5000", "--dim", "5", "--components", "3", "--seed", "8", "-o", c}).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
    const auto ps = load_points(a);
    CHECK(ps == generate_mixture(7, 5000, 5, separated_components(Rng::derive(7, 1), 5, 3, 6.0), 0.0));
}

TEST_CASE("usage and data errors map to exit codes") {
    auto r = cli({"knn", "--bogus"});
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(cli({}).code == 1);
    CHECK(cli({"--format", "xml", "kd-build", "x"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
    TempDir dir;
    r = cli({"kd-build", dir.file("missing.hgps")});
    CHECK(r.code == 2);
    CHECK(r.err.find("missing.hgps") != std::string::npos);
    std::ofstream(dir.file("bad.csv")) << "x,y\n1,oops\n";
    CHECK(cli({"kd-build", dir.file("bad.csv")}).code == 2);
}

TEST_CASE("index and query commands match the module operations") {
    TempDir dir;
    const auto data = dir.file("d.hgps");
    REQUIRE(cli({"generate", "--n", "20000", "--dim", "3", "--seed", "3", "-o", data}).code == 0);
    const auto ps = load_points(data);
    REQUIRE(cli({"grid-build", data, "--seed", "4"}).code == 0);
    REQUIRE(cli({"kd-build", data}).code == 0);
    const auto tree = build_kdtree(ps);

    SUBCASE("sidecars") {
        CHECK(slurp(data + ".hglg") == [&] {
            save_grid(build_grid(ps, {0, 1, 2}, 1024, 4), dir.file("g.hglg"));
            return slurp(dir.file("g.hglg"));
        }());
        save_kdtree(tree, dir.file("t.hgkd"));
        CHECK(slurp(data + ".hgkd") == slurp(dir.file("t.hgkd")));
    }

    SUBCASE("knn") {
        const auto r = cli({"--format", "csv", "knn", data, "--query", "0.5,-1,2", "--k", "6"});
        REQUIRE(r.code == 0);
        const auto rows = csv_rows(r.out);
        const auto nn = knn_search(tree, std::vector<double>{0.5, -1, 2}, 6);
        REQUIRE(rows.size() == 7);
        CHECK(rows[0] == std::vector<std::string>{"rank", "id", "distance"});
        for (std::size_t i = 0; i < nn.size(); ++i) {
            CHECK(std::stoul(rows[i + 1][1]) == nn[i].id);
            CHECK(std::stod(rows[i + 1][2]) == nn[i].distance);
        }
        CHECK(cli({"knn", data, "--query", "1,2", "--k", "1"}).code == 2);
    }

    SUBCASE("sample") {
        const auto grid = load_grid(data + ".hglg");
        const auto direct = sample_box(grid, ps, BoundingBox{{-2, -2, -2}, {2, 2, 2}}, 50);
        const auto r = cli({"--format", "csv", "sample", data, "--lo", "-2,-2,-2", "--hi", "2,2,2", "--n", "50"});
        REQUIRE(r.code == 0);
        const auto rows = csv_rows(r.out);
        REQUIRE(rows.size() == direct.ids.size() + 1);
        for (std::size_t i = 0; i < direct.ids.size(); ++i) CHECK(std::stoul(rows[i + 1][0]) == direct.ids[i]);
        const auto j = cli({"--format", "json", "sample", data, "--lo", "-2,-2,-2", "--hi", "2,2,2", "--n", "50"});
        CHECK(j.code == 0);
        CHECK(j.out.front() == '[');
    }

    SUBCASE("query") {
        const auto r = cli({"--format", "csv", "query", data, "--halfspace", "1,1,0:0.5", "--halfspace", "0,0,-1:1"});
        REQUIRE(r.code == 0);
        const auto rows = csv_rows(r.out);
        const auto direct = scan_polytope(ps, Polytope({{{1, 1, 0}, 0.5}, {{0, 0, -1}, 1}}));
        REQUIRE(rows.size() == direct.size() + 1);
        for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::stoul(rows[i + 1][0]) == direct[i]);
        CHECK(cli({"query", data}).code == 1);
        CHECK(cli({"query", data, "--halfspace", "1,0:0"}).code == 2);
    }
}

TEST_CASE("voronoi, cluster and estimate commands") {
    TempDir dir;
    const auto data = dir.file("d.hgps");
    REQUIRE(cli({"generate", "--n", "6000", "--dim", "3", "--components", "2", "--separation", "8", "--seed", "5", "-o", data}).code == 0);
    const auto ps = load_points(data);
    REQUIRE(cli({"--seed", "9", "voronoi", "build", data, "--seeds", "150"}).code == 0);
    VoronoiBuildConfig vc;
    vc.n_seed = 150;
    vc.seed = 9;
    const auto idx = build_voronoi(ps, vc);
    save_voronoi(idx, dir.file("direct.hgvr"));
    CHECK(slurp(data + ".hgvr") == slurp(dir.file("direct.hgvr")));

    const auto loc = cli({"--format", "csv", "voronoi", "locate", data, "--point", "0.1,0.2,0.3"});
    REQUIRE(loc.code == 0);
    const auto direct = locate_cell(idx, std::vector<double>{0.1, 0.2, 0.3});
    CHECK(csv_rows(loc.out)[1][0] == std::to_string(direct.cell));

    const auto dens = cli({"--format", "csv", "voronoi", "density", data});
    CHECK(csv_rows(dens.out).size() == 151);

    const auto clusters = dir.file("clusters.csv");
    const auto cl = cli({"--format", "csv", "cluster", data, "--index", data + ".hgvr", "-o", clusters});
    REQUIRE(cl.code == 0);
    const auto forest = build_bst(idx);
    const auto per_point = point_clusters(forest, idx.assignment);
    const auto rows = csv_rows(slurp(clusters));
    REQUIRE(rows.size() == ps.size() + 1);
    for (std::size_t i = 0; i < ps.size(); i += 97) CHECK(std::stoul(rows[i + 1][1]) == per_point[i]);
    const auto purity = evaluate_purity(forest, idx.assignment, ps.labels());
    CHECK(cl.out.find("accuracy " + [&] {
        std::ostringstream s;
        s << purity.accuracy;
        return s.str();
    }()) != std::string::npos);

    // Estimation: reference targets from a smooth function.
    std::vector<double> t(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) t[i] = ps.at(i, 0) - 0.5 * ps.at(i, 1) + 0.1 * ps.at(i, 2) * ps.at(i, 2);
    save_points(ps.with_targets(t), dir.file("ref.hgps"));
    const auto unknown = testing_support::uniform_points(6, 300, 3, -2.0, 2.0);
    save_points(unknown, dir.file("unknown.hgps"));
    const auto est = cli({"estimate", "--ref", dir.file("ref.hgps"), "--unknown", dir.file("unknown.hgps"), "--k", "30", "--order", "2",
                          "-o", dir.file("out.hgps")});
    REQUIRE(est.code == 0);
    FitConfig cfg;
    cfg.k = 30;
    cfg.order = 2;
    const auto expected = estimate_all(ReferenceSet(ps.with_targets(t)), unknown, cfg);
    const auto got = load_points(dir.file("out.hgps"));
    REQUIRE(got.has_targets());
    for (std::size_t i = 0; i < unknown.size(); ++i) CHECK(got.targets()[i] == expected.estimates[i].value);

    const auto ev = cli({"--format", "json", "--seed", "2", "estimate", "eval", "--ref", dir.file("ref.hgps"), "--folds", "3", "--k", "20",
                         "--bootstrap", "100"});
    REQUIRE(ev.code == 0);
    FitConfig a;
    a.k = 20;
    a.order = 0;
    FitConfig b = a;
    b.order = 1;
    const auto rep = evaluate_estimator(ps.with_targets(t), a, b, 3, 2, 100, 1);
    std::ostringstream want;
    want << "\"improvement_percent\":" << nlohmann::ordered_json(rep.improvement_percent).dump();
    CHECK(ev.out.find(want.str()) != std::string::npos);
    CHECK(ev.out.find("\"points\":6000") != std::string::npos);
    CHECK(rep.improvement_percent > 0.0);
}

TEST_CASE("bench kd writes one row per selectivity") {
    TempDir dir;
    const auto report = dir.file("sel.csv");
    const auto r = cli({"--format", "csv", "bench", "kd", "--n", "20000", "--dim", "3", "--queries", "2", "--selectivities",
                        "0.001,0.01,0.1,0.25,0.5", "--selectivity-report", report});
    REQUIRE(r.code == 0);
    const auto rows = csv_rows(r.out);
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].back() == "true");
    const auto rep = csv_rows(slurp(report));
    REQUIRE(rep.size() == 6);
    CHECK(rep[0] == std::vector<std::string>{"selectivity", "speedup", "points_tested"});
}

TEST_CASE("pca, whiten and import round trips") {
    TempDir dir;
    const auto data = dir.file("d.csv");
    REQUIRE(cli({"generate", "--n", "2000", "--dim", "4", "--seed", "1", "-o", data}).code == 0);
    const auto ps = load_points(data);
    REQUIRE(cli({"import", data, "-o", dir.file("d.hgps")}).code == 0);
    CHECK(load_points(dir.file("d.hgps")) == ps);
    REQUIRE(cli({"pca", data, "--k", "2", "-o", dir.file("p.hgps")}).code == 0);
    CHECK(load_points(dir.file("p.hgps")) == apply_transform(fit_pca(ps, 2).transform, ps));
    REQUIRE(cli({"whiten", data, "-o", dir.file("w.hgps")}).code == 0);
    CHECK(load_points(dir.file("w.hgps")) == apply_transform(fit_whitening(ps), ps));
}

TEST_CASE("random polytopes hit their target selectivity") {
    const auto ps = testing_support::uniform_points(31, 50'000, 4);
    const auto tree = build_kdtree(ps);
    const std::vector<double> sel{0.01, 0.1};
    const auto trials = run_polytope_trials(ps, tree, sel, 4, 5);
    REQUIRE(trials.size() == 8);
    for (const auto& t : trials) {
        CHECK(t.exact);
        CHECK(t.selectivity == doctest::Approx(t.target).epsilon(0.35));
    }
    const auto rows = summarize_trials(trials);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].queries == 4);
    CHECK(rows[1].target == 0.1);
}
