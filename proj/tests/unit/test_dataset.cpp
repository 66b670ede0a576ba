#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hypergrid/dataset.hpp"
#include "support.hpp"

using namespace hypergrid;
using testing_support::TempDir;
using testing_support::uniform_points;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

} // namespace

TEST_CASE("csv with only a header loads as an empty set") {
    TempDir dir;
    write_text(dir.file("e.csv"), "x0,x1\n");
    const PointSet ps = load_points(dir.file("e.csv"));
    CHECK(ps.dim() == 2);
    CHECK(ps.size() == 0);
}

TEST_CASE("csv values load verbatim") {
    TempDir dir;
    write_text(dir.file("a.csv"), "a,b,c,d,e\n1,2,3,4,5\n0.5,-1e3,7,8,9\n-0,1.25,2,3,4\n");
    const PointSet ps = load_points(dir.file("a.csv"));
    REQUIRE(ps.dim() == 5);
    REQUIRE(ps.size() == 3);
    CHECK(ps.at(1, 1) == -1000.0);
    CHECK(ps.at(2, 1) == 1.25);
    CHECK(ps.at(0, 4) == 5.0);
}

TEST_CASE("csv label and target columns") {
    TempDir dir;
    write_text(dir.file("l.csv"), "x,label,y,target\n1,3,2,0.5\n4,-1,5,1.5\n");
    const PointSet ps = load_points(dir.file("l.csv"));
    CHECK(ps.dim() == 2);
    REQUIRE(ps.has_labels());
    REQUIRE(ps.has_targets());
    CHECK(ps.labels()[1] == -1);
    CHECK(ps.targets()[0] == 0.5);
    CHECK(ps.at(1, 1) == 5.0);
}

TEST_CASE("csv errors name the row") {
    TempDir dir;
    write_text(dir.file("bad.csv"), "x,y\n1,2\n3,nan\n");
    CHECK_THROWS_WITH_AS(load_points(dir.file("bad.csv")), doctest::Contains("row 1"), FormatError);
    write_text(dir.file("short.csv"), "x,y\n1,2\n3\n");
    CHECK_THROWS_AS(load_points(dir.file("short.csv")), FormatError);
    write_text(dir.file("junk.csv"), "x,y\n1,abc\n");
    CHECK_THROWS_AS(load_points(dir.file("junk.csv")), FormatError);
}

TEST_CASE("binary and csv round trips are exact") {
    TempDir dir;
    Rng rng(5);
    std::vector<double> rows(300 * 4);
    for (double& v : rows) v = rng.normal() * 1e3 + rng.uniform();
    std::vector<std::int32_t> labels(300);
    std::vector<double> targets(300);
    for (std::size_t i = 0; i < 300; ++i) {
        labels[i] = static_cast<std::int32_t>(i % 7) - 3;
        targets[i] = std::sin(static_cast<double>(i));
    }
    const PointSet ps = PointSet::from_rows(4, rows, labels, targets);
    save_points(ps, dir.file("p.bin"));
    save_points(ps, dir.file("p.csv"));
    CHECK(load_points(dir.file("p.bin")) == ps);
    CHECK(load_points(dir.file("p.csv")) == ps);
    CHECK(decode_points(encode_points(ps)) == ps);
}

TEST_CASE("binary header problems are rejected") {
    const PointSet ps = uniform_points(1, 10, 3);
    std::string bytes = encode_points(ps);
    CHECK_THROWS_WITH_AS(decode_points(bytes.substr(0, bytes.size() - 8)), doctest::Contains("dimension mismatch"),
                         FormatError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_points(bad), doctest::Contains("malformed header"), FormatError);
    std::string inf = bytes;
    const double v = std::numeric_limits<double>::infinity();
    std::memcpy(inf.data() + 17 + 8 * 4, &v, 8); // column 0, row 4
    CHECK_THROWS_WITH_AS(decode_points(inf), doctest::Contains("row 4"), FormatError);
}

TEST_CASE("point set validates its invariants") {
    CHECK_THROWS_AS(PointSet(0, {}), std::invalid_argument);
    CHECK_THROWS_AS(PointSet(2, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(PointSet(1, {1.0, NAN}), std::invalid_argument);
    CHECK_THROWS_AS(PointSet(1, {1.0, 2.0}, std::vector<std::int32_t>{1}), std::invalid_argument);
}

TEST_CASE("mixture generation is deterministic and labeled") {
    const std::vector<MixtureComponent> comps{{1.0, {0.0, 0.0}, {1.0, 1.0}}, {3.0, {10.0, 10.0}, {0.5, 0.5}}};
    const PointSet a = generate_mixture(42, 4000, 2, comps, 0.05);
    const PointSet b = generate_mixture(42, 4000, 2, comps, 0.05);
    const PointSet c = generate_mixture(43, 4000, 2, comps, 0.05);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    std::array<std::size_t, 3> counts{};
    for (auto l : a.labels()) ++counts[static_cast<std::size_t>(l + 1)];
    CHECK(counts[0] > 100);
    CHECK(counts[0] < 320);
    const double frac1 = static_cast<double>(counts[2]) / static_cast<double>(counts[1] + counts[2]);
    CHECK(frac1 == doctest::Approx(0.75).epsilon(0.05));
    // Outliers stay inside the padded envelope.
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.labels()[i] != -1) continue;
        CHECK(a.at(i, 0) >= -4.0 - 1.6);
        CHECK(a.at(i, 0) <= 12.0 + 1.6);
    }
    CHECK_THROWS_AS(generate_mixture(1, 10, 2, {{-1.0, {0, 0}, {1, 1}}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(generate_mixture(1, 10, 2, {{1.0, {0, 0}, {0, 1}}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(generate_mixture(1, 10, 2, comps, 1.0), std::invalid_argument);
}

TEST_CASE("pca rows are orthonormal and variances descend") {
    const std::vector<MixtureComponent> comps{{1.0, {0, 0, 0, 0}, {3.0, 1.0, 0.5, 0.1}}};
    const PointSet ps = generate_mixture(3, 5000, 4, comps, 0.0);
    const PcaFit fit = fit_pca(ps, 4);
    const auto& t = fit.transform;
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
            double dot = 0;
            for (std::size_t d = 0; d < 4; ++d) dot += t.at(a, d) * t.at(b, d);
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-9);
        }
    }
    for (std::size_t r = 1; r < 4; ++r) CHECK(fit.explained_variance[r] <= fit.explained_variance[r - 1]);
    CHECK(std::abs(t.at(0, 0)) > 0.99);
    // Projected variances equal the reported eigenvalues.
    const PointSet y = apply_transform(t, ps);
    for (std::size_t r = 0; r < 4; ++r) {
        const auto col = y.column(r);
        double mean = 0, var = 0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(col.size());
        for (double v : col) var += (v - mean) * (v - mean);
        var /= static_cast<double>(col.size() - 1);
        CHECK(var == doctest::Approx(fit.explained_variance[r]).epsilon(1e-9));
    }
}

TEST_CASE("pca of collinear points reports degenerate directions") {
    std::vector<double> rows;
    for (int i = 0; i < 50; ++i) {
        rows.push_back(i);
        rows.push_back(2.0 * i);
        rows.push_back(-1.0 * i);
    }
    const PcaFit fit = fit_pca(PointSet::from_rows(3, rows), 3);
    CHECK(fit.degenerate_directions == 2);
    CHECK(fit.explained_variance[1] < 1e-9 * fit.explained_variance[0]);
    CHECK_THROWS_AS(fit_pca(PointSet::from_rows(3, rows), 4), std::invalid_argument);
}

TEST_CASE("whitening gives identity covariance") {
    const std::vector<MixtureComponent> comps{{1.0, {1, 2, 3}, {5.0, 0.2, 1.0}}};
    PointSet ps = generate_mixture(9, 3000, 3, comps, 0.0);
    const LinearTransform w = fit_whitening(ps);
    CHECK(w.kind == TransformKind::whitening);
    const PointSet y = apply_transform(w, ps);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double cov = 0;
            for (std::size_t i = 0; i < y.size(); ++i) cov += y.at(i, a) * y.at(i, b);
            cov /= static_cast<double>(y.size() - 1);
            CHECK(std::abs(cov - (a == b ? 1.0 : 0.0)) < 1e-9);
        }
    }
    CHECK(y.labels().size() == ps.size());
}

TEST_CASE("bounding box is tight below and half-open above") {
    const PointSet ps = PointSet::from_rows(2, std::vector<double>{0, 5, 2, -1, 1, 3});
    const BoundingBox box = bounding_box(ps);
    CHECK(box.lo == std::vector<double>{0, -1});
    CHECK(box.hi[0] > 2.0);
    CHECK(box.hi[0] < 2.0 + 1e-8);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(box.contains_half_open(ps.row(i)));
    const PointSet single = PointSet::from_rows(1, std::vector<double>{7.0});
    const BoundingBox b1 = bounding_box(single);
    CHECK(b1.lo[0] == 7.0);
    CHECK(b1.hi[0] > 7.0);
    CHECK_THROWS(bounding_box(PointSet(1, {})));
}
