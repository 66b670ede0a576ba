#include "hypergrid/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hypergrid/rng.hpp"

namespace hypergrid {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

Polytope random_polytope(const PointSet& ps, double selectivity, std::uint64_t seed) {
    if (ps.empty()) throw std::invalid_argument("empty dataset");
    if (!(selectivity > 0.0 && selectivity <= 1.0)) throw std::invalid_argument("selectivity must be in (0, 1]");
    const std::size_t dim = ps.dim();
    Rng rng(seed);
    const auto center = ps.row(rng.below(ps.size()));

    // Random orthonormal frame (Gram-Schmidt on Gaussian vectors); faces come in +/- pairs.
    std::vector<std::vector<double>> frame;
    while (frame.size() < dim) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        for (const auto& u : frame) {
            const double c = dot(u, v);
            for (std::size_t d = 0; d < dim; ++d) v[d] -= c * u[d];
        }
        const double norm = std::sqrt(dot(v, v));
        if (norm < 1e-6) continue;
        for (double& x : v) x /= norm;
        frame.push_back(std::move(v));
    }
    std::vector<std::vector<double>> normals;
    for (const auto& u : frame) {
        normals.push_back(u);
        std::vector<double> neg(u);
        for (double& x : neg) x = -x;
        normals.push_back(std::move(neg));
    }
    const std::size_t faces = normals.size();
    std::vector<double> base(faces);
    for (std::size_t f = 0; f < faces; ++f) base[f] = dot(normals[f], center);

    const std::size_t want = std::max<std::size_t>(20'000, static_cast<std::size_t>(std::ceil(50.0 / selectivity)));
    const std::size_t sub = std::min(ps.size(), want);
    // Signed distance of each subsample point beyond its worst face: the point is inside iff r >= reach.
    std::vector<double> reach(sub);
    for (std::size_t i = 0; i < sub; ++i) {
        const auto x = ps.row(sub == ps.size() ? i : rng.below(ps.size()));
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < faces; ++f) worst = std::max(worst, dot(normals[f], x) - base[f]);
        reach[i] = worst;
    }
    const auto k = std::min(sub - 1, static_cast<std::size_t>(std::ceil(selectivity * static_cast<double>(sub))) - 1);
    std::nth_element(reach.begin(), reach.begin() + static_cast<std::ptrdiff_t>(k), reach.end());
    const double r = std::max(0.0, reach[k]);

    std::vector<Halfspace> hs;
    for (std::size_t f = 0; f < faces; ++f) hs.push_back({normals[f], base[f] + r});
    return Polytope(std::move(hs));
}

std::vector<PolytopeTrial> run_polytope_trials(const PointSet& ps, const KdTree& tree, std::span<const double> selectivities,
                                               std::size_t queries_per_selectivity, std::uint64_t seed) {
    std::vector<PolytopeTrial> out;
    std::uint64_t stream = 0;
    for (double target : selectivities) {
        for (std::size_t q = 0; q < queries_per_selectivity; ++q) {
            const Polytope poly = random_polytope(ps, target, Rng::derive(seed, stream++));
            PolytopeTrial t;
            t.target = target;
            auto t0 = std::chrono::steady_clock::now();
            const PolytopeResult kd = query_polytope(tree, poly);
            t.kd_seconds = seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const std::vector<PointId> scan = scan_polytope(ps, poly);
            t.scan_seconds = seconds_since(t0);
            t.returned = kd.ids.size();
            t.tested = kd.stats.tested;
            t.selectivity = static_cast<double>(t.returned) / static_cast<double>(ps.size());
            t.exact = kd.ids == scan;
            out.push_back(t);
        }
    }
    return out;
}

std::vector<PolytopeBenchRow> summarize_trials(std::span<const PolytopeTrial> trials) {
    std::vector<PolytopeBenchRow> rows;
    for (const auto& t : trials) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const PolytopeBenchRow& r) { return r.target == t.target; });
        if (it == rows.end()) {
            rows.push_back({});
            it = rows.end() - 1;
            it->target = t.target;
        }
        ++it->queries;
        it->mean_selectivity += t.selectivity;
        it->returned += t.returned;
        it->tested += t.tested;
        it->kd_seconds += t.kd_seconds;
        it->scan_seconds += t.scan_seconds;
        it->exact = it->exact && t.exact;
    }
    for (auto& r : rows) {
        r.mean_selectivity /= static_cast<double>(r.queries);
        r.tested_per_returned = r.returned ? static_cast<double>(r.tested) / static_cast<double>(r.returned) : 0.0;
        r.speedup = r.kd_seconds > 0.0 ? r.scan_seconds / r.kd_seconds : 0.0;
    }
    return rows;
}

} // namespace hypergrid
