#include "hypergrid/cluster_bst.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace hypergrid {

namespace {

struct UnionFind {
    std::vector<std::uint32_t> up;
    explicit UnionFind(std::size_t n) : up(n) { std::iota(up.begin(), up.end(), 0u); }
    std::uint32_t find(std::uint32_t x) {
        while (up[x] != x) x = up[x] = up[up[x]];
        return x;
    }
};

} // namespace

BasinForest build_bst(const Adjacency& graph, std::span<const double> density, std::span<const std::uint8_t> active,
                      double merge_tau) {
    const std::size_t n = graph.seed_count();
    if (density.size() != n || active.size() != n) throw std::invalid_argument("density/active size differs from the graph");
    if (!(merge_tau >= 0.0)) throw std::invalid_argument("merge_tau must be >= 0");
    BasinForest f;
    f.parent.assign(n, BasinForest::kNone);
    f.cluster.assign(n, BasinForest::kNone);
    f.density.assign(density.begin(), density.end());
    f.fallback.assign(n, 0);

    for (std::uint32_t c = 0; c < n; ++c) {
        if (!active[c]) continue;
        std::uint32_t best = c;
        double best_density = density[c];
        for (std::uint32_t nb : graph.of(c)) {
            if (!active[nb]) continue;
            if (density[nb] > best_density || (density[nb] == best_density && best != c && nb < best)) {
                best = nb;
                best_density = density[nb];
            }
        }
        f.parent[c] = best;
        if (best == c) f.roots.push_back(c);
    }
    // Parents are strictly denser, so following them terminates.
    for (std::uint32_t c = 0; c < n; ++c) {
        if (!active[c]) continue;
        std::uint32_t r = c;
        while (f.parent[r] != r) r = f.parent[r];
        f.cluster[c] = r;
    }

    if (merge_tau > 0.0) {
        // Highest saddle between each pair of basins: max over crossing edges of the lower endpoint density.
        std::map<std::pair<std::uint32_t, std::uint32_t>, double> saddle;
        for (std::uint32_t a = 0; a < n; ++a) {
            if (!active[a]) continue;
            for (std::uint32_t b : graph.of(a)) {
                if (b <= a || !active[b] || f.cluster[a] == f.cluster[b]) continue;
                const auto key = std::minmax(f.cluster[a], f.cluster[b]);
                const double s = std::min(density[a], density[b]);
                auto [it, fresh] = saddle.try_emplace({key.first, key.second}, s);
                if (!fresh) it->second = std::max(it->second, s);
            }
        }
        std::vector<std::pair<double, std::pair<std::uint32_t, std::uint32_t>>> order;
        for (const auto& [key, s] : saddle) order.push_back({s, key});
        std::stable_sort(order.begin(), order.end(), [](const auto& x, const auto& y) { return x.first > y.first; });

        UnionFind uf(n);
        std::vector<double> peak(density.begin(), density.end());
        for (const auto& [s, key] : order) {
            const auto a = uf.find(key.first);
            const auto b = uf.find(key.second);
            if (a == b) continue;
            const double low_peak = std::min(peak[a], peak[b]);
            if (low_peak - s >= merge_tau * low_peak) continue;
            // The representative is the higher peak (smaller id on ties).
            const bool a_wins = peak[a] > peak[b] || (peak[a] == peak[b] && a < b);
            const auto winner = a_wins ? a : b;
            const auto loser = a_wins ? b : a;
            uf.up[loser] = winner;
        }
        for (std::uint32_t c = 0; c < n; ++c) {
            if (active[c]) f.cluster[c] = uf.find(f.cluster[c]);
        }
    }

    for (std::uint32_t c = 0; c < n; ++c) {
        if (active[c]) f.cluster_ids.push_back(f.cluster[c]);
    }
    std::sort(f.cluster_ids.begin(), f.cluster_ids.end());
    f.cluster_ids.erase(std::unique(f.cluster_ids.begin(), f.cluster_ids.end()), f.cluster_ids.end());
    return f;
}

BasinForest build_bst(const VoronoiIndex& idx, const BstConfig& cfg) {
    const std::size_t n = idx.seed_count();
    const auto& vol = idx.volumes;
    if (vol.volume.size() != n || idx.adjacency.seed_count() != n) throw std::invalid_argument("index lacks volumes or adjacency");
    const double fallback_volume = 0.5 * vol.box.volume() / static_cast<double>(vol.samples);
    std::vector<double> density(n, 0.0);
    std::vector<std::uint8_t> active(n, 0), fallback(n, 0);
    for (std::size_t c = 0; c < n; ++c) {
        const auto members = idx.cell_members(c).size();
        if (members == 0) continue;
        active[c] = 1;
        double v = vol.volume[c];
        if (v <= 0.0) {
            v = fallback_volume;
            fallback[c] = 1;
        }
        density[c] = (cfg.mode == DensityMode::count_over_volume ? static_cast<double>(members) : 1.0) / v;
    }
    BasinForest f = build_bst(idx.adjacency, density, active, cfg.merge_tau);
    f.fallback = std::move(fallback);
    return f;
}

std::vector<std::uint32_t> point_clusters(const BasinForest& forest, std::span<const std::uint32_t> assignment) {
    std::vector<std::uint32_t> out(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i) out[i] = forest.cluster.at(assignment[i]);
    return out;
}

PurityReport evaluate_purity(const BasinForest& forest, std::span<const std::uint32_t> assignment,
                             std::span<const std::int32_t> labels) {
    if (labels.size() != assignment.size()) throw std::invalid_argument("labels and assignment differ in length");
    std::map<std::uint32_t, std::map<std::int32_t, std::size_t>> counts;
    for (std::size_t i = 0; i < assignment.size(); ++i) ++counts[forest.cluster.at(assignment[i])][labels[i]];
    PurityReport report;
    std::size_t correct = 0;
    for (const auto& [cluster, by_label] : counts) {
        ClusterPurity p;
        p.cluster = cluster;
        for (const auto& [label, count] : by_label) {
            p.size += count;
            if (count > p.majority_count) { // ascending labels: ties keep the smaller one
                p.majority_count = count;
                p.majority_label = label;
            }
        }
        correct += p.majority_count;
        report.clusters.push_back(p);
    }
    report.accuracy = assignment.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(assignment.size());
    return report;
}

} // namespace hypergrid
