#include "hypergrid/voronoi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "hypergrid/binary_io.hpp"
#include "hypergrid/knn.hpp"
#include "hypergrid/parallel.hpp"
#include "hypergrid/rng.hpp"

namespace hypergrid {

namespace {

constexpr char kVoronoiMagic[] = "HGVR";
constexpr std::uint16_t kVoronoiVersion = 1;
constexpr std::size_t kChunk = 1 << 14;

std::size_t chunk_count(std::uint64_t n) { return static_cast<std::size_t>((n + kChunk - 1) / kChunk); }

double distance2(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const double diff = a[d] - b[d];
        sum += diff * diff;
    }
    return sum;
}

std::vector<double> uniform_in(Rng& rng, const BoundingBox& box) {
    std::vector<double> x(box.dim());
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = rng.uniform(box.lo[d], box.hi[d]);
    return x;
}

void fill_members(VoronoiIndex& idx, const PointSet& ps) {
    const std::size_t n_seed = idx.seed_count();
    idx.member_offsets.assign(n_seed + 1, 0);
    for (auto c : idx.assignment) ++idx.member_offsets[c + 1];
    std::partial_sum(idx.member_offsets.begin(), idx.member_offsets.end(), idx.member_offsets.begin());
    idx.members.assign(ps.size(), 0);
    std::vector<std::uint64_t> cursor(idx.member_offsets.begin(), idx.member_offsets.end() - 1);
    for (std::size_t i = 0; i < ps.size(); ++i) idx.members[cursor[idx.assignment[i]]++] = static_cast<PointId>(i);

    idx.member_boxes.assign(n_seed, {});
    for (std::size_t c = 0; c < n_seed; ++c) {
        const auto m = idx.cell_members(c);
        if (m.empty()) continue;
        BoundingBox box(std::vector<double>(ps.dim(), std::numeric_limits<double>::infinity()),
                        std::vector<double>(ps.dim(), -std::numeric_limits<double>::infinity()));
        for (PointId id : m) {
            for (std::size_t d = 0; d < ps.dim(); ++d) {
                box.lo[d] = std::min(box.lo[d], ps.at(id, d));
                box.hi[d] = std::max(box.hi[d], ps.at(id, d));
            }
        }
        idx.member_boxes[c] = std::move(box);
    }
}

void fill_volume_estimates(CellVolumes& v) {
    const double total = v.box.volume();
    const double s = static_cast<double>(v.samples);
    v.volume.clear();
    v.std_error.clear();
    for (auto h : v.hits) {
        const double p = static_cast<double>(h) / s;
        v.volume.push_back(total * p);
        v.std_error.push_back(total * std::sqrt(p * (1 - p) / s));
    }
}

PointSet to_index_space(const VoronoiIndex& idx, const PointSet& ps) {
    return idx.transform ? apply_transform(*idx.transform, ps) : ps;
}

} // namespace

std::vector<PointId> pick_seeds(const PointSet& ps, std::size_t n_seed, std::uint64_t seed) {
    if (n_seed == 0) throw std::invalid_argument("n_seed must be >= 1");
    if (n_seed > ps.size()) throw std::invalid_argument("n_seed exceeds the number of points");
    // Floyd's sampling without replacement.
    Rng rng(seed);
    const std::uint64_t n = ps.size();
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(n_seed * 2);
    for (std::uint64_t j = n - n_seed; j < n; ++j) {
        const std::uint64_t t = rng.below(j + 1);
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<PointId> ids(chosen.begin(), chosen.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::uint32_t> assign_cells(const PointSet& ps, const KdTree& seed_tree, unsigned threads) {
    if (seed_tree.size() == 0) throw std::invalid_argument("no seeds");
    if (ps.dim() != seed_tree.dim()) throw std::invalid_argument("seed dimension differs from the data");
    std::vector<std::uint32_t> out(ps.size());
    parallel_chunks(chunk_count(ps.size()), threads, [&](std::size_t c) {
        std::vector<double> x(ps.dim());
        const std::size_t end = std::min<std::size_t>(ps.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            ps.row(i, x);
            out[i] = knn_search(seed_tree, x, 1)[0].id;
        }
    });
    return out;
}

Adjacency build_adjacency(const PointSet& ps, const KdTree& seed_tree, std::size_t probe_budget, std::uint64_t seed,
                          unsigned threads) {
    if (ps.dim() != seed_tree.dim()) throw std::invalid_argument("seed dimension differs from the data");
    const std::size_t n_seed = seed_tree.size();
    Adjacency adj;
    adj.offsets.assign(n_seed + 1, 0);
    if (n_seed < 2 || ps.empty()) return adj;

    const BoundingBox box = bounding_box(ps);
    const std::size_t data_chunks = chunk_count(ps.size());
    const std::size_t probe_chunks = chunk_count(probe_budget);
    std::vector<std::vector<std::uint64_t>> pairs(data_chunks + probe_chunks);
    parallel_chunks(pairs.size(), threads, [&](std::size_t c) {
        auto& out = pairs[c];
        auto add = [&](std::span<const double> x) {
            const auto nn = knn_search(seed_tree, x, 2);
            const std::uint64_t a = std::min(nn[0].id, nn[1].id);
            const std::uint64_t b = std::max(nn[0].id, nn[1].id);
            out.push_back(a << 32 | b);
        };
        if (c < data_chunks) {
            std::vector<double> x(ps.dim());
            const std::size_t end = std::min<std::size_t>(ps.size(), (c + 1) * kChunk);
            for (std::size_t i = c * kChunk; i < end; ++i) {
                ps.row(i, x);
                add(x);
            }
        } else {
            const std::size_t pc = c - data_chunks;
            Rng rng(Rng::derive(seed, pc));
            const std::size_t end = std::min<std::size_t>(probe_budget, (pc + 1) * kChunk);
            for (std::size_t i = pc * kChunk; i < end; ++i) add(uniform_in(rng, box));
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    });

    std::vector<std::uint64_t> edges;
    for (const auto& p : pairs) edges.insert(edges.end(), p.begin(), p.end());
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    for (auto e : edges) {
        ++adj.offsets[(e >> 32) + 1];
        ++adj.offsets[(e & 0xffffffffu) + 1];
    }
    std::partial_sum(adj.offsets.begin(), adj.offsets.end(), adj.offsets.begin());
    adj.neighbors.resize(2 * edges.size());
    std::vector<std::uint64_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
    for (auto e : edges) {
        const auto a = static_cast<std::uint32_t>(e >> 32);
        const auto b = static_cast<std::uint32_t>(e & 0xffffffffu);
        adj.neighbors[cursor[a]++] = b;
        adj.neighbors[cursor[b]++] = a;
    }
    for (std::size_t s = 0; s < n_seed; ++s) {
        std::sort(adj.neighbors.begin() + static_cast<std::ptrdiff_t>(adj.offsets[s]),
                  adj.neighbors.begin() + static_cast<std::ptrdiff_t>(adj.offsets[s + 1]));
    }
    return adj;
}

std::vector<std::uint32_t> order_cells(const PointSet& seeds) {
    const std::size_t n = seeds.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    if (n < 2) return order;

    PointSet axes = seeds;
    if (seeds.dim() > 3) axes = apply_transform(fit_pca(seeds, 3).transform, seeds);
    const std::size_t dim = axes.dim();
    constexpr int kBits = 21;
    constexpr double kCells = double(1u << kBits);
    std::vector<std::uint64_t> code(n, 0);
    for (std::size_t d = 0; d < dim; ++d) {
        const auto col = axes.column(d);
        const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
        const double extent = *mx - *mn;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t q = 0;
            if (extent > 0) {
                const double t = (col[i] - *mn) / extent * kCells;
                q = static_cast<std::uint64_t>(std::clamp(t, 0.0, kCells - 1));
            }
            for (int b = 0; b < kBits; ++b) code[i] |= ((q >> b) & 1u) << (b * dim + d);
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return code[a] < code[b]; });
    return order;
}

CellVolumes estimate_volumes(const KdTree& seed_tree, const BoundingBox& box, std::uint64_t samples,
                             std::uint64_t seed, unsigned threads) {
    if (box.dim() != seed_tree.dim()) throw std::invalid_argument("volume box dimension differs from the seeds");
    if (!box.valid()) throw std::invalid_argument("degenerate volume box");
    if (samples == 0) throw std::invalid_argument("volume estimation needs samples");
    const std::size_t n_seed = seed_tree.size();
    const std::size_t chunks = chunk_count(samples);
    std::vector<std::vector<std::uint64_t>> partial(chunks);
    parallel_chunks(chunks, threads, [&](std::size_t c) {
        auto& hits = partial[c];
        hits.assign(n_seed, 0);
        Rng rng(Rng::derive(seed, c));
        const std::uint64_t end = std::min<std::uint64_t>(samples, (c + 1) * kChunk);
        for (std::uint64_t i = c * kChunk; i < end; ++i) ++hits[knn_search(seed_tree, uniform_in(rng, box), 1)[0].id];
    });
    CellVolumes v;
    v.box = box;
    v.samples = samples;
    v.hits.assign(n_seed, 0);
    for (const auto& h : partial) {
        for (std::size_t s = 0; s < n_seed; ++s) v.hits[s] += h[s];
    }
    fill_volume_estimates(v);
    return v;
}

LocateResult locate_cell(const VoronoiIndex& idx, std::span<const double> p_data) {
    if (idx.seed_count() == 0) throw std::invalid_argument("empty Voronoi index");
    const std::vector<double> p = idx.transform ? apply_transform(*idx.transform, p_data)
                                                : std::vector<double>(p_data.begin(), p_data.end());
    if (p.size() != idx.dim()) throw std::invalid_argument("query dimension differs from the index");
    LocateResult r;
    std::uint32_t current = idx.cell_order.front();
    double best = distance2(idx.seeds.row(current), p);
    std::vector<double> row(idx.dim());
    while (true) {
        std::uint32_t next = current;
        double next_d = best;
        for (std::uint32_t nb : idx.adjacency.of(current)) {
            idx.seeds.row(nb, row);
            const double d = distance2(row, p);
            if (d < next_d) { // neighbors ascend, so ties keep the smaller id
                next = nb;
                next_d = d;
            }
        }
        if (next == current) break;
        current = next;
        best = next_d;
        ++r.steps;
    }
    const std::uint32_t exact = knn_search(idx.seed_tree, p, 1)[0].id;
    r.walk_miss = exact != current;
    r.cell = exact;
    return r;
}

VoronoiIndex build_voronoi(const PointSet& ps, const VoronoiBuildConfig& cfg) {
    if (ps.empty()) throw std::invalid_argument("Voronoi build needs points");
    VoronoiIndex idx;
    if (cfg.whiten) idx.transform = fit_whitening(ps);
    const PointSet space = to_index_space(idx, ps);
    idx.seed_ids = pick_seeds(ps, cfg.n_seed, cfg.seed);
    idx.seeds = space.subset(idx.seed_ids);
    idx.seed_tree = build_kdtree(idx.seeds);
    idx.assignment = assign_cells(space, idx.seed_tree, cfg.threads);
    const std::size_t probes = cfg.probe_budget ? cfg.probe_budget : 10 * cfg.n_seed;
    idx.adjacency = build_adjacency(space, idx.seed_tree, probes, Rng::derive(cfg.seed, 1), cfg.threads);
    const std::uint64_t samples = cfg.volume_samples ? cfg.volume_samples : 100 * std::uint64_t{cfg.n_seed};
    idx.volumes = estimate_volumes(idx.seed_tree, bounding_box(space), samples, Rng::derive(cfg.seed, 2), cfg.threads);
    idx.cell_order = order_cells(idx.seeds);
    fill_members(idx, ps);
    return idx;
}

VoronoiQueryResult voronoi_query_polytope(const VoronoiIndex& idx, const PointSet& ps, const Polytope& poly,
                                          std::size_t sample_per_cell) {
    if (poly.dim() != ps.dim()) throw std::invalid_argument("polytope dimension differs from the point set");
    if (idx.assignment.size() != ps.size()) throw std::invalid_argument("index was built for a different point set");
    VoronoiQueryResult out;
    std::vector<double> x(ps.dim());
    for (std::size_t c = 0; c < idx.seed_count(); ++c) {
        const auto members = idx.cell_members(c);
        if (members.empty()) continue;
        const BoxClass cls = classify_box(idx.member_boxes[c], poly);
        if (cls == BoxClass::outside) {
            ++out.stats.cells_outside;
            continue;
        }
        if (cls == BoxClass::inside) {
            ++out.stats.cells_inside;
            out.ids.insert(out.ids.end(), members.begin(), members.end());
            continue;
        }
        ++out.stats.cells_partial;
        bool seen_in = false, seen_out = false;
        for (std::size_t j = 0; j < members.size(); ++j) {
            ps.row(members[j], x);
            const bool in = poly.contains(x);
            if (j < sample_per_cell) {
                seen_in = seen_in || in;
                seen_out = seen_out || !in;
            }
            if (in) out.ids.push_back(members[j]);
        }
        out.stats.points_filtered += members.size();
        if (seen_in && seen_out) ++out.stats.cells_confirmed_partial;
    }
    std::sort(out.ids.begin(), out.ids.end());
    out.stats.returned = out.ids.size();
    return out;
}

void save_voronoi(const VoronoiIndex& idx, const std::string& path) {
    io::Writer w(path);
    w.magic(kVoronoiMagic);
    w.put<std::uint16_t>(kVoronoiVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(idx.dim()));
    w.put<std::uint64_t>(idx.seed_count());
    w.put<std::uint64_t>(idx.assignment.size());
    w.put<std::uint8_t>(idx.transform ? 1 : 0);
    if (idx.transform) {
        const auto& t = *idx.transform;
        w.put<std::uint8_t>(t.kind == TransformKind::whitening ? 0 : 1);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.in_dim));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.out_dim));
        w.put_array(std::span<const double>(t.mean));
        w.put_array(std::span<const double>(t.matrix));
    }
    w.put_array(std::span<const PointId>(idx.seed_ids));
    w.put_array(idx.seeds.coords());
    w.put_array(std::span<const std::uint32_t>(idx.assignment));
    w.put_array(std::span<const std::uint64_t>(idx.adjacency.offsets));
    w.put_array(std::span<const std::uint32_t>(idx.adjacency.neighbors));
    w.put_array(std::span<const double>(idx.volumes.box.lo));
    w.put_array(std::span<const double>(idx.volumes.box.hi));
    w.put<std::uint64_t>(idx.volumes.samples);
    w.put_array(std::span<const std::uint64_t>(idx.volumes.hits));
    w.put_array(std::span<const std::uint32_t>(idx.cell_order));
    w.finish();
}

VoronoiIndex load_voronoi(const std::string& path, const PointSet& ps) {
    io::Reader r(path);
    r.expect_magic(kVoronoiMagic);
    const auto version = r.get<std::uint16_t>();
    if (version != kVoronoiVersion) r.fail("unsupported version " + std::to_string(version));
    const auto dim = r.get<std::uint32_t>();
    const auto n_seed = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (n != ps.size()) r.fail("index was built for a different point set");
    if (dim == 0 || n_seed == 0 || n_seed > n) r.fail("inconsistent header");

    VoronoiIndex idx;
    if (r.get<std::uint8_t>()) {
        LinearTransform t;
        t.kind = r.get<std::uint8_t>() == 0 ? TransformKind::whitening : TransformKind::pca;
        t.in_dim = r.get<std::uint32_t>();
        t.out_dim = r.get<std::uint32_t>();
        if (t.in_dim != ps.dim() || t.out_dim != dim) r.fail("transform shape does not match");
        t.mean.resize(t.in_dim);
        t.matrix.resize(t.in_dim * t.out_dim);
        r.get_array(std::span<double>(t.mean));
        r.get_array(std::span<double>(t.matrix));
        idx.transform = std::move(t);
    } else if (dim != ps.dim()) {
        r.fail("dimension does not match the point set");
    }
    idx.seed_ids.resize(n_seed);
    r.get_array(std::span<PointId>(idx.seed_ids));
    std::vector<double> coords(n_seed * dim);
    r.get_array(std::span<double>(coords));
    idx.assignment.resize(n);
    r.get_array(std::span<std::uint32_t>(idx.assignment));
    idx.adjacency.offsets.resize(n_seed + 1);
    r.get_array(std::span<std::uint64_t>(idx.adjacency.offsets));
    const auto edges2 = idx.adjacency.offsets.back();
    if (idx.adjacency.offsets.front() != 0 || !std::is_sorted(idx.adjacency.offsets.begin(), idx.adjacency.offsets.end()) ||
        edges2 > r.remaining() / 4) {
        r.fail("corrupt adjacency offsets");
    }
    idx.adjacency.neighbors.resize(edges2);
    r.get_array(std::span<std::uint32_t>(idx.adjacency.neighbors));
    idx.volumes.box.lo.resize(dim);
    idx.volumes.box.hi.resize(dim);
    r.get_array(std::span<double>(idx.volumes.box.lo));
    r.get_array(std::span<double>(idx.volumes.box.hi));
    idx.volumes.samples = r.get<std::uint64_t>();
    idx.volumes.hits.resize(n_seed);
    r.get_array(std::span<std::uint64_t>(idx.volumes.hits));
    idx.cell_order.resize(n_seed);
    r.get_array(std::span<std::uint32_t>(idx.cell_order));
    if (r.remaining() != 0) r.fail("trailing bytes");

    for (auto id : idx.seed_ids) {
        if (id >= n) r.fail("seed id out of range");
    }
    for (auto c : idx.assignment) {
        if (c >= n_seed) r.fail("assignment out of range");
    }
    for (auto nb : idx.adjacency.neighbors) {
        if (nb >= n_seed) r.fail("adjacency out of range");
    }
    std::vector<std::uint32_t> sorted_order = idx.cell_order;
    std::sort(sorted_order.begin(), sorted_order.end());
    for (std::size_t s = 0; s < n_seed; ++s) {
        if (sorted_order[s] != s) r.fail("cell order is not a permutation");
    }
    std::uint64_t hit_total = 0;
    for (auto h : idx.volumes.hits) hit_total += h;
    if (hit_total != idx.volumes.samples) r.fail("volume hits do not add up to the sample count");

    if (idx.volumes.samples == 0) r.fail("no volume samples");
    idx.seeds = PointSet(dim, std::move(coords));
    fill_volume_estimates(idx.volumes);
    idx.seed_tree = build_kdtree(idx.seeds);
    fill_members(idx, ps);
    return idx;
}

} // namespace hypergrid
