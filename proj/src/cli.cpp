#include "hypergrid/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "hypergrid/bench.hpp"
#include "hypergrid/cluster_bst.hpp"
#include "hypergrid/dataset.hpp"
#include "hypergrid/estimate.hpp"
#include "hypergrid/kdtree.hpp"
#include "hypergrid/knn.hpp"
#include "hypergrid/layered_grid.hpp"
#include "hypergrid/parallel.hpp"
#include "hypergrid/rng.hpp"
#include "hypergrid/service.hpp"
#include "hypergrid/voronoi.hpp"

namespace hypergrid {

namespace {

using Json = nlohmann::ordered_json;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rows of typed cells printed as an aligned table, CSV, or a JSON array of objects.
class Table {
public:
    explicit Table(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    template <typename... Cells>
    void add(Cells&&... cells) {
        rows_.push_back({Json(std::forward<Cells>(cells))...});
    }

    void print(std::ostream& out, const std::string& format) const {
        if (format == "json") {
            Json all = Json::array();
            for (const auto& r : rows_) {
                Json obj;
                for (std::size_t c = 0; c < columns_.size(); ++c) obj[columns_[c]] = r[c];
                all.push_back(std::move(obj));
            }
            out << all.dump() << "\n";
            return;
        }
        std::vector<std::vector<std::string>> text;
        for (const auto& r : rows_) {
            std::vector<std::string> t;
            for (const auto& cell : r) t.push_back(cell.is_string() ? cell.get<std::string>() : cell.dump());
            text.push_back(std::move(t));
        }
        if (format == "csv") {
            out << join(columns_, ",") << "\n";
            for (const auto& t : text) out << join(t, ",") << "\n";
            return;
        }
        std::vector<std::size_t> width(columns_.size());
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            width[c] = columns_[c].size();
            for (const auto& t : text) width[c] = std::max(width[c], t[c].size());
        }
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                out << cells[c];
                if (c + 1 < cells.size()) out << std::string(width[c] - cells[c].size() + 2, ' ');
            }
            out << "\n";
        };
        line(columns_);
        for (const auto& t : text) line(t);
    }

private:
    static std::string join(const std::vector<std::string>& v, const char* sep) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
        return s;
    }

    std::vector<std::string> columns_;
    std::vector<std::vector<Json>> rows_;
};

struct Globals {
    std::uint64_t seed = 0;
    unsigned threads = default_threads();
    bool verbose = false;
    std::string format = "table";
};

std::vector<double> parse_doubles(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CLI::ValidationError(what, "'" + text + "' is not a comma-separated list of numbers");
        }
    }
    return out;
}

PointSet load_input(const std::string& path) {
    try {
        return load_points(path);
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

template <typename F>
auto data_step(F&& f) {
    try {
        return f();
    } catch (const DataError&) {
        throw;
    } catch (const CLI::Error&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

std::string or_default(const std::string& value, const std::string& input, const char* ext) {
    return value.empty() ? input + ext : value;
}

std::vector<double> point_arg(const std::string& text, std::size_t dim, const char* what) {
    auto p = parse_doubles(text, what);
    if (p.size() != dim) {
        throw DataError(std::string(what) + " has " + std::to_string(p.size()) + " coordinates, data has " + std::to_string(dim));
    }
    return p;
}

// Halfspace "a,b,c:offset" meaning a*x0 + b*x1 + c*x2 <= offset.
Halfspace halfspace_arg(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--halfspace", "expected normal:offset, got '" + text + "'");
    Halfspace h;
    h.normal = parse_doubles(text.substr(0, colon), "--halfspace");
    const auto off = parse_doubles(text.substr(colon + 1), "--halfspace");
    if (off.size() != 1) throw CLI::ValidationError("--halfspace", "offset must be one number");
    h.offset = off[0];
    return h;
}

void serve_until_signal(const ServiceConfig& cfg, std::ostream& out) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    sigset_t previous;
    pthread_sigmask(SIG_BLOCK, &set, &previous);
    {
        Service svc(cfg);
        out << "listening on " << cfg.host << ":" << svc.port() << std::endl;
        std::thread worker([&] { svc.run(); });
        int sig = 0;
        sigwait(&set, &sig);
        svc.stop();
        worker.join();
    }
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"hypergrid: spatial indexing for large multidimensional point sets", "hypergrid"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Seed for every randomized step");
    app.add_option("--threads", g.threads, "Worker threads for parallel steps")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", g.verbose, "Progress and statistics on stderr");
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"table", "csv", "json"}));

    std::function<void()> action;

    // generate
    auto* generate = app.add_subcommand("generate", "Sample a Gaussian mixture with separated components");
    std::size_t gen_n = 0, gen_dim = 0, gen_components = 3;
    double gen_separation = 6.0, gen_outliers = 0.0;
    std::string gen_out;
    generate->add_option("--n", gen_n, "Number of points")->required();
    generate->add_option("--dim", gen_dim, "Dimension")->required()->check(CLI::PositiveNumber);
    generate->add_option("--components", gen_components, "Mixture components")->check(CLI::PositiveNumber);
    generate->add_option("--separation", gen_separation, "Minimum distance between component means, in stdevs");
    generate->add_option("--outliers", gen_outliers, "Fraction of uniform outliers (label -1)");
    generate->add_option("-o,--output", gen_out, "Output file (.csv or binary)")->required();
    generate->callback([&] {
        action = [&] {
            const auto ps = data_step([&] {
                return generate_mixture(g.seed, gen_n, gen_dim,
                                        separated_components(Rng::derive(g.seed, 1), gen_dim, gen_components, gen_separation),
                                        gen_outliers);
            });
            data_step([&] { save_points(ps, gen_out); return 0; });
            Table t({"points", "dim", "components", "file"});
            t.add(ps.size(), ps.dim(), gen_components, gen_out);
            t.print(out, g.format);
        };
    });

    // import
    auto* import = app.add_subcommand("import", "Convert between CSV and the binary point format");
    std::string imp_in, imp_out;
    import->add_option("input", imp_in, "Input file")->required();
    import->add_option("-o,--output", imp_out, "Output file")->required();
    import->callback([&] {
        action = [&] {
            const auto ps = load_input(imp_in);
            data_step([&] { save_points(ps, imp_out); return 0; });
            Table t({"points", "dim", "labels", "targets", "file"});
            t.add(ps.size(), ps.dim(), ps.has_labels(), ps.has_targets(), imp_out);
            t.print(out, g.format);
        };
    });

    // pca
    auto* pca = app.add_subcommand("pca", "Project onto the leading principal components");
    std::string pca_in, pca_out;
    std::size_t pca_k = 0;
    pca->add_option("input", pca_in, "Input file")->required();
    pca->add_option("--k", pca_k, "Number of components")->required()->check(CLI::PositiveNumber);
    pca->add_option("-o,--output", pca_out, "Projected output file")->required();
    pca->callback([&] {
        action = [&] {
            const auto ps = load_input(pca_in);
            const auto fit = data_step([&] { return fit_pca(ps, pca_k); });
            data_step([&] { save_points(apply_transform(fit.transform, ps), pca_out); return 0; });
            Table t({"component", "explained_variance"});
            for (std::size_t c = 0; c < fit.explained_variance.size(); ++c) t.add(c, fit.explained_variance[c]);
            t.print(out, g.format);
        };
    });

    // whiten
    auto* whiten = app.add_subcommand("whiten", "Decorrelate and scale to unit variance");
    std::string wh_in, wh_out;
    whiten->add_option("input", wh_in, "Input file")->required();
    whiten->add_option("-o,--output", wh_out, "Whitened output file")->required();
    whiten->callback([&] {
        action = [&] {
            const auto ps = load_input(wh_in);
            const auto tr = data_step([&] { return fit_whitening(ps); });
            data_step([&] { save_points(apply_transform(tr, ps), wh_out); return 0; });
            Table t({"in_dim", "out_dim", "file"});
            t.add(tr.in_dim, tr.out_dim, wh_out);
            t.print(out, g.format);
        };
    });

    // grid-build
    auto* grid_build = app.add_subcommand("grid-build", "Build the layered grid sidecar");
    std::string gb_in, gb_out, gb_coords = "0,1,2";
    std::size_t gb_base = 1024;
    grid_build->add_option("input", gb_in, "Point file")->required();
    grid_build->add_option("--coords", gb_coords, "Three indexed coordinates");
    grid_build->add_option("--base", gb_base, "First layer capacity")->check(CLI::PositiveNumber);
    grid_build->add_option("-o,--output", gb_out, "Sidecar path (default: input.hglg)");
    grid_build->callback([&] {
        action = [&] {
            const auto c = parse_doubles(gb_coords, "--coords");
            if (c.size() != 3) throw CLI::ValidationError("--coords", "needs exactly three coordinate indices");
            std::array<std::size_t, 3> coords{};
            for (int i = 0; i < 3; ++i) {
                if (c[i] < 0 || c[i] != std::floor(c[i])) throw CLI::ValidationError("--coords", "indices must be non-negative integers");
                coords[i] = static_cast<std::size_t>(c[i]);
            }
            const auto ps = load_input(gb_in);
            const auto idx = data_step([&] { return build_grid(ps, coords, gb_base, g.seed); });
            data_step([&] { save_grid(idx, or_default(gb_out, gb_in, ".hglg")); return 0; });
            Table t({"layer", "resolution", "population"});
            for (std::uint32_t l = 1; l <= idx.layer_count(); ++l) t.add(l, LayeredGridIndex::resolution(l), idx.layer_population(l));
            t.print(out, g.format);
        };
    });

    // sample
    auto* sample = app.add_subcommand("sample", "Distribution-following sample of a box");
    std::string sm_in, sm_grid, sm_lo, sm_hi;
    std::size_t sm_n = 0;
    sample->add_option("input", sm_in, "Point file")->required();
    sample->add_option("--grid", sm_grid, "Grid sidecar (default: input.hglg)");
    sample->add_option("--lo", sm_lo, "Box lower corner over the indexed coordinates")->required();
    sample->add_option("--hi", sm_hi, "Box upper corner")->required();
    sample->add_option("--n", sm_n, "Minimum number of points")->required()->check(CLI::PositiveNumber);
    sample->callback([&] {
        action = [&] {
            const auto ps = load_input(sm_in);
            const auto idx = data_step([&] { return load_grid(or_default(sm_grid, sm_in, ".hglg")); });
            const BoundingBox box{point_arg(sm_lo, 3, "--lo"), point_arg(sm_hi, 3, "--hi")};
            const auto r = data_step([&] { return sample_box(idx, ps, box, sm_n); });
            const auto& ci = idx.coord_indices();
            Table t({"id", "x" + std::to_string(ci[0]), "x" + std::to_string(ci[1]), "x" + std::to_string(ci[2])});
            for (PointId id : r.ids) t.add(id, ps.at(id, ci[0]), ps.at(id, ci[1]), ps.at(id, ci[2]));
            t.print(out, g.format);
            if (g.verbose) err << "examined " << r.examined << ", returned " << r.ids.size() << ", layers " << r.layers_used << "\n";
        };
    });

    // kd-build
    auto* kd_build = app.add_subcommand("kd-build", "Build the kd-tree sidecar");
    std::string kb_in, kb_out;
    kd_build->add_option("input", kb_in, "Point file")->required();
    kd_build->add_option("-o,--output", kb_out, "Sidecar path (default: input.hgkd)");
    kd_build->callback([&] {
        action = [&] {
            const auto ps = load_input(kb_in);
            const auto tree = data_step([&] { return build_kdtree(ps); });
            data_step([&] { save_kdtree(tree, or_default(kb_out, kb_in, ".hgkd")); return 0; });
            std::uint32_t lo = ~0u, hi = 0;
            for (std::size_t l = 0; l < tree.leaf_count(); ++l) {
                lo = std::min(lo, tree.node(tree.leaf_node(l)).population());
                hi = std::max(hi, tree.node(tree.leaf_node(l)).population());
            }
            Table t({"points", "levels", "leaves", "min_leaf", "max_leaf"});
            t.add(tree.size(), tree.levels(), tree.leaf_count(), lo, hi);
            t.print(out, g.format);
        };
    });

    // query
    auto* query = app.add_subcommand("query", "Points inside a convex polytope");
    std::string q_in, q_tree, q_poly;
    std::vector<std::string> q_halfspaces;
    bool q_count = false;
    query->add_option("input", q_in, "Point file")->required();
    query->add_option("--kdtree", q_tree, "kd-tree sidecar (default: input.hgkd)");
    query->add_option("--halfspace", q_halfspaces, "Halfspace a,b,...:offset meaning a*x0 + b*x1 + ... <= offset");
    query->add_option("--polytope", q_poly, "JSON file with {\"halfspaces\": [{\"normal\": [...], \"offset\": v}]}");
    query->add_flag("--count", q_count, "Print only the statistics");
    query->callback([&] {
        action = [&] {
            std::vector<Halfspace> hs;
            for (const auto& h : q_halfspaces) hs.push_back(halfspace_arg(h));
            if (!q_poly.empty()) {
                data_step([&] {
                    std::ifstream f(q_poly);
                    if (!f) throw DataError("cannot open " + q_poly);
                    const Json j = Json::parse(f);
                    for (const auto& h : j.at("halfspaces")) hs.push_back({h.at("normal").get<std::vector<double>>(), h.at("offset").get<double>()});
                    return 0;
                });
            }
            if (hs.empty()) throw CLI::ValidationError("query", "give --halfspace or --polytope");
            const auto ps = load_input(q_in);
            const auto tree = data_step([&] { return load_kdtree(or_default(q_tree, q_in, ".hgkd"), ps); });
            const Polytope poly = data_step([&] { return Polytope(hs); });
            if (poly.dim() != ps.dim()) throw DataError("polytope dimension differs from the data");
            const auto r = query_polytope(tree, poly);
            if (q_count) {
                Table t({"returned", "tested", "leaves_touched", "inside_nodes"});
                t.add(r.ids.size(), r.stats.tested, r.stats.leaves_touched, r.stats.inside_nodes);
                t.print(out, g.format);
                return;
            }
            Table t({"id"});
            for (PointId id : r.ids) t.add(id);
            t.print(out, g.format);
            if (g.verbose) err << "returned " << r.ids.size() << ", tested " << r.stats.tested << "\n";
        };
    });

    // knn
    auto* knn = app.add_subcommand("knn", "Exact k nearest neighbors");
    std::string kn_in, kn_tree, kn_query;
    std::size_t kn_k = 5;
    knn->add_option("input", kn_in, "Point file")->required();
    knn->add_option("--kdtree", kn_tree, "kd-tree sidecar (default: input.hgkd)");
    knn->add_option("--query", kn_query, "Query coordinates, comma separated")->required();
    knn->add_option("--k", kn_k, "Number of neighbors")->check(CLI::PositiveNumber);
    knn->callback([&] {
        action = [&] {
            const auto ps = load_input(kn_in);
            const auto tree = data_step([&] { return load_kdtree(or_default(kn_tree, kn_in, ".hgkd"), ps); });
            const auto p = point_arg(kn_query, ps.dim(), "--query");
            KnnStats stats;
            const auto nn = knn_search(tree, p, kn_k, &stats);
            Table t({"rank", "id", "distance"});
            for (std::size_t i = 0; i < nn.size(); ++i) t.add(i + 1, nn[i].id, nn[i].distance);
            t.print(out, g.format);
            if (g.verbose) err << "leaves examined " << stats.leaves_examined << " of " << tree.leaf_count() << "\n";
        };
    });

    // voronoi
    auto* voronoi = app.add_subcommand("voronoi", "Sampled Voronoi tessellation");
    voronoi->require_subcommand(1);
    auto* vbuild = voronoi->add_subcommand("build", "Build the Voronoi sidecar");
    std::string vb_in, vb_out;
    VoronoiBuildConfig vb_cfg;
    vbuild->add_option("input", vb_in, "Point file")->required();
    vbuild->add_option("--seeds", vb_cfg.n_seed, "Number of seeds")->check(CLI::PositiveNumber);
    vbuild->add_option("--probes", vb_cfg.probe_budget, "Extra uniform adjacency probes (0: 10 per seed)");
    vbuild->add_option("--samples", vb_cfg.volume_samples, "Volume samples (0: 100 per seed)");
    vbuild->add_flag("--whiten", vb_cfg.whiten, "Build in whitened coordinates");
    vbuild->add_option("-o,--output", vb_out, "Sidecar path (default: input.hgvr)");
    vbuild->callback([&] {
        action = [&] {
            const auto ps = load_input(vb_in);
            vb_cfg.seed = g.seed;
            vb_cfg.threads = g.threads;
            const auto idx = data_step([&] { return build_voronoi(ps, vb_cfg); });
            data_step([&] { save_voronoi(idx, or_default(vb_out, vb_in, ".hgvr")); return 0; });
            Table t({"seeds", "edges", "mean_degree", "volume_samples"});
            t.add(idx.seed_count(), idx.adjacency.edge_count(),
                   2.0 * static_cast<double>(idx.adjacency.edge_count()) / static_cast<double>(idx.seed_count()), idx.volumes.samples);
            t.print(out, g.format);
        };
    });
    auto* vlocate = voronoi->add_subcommand("locate", "Cell of a point by directed walk");
    std::string vl_in, vl_index, vl_point;
    vlocate->add_option("input", vl_in, "Point file")->required();
    vlocate->add_option("--index", vl_index, "Voronoi sidecar (default: input.hgvr)");
    vlocate->add_option("--point", vl_point, "Coordinates, comma separated")->required();
    vlocate->callback([&] {
        action = [&] {
            const auto ps = load_input(vl_in);
            const auto idx = data_step([&] { return load_voronoi(or_default(vl_index, vl_in, ".hgvr"), ps); });
            const auto r = locate_cell(idx, point_arg(vl_point, ps.dim(), "--point"));
            Table t({"cell", "seed_id", "steps", "walk_miss"});
            t.add(r.cell, idx.seed_ids[r.cell], r.steps, r.walk_miss);
            t.print(out, g.format);
        };
    });
    auto* vdensity = voronoi->add_subcommand("density", "Per-cell volume and density");
    std::string vd_in, vd_index;
    vdensity->add_option("input", vd_in, "Point file")->required();
    vdensity->add_option("--index", vd_index, "Voronoi sidecar (default: input.hgvr)");
    vdensity->callback([&] {
        action = [&] {
            const auto ps = load_input(vd_in);
            const auto idx = data_step([&] { return load_voronoi(or_default(vd_index, vd_in, ".hgvr"), ps); });
            Table t({"cell", "seed_id", "members", "volume", "std_error", "density"});
            for (std::size_t c = 0; c < idx.seed_count(); ++c) {
                const auto m = idx.cell_members(c).size();
                const double v = idx.volumes.volume[c];
                t.add(c, idx.seed_ids[c], m, v, idx.volumes.std_error[c], v > 0.0 ? Json(static_cast<double>(m) / v) : Json("inf"));
            }
            t.print(out, g.format);
        };
    });

    // cluster
    auto* cluster = app.add_subcommand("cluster", "Basin spanning tree clustering over Voronoi cells");
    std::string cl_in, cl_index, cl_out, cl_density = "count";
    std::size_t cl_nseed = 10'000;
    double cl_tau = 0.0;
    cluster->add_option("input", cl_in, "Point file")->required();
    cluster->add_option("--index", cl_index, "Existing Voronoi sidecar; built on the fly when absent");
    cluster->add_option("--nseed", cl_nseed, "Seeds when building")->check(CLI::PositiveNumber);
    cluster->add_option("--merge-tau", cl_tau, "Merge basins whose density dip is below tau times the lower peak");
    cluster->add_option("--density", cl_density, "Cell density")->check(CLI::IsMember({"count", "volume"}));
    cluster->add_option("-o,--output", cl_out, "Per-point cluster CSV (id,cluster); stdout when absent");
    cluster->callback([&] {
        action = [&] {
            const auto ps = load_input(cl_in);
            VoronoiIndex idx;
            if (!cl_index.empty()) {
                idx = data_step([&] { return load_voronoi(cl_index, ps); });
            } else {
                VoronoiBuildConfig vc;
                vc.n_seed = cl_nseed;
                vc.seed = g.seed;
                vc.threads = g.threads;
                idx = data_step([&] { return build_voronoi(ps, vc); });
            }
            BstConfig bc;
            bc.merge_tau = cl_tau;
            bc.mode = cl_density == "count" ? DensityMode::count_over_volume : DensityMode::inverse_volume;
            const auto forest = data_step([&] { return build_bst(idx, bc); });
            const auto per_point = point_clusters(forest, idx.assignment);
            Table points({"id", "cluster"});
            for (std::size_t i = 0; i < per_point.size(); ++i) {
                points.add(i, per_point[i] == BasinForest::kNone ? Json(-1) : Json(per_point[i]));
            }
            std::ostream* report = &out;
            if (cl_out.empty()) {
                points.print(out, g.format);
                report = &err;
            } else {
                std::ofstream f(cl_out);
                if (!f) throw DataError("cannot write " + cl_out);
                points.print(f, "csv");
            }
            if (ps.has_labels()) {
                const auto purity = evaluate_purity(forest, idx.assignment, ps.labels());
                Table t({"cluster", "size", "majority_label", "majority_count"});
                for (const auto& c : purity.clusters) t.add(c.cluster, c.size, c.majority_label, c.majority_count);
                t.print(*report, cl_out.empty() ? "table" : g.format);
                *report << "accuracy " << purity.accuracy << "\n";
            } else {
                *report << "clusters " << forest.cluster_count() << "\n";
            }
        };
    });

    // estimate
    auto* estimate = app.add_subcommand("estimate", "k-nearest-neighbor local polynomial regression");
    estimate->require_subcommand(0, 1);
    std::string es_ref, es_unknown, es_out;
    FitConfig es_cfg;
    estimate->add_option("--ref", es_ref, "Reference set with a target column")->required();
    estimate->add_option("--unknown", es_unknown, "Points to estimate");
    estimate->add_option("--k", es_cfg.k, "Neighbors (0: 4 times the coefficient count)");
    estimate->add_option("--order", es_cfg.order, "Polynomial order 0, 1 or 2")->check(CLI::Range(0, 2));
    estimate->add_option("--ridge", es_cfg.ridge, "Relative ridge on the non-constant coefficients");
    estimate->add_flag("--weighted", es_cfg.distance_weighted, "Tricube distance weights");
    estimate->add_option("-o,--output", es_out, "Unknown set with the estimated target column");
    auto* eval = estimate->add_subcommand("eval", "Cross-validated comparison of two orders");
    std::size_t ev_folds = 5, ev_boot = 1000;
    int ev_a = 0, ev_b = 1;
    eval->add_option("--folds", ev_folds, "Folds")->check(CLI::Range(2, 1000000));
    eval->add_option("--order-a", ev_a, "Baseline order")->check(CLI::Range(0, 2));
    eval->add_option("--order-b", ev_b, "Compared order")->check(CLI::Range(0, 2));
    eval->add_option("--bootstrap", ev_boot, "Bootstrap rounds for the interval");
    eval->callback([&] {
        action = [&] {
            const auto ref = load_input(es_ref);
            FitConfig a = es_cfg, b = es_cfg;
            a.order = ev_a;
            b.order = ev_b;
            const auto r = data_step([&] { return evaluate_estimator(ref, a, b, ev_folds, g.seed, ev_boot, g.threads); });
            Table t({"folds", "points", "rms_a", "mae_a", "rms_b", "mae_b", "improvement_percent", "ci_low", "ci_high"});
            t.add(r.folds, r.points, r.a.rms, r.a.mae, r.b.rms, r.b.mae, r.improvement_percent, r.ci_low, r.ci_high);
            t.print(out, g.format);
        };
    });
    estimate->callback([&] {
        if (eval->parsed()) return;
        action = [&] {
            if (es_unknown.empty() || es_out.empty()) throw CLI::ValidationError("estimate", "needs --unknown and --output");
            const auto ref_points = load_input(es_ref);
            const auto unknown = load_input(es_unknown);
            const ReferenceSet ref = data_step([&] { return ReferenceSet(ref_points); });
            std::function<void(std::size_t)> progress;
            if (g.verbose) progress = [&](std::size_t done) { err << "estimated " << done << " of " << unknown.size() << "\n"; };
            const auto r = data_step([&] { return estimate_all(ref, unknown, es_cfg, g.threads, progress); });
            std::vector<double> values;
            values.reserve(r.estimates.size());
            for (const auto& e : r.estimates) values.push_back(e.value);
            data_step([&] { save_points(unknown.with_targets(std::move(values)), es_out); return 0; });
            Table t({"points", "k_clamped", "order_fallbacks", "rank_deficient", "seconds"});
            t.add(unknown.size(), r.clamped, r.fallbacks, r.rank_deficient, r.seconds);
            t.print(out, g.format);
        };
    });

    // bench
    auto* bench = app.add_subcommand("bench", "Benchmarks");
    bench->require_subcommand(1);
    auto* bench_kd = bench->add_subcommand("kd", "Polytope query speed against a full scan");
    std::string bk_in, bk_report, bk_sel = "0.001,0.01,0.1,0.25,0.5";
    std::size_t bk_queries = 10, bk_n = 1'000'000, bk_dim = 5;
    bench_kd->add_option("input", bk_in, "Point file; a 5-component mixture is generated when absent");
    bench_kd->add_option("--n", bk_n, "Generated points")->check(CLI::PositiveNumber);
    bench_kd->add_option("--dim", bk_dim, "Generated dimension")->check(CLI::PositiveNumber);
    bench_kd->add_option("--selectivities", bk_sel, "Target selectivities, comma separated");
    bench_kd->add_option("--queries", bk_queries, "Random polytopes per selectivity")->check(CLI::PositiveNumber);
    bench_kd->add_option("--selectivity-report", bk_report, "Also write (selectivity, speedup, points_tested) CSV here");
    bench_kd->callback([&] {
        action = [&] {
            const auto sel = parse_doubles(bk_sel, "--selectivities");
            const PointSet ps = bk_in.empty() ? data_step([&] {
                return generate_mixture(g.seed, bk_n, bk_dim, separated_components(Rng::derive(g.seed, 1), bk_dim, 5, 6.0), 0.01);
            })
                                              : load_input(bk_in);
            const auto tree = build_kdtree(ps);
            const auto trials = data_step([&] { return run_polytope_trials(ps, tree, sel, bk_queries, Rng::derive(g.seed, 2)); });
            const auto rows = summarize_trials(trials);
            Table t({"target", "selectivity", "queries", "returned", "points_tested", "tested_per_returned", "kd_seconds",
                     "scan_seconds", "speedup", "exact"});
            for (const auto& r : rows) {
                t.add(r.target, r.mean_selectivity, r.queries, r.returned, r.tested, r.tested_per_returned, r.kd_seconds,
                       r.scan_seconds, r.speedup, r.exact);
            }
            t.print(out, g.format);
            if (!bk_report.empty()) {
                std::ofstream f(bk_report);
                if (!f) throw DataError("cannot write " + bk_report);
                Table rep({"selectivity", "speedup", "points_tested"});
                for (const auto& r : rows) rep.add(r.mean_selectivity, r.speedup, r.tested);
                rep.print(f, "csv");
            }
        };
    });

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP query service until SIGINT/SIGTERM");
    std::string sv_config, sv_listen;
    serve->add_option("--config", sv_config, "Service configuration file")->required();
    serve->add_option("--listen", sv_listen, "host:port, overrides the file and HYPERGRID_LISTEN");
    serve->callback([&] {
        action = [&] {
            auto cfg = data_step([&] { return load_service_config(sv_config); });
            if (!sv_listen.empty()) data_step([&] { apply_listen(cfg, sv_listen); return 0; });
            data_step([&] { serve_until_signal(cfg, out); return 0; });
        };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        if (action) action();
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace hypergrid
