#include "hypergrid/service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "hypergrid/knn.hpp"

namespace hypergrid {

using Json = nlohmann::ordered_json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string resolve(const std::string& base_dir, const std::string& path) {
    const std::filesystem::path p(path);
    return p.is_absolute() ? path : (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

std::size_t parse_count(const std::string& v, std::size_t line) {
    try {
        std::size_t used = 0;
        const auto n = std::stoull(v, &used);
        if (used == v.size() && v.front() != '-') return n;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("config line " + std::to_string(line) + ": expected a non-negative integer, got '" + v + "'");
}

// Client errors carry their HTTP status.
struct RequestError : std::runtime_error {
    int status;
    Json extra;
    RequestError(int s, const std::string& msg, Json more = Json::object()) : std::runtime_error(msg), status(s), extra(std::move(more)) {}
};

Reply json_reply(int status, const Json& j) { return {status, "application/json", j.dump()}; }

Reply error_reply(int status, const std::string& message, const Json& extra = Json::object()) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["error"] = message;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return json_reply(status, j);
}

std::vector<double> number_array(const Json& j, const char* what, std::size_t dim) {
    if (!j.is_array()) throw RequestError(400, std::string(what) + " must be an array of numbers");
    if (j.size() != dim) throw RequestError(400, std::string(what) + " must have " + std::to_string(dim) + " entries");
    std::vector<double> out;
    out.reserve(dim);
    for (const auto& v : j) {
        if (!v.is_number()) throw RequestError(400, std::string(what) + " must be an array of numbers");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw RequestError(400, std::string(what) + " must be finite");
        out.push_back(x);
    }
    return out;
}

const Json& field(const Json& req, const char* name) {
    const auto it = req.find(name);
    if (it == req.end()) throw RequestError(400, std::string("missing field '") + name + "'");
    return *it;
}

BoundingBox parse_box(const Json& req, std::size_t dim) {
    const Json& b = field(req, "box");
    if (!b.is_object()) throw RequestError(400, "box must be an object with lo and hi");
    BoundingBox box;
    box.lo = number_array(field(b, "lo"), "box.lo", dim);
    box.hi = number_array(field(b, "hi"), "box.hi", dim);
    for (std::size_t d = 0; d < dim; ++d) {
        if (box.lo[d] > box.hi[d]) throw RequestError(400, "box.lo must not exceed box.hi");
    }
    return box;
}

std::size_t parse_positive(const Json& req, const char* name) {
    const Json& v = field(req, name);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw RequestError(400, std::string(name) + " must be an integer >= 1");
    return v.get<std::size_t>();
}

Json coords_json(const PointSet& ps, PointId id, std::span<const std::size_t> dims) {
    Json c = Json::array();
    for (std::size_t d : dims) c.push_back(ps.at(id, d));
    return c;
}

std::vector<std::size_t> all_dims(std::size_t dim) {
    std::vector<std::size_t> d(dim);
    for (std::size_t i = 0; i < dim; ++i) d[i] = i;
    return d;
}

Json point_json(const PointSet& ps, PointId id, std::span<const std::size_t> dims) {
    Json p;
    p["id"] = id;
    p["coords"] = coords_json(ps, id, dims);
    if (ps.has_targets()) p["scalar"] = ps.targets()[id];
    return p;
}

// HGPS body: the serving coordinates of the returned points, plus targets when present.
std::string binary_points(const PointSet& ps, std::span<const PointId> ids, std::span<const std::size_t> dims) {
    std::vector<double> rows;
    rows.reserve(ids.size() * dims.size());
    for (PointId id : ids) {
        for (std::size_t d : dims) rows.push_back(ps.at(id, d));
    }
    PointSet out = PointSet::from_rows(dims.size(), rows);
    if (ps.has_targets()) {
        std::vector<double> t;
        t.reserve(ids.size());
        for (PointId id : ids) t.push_back(ps.targets()[id]);
        out = out.with_targets(std::move(t));
    }
    return encode_points(out);
}

void check_cap(std::size_t rows, std::size_t cap, Json stats) {
    if (rows <= cap) return;
    stats["cap"] = cap;
    Json extra;
    extra["stats"] = std::move(stats);
    throw RequestError(413, "result exceeds the row cap", extra);
}

Json header(std::string_view kind, const LoadedDataset& ds) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = kind;
    j["dataset"] = ds.name;
    return j;
}

Reply points_reply(std::string_view kind, const LoadedDataset& ds, std::span<const PointId> ids,
                   std::span<const std::size_t> dims, Json stats, bool binary, const std::vector<double>* distances = nullptr) {
    if (binary) return {200, "application/octet-stream", binary_points(ds.points, ids, dims)};
    Json j = header(kind, ds);
    Json pts = Json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Json p = point_json(ds.points, ids[i], dims);
        if (distances) p["distance"] = (*distances)[i];
        pts.push_back(std::move(p));
    }
    j["points"] = std::move(pts);
    j["stats"] = std::move(stats);
    return json_reply(200, j);
}

Reply do_sample(const LoadedDataset& ds, const Json& req, std::size_t cap, bool binary) {
    const BoundingBox box = parse_box(req, 3);
    const std::size_t n = parse_positive(req, "n");
    if (n > cap) throw RequestError(413, "n exceeds the row cap", Json{{"stats", Json{{"cap", cap}}}});
    const SampleResult r = sample_box(ds.grid, ds.points, box, n);
    Json stats;
    stats["examined"] = r.examined;
    stats["returned"] = r.ids.size();
    stats["layers_used"] = r.layers_used;
    check_cap(r.ids.size(), cap, stats);
    const auto& ci = ds.grid.coord_indices();
    return points_reply("sample", ds, r.ids, std::span<const std::size_t>(ci.data(), ci.size()), std::move(stats), binary);
}

Reply do_kdboxes(const LoadedDataset& ds, const Json& req) {
    const BoundingBox box = parse_box(req, ds.points.dim());
    const std::size_t n = parse_positive(req, "n");
    const SubtreeLevel level = subtree_at_depth(ds.tree, box, n);
    Json j = header("kdboxes", ds);
    j["level"] = level.level;
    Json boxes = Json::array();
    for (const auto& b : level.nodes) {
        Json e;
        e["post_order_id"] = b.post_order_id;
        e["level"] = b.level;
        e["lo"] = b.box.lo;
        e["hi"] = b.box.hi;
        e["population"] = b.population;
        boxes.push_back(std::move(e));
    }
    Json stats;
    stats["examined"] = level.nodes.size();
    stats["returned"] = level.nodes.size();
    j["boxes"] = std::move(boxes);
    j["stats"] = std::move(stats);
    return json_reply(200, j);
}

Reply do_knn(const LoadedDataset& ds, const Json& req, std::size_t cap, bool binary) {
    const auto p = number_array(field(req, "point"), "point", ds.points.dim());
    const std::size_t k = parse_positive(req, "k");
    if (k > cap) throw RequestError(413, "k exceeds the row cap", Json{{"stats", Json{{"cap", cap}}}});
    KnnStats ks;
    const NeighborList nn = knn_search(ds.tree, p, k, &ks);
    std::vector<PointId> ids;
    std::vector<double> dist;
    for (const auto& x : nn) {
        ids.push_back(x.id);
        dist.push_back(x.distance);
    }
    Json stats;
    stats["examined"] = ks.points_scanned;
    stats["returned"] = ids.size();
    stats["leaves_examined"] = ks.leaves_examined;
    const auto dims = all_dims(ds.points.dim());
    return points_reply("knn", ds, ids, dims, std::move(stats), binary, &dist);
}

Reply do_polytope(const LoadedDataset& ds, const Json& req, std::size_t cap, bool binary) {
    const Json& hs = field(req, "halfspaces");
    if (!hs.is_array() || hs.empty()) throw RequestError(400, "halfspaces must be a non-empty array");
    std::vector<Halfspace> list;
    for (const auto& h : hs) {
        if (!h.is_object()) throw RequestError(400, "each halfspace needs normal and offset");
        Halfspace x;
        x.normal = number_array(field(h, "normal"), "normal", ds.points.dim());
        const Json& off = field(h, "offset");
        if (!off.is_number() || !std::isfinite(off.get<double>())) throw RequestError(400, "offset must be a finite number");
        x.offset = off.get<double>();
        list.push_back(std::move(x));
    }
    Polytope poly = [&] {
        try {
            return Polytope(std::move(list));
        } catch (const std::invalid_argument& e) {
            throw RequestError(400, e.what());
        }
    }();
    const PolytopeResult r = query_polytope(ds.tree, poly);
    Json stats;
    stats["examined"] = r.stats.tested + r.stats.taken_whole;
    stats["returned"] = r.ids.size();
    stats["tested"] = r.stats.tested;
    check_cap(r.ids.size(), cap, stats);
    const auto dims = all_dims(ds.points.dim());
    return points_reply("polytope", ds, r.ids, dims, std::move(stats), binary);
}

void require_ladder(const LoadedDataset& ds) {
    if (ds.ladder.empty()) throw RequestError(404, "dataset has no Voronoi index");
}

std::vector<std::uint8_t> seeds_in_box(const LoadedDataset& ds, const VoronoiIndex& v, const BoundingBox& box) {
    std::vector<std::uint8_t> in(v.seed_count());
    std::vector<double> x(ds.points.dim());
    for (std::size_t s = 0; s < v.seed_count(); ++s) {
        ds.points.row(v.seed_ids[s], x);
        in[s] = box.contains_closed(x);
    }
    return in;
}

Reply do_delaunay_edges(const LoadedDataset& ds, const Json& req) {
    require_ladder(ds);
    const BoundingBox box = parse_box(req, ds.points.dim());
    const std::size_t min_edges = parse_positive(req, "min_edges");
    std::size_t examined = 0;
    std::size_t level = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::vector<std::uint8_t> in;
    for (; level < ds.ladder.size(); ++level) {
        const VoronoiIndex& v = ds.ladder[level];
        in = seeds_in_box(ds, v, box);
        edges.clear();
        for (std::uint32_t a = 0; a < v.seed_count(); ++a) {
            if (!in[a]) continue;
            for (std::uint32_t b : v.adjacency.of(a)) {
                if (a < b && in[b]) edges.emplace_back(a, b);
            }
        }
        examined += v.adjacency.edge_count();
        if (edges.size() >= min_edges || level + 1 == ds.ladder.size()) break;
    }
    const VoronoiIndex& v = ds.ladder[level];
    Json j = header("delaunay_edges", ds);
    j["level"] = level;
    j["seed_count"] = v.seed_count();
    const auto dims = all_dims(ds.points.dim());
    Json seeds = Json::array();
    for (std::size_t s = 0; s < v.seed_count(); ++s) {
        if (in[s]) seeds.push_back(point_json(ds.points, v.seed_ids[s], dims));
    }
    Json list = Json::array();
    for (auto [a, b] : edges) list.push_back(Json::array({v.seed_ids[a], v.seed_ids[b]}));
    Json stats;
    stats["examined"] = examined;
    stats["returned"] = edges.size();
    j["seeds"] = std::move(seeds);
    j["edges"] = std::move(list);
    j["stats"] = std::move(stats);
    return json_reply(200, j);
}

Reply do_voronoi_cells(const LoadedDataset& ds, const Json& req, std::size_t cap) {
    require_ladder(ds);
    const BoundingBox box = parse_box(req, ds.points.dim());
    std::size_t level = 0;
    if (req.contains("level")) {
        const Json& l = req["level"];
        if (!l.is_number_integer() || l.get<std::int64_t>() < 0 || l.get<std::size_t>() >= ds.ladder.size()) {
            throw RequestError(400, "level must index the Voronoi ladder (0.." + std::to_string(ds.ladder.size() - 1) + ")");
        }
        level = l.get<std::size_t>();
    }
    bool with_members = true;
    if (req.contains("members")) {
        if (!req["members"].is_boolean()) throw RequestError(400, "members must be a boolean");
        with_members = req["members"].get<bool>();
    }
    const VoronoiIndex& v = ds.ladder[level];
    const auto in = seeds_in_box(ds, v, box);
    std::size_t rows = 0;
    for (std::size_t c = 0; c < v.seed_count(); ++c) {
        if (in[c]) rows += with_members ? v.cell_members(c).size() : 1;
    }
    Json stats;
    stats["examined"] = v.seed_count();
    stats["returned"] = rows;
    check_cap(rows, cap, stats);
    const auto dims = all_dims(ds.points.dim());
    Json cells = Json::array();
    for (std::size_t c = 0; c < v.seed_count(); ++c) {
        if (!in[c]) continue;
        Json e;
        e["cell"] = c;
        e["seed"] = v.seed_ids[c];
        e["coords"] = coords_json(ds.points, v.seed_ids[c], dims);
        e["volume"] = v.volumes.volume[c];
        e["std_error"] = v.volumes.std_error[c];
        const auto members = v.cell_members(c);
        e["member_count"] = members.size();
        if (v.volumes.volume[c] > 0.0) {
            e["density"] = static_cast<double>(members.size()) / v.volumes.volume[c];
        } else {
            e["density"] = nullptr;
        }
        if (with_members) e["members"] = Json(std::vector<PointId>(members.begin(), members.end()));
        cells.push_back(std::move(e));
    }
    Json j = header("voronoi_cells", ds);
    j["level"] = level;
    j["seed_count"] = v.seed_count();
    j["cells"] = std::move(cells);
    j["stats"] = std::move(stats);
    return json_reply(200, j);
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

} // namespace

void apply_listen(ServiceConfig& cfg, std::string_view listen) {
    const auto colon = listen.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("listen address must be host:port");
    const std::string port(listen.substr(colon + 1));
    std::size_t used = 0;
    int p = -1;
    try {
        p = std::stoi(port, &used);
    } catch (const std::exception&) {
    }
    if (used != port.size() || p < 0 || p > 65535) throw std::invalid_argument("bad port in listen address '" + std::string(listen) + "'");
    if (colon > 0) cfg.host = std::string(listen.substr(0, colon));
    cfg.port = p;
}

ServiceConfig parse_service_config(std::string_view text, const std::string& base_dir) {
    ServiceConfig cfg;
    DatasetConfig* current = nullptr;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(line_no) + ": unterminated section");
            const std::string inner = trim(std::string_view(line).substr(1, line.size() - 2));
            if (inner.rfind("dataset ", 0) != 0 || trim(inner.substr(8)).empty()) {
                throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected [dataset NAME]");
            }
            DatasetConfig d;
            d.name = trim(inner.substr(8));
            for (const auto& other : cfg.datasets) {
                if (other.name == d.name) throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate dataset " + d.name);
            }
            cfg.datasets.push_back(std::move(d));
            current = &cfg.datasets.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (!current) {
            if (key == "listen") {
                apply_listen(cfg, value);
            } else if (key == "row_cap") {
                cfg.row_cap = parse_count(value, line_no);
            } else if (key == "threads") {
                cfg.threads = static_cast<unsigned>(std::max<std::size_t>(1, parse_count(value, line_no)));
            } else {
                throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
            }
        } else if (key == "points") {
            current->points = resolve(base_dir, value);
        } else if (key == "grid") {
            current->grid = resolve(base_dir, value);
        } else if (key == "kdtree") {
            current->kdtree = resolve(base_dir, value);
        } else if (key == "voronoi") {
            std::istringstream list(value);
            std::string item;
            while (std::getline(list, item, ',')) {
                item = trim(item);
                if (!item.empty()) current->voronoi.push_back(resolve(base_dir, item));
            }
        } else {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown dataset key '" + key + "'");
        }
    }
    for (auto& d : cfg.datasets) {
        if (d.points.empty()) throw std::invalid_argument("dataset " + d.name + " has no points file");
        if (d.grid.empty()) d.grid = d.points + ".hglg";
        if (d.kdtree.empty()) d.kdtree = d.points + ".hgkd";
    }
    return cfg;
}

ServiceConfig load_service_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::stringstream text;
    text << in.rdbuf();
    const auto dir = std::filesystem::path(path).parent_path().string();
    ServiceConfig cfg = parse_service_config(text.str(), dir.empty() ? "." : dir);
    if (const char* listen = std::getenv("HYPERGRID_LISTEN"); listen && *listen) apply_listen(cfg, listen);
    return cfg;
}

LoadedDataset load_dataset(const DatasetConfig& cfg) {
    auto require = [](const std::string& path, const char* what) {
        if (!std::filesystem::exists(path)) throw std::runtime_error(std::string("missing ") + what + " file: " + path);
    };
    require(cfg.points, "points");
    require(cfg.grid, "grid index");
    require(cfg.kdtree, "kd-tree index");
    for (const auto& v : cfg.voronoi) require(v, "Voronoi index");

    auto wrap = [](const std::string& path, auto&& load) {
        try {
            return load();
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": " + e.what());
        }
    };
    LoadedDataset ds;
    ds.name = cfg.name;
    ds.points = wrap(cfg.points, [&] { return load_points(cfg.points); });
    ds.grid = wrap(cfg.grid, [&] { return load_grid(cfg.grid); });
    if (ds.grid.size() != ds.points.size()) throw std::runtime_error(cfg.grid + ": grid does not match " + cfg.points);
    ds.tree = wrap(cfg.kdtree, [&] { return load_kdtree(cfg.kdtree, ds.points); });
    for (const auto& v : cfg.voronoi) ds.ladder.push_back(wrap(v, [&] { return load_voronoi(v, ds.points); }));
    std::stable_sort(ds.ladder.begin(), ds.ladder.end(),
                     [](const VoronoiIndex& a, const VoronoiIndex& b) { return a.seed_count() < b.seed_count(); });
    return ds;
}

QueryEngine::QueryEngine(std::vector<LoadedDataset> datasets, std::size_t row_cap)
    : datasets_(std::move(datasets)), row_cap_(row_cap) {}

const LoadedDataset* QueryEngine::find(std::string_view name) const {
    for (const auto& d : datasets_) {
        if (d.name == name) return &d;
    }
    return nullptr;
}

Reply QueryEngine::health() const {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["status"] = "ok";
    Json list = Json::array();
    for (const auto& d : datasets_) {
        Json e;
        e["name"] = d.name;
        e["points"] = d.points.size();
        e["dim"] = d.points.dim();
        e["grid_coords"] = d.grid.coord_indices();
        e["grid_box"] = Json{{"lo", d.grid.box().lo}, {"hi", d.grid.box().hi}};
        e["grid_layers"] = d.grid.layer_count();
        e["kd_leaves"] = d.tree.leaf_count();
        Json seeds = Json::array();
        for (const auto& v : d.ladder) seeds.push_back(v.seed_count());
        e["voronoi_seeds"] = std::move(seeds);
        e["has_targets"] = d.points.has_targets();
        list.push_back(std::move(e));
    }
    j["datasets"] = std::move(list);
    j["row_cap"] = row_cap_;
    return json_reply(200, j);
}

Reply QueryEngine::handle(std::string_view dataset, std::string_view endpoint, std::string_view body, bool binary) const {
    try {
        const LoadedDataset* ds = find(dataset);
        if (!ds) throw RequestError(404, "unknown dataset '" + std::string(dataset) + "'");
        Json req;
        try {
            req = Json::parse(body);
        } catch (const Json::parse_error&) {
            throw RequestError(400, "request body is not valid JSON");
        }
        if (!req.is_object()) throw RequestError(400, "request body must be a JSON object");
        const Json& version = field(req, "schema_version");
        if (!version.is_number_integer() || version.get<std::int64_t>() != kSchemaVersion) {
            throw RequestError(400, "unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
        }
        if (endpoint == "sample") return do_sample(*ds, req, row_cap_, binary);
        if (endpoint == "kdboxes") return do_kdboxes(*ds, req);
        if (endpoint == "knn") return do_knn(*ds, req, row_cap_, binary);
        if (endpoint == "polytope") return do_polytope(*ds, req, row_cap_, binary);
        if (endpoint == "delaunay_edges") return do_delaunay_edges(*ds, req);
        if (endpoint == "voronoi_cells") return do_voronoi_cells(*ds, req, row_cap_);
        throw RequestError(404, "unknown endpoint '" + std::string(endpoint) + "'");
    } catch (const RequestError& e) {
        return error_reply(e.status, e.what(), e.extra);
    } catch (const Json::exception& e) {
        return error_reply(400, std::string("malformed request: ") + e.what());
    } catch (const std::invalid_argument& e) {
        return error_reply(400, e.what());
    }
}

struct Service::Impl {
    httplib::Server server;
    int port = -1;
    std::mutex log_mutex;
    std::function<void(const std::string&)> log;
};

Service::Service(const ServiceConfig& cfg)
    : Service(cfg, [&] {
          std::vector<LoadedDataset> loaded;
          for (const auto& d : cfg.datasets) loaded.push_back(load_dataset(d));
          return std::make_shared<const QueryEngine>(std::move(loaded), cfg.row_cap);
      }()) {}

Service::Service(const ServiceConfig& cfg, std::shared_ptr<const QueryEngine> engine)
    : engine_(std::move(engine)), impl_(std::make_unique<Impl>()) {
    auto& svr = impl_->server;
    const unsigned threads = std::max(1u, cfg.threads);
    svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    impl_->log = [](const std::string& line) {
        std::fputs((line + "\n").c_str(), stderr);
    };

    auto timed = [](httplib::Response& res, auto&& body) {
        const auto start = std::chrono::steady_clock::now();
        Reply r = body();
        const auto us = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();
        res.status = r.status;
        res.set_header("X-Hypergrid-Elapsed-Us", std::to_string(us));
        res.set_content(std::move(r.body), r.content_type);
    };
    svr.Get("/health", [this, timed](const httplib::Request&, httplib::Response& res) {
        timed(res, [&] { return engine_->health(); });
    });
    svr.Post(R"(/v1/([^/]+)/([a-z_]+))", [this, timed](const httplib::Request& req, httplib::Response& res) {
        const bool binary = req.get_header_value("Accept").find("application/octet-stream") != std::string::npos;
        timed(res, [&] { return engine_->handle(req.matches[1].str(), req.matches[2].str(), req.body, binary); });
    });
    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        Json j;
        j["schema_version"] = kSchemaVersion;
        j["error"] = what;
        res.status = 500;
        res.set_content(j.dump(), "application/json");
    });
    svr.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
        Json j;
        j["ts"] = timestamp();
        j["method"] = req.method;
        j["path"] = req.path;
        j["status"] = res.status;
        j["bytes"] = res.body.size();
        const auto us = res.get_header_value("X-Hypergrid-Elapsed-Us");
        if (!us.empty()) j["elapsed_us"] = std::stoll(us);
        j["remote"] = req.remote_addr;
        std::lock_guard lock(impl_->log_mutex);
        if (impl_->log) impl_->log(j.dump());
    });

    if (cfg.port == 0) {
        impl_->port = svr.bind_to_any_port(cfg.host);
    } else if (svr.bind_to_port(cfg.host, cfg.port)) {
        impl_->port = cfg.port;
    }
    if (impl_->port <= 0) throw std::runtime_error("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
}

Service::~Service() { stop(); }

int Service::port() const { return impl_->port; }

void Service::run() { impl_->server.listen_after_bind(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() {
    if (impl_) impl_->server.stop();
}

void Service::set_log(std::function<void(const std::string&)> sink) {
    std::lock_guard lock(impl_->log_mutex);
    impl_->log = std::move(sink);
}

} // namespace hypergrid
