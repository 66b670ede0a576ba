#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hypergrid/dataset.hpp"
#include "hypergrid/kdtree.hpp"
#include "hypergrid/layered_grid.hpp"
#include "hypergrid/voronoi.hpp"

namespace hypergrid {

inline constexpr int kSchemaVersion = 1;

struct DatasetConfig {
    std::string name;
    std::string points;
    std::string grid;   // default: points + ".hglg"
    std::string kdtree; // default: points + ".hgkd"
    /// Voronoi sidecars forming the edge resolution ladder; sorted by seed count at load.
    std::vector<std::string> voronoi;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080; // 0: any free port
    std::size_t row_cap = 1'000'000;
    unsigned threads = 8;
    std::vector<DatasetConfig> datasets;
};

/**
 * Key/value configuration, one `key = value` per line, `#` comments:
 *
 *     listen = 127.0.0.1:8080
 *     row_cap = 1000000
 *     threads = 8
 *     [dataset sky]
 *     points = sky.hgps
 *     kdtree = sky.hgps.hgkd
 *     voronoi = sky_1k.hgvr, sky_10k.hgvr
 *
 * Relative paths are resolved against base_dir. Throws std::invalid_argument
 * with the line number on malformed input.
 */
ServiceConfig parse_service_config(std::string_view text, const std::string& base_dir = ".");
/// Reads the file, then applies HYPERGRID_LISTEN (host:port) when set.
ServiceConfig load_service_config(const std::string& path);
/// "host:port" or ":port".
void apply_listen(ServiceConfig& cfg, std::string_view listen);

struct LoadedDataset {
    std::string name;
    PointSet points;
    LayeredGridIndex grid;
    KdTree tree;
    std::vector<VoronoiIndex> ladder; // ascending seed count
};

/// Loads a dataset and its sidecars; a missing or unreadable file is reported by path.
LoadedDataset load_dataset(const DatasetConfig& cfg);

struct Reply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/**
 * The request handlers, independent of the transport. Every method is const
 * and reads only immutable indexes, so one engine serves concurrent requests.
 *
 * Endpoints (POST, JSON body with "schema_version"):
 *   sample          {box: {lo, hi} over the grid's 3 coordinates, n}
 *   kdboxes         {box, n}
 *   knn             {point, k}
 *   polytope        {halfspaces: [{normal, offset}]}
 *   delaunay_edges  {box, min_edges}
 *   voronoi_cells   {box, level?, members?}
 * Point payloads of sample, knn and polytope come back as HGPS bytes instead
 * of JSON when binary is set.
 */
class QueryEngine {
public:
    QueryEngine(std::vector<LoadedDataset> datasets, std::size_t row_cap);

    Reply health() const;
    Reply handle(std::string_view dataset, std::string_view endpoint, std::string_view body, bool binary) const;

    const LoadedDataset* find(std::string_view name) const;
    std::size_t row_cap() const { return row_cap_; }

private:
    std::vector<LoadedDataset> datasets_;
    std::size_t row_cap_;
};

/// HTTP front end over a QueryEngine. Logs one JSON line per request to the log sink.
class Service {
public:
    /// Loads every dataset (throws naming the first missing file) and binds the port.
    explicit Service(const ServiceConfig& cfg);
    Service(const ServiceConfig& cfg, std::shared_ptr<const QueryEngine> engine);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    int port() const;
    /// Serves until stop(); call from a dedicated thread or the main thread.
    void run();
    /// Blocks until run() accepts connections.
    void wait_until_ready() const;
    void stop();
    void set_log(std::function<void(const std::string&)> sink);
    const QueryEngine& engine() const { return *engine_; }

private:
    struct Impl;
    std::shared_ptr<const QueryEngine> engine_;
    std::unique_ptr<Impl> impl_;
};

} // namespace hypergrid
