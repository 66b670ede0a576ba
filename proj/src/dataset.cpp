#include "hypergrid/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "hypergrid/binary_io.hpp"
#include "hypergrid/rng.hpp"

namespace hypergrid {

namespace {

constexpr char kPointsMagic[] = "HGPS";
constexpr std::uint16_t kPointsVersion = 1;
constexpr std::uint8_t kFlagLabels = 1;
constexpr std::uint8_t kFlagTargets = 2;

std::string row_message(std::size_t row, const std::string& what) {
    return "row " + std::to_string(row) + ": " + what;
}

// Appends little-endian encodings to a byte string.
class ByteSink {
public:
    template <typename T>
    void put(T value) {
        const T le = io::to_little_endian(value);
        out_.append(reinterpret_cast<const char*>(&le), sizeof(T));
    }
    template <typename T>
    void put_array(std::span<const T> values) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
        } else {
            for (const T& v : values) put(v);
        }
    }
    std::string take() { return std::move(out_); }
    void reserve(std::size_t n) { out_.reserve(n); }
    void append(std::string_view s) { out_.append(s); }

private:
    std::string out_;
};

class ByteSource {
public:
    explicit ByteSource(std::string_view bytes) : bytes_(bytes) {}
    template <typename T>
    T get() {
        T value{};
        take(&value, sizeof(T));
        return io::to_little_endian(value);
    }
    template <typename T>
    void get_array(std::span<T> values) {
        take(values.data(), values.size_bytes());
        if constexpr (std::endian::native == std::endian::big) {
            for (T& v : values) v = io::to_little_endian(v);
        }
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::string_view peek(std::size_t n) const { return bytes_.substr(pos_, n); }
    void skip(std::size_t n) { pos_ += n; }

private:
    void take(void* dst, std::size_t n) {
        if (remaining() < n) throw FormatError("HGPS payload truncated");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            return fields;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

PointSet load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": missing header row");
    const auto header = split_csv(line);
    std::vector<std::size_t> coord_cols;
    std::optional<std::size_t> label_col, target_col;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c].empty()) throw FormatError(path + ": empty column name in header");
        if (header[c] == "label") {
            if (label_col) throw FormatError(path + ": duplicate label column");
            label_col = c;
        } else if (header[c] == "target") {
            if (target_col) throw FormatError(path + ": duplicate target column");
            target_col = c;
        } else {
            coord_cols.push_back(c);
        }
    }
    const std::size_t dim = coord_cols.size();
    if (dim == 0) throw FormatError(path + ": header has no coordinate columns");

    std::vector<std::vector<double>> columns(dim);
    std::vector<std::int32_t> labels;
    std::vector<double> targets;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != header.size()) {
            throw FormatError(path + ": " + row_message(row, "expected " + std::to_string(header.size()) +
                                                                 " fields, found " + std::to_string(fields.size())));
        }
        for (std::size_t d = 0; d < dim; ++d) {
            double v = 0;
            if (!parse_number(fields[coord_cols[d]], v)) {
                throw FormatError(path + ": " + row_message(row, "cannot parse \"" +
                                                                     std::string(fields[coord_cols[d]]) + "\""));
            }
            if (!std::isfinite(v)) throw FormatError(path + ": " + row_message(row, "non-finite value"));
            columns[d].push_back(v);
        }
        if (label_col) {
            std::int32_t v = 0;
            if (!parse_number(fields[*label_col], v)) {
                throw FormatError(path + ": " + row_message(row, "bad label \"" + std::string(fields[*label_col]) + "\""));
            }
            labels.push_back(v);
        }
        if (target_col) {
            double v = 0;
            if (!parse_number(fields[*target_col], v) || !std::isfinite(v)) {
                throw FormatError(path + ": " + row_message(row, "bad target \"" + std::string(fields[*target_col]) + "\""));
            }
            targets.push_back(v);
        }
        ++row;
    }
    std::vector<double> coords;
    coords.reserve(dim * row);
    for (auto& col : columns) coords.insert(coords.end(), col.begin(), col.end());
    std::optional<std::vector<std::int32_t>> opt_labels;
    std::optional<std::vector<double>> opt_targets;
    if (label_col) opt_labels = std::move(labels);
    if (target_col) opt_targets = std::move(targets);
    return PointSet(dim, std::move(coords), std::move(opt_labels), std::move(opt_targets));
}

void save_csv(const PointSet& ps, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    for (std::size_t d = 0; d < ps.dim(); ++d) out << (d ? "," : "") << 'x' << d;
    if (ps.has_labels()) out << ",label";
    if (ps.has_targets()) out << ",target";
    out << '\n';
    char buf[32];
    auto put = [&](double v) {
        auto res = std::to_chars(buf, buf + sizeof(buf), v);
        out.write(buf, res.ptr - buf);
    };
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t d = 0; d < ps.dim(); ++d) {
            if (d) out << ',';
            put(ps.at(i, d));
        }
        if (ps.has_labels()) out << ',' << ps.labels()[i];
        if (ps.has_targets()) {
            out << ',';
            put(ps.targets()[i]);
        }
        out << '\n';
    }
    if (!out) throw FormatError("write failed: " + path);
}

} // namespace

// ---------------------------------------------------------------------------
// BoundingBox

BoundingBox::BoundingBox(std::vector<double> lo_, std::vector<double> hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("bounding box lo/hi dimension mismatch");
}

bool BoundingBox::valid() const {
    if (lo.size() != hi.size()) return false;
    for (std::size_t d = 0; d < lo.size(); ++d) {
        if (!(lo[d] <= hi[d])) return false;
    }
    return true;
}

bool BoundingBox::contains_closed(std::span<const double> x) const {
    for (std::size_t d = 0; d < lo.size(); ++d) {
        if (x[d] < lo[d] || x[d] > hi[d]) return false;
    }
    return true;
}

bool BoundingBox::contains_half_open(std::span<const double> x) const {
    for (std::size_t d = 0; d < lo.size(); ++d) {
        if (x[d] < lo[d] || x[d] >= hi[d]) return false;
    }
    return true;
}

bool BoundingBox::intersects(const BoundingBox& other) const {
    for (std::size_t d = 0; d < lo.size(); ++d) {
        if (other.hi[d] < lo[d] || other.lo[d] > hi[d]) return false;
    }
    return true;
}

double BoundingBox::volume() const {
    double v = 1.0;
    for (std::size_t d = 0; d < lo.size(); ++d) v *= hi[d] - lo[d];
    return v;
}

double BoundingBox::min_distance2(std::span<const double> x) const {
    double sum = 0.0;
    for (std::size_t d = 0; d < lo.size(); ++d) {
        double diff = 0.0;
        if (x[d] < lo[d]) diff = lo[d] - x[d];
        else if (x[d] > hi[d]) diff = x[d] - hi[d];
        sum += diff * diff;
    }
    return sum;
}

// ---------------------------------------------------------------------------
// PointSet

PointSet::PointSet(std::size_t dim, std::vector<double> column_major, std::optional<std::vector<std::int32_t>> labels,
                   std::optional<std::vector<double>> targets)
    : dim_(dim), coords_(std::move(column_major)) {
    if (dim_ == 0) throw std::invalid_argument("point set dimension must be >= 1");
    if (coords_.size() % dim_ != 0) throw std::invalid_argument("coordinate count is not a multiple of the dimension");
    count_ = coords_.size() / dim_;
    if (count_ > std::numeric_limits<PointId>::max()) throw std::invalid_argument("too many points for 32-bit ids");
    for (std::size_t d = 0; d < dim_; ++d) {
        for (std::size_t i = 0; i < count_; ++i) {
            if (!std::isfinite(coords_[d * count_ + i])) {
                throw std::invalid_argument(row_message(i, "non-finite coordinate in column " + std::to_string(d)));
            }
        }
    }
    if (labels) {
        if (labels->size() != count_) throw std::invalid_argument("label count differs from point count");
        labels_ = std::move(*labels);
        has_labels_ = true;
    }
    if (targets) {
        if (targets->size() != count_) throw std::invalid_argument("target count differs from point count");
        for (std::size_t i = 0; i < count_; ++i) {
            if (!std::isfinite((*targets)[i])) throw std::invalid_argument(row_message(i, "non-finite target"));
        }
        targets_ = std::move(*targets);
        has_targets_ = true;
    }
}

PointSet PointSet::from_rows(std::size_t dim, std::span<const double> row_major,
                             std::optional<std::vector<std::int32_t>> labels,
                             std::optional<std::vector<double>> targets) {
    if (dim == 0) throw std::invalid_argument("point set dimension must be >= 1");
    if (row_major.size() % dim != 0) throw std::invalid_argument("coordinate count is not a multiple of the dimension");
    const std::size_t n = row_major.size() / dim;
    std::vector<double> cols(row_major.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dim; ++d) cols[d * n + i] = row_major[i * dim + d];
    }
    return PointSet(dim, std::move(cols), std::move(labels), std::move(targets));
}

void PointSet::row(std::size_t i, std::span<double> out) const {
    for (std::size_t d = 0; d < dim_; ++d) out[d] = coords_[d * count_ + i];
}

std::vector<double> PointSet::row(std::size_t i) const {
    std::vector<double> out(dim_);
    row(i, out);
    return out;
}

std::vector<double> PointSet::rows() const {
    std::vector<double> out(coords_.size());
    for (std::size_t d = 0; d < dim_; ++d) {
        const double* col = coords_.data() + d * count_;
        for (std::size_t i = 0; i < count_; ++i) out[i * dim_ + d] = col[i];
    }
    return out;
}

PointSet PointSet::subset(std::span<const PointId> ids) const {
    std::vector<double> cols(ids.size() * dim_);
    for (std::size_t d = 0; d < dim_; ++d) {
        for (std::size_t j = 0; j < ids.size(); ++j) cols[d * ids.size() + j] = at(ids[j], d);
    }
    std::optional<std::vector<std::int32_t>> lab;
    std::optional<std::vector<double>> tgt;
    if (has_labels_) {
        lab.emplace(ids.size());
        for (std::size_t j = 0; j < ids.size(); ++j) (*lab)[j] = labels_[ids[j]];
    }
    if (has_targets_) {
        tgt.emplace(ids.size());
        for (std::size_t j = 0; j < ids.size(); ++j) (*tgt)[j] = targets_[ids[j]];
    }
    return PointSet(dim_, std::move(cols), std::move(lab), std::move(tgt));
}

PointSet PointSet::with_targets(std::vector<double> targets) const {
    std::optional<std::vector<std::int32_t>> lab;
    if (has_labels_) lab = labels_;
    return PointSet(dim_, coords_, std::move(lab), std::move(targets));
}

// ---------------------------------------------------------------------------
// Files

FileFormat format_from_path(const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot != std::string::npos) {
        std::string ext = path.substr(dot + 1);
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == "csv") return FileFormat::csv;
    }
    return FileFormat::binary;
}

std::string encode_points(const PointSet& ps) {
    if (ps.dim() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("dimension exceeds u16");
    ByteSink sink;
    sink.reserve(17 + ps.coords().size() * 8 + ps.labels().size() * 4 + ps.targets().size() * 8);
    sink.append(std::string_view(kPointsMagic, 4));
    sink.put<std::uint16_t>(kPointsVersion);
    sink.put<std::uint16_t>(static_cast<std::uint16_t>(ps.dim()));
    sink.put<std::uint64_t>(ps.size());
    std::uint8_t flags = 0;
    if (ps.has_labels()) flags |= kFlagLabels;
    if (ps.has_targets()) flags |= kFlagTargets;
    sink.put<std::uint8_t>(flags);
    sink.put_array(ps.coords());
    if (ps.has_labels()) sink.put_array(ps.labels());
    if (ps.has_targets()) sink.put_array(ps.targets());
    return sink.take();
}

PointSet decode_points(std::string_view bytes) {
    ByteSource src(bytes);
    if (src.peek(4) != std::string_view(kPointsMagic, 4)) throw FormatError("malformed header: bad magic");
    src.skip(4);
    const auto version = src.get<std::uint16_t>();
    if (version != kPointsVersion) throw FormatError("malformed header: unsupported version " + std::to_string(version));
    const auto dim = src.get<std::uint16_t>();
    const auto n = src.get<std::uint64_t>();
    const auto flags = src.get<std::uint8_t>();
    if (dim == 0) throw FormatError("malformed header: dimension 0");
    if ((flags & ~(kFlagLabels | kFlagTargets)) != 0) throw FormatError("malformed header: unknown flags");
    std::uint64_t expected = n * dim * 8;
    if (flags & kFlagLabels) expected += n * 4;
    if (flags & kFlagTargets) expected += n * 8;
    if (n > (std::uint64_t{1} << 40) || src.remaining() != expected) {
        throw FormatError("dimension mismatch: payload holds " + std::to_string(src.remaining()) + " bytes, header implies " +
                          std::to_string(expected));
    }
    std::vector<double> coords(n * dim);
    src.get_array(std::span<double>(coords));
    for (std::size_t d = 0; d < dim; ++d) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(coords[d * n + i])) throw FormatError(row_message(i, "non-finite value"));
        }
    }
    std::optional<std::vector<std::int32_t>> labels;
    std::optional<std::vector<double>> targets;
    if (flags & kFlagLabels) {
        labels.emplace(n);
        src.get_array(std::span<std::int32_t>(*labels));
    }
    if (flags & kFlagTargets) {
        targets.emplace(n);
        src.get_array(std::span<double>(*targets));
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite((*targets)[i])) throw FormatError(row_message(i, "non-finite target"));
        }
    }
    return PointSet(dim, std::move(coords), std::move(labels), std::move(targets));
}

PointSet load_points(const std::string& path, FileFormat format) {
    if (format == FileFormat::csv) return load_csv(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return decode_points(buf.view());
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_points(const PointSet& ps, const std::string& path, FileFormat format) {
    if (format == FileFormat::csv) {
        save_csv(ps, path);
        return;
    }
    const std::string bytes = encode_points(ps);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<MixtureComponent> separated_components(std::uint64_t seed, std::size_t dim, std::size_t count,
                                                   double separation) {
    if (dim == 0 || count == 0) throw std::invalid_argument("need dim >= 1 and at least one component");
    if (!(separation >= 0.0) || !std::isfinite(separation)) throw std::invalid_argument("separation must be finite and >= 0");
    std::vector<MixtureComponent> out;
    const double axis = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < std::min(count, dim); ++c) {
        MixtureComponent m;
        m.mean.assign(dim, 0.0);
        m.mean[c] = axis;
        m.stdev.assign(dim, 1.0);
        out.push_back(std::move(m));
    }
    Rng rng(seed);
    double half = std::max(1.0, separation) * std::pow(static_cast<double>(count), 1.0 / static_cast<double>(dim));
    std::size_t attempts = 0;
    while (out.size() < count) {
        MixtureComponent m;
        for (std::size_t d = 0; d < dim; ++d) m.mean.push_back(rng.uniform(-half, half));
        m.stdev.assign(dim, 1.0);
        bool far = true;
        for (const auto& o : out) {
            double d2 = 0.0;
            for (std::size_t d = 0; d < dim; ++d) d2 += (o.mean[d] - m.mean[d]) * (o.mean[d] - m.mean[d]);
            far = far && d2 >= separation * separation;
        }
        if (far) {
            out.push_back(std::move(m));
        } else if (++attempts % 1000 == 0) {
            half *= 1.5;
        }
    }
    return out;
}

PointSet generate_mixture(std::uint64_t seed, std::size_t n, std::size_t dim,
                          const std::vector<MixtureComponent>& components, double outlier_fraction) {
    if (dim == 0) throw std::invalid_argument("dimension must be >= 1");
    if (components.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) throw std::invalid_argument("outlier_fraction must be in [0,1)");
    double total_weight = 0.0;
    for (const auto& c : components) {
        if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw std::invalid_argument("component weights must be positive");
        if (c.mean.size() != dim || c.stdev.size() != dim) throw std::invalid_argument("component mean/stdev dimension mismatch");
        for (std::size_t d = 0; d < dim; ++d) {
            if (!std::isfinite(c.mean[d])) throw std::invalid_argument("component mean must be finite");
            if (!(c.stdev[d] > 0.0) || !std::isfinite(c.stdev[d])) throw std::invalid_argument("component stdevs must be positive");
        }
        total_weight += c.weight;
    }
    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& c : components) {
        acc += c.weight / total_weight;
        cumulative.push_back(acc);
    }
    cumulative.back() = 1.0;

    std::vector<double> env_lo(dim, std::numeric_limits<double>::infinity());
    std::vector<double> env_hi(dim, -std::numeric_limits<double>::infinity());
    for (const auto& c : components) {
        for (std::size_t d = 0; d < dim; ++d) {
            env_lo[d] = std::min(env_lo[d], c.mean[d] - 4.0 * c.stdev[d]);
            env_hi[d] = std::max(env_hi[d], c.mean[d] + 4.0 * c.stdev[d]);
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        const double pad = 0.1 * (env_hi[d] - env_lo[d]);
        env_lo[d] -= pad;
        env_hi[d] += pad;
    }

    Rng rng(seed);
    std::vector<double> coords(n * dim);
    std::vector<std::int32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        if (u < outlier_fraction) {
            labels[i] = -1;
            for (std::size_t d = 0; d < dim; ++d) coords[d * n + i] = rng.uniform(env_lo[d], env_hi[d]);
            continue;
        }
        const double pick = rng.uniform();
        const auto c = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) -
                                                cumulative.begin());
        const std::size_t comp = std::min(c, components.size() - 1);
        labels[i] = static_cast<std::int32_t>(comp);
        for (std::size_t d = 0; d < dim; ++d) {
            coords[d * n + i] = components[comp].mean[d] + components[comp].stdev[d] * rng.normal();
        }
    }
    return PointSet(dim, std::move(coords), std::move(labels));
}

// ---------------------------------------------------------------------------
// Transforms

LinearTransform LinearTransform::identity(std::size_t dim) {
    LinearTransform t;
    t.kind = TransformKind::pca;
    t.in_dim = dim;
    t.out_dim = dim;
    t.mean.assign(dim, 0.0);
    t.matrix.assign(dim * dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) t.matrix[d * dim + d] = 1.0;
    return t;
}

namespace {

struct Moments {
    std::vector<double> mean;
    Eigen::MatrixXd covariance;
};

Moments sample_moments(const PointSet& ps) {
    const std::size_t n = ps.size();
    const std::size_t dim = ps.dim();
    Moments m;
    m.mean.assign(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
        const auto col = ps.column(d);
        m.mean[d] = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
    }
    m.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    std::vector<double> centered(n);
    for (std::size_t a = 0; a < dim; ++a) {
        const auto ca = ps.column(a);
        for (std::size_t b = a; b < dim; ++b) {
            const auto cb = ps.column(b);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) sum += (ca[i] - m.mean[a]) * (cb[i] - m.mean[b]);
            const double cov = sum / static_cast<double>(n - 1);
            m.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = cov;
            m.covariance(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = cov;
        }
    }
    return m;
}

struct Eigenpairs {
    std::vector<double> values;               // descending
    std::vector<std::vector<double>> vectors; // unit rows, sign fixed
};

Eigenpairs descending_eigenpairs(const Eigen::MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("covariance eigendecomposition failed");
    const auto dim = cov.rows();
    Eigenpairs out;
    for (Eigen::Index j = dim - 1; j >= 0; --j) {
        out.values.push_back(std::max(0.0, solver.eigenvalues()(j)));
        std::vector<double> v(static_cast<std::size_t>(dim));
        Eigen::Index argmax = 0;
        for (Eigen::Index r = 0; r < dim; ++r) {
            v[static_cast<std::size_t>(r)] = solver.eigenvectors()(r, j);
            if (std::abs(v[static_cast<std::size_t>(r)]) > std::abs(v[static_cast<std::size_t>(argmax)]) + 1e-12) argmax = r;
        }
        if (v[static_cast<std::size_t>(argmax)] < 0) {
            for (double& x : v) x = -x;
        }
        out.vectors.push_back(std::move(v));
    }
    return out;
}

} // namespace

PcaFit fit_pca(const PointSet& ps, std::size_t k) {
    if (k == 0 || k > ps.dim()) throw std::invalid_argument("pca component count must be in [1, D]");
    if (ps.size() < 2) throw std::invalid_argument("pca needs at least 2 points");
    const Moments m = sample_moments(ps);
    const Eigenpairs eig = descending_eigenpairs(m.covariance);
    const double scale = std::max(eig.values.front(), std::numeric_limits<double>::min());

    PcaFit fit;
    fit.transform.kind = TransformKind::pca;
    fit.transform.in_dim = ps.dim();
    fit.transform.out_dim = k;
    fit.transform.mean = m.mean;
    for (std::size_t r = 0; r < k; ++r) {
        fit.transform.matrix.insert(fit.transform.matrix.end(), eig.vectors[r].begin(), eig.vectors[r].end());
        fit.explained_variance.push_back(eig.values[r]);
        if (eig.values[r] <= 1e-12 * scale) ++fit.degenerate_directions;
    }
    return fit;
}

LinearTransform fit_whitening(const PointSet& ps) {
    if (ps.size() < 2) throw std::invalid_argument("whitening needs at least 2 points");
    const Moments m = sample_moments(ps);
    const Eigenpairs eig = descending_eigenpairs(m.covariance);
    const double scale = eig.values.front();
    if (!(scale > 0.0)) throw std::invalid_argument("whitening: all points are identical");

    LinearTransform t;
    t.kind = TransformKind::whitening;
    t.in_dim = ps.dim();
    t.mean = m.mean;
    for (std::size_t r = 0; r < eig.values.size(); ++r) {
        if (eig.values[r] <= 1e-12 * scale) break;
        const double inv = 1.0 / std::sqrt(eig.values[r]);
        for (double v : eig.vectors[r]) t.matrix.push_back(v * inv);
        ++t.out_dim;
    }
    return t;
}

PointSet apply_transform(const LinearTransform& t, const PointSet& ps) {
    if (t.in_dim != ps.dim()) {
        throw std::invalid_argument("transform expects dimension " + std::to_string(t.in_dim) + ", got " +
                                    std::to_string(ps.dim()));
    }
    const std::size_t n = ps.size();
    std::vector<double> out(n * t.out_dim, 0.0);
    for (std::size_t k = 0; k < t.out_dim; ++k) {
        double* dst = out.data() + k * n;
        for (std::size_t d = 0; d < t.in_dim; ++d) {
            const double w = t.at(k, d);
            if (w == 0.0) continue;
            const double mu = t.mean[d];
            const auto col = ps.column(d);
            for (std::size_t i = 0; i < n; ++i) dst[i] += w * (col[i] - mu);
        }
    }
    std::optional<std::vector<std::int32_t>> lab;
    std::optional<std::vector<double>> tgt;
    if (ps.has_labels()) lab.emplace(ps.labels().begin(), ps.labels().end());
    if (ps.has_targets()) tgt.emplace(ps.targets().begin(), ps.targets().end());
    return PointSet(t.out_dim, std::move(out), std::move(lab), std::move(tgt));
}

std::vector<double> apply_transform(const LinearTransform& t, std::span<const double> x) {
    if (x.size() != t.in_dim) throw std::invalid_argument("transform dimension mismatch");
    std::vector<double> y(t.out_dim, 0.0);
    for (std::size_t k = 0; k < t.out_dim; ++k) {
        for (std::size_t d = 0; d < t.in_dim; ++d) y[k] += t.at(k, d) * (x[d] - t.mean[d]);
    }
    return y;
}

double expand_hi(double lo, double hi) {
    const double extent = hi - lo;
    const double grown = hi + 1e-9 * std::max({extent, 1.0, std::abs(hi)});
    return grown > hi ? grown : std::nextafter(hi, std::numeric_limits<double>::infinity());
}

BoundingBox bounding_box(const PointSet& ps) {
    if (ps.empty()) throw std::invalid_argument("bounding box of an empty point set");
    BoundingBox box;
    box.lo.resize(ps.dim());
    box.hi.resize(ps.dim());
    for (std::size_t d = 0; d < ps.dim(); ++d) {
        const auto col = ps.column(d);
        const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
        box.lo[d] = *mn;
        box.hi[d] = expand_hi(*mn, *mx);
    }
    return box;
}

} // namespace hypergrid
