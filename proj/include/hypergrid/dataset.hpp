#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypergrid/common.hpp"

namespace hypergrid {

/// Axis-aligned box. Dataset boxes are half-open [lo, hi); query boxes are
/// treated as closed by the operations that accept them.
struct BoundingBox {
    std::vector<double> lo;
    std::vector<double> hi;

    BoundingBox() = default;
    BoundingBox(std::vector<double> lo_, std::vector<double> hi_);

    std::size_t dim() const { return lo.size(); }
    bool valid() const;
    bool contains_closed(std::span<const double> x) const;
    bool contains_half_open(std::span<const double> x) const;
    bool intersects(const BoundingBox& other) const;
    double volume() const;
    /// Squared Euclidean distance from x to the closest point of the box.
    double min_distance2(std::span<const double> x) const;
};

/**
 * Immutable columnar D-dimensional point table.
 *
 * Coordinates are stored column-major: column d occupies
 * coords[d * size() ... (d + 1) * size()). Point ids are the implicit row
 * numbers 0..N-1. Optional per-point integer labels and scalar targets travel
 * with the coordinates.
 */
class PointSet {
public:
    PointSet() = default;

    /// Validates shape and finiteness; throws std::invalid_argument naming the
    /// first offending row.
    PointSet(std::size_t dim, std::vector<double> column_major,
             std::optional<std::vector<std::int32_t>> labels = std::nullopt,
             std::optional<std::vector<double>> targets = std::nullopt);

    /// Builds from row-major coordinates.
    static PointSet from_rows(std::size_t dim, std::span<const double> row_major,
                              std::optional<std::vector<std::int32_t>> labels = std::nullopt,
                              std::optional<std::vector<double>> targets = std::nullopt);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return count_; }
    bool empty() const { return count_ == 0; }

    std::span<const double> column(std::size_t d) const {
        return {coords_.data() + d * count_, count_};
    }
    std::span<const double> coords() const { return coords_; }
    double at(std::size_t i, std::size_t d) const { return coords_[d * count_ + i]; }

    /// Copies row i into out (out.size() == dim()).
    void row(std::size_t i, std::span<double> out) const;
    std::vector<double> row(std::size_t i) const;
    /// Row-major copy of all coordinates.
    std::vector<double> rows() const;

    bool has_labels() const { return has_labels_; }
    bool has_targets() const { return has_targets_; }
    std::span<const std::int32_t> labels() const { return labels_; }
    std::span<const double> targets() const { return targets_; }

    /// New set holding the given rows (in the given order) with their labels/targets.
    PointSet subset(std::span<const PointId> ids) const;
    /// Same coordinates with targets replaced.
    PointSet with_targets(std::vector<double> targets) const;

    friend bool operator==(const PointSet&, const PointSet&) = default;

private:
    std::size_t dim_ = 1;
    std::size_t count_ = 0;
    std::vector<double> coords_;
    std::vector<std::int32_t> labels_;
    std::vector<double> targets_;
    bool has_labels_ = false;
    bool has_targets_ = false;
};

enum class FileFormat { binary, csv };

/// Picks csv for a ".csv" extension, binary otherwise.
FileFormat format_from_path(const std::string& path);

PointSet load_points(const std::string& path, FileFormat format);
inline PointSet load_points(const std::string& path) { return load_points(path, format_from_path(path)); }
void save_points(const PointSet& ps, const std::string& path, FileFormat format);
inline void save_points(const PointSet& ps, const std::string& path) {
    save_points(ps, path, format_from_path(path));
}

/// Encodes ps in the HGPS binary layout into memory (used for binary HTTP payloads).
std::string encode_points(const PointSet& ps);
PointSet decode_points(std::string_view bytes);

struct MixtureComponent {
    double weight = 1.0;
    std::vector<double> mean;
    std::vector<double> stdev;
};

/**
 * Draws n points from a Gaussian mixture with diagonal covariances.
 *
 * Each point first draws u ~ U[0,1); u < outlier_fraction makes it an outlier
 * drawn uniformly over the components' mean +/- 4 stdev envelope widened by
 * 10% per side, labeled -1. Otherwise a component is picked by weight and the
 * point is labeled with the component index.
 */
PointSet generate_mixture(std::uint64_t seed, std::size_t n, std::size_t dim,
                          const std::vector<MixtureComponent>& components,
                          double outlier_fraction);

/**
 * count unit-variance components with equal weights whose means are pairwise at
 * least separation apart: the first min(count, dim) sit on scaled axes
 * (separation / sqrt(2) * e_c), the rest are drawn by rejection in a cube.
 */
std::vector<MixtureComponent> separated_components(std::uint64_t seed, std::size_t dim, std::size_t count,
                                                   double separation);

enum class TransformKind { whitening, pca };

/// y = matrix * (x - mean), matrix stored row-major K x D.
struct LinearTransform {
    TransformKind kind = TransformKind::pca;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<double> mean;
    std::vector<double> matrix;

    double at(std::size_t row, std::size_t col) const { return matrix[row * in_dim + col]; }
    static LinearTransform identity(std::size_t dim);
};

struct PcaFit {
    LinearTransform transform;
    /// Variance along each output row, non-increasing.
    std::vector<double> explained_variance;
    /// Number of output directions with (numerically) zero variance; those rows
    /// are an arbitrary orthonormal completion.
    std::size_t degenerate_directions = 0;
};

PcaFit fit_pca(const PointSet& ps, std::size_t k);

/// Decorrelating whitening: rotates onto the principal axes and scales each to
/// unit sample variance. Zero-variance directions are dropped, so out_dim may
/// be smaller than D.
LinearTransform fit_whitening(const PointSet& ps);

/// Projects ps; labels and targets are carried over.
PointSet apply_transform(const LinearTransform& t, const PointSet& ps);
std::vector<double> apply_transform(const LinearTransform& t, std::span<const double> x);

/// Tight per-dimension bounds with hi pushed up by 1e-9 * max(1, extent, |hi|) so
/// every point satisfies lo <= x < hi.
BoundingBox bounding_box(const PointSet& ps);

/// Expands hi of a tight box the same way bounding_box() does.
double expand_hi(double lo, double hi);

} // namespace hypergrid
