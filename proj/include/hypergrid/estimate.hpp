#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hypergrid/kdtree.hpp"

namespace hypergrid {

/// Feature vectors with known targets plus a kd-tree over the features.
class ReferenceSet {
public:
    /// features must carry targets.
    explicit ReferenceSet(PointSet features);

    const PointSet& features() const { return features_; }
    std::span<const double> targets() const { return features_.targets(); }
    const KdTree& tree() const { return tree_; }
    std::size_t size() const { return features_.size(); }
    std::size_t dim() const { return features_.dim(); }

private:
    PointSet features_;
    KdTree tree_;
};

struct FitConfig {
    /// Neighbor count; 0 picks 4 times the number of polynomial coefficients.
    std::size_t k = 0;
    int order = 1; // 0, 1 or 2
    /// Ridge on the non-constant coefficients, relative to the mean diagonal
    /// of that block of the normal matrix. The constant term is never penalized.
    double ridge = 1e-9;
    /// Tricube weights on neighbor distance instead of a plain least-squares fit.
    bool distance_weighted = false;
};

/// Monomials of degree <= order in dim variables, the constant included.
std::size_t coefficient_count(std::size_t dim, int order);

struct EstimateFlags {
    bool k_clamped = false;      // fewer reference points than k
    bool order_fallback = false; // too few neighbors (or no spread) for the order
    bool rank_deficient = false; // singular design, solved with a ridge
};

struct Estimate {
    double value = 0.0;
    std::size_t neighbor_count = 0;
    int order_used = 0;
    EstimateFlags flags;
};

/**
 * Local polynomial regression at one query point: the k nearest reference
 * points are fitted by a polynomial in (x - query) through the ridge-stabilized
 * normal equations, and the estimate is the fitted constant term. Order 0 is
 * the neighbor mean.
 */
Estimate estimate_target(const ReferenceSet& ref, std::span<const double> query, const FitConfig& cfg);

struct EstimateAllResult {
    std::vector<Estimate> estimates;
    std::size_t clamped = 0;
    std::size_t fallbacks = 0;
    std::size_t rank_deficient = 0;
    double seconds = 0.0;
};

/// Estimates every row of unknown. Results do not depend on the thread count.
/// progress, when set, is called with the number of finished rows.
EstimateAllResult estimate_all(const ReferenceSet& ref, const PointSet& unknown, const FitConfig& cfg,
                               unsigned threads = 1, const std::function<void(std::size_t)>& progress = {});

struct ErrorSummary {
    double rms = 0.0;
    double mae = 0.0;
};

struct ComparisonReport {
    std::size_t folds = 0;
    std::size_t points = 0;
    ErrorSummary a;
    ErrorSummary b;
    /// 100 * (1 - rms_b / rms_a): positive when configuration b is better.
    double improvement_percent = 0.0;
    double ci_low = 0.0; // bootstrap 2.5% / 97.5% percentiles of the improvement
    double ci_high = 0.0;
    std::size_t bootstrap_rounds = 0;
};

/**
 * K-fold cross-validation of two configurations on the same folds, with a
 * paired bootstrap over held-out points for the improvement interval.
 */
ComparisonReport evaluate_estimator(const PointSet& reference, const FitConfig& cfg_a, const FitConfig& cfg_b,
                                    std::size_t folds, std::uint64_t seed, std::size_t bootstrap_rounds = 1000,
                                    unsigned threads = 1);

} // namespace hypergrid
