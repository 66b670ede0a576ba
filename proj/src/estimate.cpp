#include "hypergrid/estimate.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include "hypergrid/knn.hpp"
#include "hypergrid/parallel.hpp"
#include "hypergrid/rng.hpp"

namespace hypergrid {

namespace {

PointSet require_targets(PointSet features) {
    if (!features.has_targets()) throw std::invalid_argument("reference set needs targets");
    if (features.empty()) throw std::invalid_argument("reference set is empty");
    return features;
}

void check_config(const FitConfig& cfg) {
    if (cfg.order < 0 || cfg.order > 2) throw std::invalid_argument("polynomial order must be 0, 1 or 2");
    if (!(cfg.ridge >= 0.0) || !std::isfinite(cfg.ridge)) throw std::invalid_argument("ridge must be finite and >= 0");
}

// Design row: 1, z_d, then z_a * z_b for a <= b.
void monomials(std::span<const double> z, int order, Eigen::Ref<Eigen::VectorXd> out) {
    Eigen::Index j = 0;
    out(j++) = 1.0;
    if (order >= 1) {
        for (double v : z) out(j++) = v;
    }
    if (order >= 2) {
        for (std::size_t a = 0; a < z.size(); ++a) {
            for (std::size_t b = a; b < z.size(); ++b) out(j++) = z[a] * z[b];
        }
    }
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

ReferenceSet::ReferenceSet(PointSet features)
    : features_(require_targets(std::move(features))), tree_(build_kdtree(features_)) {}

std::size_t coefficient_count(std::size_t dim, int order) {
    std::size_t n = 1;
    if (order >= 1) n += dim;
    if (order >= 2) n += dim * (dim + 1) / 2;
    return n;
}

Estimate estimate_target(const ReferenceSet& ref, std::span<const double> query, const FitConfig& cfg) {
    check_config(cfg);
    const std::size_t dim = ref.dim();
    if (query.size() != dim) throw std::invalid_argument("query dimension differs from the reference set");
    Estimate est;
    std::size_t k = cfg.k ? cfg.k : 4 * coefficient_count(dim, cfg.order);
    if (k > ref.size()) {
        k = ref.size();
        est.flags.k_clamped = true;
    }
    int order = cfg.order;
    while (order > 0 && coefficient_count(dim, order) > k) --order;
    est.flags.order_fallback = order != cfg.order;

    const NeighborList nn = knn_search(ref.tree(), query, k);
    est.neighbor_count = nn.size();
    const auto targets = ref.targets();

    std::vector<double> w(nn.size(), 1.0);
    if (cfg.distance_weighted) {
        const double reach = nn.back().distance * (1.0 + 1e-9);
        if (reach > 0.0) {
            for (std::size_t i = 0; i < nn.size(); ++i) {
                const double u = nn[i].distance / reach;
                w[i] = std::pow(1.0 - u * u * u, 3);
            }
        }
    }

    auto neighbor_mean = [&] {
        double sw = 0.0, swy = 0.0;
        for (std::size_t i = 0; i < nn.size(); ++i) {
            sw += w[i];
            swy += w[i] * targets[nn[i].id];
        }
        return swy / sw;
    };

    while (true) {
        if (order == 0) {
            est.value = neighbor_mean();
            est.order_used = 0;
            return est;
        }
        const auto p = static_cast<Eigen::Index>(coefficient_count(dim, order));
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        Eigen::VectorXd phi(p);
        std::vector<double> z(dim);
        for (std::size_t i = 0; i < nn.size(); ++i) {
            for (std::size_t d = 0; d < dim; ++d) z[d] = ref.features().at(nn[i].id, d) - query[d];
            monomials(z, order, phi);
            a.selfadjointView<Eigen::Lower>().rankUpdate(phi, w[i]);
            b += (w[i] * targets[nn[i].id]) * phi;
        }
        a = a.selfadjointView<Eigen::Lower>();

        const double block_mean = a.diagonal().tail(p - 1).sum() / static_cast<double>(p - 1);
        if (!(block_mean > 0.0)) {
            // All neighbors coincide with each other in feature space: only the mean is identifiable.
            est.flags.order_fallback = true;
            order = 0;
            continue;
        }
        // Jacobi scaling keeps the rank test and the solve independent of feature units.
        Eigen::VectorXd scale = a.diagonal().cwiseSqrt();
        for (Eigen::Index j = 0; j < p; ++j) {
            if (scale(j) == 0.0) scale(j) = 1.0;
        }
        const Eigen::MatrixXd scaled = scale.asDiagonal().inverse() * a * scale.asDiagonal().inverse();
        Eigen::LDLT<Eigen::MatrixXd> plain(scaled);
        const auto diag = plain.vectorD().cwiseAbs();
        const bool singular = plain.info() != Eigen::Success || a.diagonal().minCoeff() == 0.0 ||
                              diag.minCoeff() <= 1e-12 * diag.maxCoeff();
        est.flags.rank_deficient = singular;

        double lambda = cfg.ridge;
        if (singular) lambda = std::max(lambda, 1e-9);
        Eigen::MatrixXd penalized = a;
        for (Eigen::Index j = 1; j < p; ++j) penalized(j, j) += lambda * block_mean;
        const Eigen::MatrixXd pscaled = scale.asDiagonal().inverse() * penalized * scale.asDiagonal().inverse();
        Eigen::LDLT<Eigen::MatrixXd> solver(pscaled);
        const Eigen::VectorXd coef = scale.asDiagonal().inverse() * solver.solve(scale.asDiagonal().inverse() * b);
        est.value = coef(0);
        est.order_used = order;
        if (!std::isfinite(est.value)) {
            est.flags.order_fallback = true;
            order = 0;
            continue;
        }
        return est;
    }
}

EstimateAllResult estimate_all(const ReferenceSet& ref, const PointSet& unknown, const FitConfig& cfg, unsigned threads,
                               const std::function<void(std::size_t)>& progress) {
    check_config(cfg);
    if (unknown.dim() != ref.dim() && !unknown.empty()) throw std::invalid_argument("unknown set dimension differs from the reference set");
    const auto start = std::chrono::steady_clock::now();
    EstimateAllResult out;
    out.estimates.resize(unknown.size());
    constexpr std::size_t kChunk = 1024;
    const std::size_t chunks = (unknown.size() + kChunk - 1) / kChunk;
    std::mutex progress_mutex;
    std::size_t done = 0;
    parallel_chunks(chunks, threads, [&](std::size_t c) {
        std::vector<double> x(unknown.dim());
        const std::size_t end = std::min(unknown.size(), (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            unknown.row(i, x);
            out.estimates[i] = estimate_target(ref, x, cfg);
        }
        if (progress) {
            std::lock_guard lock(progress_mutex);
            done += end - c * kChunk;
            progress(done);
        }
    });
    for (const auto& e : out.estimates) {
        out.clamped += e.flags.k_clamped;
        out.fallbacks += e.flags.order_fallback;
        out.rank_deficient += e.flags.rank_deficient;
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

ComparisonReport evaluate_estimator(const PointSet& reference, const FitConfig& cfg_a, const FitConfig& cfg_b,
                                    std::size_t folds, std::uint64_t seed, std::size_t bootstrap_rounds,
                                    unsigned threads) {
    check_config(cfg_a);
    check_config(cfg_b);
    if (folds < 2) throw std::invalid_argument("need at least 2 folds");
    if (!reference.has_targets()) throw std::invalid_argument("reference set needs targets");
    const std::size_t n = reference.size();
    if (n < folds) throw std::invalid_argument("fewer points than folds");

    std::vector<PointId> order(n);
    std::iota(order.begin(), order.end(), PointId{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<double> err_a(n), err_b(n);
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t lo = f * n / folds;
        const std::size_t hi = (f + 1) * n / folds;
        std::vector<PointId> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(lo));
        train.insert(train.end(), order.begin() + static_cast<std::ptrdiff_t>(hi), order.end());
        std::vector<PointId> test(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
        const ReferenceSet ref(reference.subset(train));
        const PointSet held = reference.subset(test);
        const auto ea = estimate_all(ref, held, cfg_a, threads).estimates;
        const auto eb = estimate_all(ref, held, cfg_b, threads).estimates;
        for (std::size_t j = 0; j < test.size(); ++j) {
            const double truth = held.targets()[j];
            err_a[test[j]] = ea[j].value - truth;
            err_b[test[j]] = eb[j].value - truth;
        }
    }

    auto summarize = [](const std::vector<double>& e) {
        ErrorSummary s;
        for (double v : e) {
            s.rms += v * v;
            s.mae += std::abs(v);
        }
        s.rms = std::sqrt(s.rms / static_cast<double>(e.size()));
        s.mae /= static_cast<double>(e.size());
        return s;
    };
    auto improvement = [](double sse_a, double sse_b) {
        if (sse_a == sse_b) return 0.0;
        return 100.0 * (1.0 - std::sqrt(sse_b / sse_a));
    };

    ComparisonReport r;
    r.folds = folds;
    r.points = n;
    r.a = summarize(err_a);
    r.b = summarize(err_b);
    r.improvement_percent = improvement(r.a.rms * r.a.rms, r.b.rms * r.b.rms);
    r.bootstrap_rounds = bootstrap_rounds;
    if (bootstrap_rounds > 0) {
        Rng boot(Rng::derive(seed, 1));
        std::vector<double> stats;
        stats.reserve(bootstrap_rounds);
        for (std::size_t round = 0; round < bootstrap_rounds; ++round) {
            double sa = 0.0, sb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto j = boot.below(n);
                sa += err_a[j] * err_a[j];
                sb += err_b[j] * err_b[j];
            }
            stats.push_back(improvement(sa, sb));
        }
        r.ci_low = quantile(stats, 0.025);
        r.ci_high = quantile(stats, 0.975);
    }
    return r;
}

} // namespace hypergrid
