#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/parallel.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

struct MetricsReport {
    double abs_entry_mean_diff = 0.0;
    double abs_entry_std_diff = 0.0;
    double frob_mean_diff = 0.0;
    double frob_std_diff = 0.0;
    double sv_rel_l2 = 0.0;
    double mmd = 0.0;
    // subspace diagnostics, present when ground truth is available
    std::optional<double> mean_angle_u, max_angle_u;
    std::optional<double> mean_angle_v, max_angle_v;
};

namespace detail {

inline void require_same_shape(const MatrixBatch& a, const MatrixBatch& b, const char* what) {
    if (a.size() == 0 || b.size() == 0) throw BatchTooSmall(std::string(what) + ": empty batch");
    if (a.m1() != b.m1() || a.m2() != b.m2())
        throw ShapeMismatch(std::string(what) + ": batch shapes differ");
}

// population convention (divide by B)
inline void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace detail

// Per-entry |mean difference| and |std difference|, averaged over all positions.
inline std::pair<double, double> entry_moment_diffs(const MatrixBatch& true_b,
                                                    const MatrixBatch& gen_b) {
    detail::require_same_shape(true_b, gen_b, "entry_moment_diffs");
    if (true_b.size() < 2 || gen_b.size() < 2)
        throw BatchTooSmall("entry_moment_diffs: need >= 2 samples per batch for std");
    const std::size_t m1 = true_b.m1(), m2 = true_b.m2();
    double mean_acc = 0.0, std_acc = 0.0;
    auto moments_at = [](const MatrixBatch& b, std::size_t i, std::size_t j, double& mu,
                         double& sd) {
        mu = 0.0;
        for (const Mat& m : b.mats) mu += m(i, j);
        mu /= static_cast<double>(b.size());
        double var = 0.0;
        for (const Mat& m : b.mats) var += (m(i, j) - mu) * (m(i, j) - mu);
        sd = std::sqrt(var / static_cast<double>(b.size()));
    };
    for (std::size_t i = 0; i < m1; ++i)
        for (std::size_t j = 0; j < m2; ++j) {
            double mu_t, sd_t, mu_g, sd_g;
            moments_at(true_b, i, j, mu_t, sd_t);
            moments_at(gen_b, i, j, mu_g, sd_g);
            mean_acc += std::abs(mu_g - mu_t);
            std_acc += std::abs(sd_g - sd_t);
        }
    const double denom = static_cast<double>(m1 * m2);
    return {mean_acc / denom, std_acc / denom};
}

// |mean Frobenius norm shift| and |std shift| over per-matrix norms.
inline std::pair<double, double> frob_diffs(const MatrixBatch& true_b, const MatrixBatch& gen_b) {
    detail::require_same_shape(true_b, gen_b, "frob_diffs");
    if (true_b.size() < 2 || gen_b.size() < 2)
        throw BatchTooSmall("frob_diffs: need >= 2 samples per batch for std");
    std::vector<double> rt, rg;
    rt.reserve(true_b.size());
    rg.reserve(gen_b.size());
    for (const Mat& m : true_b.mats) rt.push_back(frob_norm(m));
    for (const Mat& m : gen_b.mats) rg.push_back(frob_norm(m));
    double mt, st, mg, sg;
    detail::mean_std(rt, mt, st);
    detail::mean_std(rg, mg, sg);
    return {std::abs(mg - mt), std::abs(sg - st)};
}

namespace detail {

inline std::vector<double> mean_spectrum(const MatrixBatch& b) {
    const std::size_t k = std::min(b.m1(), b.m2());
    std::vector<std::vector<double>> per(b.size());
    parallel_for_chunked(b.size(), 4, [&](std::size_t beg, std::size_t end, std::size_t) {
        for (std::size_t i = beg; i < end; ++i) per[i] = singular_values(b.mats[i]);
    });
    std::vector<double> mean(k, 0.0);
    for (const auto& sv : per)
        for (std::size_t j = 0; j < k; ++j) mean[j] += sv[j];
    for (double& x : mean) x /= static_cast<double>(b.size());
    return mean;
}

}  // namespace detail

// ||σ̄_true - σ̄_gen||₂ / (||σ̄_true||₂ + 1e-8) on batch-averaged spectra.
inline double sv_rel_l2(const MatrixBatch& true_b, const MatrixBatch& gen_b) {
    detail::require_same_shape(true_b, gen_b, "sv_rel_l2");
    auto st = detail::mean_spectrum(true_b);
    auto sg = detail::mean_spectrum(gen_b);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < st.size(); ++j) {
        num += (st[j] - sg[j]) * (st[j] - sg[j]);
        den += st[j] * st[j];
    }
    return std::sqrt(num) / (std::sqrt(den) + 1e-8);
}

// Unbiased U-statistic RBF MMD on Frobenius distance; bandwidth σ² is the
// pooled-sample median of pairwise squared distances (unordered pairs a < b).
// Batches beyond 2000 samples are truncated to the first 2000 (kernel cost).
inline double mmd_rbf(const MatrixBatch& true_b, const MatrixBatch& gen_b) {
    detail::require_same_shape(true_b, gen_b, "mmd_rbf");
    const std::size_t cap = 2000;
    const std::size_t n = std::min(true_b.size(), cap);
    const std::size_t m = std::min(gen_b.size(), cap);
    if (n < 2 || m < 2) throw BatchTooSmall("mmd_rbf: need >= 2 samples per batch");

    std::vector<const Mat*> pool;
    pool.reserve(n + m);
    for (std::size_t i = 0; i < n; ++i) pool.push_back(&true_b.mats[i]);
    for (std::size_t j = 0; j < m; ++j) pool.push_back(&gen_b.mats[j]);

    const std::size_t total = n + m;
    std::vector<double> d2(total * total, 0.0);
    parallel_for_chunked(total, 4, [&](std::size_t beg, std::size_t end, std::size_t) {
        for (std::size_t a = beg; a < end; ++a)
            for (std::size_t b2 = a + 1; b2 < total; ++b2) {
                const double v = frob_norm_sq(*pool[a] - *pool[b2]);
                d2[a * total + b2] = v;
            }
    });
    std::vector<double> pairs;
    pairs.reserve(total * (total - 1) / 2);
    for (std::size_t a = 0; a < total; ++a)
        for (std::size_t b2 = a + 1; b2 < total; ++b2) pairs.push_back(d2[a * total + b2]);
    std::vector<double> sorted = pairs;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t np = sorted.size();
    const double median = (np % 2 == 1) ? sorted[np / 2]
                                        : 0.5 * (sorted[np / 2 - 1] + sorted[np / 2]);
    if (median <= 0.0) {
        warn("mmd_rbf: all pooled samples identical (degenerate bandwidth), returning 0");
        return 0.0;
    }
    const double inv_two_sigma_sq = 1.0 / (2.0 * median);
    auto kern = [&](std::size_t a, std::size_t b2) {
        const double v = a < b2 ? d2[a * total + b2] : d2[b2 * total + a];
        return std::exp(-v * inv_two_sigma_sq);
    };
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) kxx += kern(i, j);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) kyy += kern(n + i, n + j);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) kxy += kern(i, n + j);
    const double mmd2 = 2.0 * kxx / (static_cast<double>(n) * (n - 1)) +
                        2.0 * kyy / (static_cast<double>(m) * (m - 1)) -
                        2.0 * kxy / (static_cast<double>(n) * m);
    return std::sqrt(std::max(mmd2, 0.0));
}

inline MetricsReport evaluate_batches(const MatrixBatch& true_b, const MatrixBatch& gen_b) {
    MetricsReport r;
    auto em = entry_moment_diffs(true_b, gen_b);
    r.abs_entry_mean_diff = em.first;
    r.abs_entry_std_diff = em.second;
    auto fd = frob_diffs(true_b, gen_b);
    r.frob_mean_diff = fd.first;
    r.frob_std_diff = fd.second;
    r.sv_rel_l2 = sv_rel_l2(true_b, gen_b);
    r.mmd = mmd_rbf(true_b, gen_b);
    return r;
}

}  // namespace coreflow
