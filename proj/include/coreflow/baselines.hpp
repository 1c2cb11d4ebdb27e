#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/flow.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/parallel.hpp"
#include "coreflow/rng.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

// ---- dense Cholesky / triangular helpers -----------------------------------

inline Mat cholesky_lower(const Mat& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeMismatch("cholesky: matrix not square");
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 0.0))
                    throw CholeskyFailure("pivot " + std::to_string(i) + " not positive (" +
                                          std::to_string(s) + ")");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

inline Mat invert_lower(const Mat& l) {
    const std::size_t n = l.rows();
    Mat inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        inv(j, j) = 1.0 / l(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = j; k < i; ++k) s += l(i, k) * inv(k, j);
            inv(i, j) = -s / l(i, i);
        }
    }
    return inv;
}

// ---- Normal-Inverse-Wishart core model (SMG-Core) ---------------------------

struct NIWPrior {
    double kappa0 = 1.0;
    double nu0 = 0.0;              // 0 -> d + 2 at fit time (weakest prior with finite IW mean)
    std::vector<double> mu0;       // empty -> zeros
    Mat psi0;                      // empty -> identity
};

struct NIWPosterior {
    double kappa_n = 0.0;
    double nu_n = 0.0;
    std::vector<double> mu_n;
    Mat psi_n;

    std::size_t dim() const { return mu_n.size(); }
};

// Exact conjugate update:
//   κ_N = κ_0 + N, ν_N = ν_0 + N, μ_N = (κ_0 μ_0 + N x̄)/κ_N,
//   Ψ_N = Ψ_0 + S + (κ_0 N / κ_N)(x̄-μ_0)(x̄-μ_0)ᵀ.
inline NIWPosterior niw_fit(const CoreBatch& cores, const NIWPrior& prior) {
    const std::size_t d = cores.dim;
    if (d == 0) throw DataError("niw_fit: empty core dimension");
    const double n = static_cast<double>(cores.size());

    double nu0 = prior.nu0 > 0.0 ? prior.nu0 : static_cast<double>(d) + 2.0;
    std::vector<double> mu0 = prior.mu0.empty() ? std::vector<double>(d, 0.0) : prior.mu0;
    Mat psi0 = prior.psi0.rows() == 0 ? Mat::identity(d) : prior.psi0;
    if (!(prior.kappa0 > 0.0)) throw PriorInvalid("niw_fit: kappa0 must be positive");
    if (!(nu0 > static_cast<double>(d) - 1.0)) throw PriorInvalid("niw_fit: nu0 must exceed d-1");
    if (mu0.size() != d) throw PriorInvalid("niw_fit: mu0 dimension");
    if (psi0.rows() != d || psi0.cols() != d) throw PriorInvalid("niw_fit: Psi0 shape");
    try {
        cholesky_lower(psi0);
    } catch (const CholeskyFailure&) {
        throw PriorInvalid("niw_fit: Psi0 not positive definite");
    }

    NIWPosterior post;
    post.kappa_n = prior.kappa0 + n;
    post.nu_n = nu0 + n;
    std::vector<double> xbar(d, 0.0);
    for (const auto& x : cores.vecs)
        for (std::size_t j = 0; j < d; ++j) xbar[j] += x[j];
    if (cores.size() > 0)
        for (double& v : xbar) v /= n;

    Mat scatter(d, d);
    for (const auto& x : cores.vecs)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                scatter(i, j) += (x[i] - xbar[i]) * (x[j] - xbar[j]);

    post.mu_n.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
        post.mu_n[j] = (prior.kappa0 * mu0[j] + n * xbar[j]) / post.kappa_n;

    post.psi_n = psi0 + scatter;
    const double w = prior.kappa0 * n / post.kappa_n;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            post.psi_n(i, j) += w * (xbar[i] - mu0[i]) * (xbar[j] - mu0[j]);
    return post;
}

namespace detail {

// Marsaglia-Tsang gamma(alpha, 1) for alpha >= 1.
inline double gamma_mt(double alpha, RngStream& rng) {
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

// chi-squared draw: sum of squared normals for small integer df, otherwise
// 2 * Gamma(df/2) via Marsaglia-Tsang (with the alpha < 1 boost).
inline double chi_squared(double df, RngStream& rng) {
    const bool integral = df == std::floor(df);
    if (integral && df < 64.0) {
        double s = 0.0;
        for (long k = 0; k < static_cast<long>(df); ++k) {
            const double z = rng.normal();
            s += z * z;
        }
        return s;
    }
    const double alpha = df / 2.0;
    if (alpha >= 1.0) return 2.0 * gamma_mt(alpha, rng);
    const double g = gamma_mt(alpha + 1.0, rng);
    const double u = rng.uniform01();
    return 2.0 * g * std::pow(u, 1.0 / alpha);
}

}  // namespace detail

// Posterior-predictive draws, two-stage scheme per sample:
//   Σ ~ InvWishart(ν_N, Ψ_N)  [Bartlett: Σ = ΦΦᵀ, Φ = C⁻ᵀB⁻ᵀ, C = chol(Ψ_N⁻¹)]
//   μ ~ N(μ_N, Σ/κ_N),  x ~ N(μ, Σ).
// Per-draw stream (seed, i); draw order: Bartlett rows, then z_mu, then z_x.
inline CoreBatch niw_sample(const NIWPosterior& post, std::size_t n, std::uint64_t seed) {
    const std::size_t d = post.dim();
    Mat l_psi = cholesky_lower(post.psi_n);
    Mat l_inv = invert_lower(l_psi);
    Mat psi_inv = matmul_tn(l_inv, l_inv);  // Ψ⁻¹ = L⁻ᵀL⁻¹
    for (std::size_t i = 0; i < d; ++i)     // symmetrize against rounding
        for (std::size_t j = i + 1; j < d; ++j) {
            const double m = 0.5 * (psi_inv(i, j) + psi_inv(j, i));
            psi_inv(i, j) = m;
            psi_inv(j, i) = m;
        }
    Mat c = cholesky_lower(psi_inv);
    Mat c_inv_t = transpose(invert_lower(c));  // C⁻ᵀ

    CoreBatch out;
    out.dim = d;
    out.vecs.assign(n, std::vector<double>(d));
    const double inv_sqrt_kappa = 1.0 / std::sqrt(post.kappa_n);
    parallel_for_chunked(n, 8, [&](std::size_t bge, std::size_t end, std::size_t) {
        for (std::size_t i = bge; i < end; ++i) {
            RngStream rng = rng_stream(seed, i);
            Mat bart(d, d);
            for (std::size_t r = 0; r < d; ++r) {
                for (std::size_t cc = 0; cc < r; ++cc) bart(r, cc) = rng.normal();
                bart(r, r) = std::sqrt(detail::chi_squared(post.nu_n - static_cast<double>(r), rng));
            }
            Mat phi = matmul_nt(c_inv_t, invert_lower(bart));  // C⁻ᵀ B⁻ᵀ, Σ = ΦΦᵀ
            std::vector<double> z1(d), z2(d);
            for (double& z : z1) z = rng.normal();
            for (double& z : z2) z = rng.normal();
            auto& x = out.vecs[i];
            for (std::size_t r = 0; r < d; ++r) {
                double acc = post.mu_n[r];
                const double* pr = phi.row(r);
                for (std::size_t k = 0; k < d; ++k)
                    acc += pr[k] * (z1[k] * inv_sqrt_kappa + z2[k]);
                x[r] = acc;
            }
        }
    });
    return out;
}

// SMG-Core baseline: fix the Stage-I subspaces, fit the NIW core model,
// sample the posterior predictive, decode.
inline MatrixBatch smg_core_generate(const MatrixBatch& batch, const StiefelPair& pair,
                                     std::size_t n, const NIWPrior& prior, std::uint64_t seed) {
    CoreBatch cores = extract_cores(batch, pair);
    NIWPosterior post = niw_fit(cores, prior);
    CoreBatch samples = niw_sample(post, n, seed);
    samples.rank = pair.rank();
    samples.src_m1 = pair.m1();
    samples.src_m2 = pair.m2();
    return decode(samples, pair);
}

// ---- PCA-Flow ablation ------------------------------------------------------

struct PcaModel {
    std::size_t m1 = 0, m2 = 0;
    std::vector<double> mu;                      // D = m1*m2
    Mat w_pca;                                   // D x d_pca, orthonormal columns
    std::vector<double> score_mean, score_std;   // per-coordinate normalization
    std::vector<std::vector<double>> norm_scores;  // normalized training scores

    std::size_t d_pca() const { return w_pca.cols(); }
};

// Flattened PCA on complete matrices. d_PCA is the largest perfect square
// <= min(cap, N-1, numerical rank); scores come straight from the economy SVD.
inline PcaModel pcaflow_fit(const MatrixBatch& batch, std::size_t d_pca_cap) {
    if (batch.size() < 2) throw BatchTooSmall("pcaflow_fit: need >= 2 samples");
    if (batch.has_masks() && !batch.all_observed())
        throw IncompleteData("pcaflow_fit: PCA requires complete vectors");
    const std::size_t n = batch.size();
    const std::size_t dd = batch.m1() * batch.m2();

    PcaModel model;
    model.m1 = batch.m1();
    model.m2 = batch.m2();
    model.mu.assign(dd, 0.0);
    for (const Mat& m : batch.mats)
        for (std::size_t k = 0; k < dd; ++k) model.mu[k] += m.data()[k];
    for (double& v : model.mu) v /= static_cast<double>(n);

    Mat xc(n, dd);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dd; ++k) xc(i, k) = batch.mats[i].data()[k] - model.mu[k];

    Mat gram = matmul_nt(xc, xc);  // N x N
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (gram(i, j) + gram(j, i));
            gram(i, j) = m;
            gram(j, i) = m;
        }
    SymEig eig = sym_eig_desc(gram);
    std::vector<double> sigma(n);
    for (std::size_t k = 0; k < n; ++k) sigma[k] = std::sqrt(std::max(eig.values[k], 0.0));

    std::size_t num_rank = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (sigma[k] > 1e-10 * std::max(sigma[0], 0.0) && sigma[k] > 0.0) ++num_rank;
    std::size_t cap = std::min({d_pca_cap, n - 1, num_rank});
    std::size_t d_pca = 0;
    for (std::size_t s = 0; s * s <= cap; ++s) d_pca = s * s;

    model.w_pca = Mat(dd, d_pca);
    for (std::size_t k = 0; k < d_pca; ++k) {
        // v_k = Xcᵀ a_k / σ_k
        for (std::size_t i = 0; i < n; ++i) {
            const double a = eig.vectors(i, k) / sigma[k];
            if (a == 0.0) continue;
            const double* xi = xc.row(i);
            for (std::size_t r2 = 0; r2 < dd; ++r2) model.w_pca(r2, k) += a * xi[r2];
        }
    }

    // scores z_i[k] = σ_k a_k[i]
    std::vector<std::vector<double>> scores(n, std::vector<double>(d_pca));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d_pca; ++k) scores[i][k] = sigma[k] * eig.vectors(i, k);

    model.score_mean.assign(d_pca, 0.0);
    model.score_std.assign(d_pca, 1.0);
    for (std::size_t k = 0; k < d_pca; ++k) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += scores[i][k];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (scores[i][k] - m) * (scores[i][k] - m);
        var /= static_cast<double>(n);
        model.score_mean[k] = m;
        model.score_std[k] = std::max(std::sqrt(var), 1e-8);
    }
    model.norm_scores.assign(n, std::vector<double>(d_pca));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d_pca; ++k)
            model.norm_scores[i][k] = (scores[i][k] - model.score_mean[k]) / model.score_std[k];
    return model;
}

// Train the same CNF on normalized scores, sample, de-normalize, decode via
// μ + W_PCA ẑ, reshape. Zero-variance data (d_PCA = 0) degenerates to copies of
// the mean matrix.
inline MatrixBatch pcaflow_generate(const PcaModel& model, const FlowConfig& cfg, std::size_t n,
                                    std::uint64_t seed) {
    MatrixBatch out;
    const std::size_t dd = model.m1 * model.m2;
    if (model.d_pca() == 0) {
        Mat m(model.m1, model.m2);
        for (std::size_t k = 0; k < dd; ++k) m.data()[k] = model.mu[k];
        out.mats.assign(n, m);
        return out;
    }
    CoreBatch scores;
    scores.dim = model.d_pca();
    scores.vecs = model.norm_scores;
    FlowResult flow = train_flow(scores, cfg);
    CoreBatch gen = sample_cores(flow.net, n, cfg.ode_steps, seed);
    out.mats.resize(n);
    parallel_for_chunked(n, 8, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            Mat m(model.m1, model.m2);
            for (std::size_t k = 0; k < dd; ++k) m.data()[k] = model.mu[k];
            for (std::size_t c = 0; c < model.d_pca(); ++c) {
                const double z =
                    gen.vecs[i][c] * model.score_std[c] + model.score_mean[c];
                if (z == 0.0) continue;
                for (std::size_t k = 0; k < dd; ++k) m.data()[k] += model.w_pca(k, c) * z;
            }
            out.mats[i] = std::move(m);
        }
    });
    return out;
}

}  // namespace coreflow
