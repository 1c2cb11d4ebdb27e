#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/parallel.hpp"
#include "coreflow/rng.hpp"
#include "coreflow/stiefel.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

struct Stage1Config {
    std::size_t rank = 0;
    std::size_t t_sub = 300;     // inner gradient steps (per outer epoch under missingness)
    double eta_u = 0.05;         // dimensionless; scaled by 1/mean||M||_F² internally
    double eta_v = 0.05;
    std::size_t batch_size = 64;
    std::size_t epochs = 20;     // E, outer completion epochs (missing data only)
    std::uint64_t seed = 0;
    std::size_t log_stride = 1;

    void validate(std::size_t n, std::size_t m1, std::size_t m2) const {
        if (rank == 0 || rank > std::min(m1, m2)) throw ConfigError("stage1: rank out of range");
        if (!(eta_u > 0.0) || !(eta_v > 0.0)) throw ConfigError("stage1: learning rates must be positive");
        if (batch_size == 0 || batch_size > n) throw ConfigError("stage1: batch size must be in [1, N]");
        if (log_stride == 0) throw ConfigError("stage1: log stride must be >= 1");
    }
};

// (1/N)Σ||M_i - UUᵀM_iVVᵀ||_F², complete data.
inline double rec_loss(const MatrixBatch& batch, const Mat& u, const Mat& v) {
    if (batch.has_masks() && !batch.all_observed())
        throw IncompleteData("rec_loss: batch has missing entries");
    double total = 0.0;
    for (const Mat& m : batch.mats) {
        require_shape(m, u.rows(), v.rows(), "rec_loss: matrix vs factors");
        Mat core = matmul(matmul_tn(u, m), v);        // UᵀMV
        Mat recon = matmul_nt(matmul(u, core), v);    // U core Vᵀ
        total += frob_norm_sq(m - recon);
    }
    return total / static_cast<double>(batch.size());
}

// Closed-form gradients of the trace form of the reconstruction loss:
//   G_U = -(2/N)Σ(M V Vᵀ Mᵀ)U,  G_V = -(2/N)Σ(Mᵀ U Uᵀ M)V.
// On the Stiefel manifold these differ from the literal Frobenius gradient only
// by a normal-space term, which the retraction's tangent projection removes.
inline std::pair<Mat, Mat> rec_loss_grad(const MatrixBatch& batch, const Mat& u, const Mat& v) {
    if (batch.has_masks() && !batch.all_observed())
        throw IncompleteData("rec_loss_grad: batch has missing entries");
    Mat gu(u.rows(), u.cols());
    Mat gv(v.rows(), v.cols());
    for (const Mat& m : batch.mats) {
        require_shape(m, u.rows(), v.rows(), "rec_loss_grad: matrix vs factors");
        Mat mv = matmul(m, v);                 // m1 x R
        Mat mtu = matmul_tn(m, u);             // m2 x R
        Mat gu_i = matmul(mv, matmul_tn(mv, u));
        Mat gv_i = matmul(mtu, matmul_tn(mtu, v));
        gu = gu - gu_i;
        gv = gv - gv_i;
    }
    const double f = 2.0 / static_cast<double>(batch.size());
    return {f * gu, f * gv};
}

namespace detail {

inline void require_mask_consistency(const MatrixBatch& filled, const MatrixBatch& obs) {
    if (filled.size() != obs.size()) throw ShapeMismatch("masked loss: batch sizes differ");
    if (!obs.has_masks()) throw ShapeMismatch("masked loss: observation batch has no masks");
    if (filled.m1() != obs.m1() || filled.m2() != obs.m2())
        throw ShapeMismatch("masked loss: filled vs observed shapes");
}

struct MaskedTerms {
    double loss = 0.0;
    Mat gu, gv;
    bool with_grad = false;
};

// One pass over a sample subset: masked loss and (optionally) its exact
// Euclidean gradients. D = P_Ω(UUᵀM̃VVᵀ - M^obs), B = M̃VVᵀ, A = UUᵀM̃.
inline MaskedTerms masked_terms(const MatrixBatch& filled, const MatrixBatch& obs, const Mat& u,
                                const Mat& v, const std::vector<std::size_t>& subset,
                                bool with_grad) {
    const std::size_t m1 = u.rows(), m2 = v.rows();
    struct Partial {
        double loss = 0.0;
        Mat gu, gv;
    };
    const std::size_t chunk = 4;
    std::vector<Partial> parts((subset.size() + chunk - 1) / chunk);
    parallel_for_chunked(subset.size(), chunk, [&](std::size_t b, std::size_t e, std::size_t ci) {
        Partial p;
        if (with_grad) {
            p.gu = Mat(m1, u.cols());
            p.gv = Mat(m2, v.cols());
        }
        for (std::size_t k = b; k < e; ++k) {
            const std::size_t i = subset[k];
            const Mat& mf = filled.mats[i];
            const Mat& mo = obs.mats[i];
            const Mask& mask = obs.masks[i];
            Mat utm = matmul_tn(u, mf);                   // R x m2
            Mat core = matmul(utm, v);                    // R x R
            Mat recon = matmul_nt(matmul(u, core), v);    // UUᵀM̃VVᵀ
            Mat d(m1, m2);
            for (std::size_t r = 0; r < m1; ++r)
                for (std::size_t c = 0; c < m2; ++c)
                    if (mask(r, c)) {
                        d(r, c) = recon(r, c) - mo(r, c);
                        p.loss += d(r, c) * d(r, c);
                    }
            if (with_grad) {
                Mat bm = matmul_nt(matmul(mf, v), v);     // B = M̃VVᵀ
                Mat am = matmul(u, utm);                  // A = UUᵀM̃
                Mat gu_i = matmul(d, matmul_tn(bm, u)) + matmul(bm, matmul_tn(d, u));
                Mat gv_i = matmul_tn(d, matmul(am, v)) + matmul_tn(am, matmul(d, v));
                p.gu = p.gu + gu_i;
                p.gv = p.gv + gv_i;
            }
        }
        parts[ci] = std::move(p);
    });
    MaskedTerms out;
    out.with_grad = with_grad;
    if (with_grad) {
        out.gu = Mat(m1, u.cols());
        out.gv = Mat(m2, v.cols());
    }
    for (const Partial& p : parts) {
        out.loss += p.loss;
        if (with_grad) {
            out.gu = out.gu + p.gu;
            out.gv = out.gv + p.gv;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(subset.size());
    out.loss *= inv_n;
    if (with_grad) {
        out.gu = (2.0 * inv_n) * out.gu;
        out.gv = (2.0 * inv_n) * out.gv;
    }
    return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace detail

// (1/N)Σ||P_Ω(M^obs - UUᵀM̃VVᵀ)||_F²
inline double masked_loss(const MatrixBatch& filled, const MatrixBatch& obs, const Mat& u,
                          const Mat& v) {
    detail::require_mask_consistency(filled, obs);
    std::size_t observed = 0;
    for (const Mask& m : obs.masks)
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) observed += m(i, j);
    if (observed == 0) warn("masked_loss: no observed entries, loss is vacuously 0");
    return detail::masked_terms(filled, obs, u, v, detail::all_indices(obs.size()), false).loss;
}

inline std::pair<Mat, Mat> masked_loss_grad(const MatrixBatch& filled, const MatrixBatch& obs,
                                            const Mat& u, const Mat& v) {
    detail::require_mask_consistency(filled, obs);
    auto t = detail::masked_terms(filled, obs, u, v, detail::all_indices(obs.size()), true);
    return {std::move(t.gu), std::move(t.gv)};
}

// M̃_i <- P_Ω(M_i^obs) + P_Ω^c(UUᵀM̃_iVVᵀ). Observed entries are copied from the
// observation, so they stay bit-identical through any number of epochs.
inline void fill_update(MatrixBatch& filled, const MatrixBatch& obs, const Mat& u, const Mat& v) {
    detail::require_mask_consistency(filled, obs);
    parallel_for_chunked(filled.size(), 4, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            Mat recon = matmul_nt(matmul(u, matmul(matmul_tn(u, filled.mats[i]), v)), v);
            const Mask& mask = obs.masks[i];
            Mat& mf = filled.mats[i];
            for (std::size_t r = 0; r < mf.rows(); ++r)
                for (std::size_t c = 0; c < mf.cols(); ++c)
                    mf(r, c) = mask(r, c) ? obs.mats[i](r, c) : recon(r, c);
        }
    });
}

struct Stage1Result {
    StiefelPair pair;
    MatrixBatch filled;  // completed matrices (equals the input when complete)
    LossTrace trace;
    bool rank_warning = false;
};

// Stage-I training. Complete batches run one phase of T_sub mini-batch steps on
// the reconstruction gradient; masked batches alternate E epochs of masked
// gradient steps with full-batch fill updates. Both paths share the same
// arithmetic (a complete batch is trained as all-observed masks with E = 1), so
// the full-observation reduction is exact.
inline Stage1Result train_stage1(const MatrixBatch& batch, const Stage1Config& cfg) {
    const std::size_t n = batch.size();
    if (n == 0) throw DataError("train_stage1: empty batch");
    cfg.validate(n, batch.m1(), batch.m2());
    const bool incomplete = batch.has_masks();
    const std::size_t n_epochs = incomplete ? cfg.epochs : 1;

    // observation view: all-ones masks when none supplied
    MatrixBatch obs = batch;
    if (!incomplete) {
        obs.masks.assign(n, Mask(batch.m1(), batch.m2(), 1));
    }
    const bool all_observed = obs.all_observed();

    // filled state M̃ = P_Ω(M^obs)
    Stage1Result out;
    out.filled.mats.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Mat m = obs.mats[i];
        const Mask& mask = obs.masks[i];
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c)
                if (!mask(r, c)) m(r, c) = 0.0;
        out.filled.mats.push_back(std::move(m));
    }
    out.filled.masks = obs.masks;

    MatrixBatch init_view;
    init_view.mats = out.filled.mats;
    TuckerInit init = tucker_init(init_view, cfg.rank);
    out.rank_warning = init.rank_deficient_left || init.rank_deficient_right;
    Mat u = init.pair.u;
    Mat v = init.pair.v;

    // dimensionless step sizes: scale by the observed mean energy
    double mean_energy = 0.0;
    for (const Mat& m : out.filled.mats) mean_energy += frob_norm_sq(m);
    mean_energy /= static_cast<double>(n);
    const double scale = 1.0 / std::max(mean_energy, 1e-300);
    const double eta_u = cfg.eta_u * scale;
    const double eta_v = cfg.eta_v * scale;

    RngStream shuffle = rng_stream(cfg.seed, 0x5u);
    std::vector<std::size_t> order = detail::all_indices(n);
    std::size_t cursor = n;  // forces a reshuffle on first use
    auto next_minibatch = [&](std::vector<std::size_t>& mb) {
        mb.clear();
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            if (cursor >= n) {
                for (std::size_t i = n; i > 1; --i)
                    std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
                cursor = 0;
            }
            mb.push_back(order[cursor++]);
        }
    };

    std::vector<std::size_t> mb;
    std::vector<double> recent;  // per-epoch early-stop window
    long step_index = 0;
    for (std::size_t epoch = 0; epoch < n_epochs; ++epoch) {
        recent.clear();
        for (std::size_t t = 0; t < cfg.t_sub; ++t, ++step_index) {
            next_minibatch(mb);
            auto terms = detail::masked_terms(out.filled, obs, u, v, mb, true);
            if (!std::isfinite(terms.loss))
                throw NonFiniteLoss("train_stage1: loss non-finite at step " +
                                    std::to_string(step_index));
            if (step_index % static_cast<long>(cfg.log_stride) == 0)
                out.trace.emplace_back(step_index, terms.loss);
            u = stiefel_step(u, terms.gu, eta_u);
            v = stiefel_step(v, terms.gv, eta_v);
            recent.push_back(terms.loss);
            if (recent.size() > 20) {
                const double prev = recent[recent.size() - 21];
                if (std::abs(prev - terms.loss) <= 1e-10 * std::max(prev, 1e-300)) break;
            }
        }
        if (!all_observed) fill_update(out.filled, obs, u, v);
    }

    out.pair.u = std::move(u);
    out.pair.v = std::move(v);
    return out;
}

}  // namespace coreflow
