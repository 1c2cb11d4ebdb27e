#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

inline double orthonormality_defect(const Mat& w) {
    Mat g = matmul_tn(w, w);
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
    return max_abs(g);
}

inline void require_stiefel(const Mat& w, const char* what, double tol = 1e-8) {
    if (orthonormality_defect(w) > tol)
        throw NumericError(std::string(what) + ": columns not orthonormal within " +
                           std::to_string(tol));
}

// One Riemannian gradient step with QR retraction:
// project G onto the tangent space at W, step, retract via thin QR.
inline Mat stiefel_step(const Mat& w, const Mat& g, double eta) {
    if (!w.same_shape(g)) throw ShapeMismatch("stiefel_step: W and G shapes differ");
    if (!(eta > 0.0)) throw ConfigError("stiefel_step: eta must be positive");
    Mat wtg = matmul_tn(w, g);                       // WᵀG
    Mat sym(wtg.rows(), wtg.cols());
    for (std::size_t i = 0; i < wtg.rows(); ++i)
        for (std::size_t j = 0; j < wtg.cols(); ++j) sym(i, j) = 0.5 * (wtg(i, j) + wtg(j, i));
    Mat riem = g - matmul(w, sym);                   // G - W·Sym(WᵀG)
    Mat stepped = w - eta * riem;
    return qr_thin(stepped).q;
}

struct TuckerInit {
    StiefelPair pair;
    bool rank_deficient_left = false;
    bool rank_deficient_right = false;
};

inline Mat empirical_left_moment(const MatrixBatch& batch) {
    const std::size_t m1 = batch.m1();
    Mat c(m1, m1);
    for (const Mat& m : batch.mats) {
        Mat mmt = matmul_nt(m, m);
        for (std::size_t i = 0; i < m1; ++i)
            for (std::size_t j = 0; j < m1; ++j) c(i, j) += mmt(i, j);
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < m1; ++i)
        for (std::size_t j = 0; j < m1; ++j) c(i, j) *= inv_n;
    return c;
}

inline Mat empirical_right_moment(const MatrixBatch& batch) {
    const std::size_t m2 = batch.m2();
    Mat c(m2, m2);
    for (const Mat& m : batch.mats) {
        Mat mtm = matmul_tn(m, m);
        for (std::size_t i = 0; i < m2; ++i)
            for (std::size_t j = 0; j < m2; ++j) c(i, j) += mtm(i, j);
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < m2; ++i)
        for (std::size_t j = 0; j < m2; ++j) c(i, j) *= inv_n;
    return c;
}

namespace detail {

inline Mat top_eigvecs(const Mat& c, std::size_t r, bool& rank_deficient) {
    SymEig eig = sym_eig_desc(c);
    rank_deficient = eig.values[r - 1] < 1e-12 * std::max(eig.values[0], 0.0);
    Mat out(c.rows(), r);
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t i = 0; i < c.rows(); ++i) out(i, j) = eig.vectors(i, j);
    return out;
}

}  // namespace detail

// Tucker spectral initialization: top-R eigenvectors of the empirical second
// moments (1/N)ΣMMᵀ and (1/N)ΣMᵀM. A rank-deficient moment is a warning, not an
// error (the flags record it); for an all-zero moment the eigenbasis is the
// identity, so the first R canonical columns come back.
inline TuckerInit tucker_init(const MatrixBatch& batch, std::size_t r) {
    if (batch.size() == 0) throw DataError("tucker_init: empty batch");
    if (!batch.all_observed()) throw IncompleteData("tucker_init: batch has missing entries");
    if (r == 0 || r > std::min(batch.m1(), batch.m2()))
        throw ConfigError("tucker_init: rank out of range");
    TuckerInit out;
    out.pair.u = detail::top_eigvecs(empirical_left_moment(batch), r, out.rank_deficient_left);
    out.pair.v = detail::top_eigvecs(empirical_right_moment(batch), r, out.rank_deficient_right);
    if (out.rank_deficient_left || out.rank_deficient_right)
        warn("tucker_init: rank " + std::to_string(r) +
             " exceeds the numerical rank of an empirical second moment");
    return out;
}

// Principal angles between span(A) and span(B), in degrees, ascending.
// Orthonormalize both, take svdvals of the overlap, clamp to [-1,1], arccos.
// Internals run in long double: arccos near 1 amplifies eps-level errors on the
// singular values into ~1e-6-degree angles, which the recovery tests cannot absorb.
inline std::vector<double> principal_angles(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch("principal_angles: operands differ in shape");
    using LMat = MatT<long double>;
    LMat al(a.rows(), a.cols()), bl(b.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            al(i, j) = a(i, j);
            bl(i, j) = b(i, j);
        }
    LMat qa = qr_thin_t<long double>(al).q;
    LMat qb = qr_thin_t<long double>(bl).q;
    LMat overlap = matmul_tn(qa, qb);
    std::vector<long double> sv = singular_values_t<long double>(overlap);
    std::vector<double> degs(sv.size());
    for (std::size_t k = 0; k < sv.size(); ++k) {
        long double s = sv[k];
        if (s > 1.0L) s = 1.0L;
        if (s < -1.0L) s = -1.0L;
        degs[k] = static_cast<double>(std::acos(s) * (180.0L / 3.141592653589793238462643383279503L));
    }
    // descending sigma -> ascending theta already, but make the contract explicit
    std::sort(degs.begin(), degs.end());
    return degs;
}

inline double mean_principal_angle(const Mat& a, const Mat& b) {
    auto ang = principal_angles(a, b);
    double s = 0.0;
    for (double x : ang) s += x;
    return s / static_cast<double>(ang.size());
}

inline double max_principal_angle(const Mat& a, const Mat& b) {
    auto ang = principal_angles(a, b);
    return ang.back();
}

struct TuckerBoundCheck {
    double sin_theta = 0.0;  // lhs: ||(I - U0U0ᵀ)U⁽⁰⁾||₂
    double bound = 0.0;      // rhs: ||ĈL - CL||₂ / (λ_R(Σ_L) - ||ĈL - CL||₂)
    bool holds = false;
};

// Empirical check of the spectral-initialization bound. The population moment
// CL and λ_R(Σ_L) come from the synthetic generator (closed form or Monte Carlo).
inline TuckerBoundCheck check_tucker_bound_from_moment(const Mat& c_hat, const Mat& u0_true,
                                                       std::size_t r, const Mat& c_pop,
                                                       double lambda_r) {
    if (!c_hat.same_shape(c_pop)) throw ShapeMismatch("tucker bound: moment shapes differ");
    const double delta = spectral_norm(c_hat - c_pop);
    if (delta >= lambda_r)
        throw BoundInapplicable("tucker bound: ||ĈL - CL||₂ = " + std::to_string(delta) +
                                " >= λ_R(Σ_L) = " + std::to_string(lambda_r));
    bool rd = false;
    Mat u_hat = detail::top_eigvecs(c_hat, r, rd);
    // residual (I - U0U0ᵀ)U⁽⁰⁾; its spectral norm is sinΘ
    Mat proj = matmul(u0_true, matmul_tn(u0_true, u_hat));
    TuckerBoundCheck out;
    out.sin_theta = spectral_norm(u_hat - proj);
    out.bound = delta / (lambda_r - delta);
    out.holds = out.sin_theta <= out.bound + 1e-9;
    return out;
}

inline TuckerBoundCheck check_tucker_bound(const MatrixBatch& batch, const Mat& u0_true,
                                           std::size_t r, const Mat& c_pop, double lambda_r) {
    return check_tucker_bound_from_moment(empirical_left_moment(batch), u0_true, r, c_pop,
                                          lambda_r);
}

}  // namespace coreflow
