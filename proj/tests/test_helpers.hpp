#pragma once

#include <cmath>
#include <vector>

#include "coreflow/linalg.hpp"
#include "coreflow/rng.hpp"
#include "coreflow/types.hpp"

namespace cf = coreflow;

inline cf::Mat random_mat(std::size_t rows, std::size_t cols, cf::RngStream& rng,
                          double scale = 1.0) {
    cf::Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline cf::Mat random_stiefel(std::size_t rows, std::size_t cols, cf::RngStream& rng) {
    return cf::qr_thin(random_mat(rows, cols, rng)).q;
}

// random orthogonal R x R (for rotation-invariance properties)
inline cf::Mat random_orthogonal(std::size_t n, cf::RngStream& rng) {
    return random_stiefel(n, n, rng);
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// per-entry agreement with a norm-scaled floor, the convention for FD checks
inline double max_entry_mismatch(const cf::Mat& a, const cf::Mat& b) {
    double scale = std::max({cf::max_abs(a), cf::max_abs(b), 1e-8});
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), 0.01 * scale});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    return worst;
}

// tangent projection G - W Sym(WᵀG), the effective gradient on the manifold
inline cf::Mat tangent_project(const cf::Mat& w, const cf::Mat& g) {
    cf::Mat wtg = cf::matmul_tn(w, g);
    cf::Mat sym(wtg.rows(), wtg.cols());
    for (std::size_t i = 0; i < wtg.rows(); ++i)
        for (std::size_t j = 0; j < wtg.cols(); ++j) sym(i, j) = 0.5 * (wtg(i, j) + wtg(j, i));
    return g - cf::matmul(w, sym);
}
