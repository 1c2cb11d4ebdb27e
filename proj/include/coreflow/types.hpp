#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"

namespace coreflow {

// Per-entry observation mask, 1 = observed.
using Mask = MatT<std::uint8_t>;

// N matrices of shape m1 x m2 plus optional observation masks — the dataset unit.
struct MatrixBatch {
    std::vector<Mat> mats;
    std::vector<Mask> masks;  // empty, or one mask per matrix

    std::size_t size() const { return mats.size(); }
    std::size_t m1() const { return mats.empty() ? 0 : mats.front().rows(); }
    std::size_t m2() const { return mats.empty() ? 0 : mats.front().cols(); }
    bool has_masks() const { return !masks.empty(); }

    bool all_observed() const {
        if (!has_masks()) return true;
        for (const auto& m : masks)
            for (std::size_t i = 0; i < m.rows(); ++i)
                for (std::size_t j = 0; j < m.cols(); ++j)
                    if (m(i, j) == 0) return false;
        return true;
    }

    void validate() const {
        for (const auto& m : mats) {
            if (m.rows() != m1() || m.cols() != m2()) throw ShapeMismatch("batch: ragged matrices");
            if (!m.all_finite()) throw DataError("batch: non-finite entry");
        }
        if (has_masks()) {
            if (masks.size() != mats.size()) throw ShapeMismatch("batch: mask count != matrix count");
            for (const auto& m : masks) {
                if (m.rows() != m1() || m.cols() != m2()) throw ShapeMismatch("batch: mask shape");
                for (std::size_t i = 0; i < m.rows(); ++i)
                    for (std::size_t j = 0; j < m.cols(); ++j)
                        if (m(i, j) > 1) throw ShapeMismatch("mask byte not 0/1");
            }
        }
    }
};

// Learned orthonormal factors (U*, V*) of ranks (m1 x R, m2 x R).
struct StiefelPair {
    Mat u;
    Mat v;

    std::size_t rank() const { return u.cols(); }
    std::size_t m1() const { return u.rows(); }
    std::size_t m2() const { return v.rows(); }
};

// N core vectors s = vec(UᵀMV) of dimension d = R².
// vec is column-stacking: s[c*R + r] = S(r, c).
struct CoreBatch {
    std::size_t dim = 0;  // d = R²
    std::size_t rank = 0;
    std::size_t src_m1 = 0, src_m2 = 0;
    std::vector<std::vector<double>> vecs;

    std::size_t size() const { return vecs.size(); }
};

inline std::vector<double> vec_core(const Mat& s) {
    std::vector<double> out(s.rows() * s.cols());
    for (std::size_t c = 0; c < s.cols(); ++c)
        for (std::size_t r = 0; r < s.rows(); ++r) out[c * s.rows() + r] = s(r, c);
    return out;
}

inline Mat mat_core(const std::vector<double>& s, std::size_t rank) {
    if (s.size() != rank * rank) throw ShapeMismatch("mat_core: |s| != R²");
    Mat out(rank, rank);
    for (std::size_t c = 0; c < rank; ++c)
        for (std::size_t r = 0; r < rank; ++r) out(r, c) = s[c * rank + r];
    return out;
}

// Per-step loss log: (step index, loss value).
using LossTrace = std::vector<std::pair<long, double>>;

}  // namespace coreflow
