#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/parallel.hpp"
#include "coreflow/rng.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

enum class SynthCase { Blobs, Bands, Waves, Crosshatch };

inline SynthCase synth_case_from_string(const std::string& s) {
    if (s == "blobs") return SynthCase::Blobs;
    if (s == "bands") return SynthCase::Bands;
    if (s == "waves") return SynthCase::Waves;
    if (s == "crosshatch") return SynthCase::Crosshatch;
    throw ConfigError("unknown synthetic case '" + s + "'");
}

inline const char* to_string(SynthCase c) {
    switch (c) {
        case SynthCase::Blobs: return "blobs";
        case SynthCase::Bands: return "bands";
        case SynthCase::Waves: return "waves";
        case SynthCase::Crosshatch: return "crosshatch";
    }
    return "?";
}

struct SynthConfig {
    SynthCase kind = SynthCase::Blobs;
    std::size_t m1 = 200, m2 = 200;  // paper-scale defaults
    std::size_t rank = 24;
    std::size_t n = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (rank == 0 || rank > std::min(m1, m2)) throw ConfigError("synth: rank out of range");
        if (n == 0) throw ConfigError("synth: need at least one sample");
    }
};

// First R columns of the orthonormal DCT-II matrix:
// column k has entries α_k cos(π(i+½)k/n), α_0 = √(1/n), α_k = √(2/n).
inline Mat dct_basis(std::size_t n, std::size_t r) {
    if (r > n) throw ConfigError("dct_basis: R > n");
    Mat b(n, r);
    const double pi = 3.141592653589793238462643383;
    for (std::size_t k = 0; k < r; ++k) {
        const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            b(i, k) = alpha * std::cos(pi * (static_cast<double>(i) + 0.5) *
                                       static_cast<double>(k) / static_cast<double>(n));
    }
    return b;
}

namespace detail {

inline double linear_prob(double start, double end, std::size_t r, std::size_t rank) {
    if (rank <= 1) return start;
    return start + static_cast<double>(r) * (end - start) / static_cast<double>(rank - 1);
}

}  // namespace detail

// One R x R core draw for the given case.
inline Mat sample_core(SynthCase kind, std::size_t rank, RngStream& rng) {
    Mat s(rank, rank);
    switch (kind) {
        case SynthCase::Blobs:
            for (std::size_t i = 0; i < rank; ++i)
                for (std::size_t j = 0; j < rank; ++j) s(i, j) = 1.5 * rng.normal();
            break;
        case SynthCase::Bands:
            for (std::size_t r = 0; r < rank; ++r) {
                const double strength = 1.5 * rng.normal() + 3.0;
                const bool active = rng.uniform01() < detail::linear_prob(0.2, 0.9, r, rank);
                s(r, r) = active ? strength : 0.0;
            }
            break;
        case SynthCase::Waves: {
            std::size_t k_max = std::max<std::size_t>(4, rank / 3);
            if (k_max > rank) k_max = rank;  // keep index draws in bounds for tiny R
            for (int j = 0; j < 4; ++j) {
                const std::size_t ki = rng.uniform_index(k_max);
                const std::size_t li = rng.uniform_index(k_max);
                s(ki, li) += 1.2 * rng.normal();
            }
            for (std::size_t d = 1; d <= 2; ++d)
                for (std::size_t p = 0; p + d < rank; ++p) {
                    s(p, p + d) += 0.15 * rng.normal();
                    s(p + d, p) += 0.15 * rng.normal();
                }
            break;
        }
        case SynthCase::Crosshatch:
            for (std::size_t r = 0; r < rank; ++r) {
                const double strength = 2.5 + 1.1 * rng.normal();
                const bool active = rng.uniform01() < detail::linear_prob(0.15, 0.85, r, rank);
                s(r, r) = active ? strength : 0.0;
            }
            break;
    }
    return s;
}

struct SynthData {
    MatrixBatch batch;
    StiefelPair truth;  // (U0, V0), ground truth for subspace recovery
};

// M_i = U0 S_i V0ᵀ with U0, V0 the leading DCT columns per side. Each matrix
// owns the stream (seed, index), so growing N never perturbs earlier samples.
inline SynthData generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthData out;
    out.truth.u = dct_basis(cfg.m1, cfg.rank);
    out.truth.v = dct_basis(cfg.m2, cfg.rank);
    out.batch.mats.resize(cfg.n);
    parallel_for_chunked(cfg.n, 16, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            RngStream rng = rng_stream(cfg.seed, i);
            Mat s = sample_core(cfg.kind, cfg.rank, rng);
            out.batch.mats[i] = matmul_nt(matmul(out.truth.u, s), out.truth.v);
        }
    });
    return out;
}

// Uniform missingness: each entry observed independently with prob 1 - p_miss.
// Unobserved entries are zeroed (P_Ω of the observation); observed values are
// copied bit-identically.
inline MatrixBatch apply_mask(const MatrixBatch& batch, double p_miss, std::uint64_t seed) {
    if (!(p_miss >= 0.0) || p_miss >= 1.0) throw ConfigError("apply_mask: p_miss must be in [0, 1)");
    MatrixBatch out;
    out.mats.resize(batch.size());
    out.masks.resize(batch.size());
    parallel_for_chunked(batch.size(), 16, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            RngStream rng = rng_stream(seed, i);
            const Mat& m = batch.mats[i];
            Mask mask(m.rows(), m.cols());
            Mat vals(m.rows(), m.cols());
            for (std::size_t r = 0; r < m.rows(); ++r)
                for (std::size_t c = 0; c < m.cols(); ++c) {
                    const bool observed = rng.uniform01() >= p_miss;
                    mask(r, c) = observed ? 1 : 0;
                    vals(r, c) = observed ? m(r, c) : 0.0;
                }
            out.masks[i] = std::move(mask);
            out.mats[i] = std::move(vals);
        }
    });
    return out;
}

}  // namespace coreflow
