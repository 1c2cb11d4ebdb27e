#pragma once

#include <cmath>
#include <cstddef>

#include "coreflow/errors.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

// Non-overlapping p x p patchification plan: p = round((HW)^(1/4)) with
// half-away-from-zero rounding, crop to multiples of p.
struct PatchSpec {
    std::size_t orig_h = 0, orig_w = 0;
    std::size_t p = 1;
    std::size_t crop_h = 0, crop_w = 0;

    std::size_t n_patches() const { return (crop_h / p) * (crop_w / p); }
    std::size_t patch_dim() const { return p * p; }
};

inline PatchSpec patch_plan(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0) throw ConfigError("patch_plan: empty matrix");
    PatchSpec spec;
    spec.orig_h = h;
    spec.orig_w = w;
    const double p = std::round(std::pow(static_cast<double>(h) * static_cast<double>(w), 0.25));
    spec.p = static_cast<std::size_t>(p < 1.0 ? 1.0 : p);
    if (spec.p > std::min(h, w)) spec.p = std::min(h, w);
    spec.crop_h = (h / spec.p) * spec.p;
    spec.crop_w = (w / spec.p) * spec.p;
    return spec;
}

inline PatchSpec patch_plan_with_p(std::size_t h, std::size_t w, std::size_t p) {
    if (p == 0 || p > std::min(h, w)) throw ConfigError("patch plan: p out of range");
    PatchSpec spec;
    spec.orig_h = h;
    spec.orig_w = w;
    spec.p = p;
    spec.crop_h = (h / p) * p;
    spec.crop_w = (w / p) * p;
    return spec;
}

// Crop to (crop_h, crop_w), enumerate p x p tiles row-major, each output row is
// the row-major vectorization of one tile.
inline Mat patchify(const Mat& m, const PatchSpec& spec) {
    if (m.rows() != spec.orig_h || m.cols() != spec.orig_w)
        throw ShapeMismatch("patchify: matrix does not match the plan");
    const std::size_t th = spec.crop_h / spec.p, tw = spec.crop_w / spec.p;
    Mat out(th * tw, spec.patch_dim());
    for (std::size_t ti = 0; ti < th; ++ti)
        for (std::size_t tj = 0; tj < tw; ++tj) {
            const std::size_t row = ti * tw + tj;
            std::size_t k = 0;
            for (std::size_t i = 0; i < spec.p; ++i)
                for (std::size_t j = 0; j < spec.p; ++j, ++k)
                    out(row, k) = m(ti * spec.p + i, tj * spec.p + j);
        }
    return out;
}

inline Mat unpatchify(const Mat& pm, const PatchSpec& spec) {
    if (pm.rows() != spec.n_patches() || pm.cols() != spec.patch_dim())
        throw ShapeMismatch("unpatchify: patch matrix does not match the plan");
    const std::size_t th = spec.crop_h / spec.p, tw = spec.crop_w / spec.p;
    Mat out(spec.crop_h, spec.crop_w);
    for (std::size_t ti = 0; ti < th; ++ti)
        for (std::size_t tj = 0; tj < tw; ++tj) {
            const std::size_t row = ti * tw + tj;
            std::size_t k = 0;
            for (std::size_t i = 0; i < spec.p; ++i)
                for (std::size_t j = 0; j < spec.p; ++j, ++k)
                    out(ti * spec.p + i, tj * spec.p + j) = pm(row, k);
        }
    return out;
}

inline Mat crop(const Mat& m, const PatchSpec& spec) {
    Mat out(spec.crop_h, spec.crop_w);
    for (std::size_t i = 0; i < spec.crop_h; ++i)
        for (std::size_t j = 0; j < spec.crop_w; ++j) out(i, j) = m(i, j);
    return out;
}

}  // namespace coreflow
