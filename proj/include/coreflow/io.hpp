#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "coreflow/errors.hpp"
#include "coreflow/flow.hpp"
#include "coreflow/linalg.hpp"
#include "coreflow/stiefel.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

// All formats are little-endian real64 with fixed magics:
//   CFMB matrix batch, CFMK masks, CFSS subspace pair, CFNN velocity net.
// Writes are atomic (temp file + rename); read∘write and write∘read are
// bit-exact identities.

namespace detail {

constexpr std::uint32_t kFormatVersion = 1;

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    void magic(const char m[5]) { raw(m, 4); }
};

struct ByteReader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    std::size_t remaining() const { return buf.size() - pos; }
    void need(std::size_t n, const char* what) {
        if (remaining() < n) throw TruncatedPayload(std::string(what) + " (file too short)");
    }
    void magic(const char expect[5], const char* what) {
        need(4, what);
        if (!std::equal(expect, expect + 4, buf.begin() + static_cast<long>(pos)))
            throw BadMagic(std::string(what) + ": expected " + expect);
        pos += 4;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(bits);
    }
    std::uint8_t byte(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    void expect_version(const char* what) {
        const std::uint32_t v = u32(what);
        if (v != kFormatVersion)
            throw VersionMismatch(std::string(what) + ": version " + std::to_string(v));
    }
    void expect_consumed(const char* what) {
        if (remaining() != 0)
            throw TruncatedPayload(std::string(what) + ": trailing bytes after payload");
    }
};

inline void atomic_write(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoFailure("cannot open for write: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
        if (!f) throw IoFailure("short write: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoFailure("rename failed: " + path + " (" + ec.message() + ")");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFailure("cannot open: " + path);
    f.seekg(0, std::ios::end);
    const auto n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoFailure("short read: " + path);
    return bytes;
}

}  // namespace detail

using Metadata = std::map<std::string, std::string>;  // sorted -> deterministic bytes

inline void write_batch(const std::string& path, const MatrixBatch& batch,
                        const Metadata& meta = {}) {
    detail::ByteWriter w;
    w.magic("CFMB");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(batch.size()));
    w.u32(static_cast<std::uint32_t>(batch.m1()));
    w.u32(static_cast<std::uint32_t>(batch.m2()));
    for (const Mat& m : batch.mats)
        for (std::size_t k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
    if (!meta.empty()) {
        std::string lines;
        for (const auto& [k, v] : meta) lines += k + "=" + v + "\n";
        w.u32(static_cast<std::uint32_t>(lines.size()));
        w.raw(lines.data(), lines.size());
    }
    detail::atomic_write(path, w.buf);
}

inline MatrixBatch read_batch(const std::string& path, Metadata* meta_out = nullptr) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    r.magic("CFMB", "batch file");
    r.expect_version("batch file");
    const std::uint32_t n = r.u32("batch count");
    const std::uint32_t m1 = r.u32("batch m1");
    const std::uint32_t m2 = r.u32("batch m2");
    MatrixBatch batch;
    batch.mats.reserve(n);
    r.need(static_cast<std::size_t>(n) * m1 * m2 * 8, "batch payload");
    for (std::uint32_t i = 0; i < n; ++i) {
        Mat m(m1, m2);
        for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = r.f64("batch payload");
        if (!m.all_finite()) throw DataError("batch file: non-finite entry in matrix " +
                                             std::to_string(i));
        batch.mats.push_back(std::move(m));
    }
    if (r.remaining() > 0) {
        const std::uint32_t len = r.u32("metadata length");
        r.need(len, "metadata block");
        std::string lines(bytes.begin() + static_cast<long>(r.pos),
                          bytes.begin() + static_cast<long>(r.pos + len));
        r.pos += len;
        if (meta_out) {
            std::size_t start = 0;
            while (start < lines.size()) {
                const std::size_t nl = lines.find('\n', start);
                const std::string line = lines.substr(start, nl - start);
                const std::size_t eq = line.find('=');
                if (eq != std::string::npos)
                    (*meta_out)[line.substr(0, eq)] = line.substr(eq + 1);
                if (nl == std::string::npos) break;
                start = nl + 1;
            }
        }
    }
    r.expect_consumed("batch file");
    return batch;
}

inline void write_masks(const std::string& path, const MatrixBatch& batch) {
    if (!batch.has_masks()) throw DataError("write_masks: batch carries no masks");
    detail::ByteWriter w;
    w.magic("CFMK");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(batch.size()));
    w.u32(static_cast<std::uint32_t>(batch.m1()));
    w.u32(static_cast<std::uint32_t>(batch.m2()));
    for (const Mask& m : batch.masks)
        for (std::size_t i = 0; i < m.rows(); ++i)
            w.raw(m.row(i), m.cols());
    detail::atomic_write(path, w.buf);
}

// Reads a CFMK file and attaches the masks to a batch of matching shape.
inline void read_masks_into(const std::string& path, MatrixBatch& batch) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    r.magic("CFMK", "mask file");
    r.expect_version("mask file");
    const std::uint32_t n = r.u32("mask count");
    const std::uint32_t m1 = r.u32("mask m1");
    const std::uint32_t m2 = r.u32("mask m2");
    if (n != batch.size() || m1 != batch.m1() || m2 != batch.m2())
        throw ShapeMismatch("mask file does not match its companion batch");
    r.need(static_cast<std::size_t>(n) * m1 * m2, "mask payload");
    batch.masks.assign(n, Mask(m1, m2));
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t a = 0; a < m1; ++a)
            for (std::uint32_t b = 0; b < m2; ++b) {
                const std::uint8_t v = r.byte("mask payload");
                if (v > 1) throw ShapeMismatch("mask byte not 0/1");
                batch.masks[i](a, b) = v;
            }
    r.expect_consumed("mask file");
}

inline void write_subspaces(const std::string& path, const StiefelPair& pair) {
    detail::ByteWriter w;
    w.magic("CFSS");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(pair.m1()));
    w.u32(static_cast<std::uint32_t>(pair.m2()));
    w.u32(static_cast<std::uint32_t>(pair.rank()));
    for (std::size_t k = 0; k < pair.u.size(); ++k) w.f64(pair.u.data()[k]);
    for (std::size_t k = 0; k < pair.v.size(); ++k) w.f64(pair.v.data()[k]);
    detail::atomic_write(path, w.buf);
}

inline StiefelPair read_subspaces(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    r.magic("CFSS", "subspace file");
    r.expect_version("subspace file");
    const std::uint32_t m1 = r.u32("subspace m1");
    const std::uint32_t m2 = r.u32("subspace m2");
    const std::uint32_t rank = r.u32("subspace rank");
    r.need((static_cast<std::size_t>(m1) + m2) * rank * 8, "subspace payload");
    StiefelPair pair;
    pair.u = Mat(m1, rank);
    pair.v = Mat(m2, rank);
    for (std::size_t k = 0; k < pair.u.size(); ++k) pair.u.data()[k] = r.f64("subspace payload");
    for (std::size_t k = 0; k < pair.v.size(); ++k) pair.v.data()[k] = r.f64("subspace payload");
    r.expect_consumed("subspace file");
    if (orthonormality_defect(pair.u) > 1e-6 || orthonormality_defect(pair.v) > 1e-6)
        warn("subspace file " + path + ": factors orthonormal only loosely (> 1e-6)");
    return pair;
}

inline void write_flow(const std::string& path, const VelocityNet& net) {
    detail::ByteWriter w;
    w.magic("CFNN");
    w.u32(detail::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(net.dim));
    w.u32(static_cast<std::uint32_t>(net.temb_width));
    w.u32(static_cast<std::uint32_t>(net.hidden.size()));
    for (std::size_t h : net.hidden) w.u32(static_cast<std::uint32_t>(h));
    const bool has_norm = !net.norm_mean.empty();
    w.u32(has_norm ? 1 : 0);
    if (has_norm) {
        for (double v : net.norm_mean) w.f64(v);
        for (double v : net.norm_std) w.f64(v);
    }
    w.u32(static_cast<std::uint32_t>(net.param_count()));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        const Mat& wm = net.weights[l];
        for (std::size_t k = 0; k < wm.size(); ++k) w.f64(wm.data()[k]);
        for (double b : net.biases[l]) w.f64(b);
    }
    detail::atomic_write(path, w.buf);
}

inline VelocityNet read_flow(const std::string& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r{bytes};
    r.magic("CFNN", "flow file");
    r.expect_version("flow file");
    VelocityNet net;
    net.dim = r.u32("flow dim");
    net.temb_width = r.u32("flow temb width");
    const std::uint32_t n_hidden = r.u32("flow hidden count");
    for (std::uint32_t i = 0; i < n_hidden; ++i) net.hidden.push_back(r.u32("flow hidden size"));
    const std::uint32_t has_norm = r.u32("flow norm flag");
    if (has_norm) {
        net.norm_mean.resize(net.dim);
        net.norm_std.resize(net.dim);
        for (double& v : net.norm_mean) v = r.f64("flow norm mean");
        for (double& v : net.norm_std) v = r.f64("flow norm std");
    }
    const std::uint32_t n_params = r.u32("flow param count");
    auto widths = net.widths();
    std::size_t expect = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
        expect += widths[l + 1] * widths[l] + widths[l + 1];
    if (n_params != expect)
        throw ShapeMismatch("flow file: parameter count " + std::to_string(n_params) +
                            " does not match the architecture (" + std::to_string(expect) + ")");
    r.need(static_cast<std::size_t>(n_params) * 8, "flow parameters");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Mat wm(widths[l + 1], widths[l]);
        for (std::size_t k = 0; k < wm.size(); ++k) wm.data()[k] = r.f64("flow parameters");
        net.weights.push_back(std::move(wm));
        std::vector<double> b(widths[l + 1]);
        for (double& v : b) v = r.f64("flow parameters");
        net.biases.push_back(std::move(b));
    }
    r.expect_consumed("flow file");
    if (!net.all_finite()) throw DataError("flow file: non-finite parameter");
    return net;
}

// Core batches travel as CFMB files of 1 x d rows plus provenance metadata.
inline void write_cores(const std::string& path, const CoreBatch& cores) {
    MatrixBatch view;
    view.mats.reserve(cores.size());
    for (const auto& v : cores.vecs) {
        Mat m(1, cores.dim);
        for (std::size_t j = 0; j < cores.dim; ++j) m(0, j) = v[j];
        view.mats.push_back(std::move(m));
    }
    Metadata meta;
    meta["kind"] = "cores";
    meta["rank"] = std::to_string(cores.rank);
    meta["src_m1"] = std::to_string(cores.src_m1);
    meta["src_m2"] = std::to_string(cores.src_m2);
    write_batch(path, view, meta);
}

inline CoreBatch read_cores(const std::string& path) {
    Metadata meta;
    MatrixBatch view = read_batch(path, &meta);
    CoreBatch cores;
    cores.dim = view.m2();
    if (view.m1() != 1) throw ShapeMismatch("core file: expected 1 x d rows");
    auto geti = [&](const char* k) -> std::size_t {
        auto it = meta.find(k);
        return it == meta.end() ? 0 : static_cast<std::size_t>(std::stoull(it->second));
    };
    cores.rank = geti("rank");
    cores.src_m1 = geti("src_m1");
    cores.src_m2 = geti("src_m2");
    cores.vecs.reserve(view.size());
    for (const Mat& m : view.mats)
        cores.vecs.emplace_back(m.data(), m.data() + cores.dim);
    return cores;
}

// Loss trace CSV, header "step,loss".
inline void write_loss_csv(const std::string& path, const LossTrace& trace) {
    std::string text = "step,loss\n";
    char line[64];
    for (const auto& [step, loss] : trace) {
        std::snprintf(line, sizeof(line), "%ld,%.17g\n", step, loss);
        text += line;
    }
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    detail::atomic_write(path, bytes);
}

}  // namespace coreflow
