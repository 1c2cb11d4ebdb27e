#pragma once

#include <algorithm>
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

// Cores S_i = U*ᵀ M_i V*, column-stacked into vectors of dimension R².
inline CoreBatch extract_cores(const MatrixBatch& batch, const StiefelPair& pair) {
    CoreBatch out;
    out.rank = pair.rank();
    out.dim = out.rank * out.rank;
    out.src_m1 = pair.m1();
    out.src_m2 = pair.m2();
    out.vecs.reserve(batch.size());
    for (const Mat& m : batch.mats) {
        require_shape(m, pair.m1(), pair.m2(), "extract_cores: matrix vs subspaces");
        out.vecs.push_back(vec_core(matmul(matmul_tn(pair.u, m), pair.v)));
    }
    return out;
}

// M̂_i = U* mat(s_i) V*ᵀ
inline MatrixBatch decode(const CoreBatch& cores, const StiefelPair& pair) {
    if (cores.dim != pair.rank() * pair.rank())
        throw ShapeMismatch("decode: core dimension != R² of the subspace pair");
    MatrixBatch out;
    out.mats.resize(cores.size());
    parallel_for_chunked(cores.size(), 8, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t i = b; i < e; ++i) {
            Mat s = mat_core(cores.vecs[i], pair.rank());
            out.mats[i] = matmul_nt(matmul(pair.u, s), pair.v);
        }
    });
    return out;
}

struct FlowConfig {
    std::size_t steps = 5000;
    double lr = 1e-3;                       // Adam eta_theta
    std::size_t batch_size = 128;
    std::vector<std::size_t> hidden = {128, 128};
    std::size_t temb_width = 32;            // even
    std::uint64_t seed = 0;
    std::size_t ode_steps = 101;            // grid points, both endpoints included
    std::size_t log_stride = 10;

    // steps = 0 is allowed: train_flow then returns the freshly initialized net
    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("flow: learning rate must be positive");
        if (batch_size == 0) throw ConfigError("flow: batch size must be >= 1");
        if (temb_width < 2 || temb_width % 2 != 0)
            throw ConfigError("flow: time-embedding width must be even and >= 2");
        if (ode_steps < 2) throw ConfigError("flow: ode steps must be >= 2");
        if (log_stride == 0) throw ConfigError("flow: log stride must be >= 1");
    }
};

// Time-conditioned MLP velocity field v_θ(x, t): sinusoidal features of t are
// appended to x, then SiLU hidden layers and a linear output of width d.
struct VelocityNet {
    std::size_t dim = 0;
    std::size_t temb_width = 0;
    std::vector<std::size_t> hidden;
    std::vector<Mat> weights;                 // weights[l]: out_l x in_l
    std::vector<std::vector<double>> biases;  // biases[l]: out_l
    std::vector<double> norm_mean, norm_std;  // core standardization (empty = identity)

    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w;
        w.push_back(dim + temb_width);
        for (std::size_t h : hidden) w.push_back(h);
        w.push_back(dim);
        return w;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        auto w = widths();
        for (std::size_t l = 0; l + 1 < w.size(); ++l) n += w[l + 1] * w[l] + w[l + 1];
        return n;
    }

    bool all_finite() const {
        for (const Mat& w : weights)
            if (!w.all_finite()) return false;
        for (const auto& b : biases)
            for (double x : b)
                if (!std::isfinite(x)) return false;
        return true;
    }
};

// Glorot-uniform hidden layers; the final layer starts at zero so the initial
// flow is the identity map.
inline VelocityNet init_velocity_net(std::size_t dim, const std::vector<std::size_t>& hidden,
                                     std::size_t temb_width, std::uint64_t seed) {
    VelocityNet net;
    net.dim = dim;
    net.temb_width = temb_width;
    net.hidden = hidden;
    auto w = net.widths();
    RngStream rng = rng_stream(seed, 0x11u);
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        Mat wl(w[l + 1], w[l]);
        const bool last = (l + 2 == w.size());
        if (!last) {
            const double a = std::sqrt(6.0 / static_cast<double>(w[l] + w[l + 1]));
            for (std::size_t i = 0; i < wl.rows(); ++i)
                for (std::size_t j = 0; j < wl.cols(); ++j)
                    wl(i, j) = a * (2.0 * rng.uniform01() - 1.0);
        }
        net.weights.push_back(std::move(wl));
        net.biases.emplace_back(w[l + 1], 0.0);
    }
    return net;
}

namespace detail {

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_deriv(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

// [sin(2π f_k t), cos(2π f_k t)], f_k = 2^k
inline void time_embedding(double t, std::size_t width, double* out) {
    double f = 1.0;
    for (std::size_t k = 0; 2 * k < width; ++k, f *= 2.0) {
        out[2 * k] = std::sin(kTwoPi * f * t);
        out[2 * k + 1] = std::cos(kTwoPi * f * t);
    }
}

struct ForwardCache {
    std::vector<Mat> pre;   // pre-activations per layer
    std::vector<Mat> act;   // act[0] = input, act[l+1] = activation after layer l
};

inline Mat forward_batch(const VelocityNet& net, const Mat& x, const std::vector<double>& ts,
                         ForwardCache* cache) {
    const std::size_t b = x.rows();
    Mat a0(b, net.dim + net.temb_width);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < net.dim; ++j) a0(i, j) = x(i, j);
        time_embedding(ts[i], net.temb_width, a0.row(i) + net.dim);
    }
    if (cache) {
        cache->pre.clear();
        cache->act.clear();
        cache->act.push_back(a0);
    }
    Mat a = std::move(a0);
    const std::size_t n_layers = net.weights.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        Mat z = matmul_nt(a, net.weights[l]);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += net.biases[l][j];
        const bool last = (l + 1 == n_layers);
        if (cache) cache->pre.push_back(z);
        if (last) {
            a = std::move(z);
        } else {
            Mat act(z.rows(), z.cols());
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t j = 0; j < z.cols(); ++j) act(i, j) = silu(z(i, j));
            if (cache) cache->act.push_back(act);
            a = std::move(act);
        }
    }
    return a;
}

}  // namespace detail

inline std::vector<double> velocity_forward(const VelocityNet& net, const std::vector<double>& x,
                                            double t) {
    if (x.size() != net.dim) throw ShapeMismatch("velocity_forward: |x| != d");
    Mat xm(1, net.dim);
    for (std::size_t j = 0; j < net.dim; ++j) xm(0, j) = x[j];
    Mat out = detail::forward_batch(net, xm, {t}, nullptr);
    return std::vector<double>(out.row(0), out.row(0) + net.dim);
}

struct NetGrads {
    std::vector<Mat> w;
    std::vector<std::vector<double>> b;

    static NetGrads zeros_like(const VelocityNet& net) {
        NetGrads g;
        for (const Mat& wl : net.weights) g.w.emplace_back(wl.rows(), wl.cols());
        for (const auto& bl : net.biases) g.b.emplace_back(bl.size(), 0.0);
        return g;
    }

    void add(const NetGrads& o) {
        for (std::size_t l = 0; l < w.size(); ++l) {
            w[l] = w[l] + o.w[l];
            for (std::size_t j = 0; j < b[l].size(); ++j) b[l][j] += o.b[l][j];
        }
    }
};

// Conditional flow-matching loss on a mini-batch and its parameter gradients:
//   (1/|B|) Σ ||v_θ((1-t_i)s_i + t_i z_i, t_i) - (z_i - s_i)||²
// with reverse-mode backprop through the MLP. Noise and times come from the
// caller so draws stay under one seeded stream.
inline std::pair<double, NetGrads> cfm_loss_and_grad(const VelocityNet& net,
                                                     const std::vector<std::vector<double>>& cores,
                                                     const std::vector<std::vector<double>>& noise,
                                                     const std::vector<double>& times) {
    const std::size_t b = cores.size();
    if (noise.size() != b || times.size() != b)
        throw ShapeMismatch("cfm_loss_and_grad: batch components differ in length");
    if (b == 0) throw DataError("cfm_loss_and_grad: empty batch");
    const std::size_t d = net.dim;
    for (std::size_t k = 0; k < b; ++k)
        if (cores[k].size() != d || noise[k].size() != d)
            throw ShapeMismatch("cfm_loss_and_grad: core/noise dimension");

    struct Partial {
        double loss = 0.0;
        NetGrads g;
    };
    const std::size_t chunk = 16;
    std::vector<Partial> parts((b + chunk - 1) / chunk);
    parallel_for_chunked(b, chunk, [&](std::size_t beg, std::size_t end, std::size_t ci) {
        const std::size_t nb = end - beg;
        Mat x(nb, d);
        Mat target(nb, d);
        std::vector<double> ts(nb);
        for (std::size_t k = 0; k < nb; ++k) {
            const auto& s = cores[beg + k];
            const auto& z = noise[beg + k];
            const double t = times[beg + k];
            ts[k] = t;
            for (std::size_t j = 0; j < d; ++j) {
                x(k, j) = (1.0 - t) * s[j] + t * z[j];
                target(k, j) = z[j] - s[j];
            }
        }
        detail::ForwardCache cache;
        Mat out = detail::forward_batch(net, x, ts, &cache);

        Partial p;
        p.g = NetGrads::zeros_like(net);
        Mat delta(nb, d);
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double r = out(i, j) - target(i, j);
                p.loss += r * r * inv_b;
                delta(i, j) = 2.0 * r * inv_b;
            }
        for (std::size_t l = net.weights.size(); l-- > 0;) {
            p.g.w[l] = p.g.w[l] + matmul_tn(delta, cache.act[l]);
            for (std::size_t i = 0; i < delta.rows(); ++i)
                for (std::size_t j = 0; j < delta.cols(); ++j) p.g.b[l][j] += delta(i, j);
            if (l > 0) {
                Mat next = matmul(delta, net.weights[l]);
                const Mat& z = cache.pre[l - 1];
                for (std::size_t i = 0; i < next.rows(); ++i)
                    for (std::size_t j = 0; j < next.cols(); ++j)
                        next(i, j) *= detail::silu_deriv(z(i, j));
                delta = std::move(next);
            }
        }
        parts[ci] = std::move(p);
    });

    double loss = 0.0;
    NetGrads grads = NetGrads::zeros_like(net);
    for (Partial& p : parts) {
        loss += p.loss;
        grads.add(p.g);
    }
    return {loss, std::move(grads)};
}

struct AdamState {
    std::vector<Mat> mw, vw;
    std::vector<std::vector<double>> mb, vb;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState for_net(const VelocityNet& net) {
        AdamState s;
        for (const Mat& w : net.weights) {
            s.mw.emplace_back(w.rows(), w.cols());
            s.vw.emplace_back(w.rows(), w.cols());
        }
        for (const auto& b : net.biases) {
            s.mb.emplace_back(b.size(), 0.0);
            s.vb.emplace_back(b.size(), 0.0);
        }
        return s;
    }

    void step(VelocityNet& net, const NetGrads& g, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            Mat& w = net.weights[l];
            for (std::size_t i = 0; i < w.rows(); ++i)
                for (std::size_t j = 0; j < w.cols(); ++j) {
                    double& m = mw[l](i, j);
                    double& v = vw[l](i, j);
                    const double gr = g.w[l](i, j);
                    m = beta1 * m + (1.0 - beta1) * gr;
                    v = beta2 * v + (1.0 - beta2) * gr * gr;
                    w(i, j) -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
                }
            auto& b = net.biases[l];
            for (std::size_t j = 0; j < b.size(); ++j) {
                double& m = mb[l][j];
                double& v = vb[l][j];
                const double gr = g.b[l][j];
                m = beta1 * m + (1.0 - beta1) * gr;
                v = beta2 * v + (1.0 - beta2) * gr * gr;
                b[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
            }
        }
    }
};

struct FlowResult {
    VelocityNet net;
    LossTrace trace;
};

// Stage-II training: standardize cores per coordinate (std floored at 1e-8,
// recorded in the net for sampling/checkpointing), then T_flow Adam steps on the
// CFM objective.
inline FlowResult train_flow(const CoreBatch& cores, const FlowConfig& cfg) {
    cfg.validate();
    const std::size_t n = cores.size();
    const std::size_t d = cores.dim;
    if (n < cfg.batch_size)
        throw ConfigError("train_flow: fewer cores than the batch size");

    FlowResult out;
    out.net = init_velocity_net(d, cfg.hidden, cfg.temb_width, cfg.seed);
    out.net.norm_mean.assign(d, 0.0);
    out.net.norm_std.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (const auto& s : cores.vecs) m += s[j];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (const auto& s : cores.vecs) var += (s[j] - m) * (s[j] - m);
        var /= static_cast<double>(n);
        out.net.norm_mean[j] = m;
        out.net.norm_std[j] = std::max(std::sqrt(var), 1e-8);
    }
    std::vector<std::vector<double>> std_cores(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            std_cores[i][j] = (cores.vecs[i][j] - out.net.norm_mean[j]) / out.net.norm_std[j];

    RngStream shuffle = rng_stream(cfg.seed, 0x21u);
    RngStream draws = rng_stream(cfg.seed, 0x22u);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = n;

    AdamState adam = AdamState::for_net(out.net);
    std::vector<std::vector<double>> mb_cores(cfg.batch_size), mb_noise(cfg.batch_size);
    std::vector<double> mb_times(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            if (cursor >= n) {
                for (std::size_t i = n; i > 1; --i)
                    std::swap(order[i - 1], order[shuffle.uniform_index(i)]);
                cursor = 0;
            }
            mb_cores[k] = std_cores[order[cursor++]];
            auto& z = mb_noise[k];
            z.resize(d);
            for (std::size_t j = 0; j < d; ++j) z[j] = draws.normal();
            mb_times[k] = draws.uniform01();
        }
        auto [loss, grads] = cfm_loss_and_grad(out.net, mb_cores, mb_noise, mb_times);
        if (!std::isfinite(loss))
            throw NonFiniteLoss("train_flow: loss non-finite at step " + std::to_string(step));
        if (step % cfg.log_stride == 0) out.trace.emplace_back(static_cast<long>(step), loss);
        adam.step(out.net, grads, cfg.lr);
    }
    return out;
}

// Backward generation: z ~ N(0, I_d), classic RK4 on dx/dt = v_θ(x,t) from t=1
// down to t=0 over a uniform grid of ode_steps points, then de-standardize.
inline CoreBatch sample_cores(const VelocityNet& net, std::size_t n, std::size_t ode_steps,
                              std::uint64_t seed) {
    if (ode_steps < 2) throw ConfigError("sample_cores: ode steps must be >= 2");
    const std::size_t d = net.dim;
    Mat x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng = rng_stream(seed, i);
        for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal();
    }
    const double h = -1.0 / static_cast<double>(ode_steps - 1);
    std::vector<double> ts(n);
    auto eval = [&](const Mat& state, double t) {
        std::fill(ts.begin(), ts.end(), t);
        return detail::forward_batch(net, state, ts, nullptr);
    };
    for (std::size_t k = 0; k + 1 < ode_steps; ++k) {
        const double t = 1.0 + h * static_cast<double>(k);
        Mat k1 = eval(x, t);
        Mat k2 = eval(x + (h / 2.0) * k1, t + h / 2.0);
        Mat k3 = eval(x + (h / 2.0) * k2, t + h / 2.0);
        Mat k4 = eval(x + h * k3, t + h);
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.all_finite())
            throw NonFiniteState("sample_cores: state non-finite after step " + std::to_string(k));
    }
    CoreBatch out;
    out.dim = d;
    const std::size_t r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(d))));
    out.rank = (r * r == d) ? r : 0;
    out.vecs.assign(n, std::vector<double>(d));
    const bool has_norm = !net.norm_mean.empty();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.vecs[i][j] = has_norm ? x(i, j) * net.norm_std[j] + net.norm_mean[j] : x(i, j);
    return out;
}

}  // namespace coreflow
