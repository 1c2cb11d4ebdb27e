#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coreflow/config.hpp"
#include "coreflow/flow.hpp"
#include "coreflow/metrics.hpp"
#include "coreflow/rng.hpp"
#include "coreflow/stage1.hpp"
#include "coreflow/stiefel.hpp"
#include "coreflow/synth.hpp"
#include "coreflow/types.hpp"

namespace coreflow {

// Decorrelated per-role seeds derived from one base seed. Roles keep the data,
// mask, training and sampling streams independent of each other.
enum class SeedRole : std::uint64_t {
    Data = 1,
    Mask = 2,
    Stage1 = 3,
    Flow = 4,
    Sample = 5,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedRole role, std::uint64_t k = 0) {
    std::uint64_t state =
        base ^ (static_cast<std::uint64_t>(role) * 0xD2B74407B1CE6E93ull) ^ (k * 0xCA5A826395121157ull);
    return detail::splitmix64(state);
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["abs_entry_mean_diff"] = r.abs_entry_mean_diff;
    j["abs_entry_std_diff"] = r.abs_entry_std_diff;
    j["frob_mean_diff"] = r.frob_mean_diff;
    j["frob_std_diff"] = r.frob_std_diff;
    j["sv_rel_l2"] = r.sv_rel_l2;
    j["mmd"] = r.mmd;
    if (r.mean_angle_u) {
        j["mean_angle_u"] = *r.mean_angle_u;
        j["max_angle_u"] = *r.max_angle_u;
        j["mean_angle_v"] = *r.mean_angle_v;
        j["max_angle_v"] = *r.max_angle_v;
    }
    return j;
}

struct PipelineResult {
    SynthData data;              // truth pair + complete training matrices
    MatrixBatch train;           // training view (masked when p_miss > 0)
    MatrixBatch eval;            // held-out complete matrices
    Stage1Result stage1;
    std::vector<FlowResult> flows;           // one per repeat
    std::vector<MatrixBatch> generated;      // one per repeat
    std::vector<MetricsReport> reports;      // one per repeat
    MetricsReport mean_report;
    MetricsReport std_report;                // per-metric std over repeats (0 when repeats == 1)
};

inline void attach_angles(MetricsReport& r, const StiefelPair& truth, const StiefelPair& est) {
    auto au = principal_angles(truth.u, est.u);
    auto av = principal_angles(truth.v, est.v);
    double su = 0.0, sv = 0.0;
    for (double x : au) su += x;
    for (double x : av) sv += x;
    r.mean_angle_u = su / static_cast<double>(au.size());
    r.max_angle_u = au.back();
    r.mean_angle_v = sv / static_cast<double>(av.size());
    r.max_angle_v = av.back();
}

namespace detail {

inline void aggregate_reports(const std::vector<MetricsReport>& rs, MetricsReport& mean,
                              MetricsReport& sd) {
    auto each = [&](auto get) {
        double m = 0.0;
        for (const auto& r : rs) m += get(r);
        m /= static_cast<double>(rs.size());
        double var = 0.0;
        for (const auto& r : rs) var += (get(r) - m) * (get(r) - m);
        var /= static_cast<double>(rs.size());
        return std::pair<double, double>(m, std::sqrt(var));
    };
    auto [m0, s0] = each([](const MetricsReport& r) { return r.abs_entry_mean_diff; });
    mean.abs_entry_mean_diff = m0;
    sd.abs_entry_mean_diff = s0;
    auto [m1, s1] = each([](const MetricsReport& r) { return r.abs_entry_std_diff; });
    mean.abs_entry_std_diff = m1;
    sd.abs_entry_std_diff = s1;
    auto [m2, s2] = each([](const MetricsReport& r) { return r.frob_mean_diff; });
    mean.frob_mean_diff = m2;
    sd.frob_mean_diff = s2;
    auto [m3, s3] = each([](const MetricsReport& r) { return r.frob_std_diff; });
    mean.frob_std_diff = m3;
    sd.frob_std_diff = s3;
    auto [m4, s4] = each([](const MetricsReport& r) { return r.sv_rel_l2; });
    mean.sv_rel_l2 = m4;
    sd.sv_rel_l2 = s4;
    auto [m5, s5] = each([](const MetricsReport& r) { return r.mmd; });
    mean.mmd = m5;
    sd.mmd = s5;
    if (rs.front().mean_angle_u) {
        mean.mean_angle_u = rs.front().mean_angle_u;
        mean.max_angle_u = rs.front().max_angle_u;
        mean.mean_angle_v = rs.front().mean_angle_v;
        mean.max_angle_v = rs.front().max_angle_v;
    }
}

}  // namespace detail

// End-to-end run: generate, mask, Stage I, Stage II, sample, evaluate.
// Repeats re-run Stage II + sampling with fresh derived seeds.
inline PipelineResult run_pipeline(const AppConfig& cfg, std::size_t n_gen) {
    PipelineResult out;
    const std::uint64_t base = cfg.data.seed;

    SynthConfig synth;
    synth.kind = synth_case_from_string(cfg.data.kind);
    synth.m1 = cfg.data.m1;
    synth.m2 = cfg.data.m2;
    synth.rank = cfg.data.rank;
    synth.n = cfg.data.n + cfg.data.n_eval;
    synth.seed = derive_seed(base, SeedRole::Data);
    SynthData all = generate(synth);

    out.data.truth = all.truth;
    out.data.batch.mats.assign(all.batch.mats.begin(),
                               all.batch.mats.begin() + static_cast<long>(cfg.data.n));
    out.eval.mats.assign(all.batch.mats.begin() + static_cast<long>(cfg.data.n),
                         all.batch.mats.end());

    out.train = out.data.batch;
    if (cfg.data.p_miss > 0.0)
        out.train = apply_mask(out.train, cfg.data.p_miss, derive_seed(base, SeedRole::Mask));

    Stage1Config s1 = cfg.stage1;
    s1.rank = cfg.data.rank;
    s1.batch_size = std::min(s1.batch_size, cfg.data.n);
    s1.seed = derive_seed(base, SeedRole::Stage1);
    out.stage1 = train_stage1(out.train, s1);

    CoreBatch cores = extract_cores(out.stage1.filled, out.stage1.pair);

    const std::size_t repeats = std::max<std::size_t>(cfg.eval.repeats, 1);
    for (std::size_t k = 0; k < repeats; ++k) {
        FlowConfig fc = cfg.flow;
        fc.batch_size = std::min(fc.batch_size, cores.size());
        fc.seed = derive_seed(base, SeedRole::Flow, k);
        out.flows.push_back(train_flow(cores, fc));
        CoreBatch gen_cores = sample_cores(out.flows.back().net, n_gen, fc.ode_steps,
                                           derive_seed(base, SeedRole::Sample, k));
        out.generated.push_back(decode(gen_cores, out.stage1.pair));
        MetricsReport r = evaluate_batches(out.eval, out.generated.back());
        attach_angles(r, out.data.truth, out.stage1.pair);
        out.reports.push_back(r);
    }
    detail::aggregate_reports(out.reports, out.mean_report, out.std_report);
    return out;
}

}  // namespace coreflow
