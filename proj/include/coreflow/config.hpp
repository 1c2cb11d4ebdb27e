#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coreflow/errors.hpp"
#include "coreflow/flow.hpp"
#include "coreflow/stage1.hpp"
#include "coreflow/synth.hpp"

namespace coreflow {

struct DataConfig {
    std::string kind = "blobs";
    std::size_t m1 = 64, m2 = 64;   // desk-scale preset; paper scale is 200/24/1000
    std::size_t rank = 8;
    std::size_t n = 256;
    std::size_t n_eval = 500;
    double p_miss = 0.0;
    std::uint64_t seed = 0;
};

struct BaselineConfig {
    double kappa0 = 1.0;
    double nu0 = 0.0;        // 0 -> d + 2
    double psi0_scale = 1.0; // Psi0 = scale * I
};

struct EvalConfig {
    std::size_t repeats = 3;
};

// One JSON document, sections {data, stage1, flow, eval, baseline}.
// Unknown sections or keys are rejected.
struct AppConfig {
    DataConfig data;
    Stage1Config stage1;
    FlowConfig flow;
    EvalConfig eval;
    BaselineConfig baseline;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline AppConfig parse_config(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    AppConfig cfg;
    detail::check_keys(j, {"data", "stage1", "flow", "eval", "baseline"}, "config root");
    if (j.contains("data")) {
        const json& d = j["data"];
        detail::check_keys(d, {"case", "m1", "m2", "rank", "n", "n_eval", "p_miss", "seed"},
                           "data");
        detail::maybe(d, "case", cfg.data.kind);
        detail::maybe(d, "m1", cfg.data.m1);
        detail::maybe(d, "m2", cfg.data.m2);
        detail::maybe(d, "rank", cfg.data.rank);
        detail::maybe(d, "n", cfg.data.n);
        detail::maybe(d, "n_eval", cfg.data.n_eval);
        detail::maybe(d, "p_miss", cfg.data.p_miss);
        detail::maybe(d, "seed", cfg.data.seed);
        synth_case_from_string(cfg.data.kind);  // validate the tag
    }
    if (j.contains("stage1")) {
        const json& s = j["stage1"];
        detail::check_keys(
            s, {"t_sub", "eta_u", "eta_v", "batch_size", "epochs", "seed", "log_stride"},
            "stage1");
        detail::maybe(s, "t_sub", cfg.stage1.t_sub);
        detail::maybe(s, "eta_u", cfg.stage1.eta_u);
        detail::maybe(s, "eta_v", cfg.stage1.eta_v);
        detail::maybe(s, "batch_size", cfg.stage1.batch_size);
        detail::maybe(s, "epochs", cfg.stage1.epochs);
        detail::maybe(s, "seed", cfg.stage1.seed);
        detail::maybe(s, "log_stride", cfg.stage1.log_stride);
    }
    if (j.contains("flow")) {
        const json& f = j["flow"];
        detail::check_keys(f,
                           {"steps", "lr", "batch_size", "hidden", "temb_width", "seed",
                            "ode_steps", "log_stride"},
                           "flow");
        detail::maybe(f, "steps", cfg.flow.steps);
        detail::maybe(f, "lr", cfg.flow.lr);
        detail::maybe(f, "batch_size", cfg.flow.batch_size);
        detail::maybe(f, "hidden", cfg.flow.hidden);
        detail::maybe(f, "temb_width", cfg.flow.temb_width);
        detail::maybe(f, "seed", cfg.flow.seed);
        detail::maybe(f, "ode_steps", cfg.flow.ode_steps);
        detail::maybe(f, "log_stride", cfg.flow.log_stride);
    }
    if (j.contains("eval")) {
        detail::check_keys(j["eval"], {"repeats"}, "eval");
        detail::maybe(j["eval"], "repeats", cfg.eval.repeats);
        if (cfg.eval.repeats == 0) throw ConfigError("eval.repeats must be >= 1");
    }
    if (j.contains("baseline")) {
        const json& b = j["baseline"];
        detail::check_keys(b, {"kappa0", "nu0", "psi0_scale"}, "baseline");
        detail::maybe(b, "kappa0", cfg.baseline.kappa0);
        detail::maybe(b, "nu0", cfg.baseline.nu0);
        detail::maybe(b, "psi0_scale", cfg.baseline.psi0_scale);
    }
    return cfg;
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoFailure("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace coreflow
