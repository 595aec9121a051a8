#pragma once

#include "tsfluct/common.hpp"
#include "tsfluct/engine.hpp"
#include "tsfluct/model.hpp"
#include "tsfluct/schedules.hpp"
#include "tsfluct/verify.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tsfluct {

using json = nlohmann::json;

namespace config_detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                           const std::string& path) {
    if (!obj.is_object())
        throw ConfigError("config node '" + (path.empty() ? "<root>" : path) +
                          "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key))
            throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) +
                              "'");
    }
}

template <class T>
T get_or(const json& obj, const std::string& key, const std::string& path, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + path + "." + key + "' has the wrong type");
    }
}

template <class T>
T get_required(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.contains(key))
        throw ConfigError("missing required config key '" + path + "." + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + path + "." + key + "' has the wrong type");
    }
}

inline Vec to_vec(const std::vector<double>& v) {
    Vec out(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
    return out;
}

inline StepSchedule parse_schedule(const json& node, const std::string& path) {
    reject_unknown(node, {"kind", "scale", "exponent", "values"}, path);
    const auto kind = get_required<std::string>(node, "kind", path);
    if (kind == "power_law") {
        return StepSchedule::power_law(get_required<double>(node, "scale", path),
                                       get_required<double>(node, "exponent", path));
    }
    if (kind == "tabulated") {
        return StepSchedule::tabulated(
            get_required<std::vector<double>>(node, "values", path));
    }
    throw ConfigError("config key '" + path + ".kind' must be 'power_law' or 'tabulated'");
}

}  // namespace config_detail

struct EngineConfig {
    index_t n_start = 0;
    index_t n_end = 1000;
    std::uint64_t seed = 1;
    index_t trajectories = 1000;
    bool record_noise = false;
    InitialCondition init;
};

struct LimitConfig {
    double T = 1.0;
    int dt_divisor = 4096;
    index_t paths = 100000;
    Vec y0;
    std::optional<double> phi;  // defaults to the schedule estimate
    int grid_points = 64;
};

struct OutputConfig {
    std::string dir = "out";
    bool svg = true;
};

// One experiment document. Parsing validates the whole tree: unknown keys
// and type mismatches fail with the offending field path.
struct ExperimentConfig {
    std::string problem_name = "P1";
    SchedulePair pair;
    EngineConfig engine;
    VerifyConfig verify;
    std::string experiment = "fclt";  // fclt | theorem3 | clt
    LimitConfig limit;
    OutputConfig output;
    json echo;  // the parsed document, for the report header

    ProblemSpec problem() const { return make_problem(problem_name); }
};

inline ExperimentConfig parse_config(const json& doc) {
    using namespace config_detail;
    ExperimentConfig cfg;
    cfg.echo = doc;
    reject_unknown(doc, {"problem", "schedules", "engine", "fluct", "verify", "limit", "output"},
                   "");

    cfg.problem_name = get_or<std::string>(doc, "problem", "", "P1");
    const ProblemSpec spec = make_problem(cfg.problem_name);

    if (doc.contains("schedules")) {
        const json& s = doc.at("schedules");
        reject_unknown(s, {"fast", "slow"}, "schedules");
        if (!s.contains("fast") || !s.contains("slow"))
            throw ConfigError("schedules needs both 'fast' and 'slow'");
        cfg.pair.fast = parse_schedule(s.at("fast"), "schedules.fast");
        cfg.pair.slow = parse_schedule(s.at("slow"), "schedules.slow");
    } else {
        cfg.pair.fast = StepSchedule::power_law(0.9, 0.6);
        cfg.pair.slow = StepSchedule::power_law(0.8, 0.95);
    }

    if (doc.contains("engine")) {
        const json& e = doc.at("engine");
        reject_unknown(e, {"n_start", "n_end", "seed", "trajectories", "record_noise", "x0",
                           "y0", "Y0"},
                       "engine");
        cfg.engine.n_start = get_or<index_t>(e, "n_start", "engine", 0);
        cfg.engine.n_end = get_or<index_t>(e, "n_end", "engine", 1000);
        cfg.engine.seed = get_or<std::uint64_t>(e, "seed", "engine", 1);
        cfg.engine.trajectories = get_or<index_t>(e, "trajectories", "engine", 1000);
        cfg.engine.record_noise = get_or<bool>(e, "record_noise", "engine", false);
        if (e.contains("x0"))
            cfg.engine.init.x0 = to_vec(get_required<std::vector<double>>(e, "x0", "engine"));
        if (e.contains("y0"))
            cfg.engine.init.y0 = to_vec(get_required<std::vector<double>>(e, "y0", "engine"));
        cfg.engine.init.Y0 = get_or<int>(e, "Y0", "engine", 0);
    }
    if (cfg.engine.init.x0.size() == 0) cfg.engine.init.x0 = Vec::Ones(spec.d1);
    if (cfg.engine.init.y0.size() == 0) cfg.engine.init.y0 = Vec::Ones(spec.d2);
    if (cfg.engine.init.x0.size() != spec.d1 || cfg.engine.init.y0.size() != spec.d2)
        throw ConfigError("engine.x0/engine.y0 dimensions do not match the problem");

    cfg.verify.init = cfg.engine.init;
    cfg.verify.seed = cfg.engine.seed;
    cfg.verify.trajectories = cfg.engine.trajectories;
    cfg.verify.n_start = cfg.engine.n_start;

    if (doc.contains("fluct")) {
        const json& f = doc.at("fluct");
        reject_unknown(f, {"anchors", "T", "substeps", "grid_points", "u_only"}, "fluct");
        cfg.verify.anchors = get_or<std::vector<index_t>>(f, "anchors", "fluct", {});
        cfg.verify.T = get_or<double>(f, "T", "fluct", 4.0);
        // 16 is right for unit-scale knot intervals; long windows with tiny
        // steps can safely run 1 (the acceptance configs do)
        cfg.verify.substeps = get_or<int>(f, "substeps", "fluct", 16);
        cfg.verify.grid_points = get_or<int>(f, "grid_points", "fluct", 64);
        cfg.verify.u_only = get_or<bool>(f, "u_only", "fluct", false);
    }

    if (doc.contains("verify")) {
        const json& v = doc.at("verify");
        reject_unknown(v,
                       {"experiment", "rel_frobenius", "mean_sigmas", "mc_sigmas",
                        "kurtosis_band", "noise_floor", "y_star", "clt_indices", "checkpoints",
                        "plateau_T", "dt_divisor", "validate_horizon", "phi_horizon",
                        "threads"},
                       "verify");
        cfg.experiment = get_or<std::string>(v, "experiment", "verify", "fclt");
        if (cfg.experiment != "fclt" && cfg.experiment != "theorem3" && cfg.experiment != "clt")
            throw ConfigError("verify.experiment must be fclt, theorem3 or clt");
        cfg.verify.tol.rel_frobenius = get_or<double>(v, "rel_frobenius", "verify", 0.15);
        cfg.verify.tol.mean_sigmas = get_or<double>(v, "mean_sigmas", "verify", 3.0);
        cfg.verify.tol.mc_sigmas = get_or<double>(v, "mc_sigmas", "verify", 3.0);
        cfg.verify.tol.kurtosis_band = get_or<double>(v, "kurtosis_band", "verify", 0.3);
        cfg.verify.tol.noise_floor = get_or<double>(v, "noise_floor", "verify", 1e-6);
        if (v.contains("y_star"))
            cfg.verify.y_star = to_vec(get_required<std::vector<double>>(v, "y_star", "verify"));
        cfg.verify.clt_indices = get_or<std::vector<index_t>>(v, "clt_indices", "verify", {});
        cfg.verify.checkpoints = get_or<std::vector<index_t>>(v, "checkpoints", "verify", {});
        cfg.verify.plateau_T = get_or<double>(v, "plateau_T", "verify", 20.0);
        cfg.verify.dt_divisor = get_or<int>(v, "dt_divisor", "verify", 4096);
        cfg.verify.validate_horizon =
            get_or<index_t>(v, "validate_horizon", "verify", 10000);
        cfg.verify.phi_horizon = get_or<index_t>(v, "phi_horizon", "verify", 1000000);
        cfg.verify.threads = get_or<int>(v, "threads", "verify", 0);
    }
    if (cfg.verify.y_star && cfg.verify.y_star->size() != spec.d2)
        throw ConfigError("verify.y_star dimension does not match the problem");

    if (doc.contains("limit")) {
        const json& l = doc.at("limit");
        reject_unknown(l, {"T", "dt_divisor", "paths", "y0", "phi", "grid_points"}, "limit");
        cfg.limit.T = get_or<double>(l, "T", "limit", 1.0);
        cfg.limit.dt_divisor = get_or<int>(l, "dt_divisor", "limit", 4096);
        cfg.limit.paths = get_or<index_t>(l, "paths", "limit", 100000);
        if (l.contains("y0"))
            cfg.limit.y0 = to_vec(get_required<std::vector<double>>(l, "y0", "limit"));
        if (l.contains("phi")) cfg.limit.phi = get_required<double>(l, "phi", "limit");
        cfg.limit.grid_points = get_or<int>(l, "grid_points", "limit", 64);
    }
    if (cfg.limit.y0.size() == 0) cfg.limit.y0 = Vec::Zero(spec.d2);

    if (doc.contains("output")) {
        const json& o = doc.at("output");
        reject_unknown(o, {"dir", "svg"}, "output");
        cfg.output.dir = get_or<std::string>(o, "dir", "output", "out");
        cfg.output.svg = get_or<bool>(o, "svg", "output", true);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    return parse_config(doc);
}

}  // namespace tsfluct
