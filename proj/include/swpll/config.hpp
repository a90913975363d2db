#pragma once

// Run configuration: strict JSON schema (unknown keys rejected, invariants
// validated with field-precise messages) and mapping onto SimConfig.

#include "swpll/sim.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>

namespace swpll {

enum class ConfigErrorKind { MissingFile = 2, Parse = 3, Validation = 4 };

struct ConfigError : std::runtime_error {
    ConfigErrorKind kind;
    ConfigError(ConfigErrorKind k, const std::string& msg)
        : std::runtime_error(msg), kind(k) {}
    int exit_code() const { return static_cast<int>(kind); }
};

struct GridAxis {
    double min = 0.0;
    double max = 0.0;
    int count = 1;
};

struct GridSpec {
    GridAxis phi;
    GridAxis dphi_f;
};

struct RunConfig {
    CircuitParams circuit{};
    LoopGains gains{};
    SwitchThresholds thresholds{};
    std::optional<PllState> initial = PllState{2.0, 0.05};
    std::optional<GridSpec> grid;
    long max_cycles = 2000;
    std::uint64_t seed = 1;
    bool noise_enabled = false;
    FsmExitMode fsm_exit = FsmExitMode::AtZero;
    bool fsm_ki_reset_on_reversal = true;
    bool fsm_rearm = false;
    ModeOverride override_mode = ModeOverride::None;
    long settle_hold = 20;
    long cqlf_budget = 10000;
    std::string out_dir = "out";
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& path,
                         const std::set<std::string>& allowed) {
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError(ConfigErrorKind::Validation,
                              "unknown field '" + path + item.key() + "'");
        }
    }
}

inline double get_number(const nlohmann::json& j, const std::string& path,
                         const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + key + "' must be a number");
    }
    return j.at(key).get<double>();
}

inline long get_integer(const nlohmann::json& j, const std::string& path,
                        const char* key, long fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + key + "' must be an integer");
    }
    return j.at(key).get<long>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& path,
                     const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + key + "' must be a boolean");
    }
    return j.at(key).get<bool>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& path,
                              const char* key) {
    if (!j.at(key).is_string()) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + key + "' must be a string");
    }
    return j.at(key).get<std::string>();
}

inline GridAxis parse_axis(const nlohmann::json& j, const std::string& path) {
    require_keys(j, path, {"min", "max", "count"});
    GridAxis axis;
    axis.min = get_number(j, path, "min", 0.0);
    axis.max = get_number(j, path, "max", 0.0);
    axis.count = static_cast<int>(get_integer(j, path, "count", 1));
    if (axis.count < 1) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + "count' must be >= 1");
    }
    if (axis.count > 1 && !(axis.min < axis.max)) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field '" + path + "min' must be below '" + path + "max'");
    }
    return axis;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::get_bool;
    using detail::get_integer;
    using detail::get_number;
    using detail::require_keys;

    if (!j.is_object()) {
        throw ConfigError(ConfigErrorKind::Validation, "config root must be an object");
    }
    require_keys(j, "",
                 {"circuit", "gains", "thresholds", "initial", "grid", "max_cycles",
                  "seed", "noise_enabled", "fsm_exit_mode",
                  "fsm_ki_reset_on_reversal", "fsm_rearm", "mode_override",
                  "settle_hold", "cqlf_budget", "out_dir"});
    RunConfig cfg;

    if (j.contains("circuit")) {
        const auto& c = j.at("circuit");
        require_keys(c, "circuit.",
                     {"f_ref", "k_dco", "n_div", "dt_tdc_counter", "dt_tdc_delayline",
                      "sigma_t_dco"});
        cfg.circuit.f_ref = get_number(c, "circuit.", "f_ref", cfg.circuit.f_ref);
        cfg.circuit.k_dco = get_number(c, "circuit.", "k_dco", cfg.circuit.k_dco);
        cfg.circuit.n_div = get_number(c, "circuit.", "n_div", cfg.circuit.n_div);
        cfg.circuit.dt_tdc_counter =
            get_number(c, "circuit.", "dt_tdc_counter", cfg.circuit.dt_tdc_counter);
        cfg.circuit.dt_tdc_delayline =
            get_number(c, "circuit.", "dt_tdc_delayline", cfg.circuit.dt_tdc_delayline);
        cfg.circuit.sigma_t_dco =
            get_number(c, "circuit.", "sigma_t_dco", cfg.circuit.sigma_t_dco);
    }
    if (j.contains("gains")) {
        const auto& g = j.at("gains");
        require_keys(g, "gains.",
                     {"kp1n", "ki1n", "kp2n", "ki2n", "kp3n", "ki3n", "kd_init",
                      "beta"});
        cfg.gains.kp1n = get_number(g, "gains.", "kp1n", cfg.gains.kp1n);
        cfg.gains.ki1n = get_number(g, "gains.", "ki1n", cfg.gains.ki1n);
        cfg.gains.kp2n = get_number(g, "gains.", "kp2n", cfg.gains.kp2n);
        cfg.gains.ki2n = get_number(g, "gains.", "ki2n", cfg.gains.ki2n);
        cfg.gains.kp3n = get_number(g, "gains.", "kp3n", cfg.gains.kp3n);
        cfg.gains.ki3n = get_number(g, "gains.", "ki3n", cfg.gains.ki3n);
        cfg.gains.kd_init =
            static_cast<int>(get_integer(g, "gains.", "kd_init", cfg.gains.kd_init));
        cfg.gains.beta =
            static_cast<int>(get_integer(g, "gains.", "beta", cfg.gains.beta));
    }
    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        require_keys(t, "thresholds.", {"phi_err_1", "phi_err_2"});
        cfg.thresholds.phi_err_1 =
            get_number(t, "thresholds.", "phi_err_1", cfg.thresholds.phi_err_1);
        cfg.thresholds.phi_err_2 =
            get_number(t, "thresholds.", "phi_err_2", cfg.thresholds.phi_err_2);
    }
    if (j.contains("initial") && j.contains("grid")) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "fields 'initial' and 'grid' are mutually exclusive");
    }
    if (j.contains("initial")) {
        const auto& i = j.at("initial");
        require_keys(i, "initial.", {"phi", "dphi_f"});
        cfg.initial = PllState{get_number(i, "initial.", "phi", 0.0),
                               get_number(i, "initial.", "dphi_f", 0.0)};
    }
    if (j.contains("grid")) {
        const auto& gr = j.at("grid");
        require_keys(gr, "grid.", {"phi", "dphi_f"});
        if (!gr.contains("phi") || !gr.contains("dphi_f")) {
            throw ConfigError(ConfigErrorKind::Validation,
                              "field 'grid' needs both 'phi' and 'dphi_f' axes");
        }
        cfg.grid = GridSpec{detail::parse_axis(gr.at("phi"), "grid.phi."),
                            detail::parse_axis(gr.at("dphi_f"), "grid.dphi_f.")};
        cfg.initial.reset();
    }
    cfg.max_cycles = get_integer(j, "", "max_cycles", cfg.max_cycles);
    cfg.seed = static_cast<std::uint64_t>(get_integer(j, "", "seed",
                                                      static_cast<long>(cfg.seed)));
    cfg.noise_enabled = get_bool(j, "", "noise_enabled", cfg.noise_enabled);
    if (j.contains("fsm_exit_mode")) {
        const std::string v = detail::get_string(j, "", "fsm_exit_mode");
        if (v == "at_zero") {
            cfg.fsm_exit = FsmExitMode::AtZero;
        } else if (v == "at_one") {
            cfg.fsm_exit = FsmExitMode::AtOne;
        } else {
            throw ConfigError(ConfigErrorKind::Validation,
                              "field 'fsm_exit_mode' must be 'at_zero' or 'at_one'");
        }
    }
    cfg.fsm_ki_reset_on_reversal =
        get_bool(j, "", "fsm_ki_reset_on_reversal", cfg.fsm_ki_reset_on_reversal);
    cfg.fsm_rearm = get_bool(j, "", "fsm_rearm", cfg.fsm_rearm);
    if (j.contains("mode_override")) {
        const std::string v = detail::get_string(j, "", "mode_override");
        if (v == "none") {
            cfg.override_mode = ModeOverride::None;
        } else if (v == "bbpd") {
            cfg.override_mode = ModeOverride::BbpdOnly;
        } else if (v == "fsm_integrator") {
            cfg.override_mode = ModeOverride::FsmIntegratorOnly;
        } else {
            throw ConfigError(
                ConfigErrorKind::Validation,
                "field 'mode_override' must be 'none', 'bbpd' or 'fsm_integrator'");
        }
    }
    cfg.settle_hold = get_integer(j, "", "settle_hold", cfg.settle_hold);
    cfg.cqlf_budget = get_integer(j, "", "cqlf_budget", cfg.cqlf_budget);
    if (j.contains("out_dir")) cfg.out_dir = detail::get_string(j, "", "out_dir");

    // invariants
    try {
        validate(cfg.circuit);
        validate(cfg.gains);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(ConfigErrorKind::Validation, e.what());
    }
    if (!(cfg.thresholds.phi_err_2 > 0.0) ||
        !(cfg.thresholds.phi_err_2 < cfg.thresholds.phi_err_1)) {
        throw ConfigError(
            ConfigErrorKind::Validation,
            "field 'thresholds.phi_err_2' must satisfy 0 < phi_err_2 < phi_err_1");
    }
    if (cfg.initial &&
        (!std::isfinite(cfg.initial->phi) || !std::isfinite(cfg.initial->dphi_f))) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field 'initial' must hold finite values");
    }
    if (cfg.max_cycles < 1) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field 'max_cycles' must be >= 1");
    }
    if (cfg.settle_hold < 1) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field 'settle_hold' must be >= 1");
    }
    if (cfg.cqlf_budget < 1) {
        throw ConfigError(ConfigErrorKind::Validation,
                          "field 'cqlf_budget' must be >= 1");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(ConfigErrorKind::MissingFile,
                          "cannot open config file '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(ConfigErrorKind::Parse,
                          "malformed config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

// SimConfig for one run; `start` overrides the configured initial state (used
// by grid fan-out), `noise_stream` keeps parallel runs on disjoint substreams.
inline SimConfig make_sim_config(const RunConfig& cfg,
                                 std::optional<PllState> start = std::nullopt,
                                 std::uint64_t noise_stream = 0) {
    SimConfig sim;
    sim.loop.circuit = cfg.circuit;
    sim.loop.gains = cfg.gains;
    sim.thresholds = cfg.thresholds;
    sim.policy.fsm_exit = cfg.fsm_exit;
    sim.policy.fsm_ki_reset_on_reversal = cfg.fsm_ki_reset_on_reversal;
    sim.policy.fsm_rearm = cfg.fsm_rearm;
    sim.policy.override_mode = cfg.override_mode;
    sim.policy.settle_hold = cfg.settle_hold;
    sim.noise.enabled = cfg.noise_enabled;
    sim.noise.seed = cfg.seed;
    sim.noise.stream = noise_stream;
    sim.max_cycles = cfg.max_cycles;
    if (start) {
        sim.x0 = *start;
    } else if (cfg.initial) {
        sim.x0 = *cfg.initial;
    } else {
        throw ConfigError(ConfigErrorKind::Validation,
                          "config needs an 'initial' state for this command");
    }
    return sim;
}

inline std::vector<PllState> grid_starts(const GridSpec& grid) {
    std::vector<PllState> starts;
    starts.reserve(static_cast<std::size_t>(grid.phi.count) *
                   static_cast<std::size_t>(grid.dphi_f.count));
    auto axis_value = [](const GridAxis& axis, int i) {
        if (axis.count == 1) return axis.min;
        return axis.min + (axis.max - axis.min) * static_cast<double>(i) /
                              static_cast<double>(axis.count - 1);
    };
    for (int i = 0; i < grid.phi.count; ++i) {
        for (int k = 0; k < grid.dphi_f.count; ++k) {
            starts.push_back({axis_value(grid.phi, i), axis_value(grid.dphi_f, k)});
        }
    }
    return starts;
}

}  // namespace swpll
