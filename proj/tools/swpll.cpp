// Command-line front end: simulate / portrait / verify / design / sweep.
// Exit codes: 0 analysis completed (including negative verdicts), 2 missing
// file, 3 parse error, 4 validation or domain error.

#include "swpll/config.hpp"
#include "swpll/design.hpp"
#include "swpll/io.hpp"
#include "swpll/lyapunov.hpp"
#include "swpll/sim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::optional<long> seed;
    std::optional<long> max_cycles;
    bool noise = false;
    std::string fsm_exit;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "config file (JSON)")->required();
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "override config seed");
    cmd->add_option("--max-cycles", flags.max_cycles, "override cycle budget");
    cmd->add_flag("--noise", flags.noise, "enable the DCO jitter disturbance");
    cmd->add_option("--fsm-exit", flags.fsm_exit,
                    "FSM exit reading: zero (default) or one")
        ->check(CLI::IsMember({"zero", "one"}));
}

swpll::RunConfig load_with_overrides(const CommonFlags& flags) {
    swpll::RunConfig cfg = swpll::load_config(flags.config_path);
    if (flags.seed) cfg.seed = static_cast<std::uint64_t>(*flags.seed);
    if (flags.max_cycles) cfg.max_cycles = *flags.max_cycles;
    if (flags.noise) cfg.noise_enabled = true;
    if (flags.fsm_exit == "one") cfg.fsm_exit = swpll::FsmExitMode::AtOne;
    if (flags.fsm_exit == "zero") cfg.fsm_exit = swpll::FsmExitMode::AtZero;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    return cfg;
}

fs::path ensure_out_dir(const swpll::RunConfig& cfg) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

int run_simulate(const CommonFlags& flags) {
    const auto cfg = load_with_overrides(flags);
    const auto sim_cfg = swpll::make_sim_config(cfg);
    const auto result = swpll::simulate(sim_cfg);

    const fs::path dir = ensure_out_dir(cfg);
    std::ostringstream csv;
    swpll::write_trajectory_csv(csv, result.trajectory);
    write_text(dir / "trajectory.csv", csv.str());
    write_text(dir / "report.json", swpll::report_to_json(result.report).dump(2) + "\n");

    std::cout << "cycles=" << result.trajectory.records.size()
              << " final_mode=" << swpll::mode_tag_token(result.report.final_mode)
              << " settled_at="
              << (result.report.settled_at ? std::to_string(*result.report.settled_at)
                                           : std::string("none"))
              << " chatter=" << (result.report.chatter.chattering ? "true" : "false")
              << " diverged=" << (result.report.diverged ? "true" : "false") << "\n"
              << "wrote " << (dir / "trajectory.csv").string() << " and "
              << (dir / "report.json").string() << "\n";
    return 0;
}

int run_portrait(const CommonFlags& flags, bool full) {
    const auto cfg = load_with_overrides(flags);
    if (!cfg.grid) {
        throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                 "portrait needs a 'grid' section in the config");
    }
    const auto starts = swpll::grid_starts(*cfg.grid);
    std::vector<std::future<swpll::SimResult>> futs;
    futs.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        futs.push_back(std::async(std::launch::async, [&cfg, &starts, i] {
            return swpll::simulate(
                swpll::make_sim_config(cfg, starts[i], static_cast<std::uint64_t>(i)));
        }));
    }
    const fs::path dir = ensure_out_dir(cfg);
    std::vector<swpll::PortraitRow> rows;
    rows.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const auto result = futs[i].get();
        rows.push_back({starts[i], result.report.settled_at,
                        result.report.chatter.chattering, result.report.final_mode,
                        result.report.rotation});
        if (full) {
            std::ostringstream csv;
            swpll::write_trajectory_csv(csv, result.trajectory);
            char name[32];
            std::snprintf(name, sizeof(name), "traj_%04zu.csv", i);
            write_text(dir / name, csv.str());
        }
    }
    std::ostringstream csv;
    swpll::write_portrait_csv(csv, rows);
    write_text(dir / "portrait.csv", csv.str());
    std::cout << "portrait: " << rows.size() << " starts, wrote "
              << (dir / "portrait.csv").string() << "\n";
    return 0;
}

int run_verify(const CommonFlags& flags) {
    const auto cfg = load_with_overrides(flags);
    const auto& g = cfg.gains;

    json out;
    out["schema_version"] = "1";
    bool pass = true;

    const auto p_lti = swpll::lti_cqlf_form();
    const auto p_bbpd = swpll::bbpd_energy_form();
    const bool pd_lti = swpll::is_positive_definite(p_lti);
    const bool pd_bbpd = swpll::is_positive_definite(p_bbpd);
    pass = pass && pd_lti && pd_bbpd;

    const std::vector<Eigen::Matrix2d> lti_mats = {
        swpll::lti_matrix(g.kp1n, g.ki1n), swpll::lti_matrix(g.kp2n, g.ki2n)};
    const bool cqlf_ok = swpll::check_cqlf(p_lti, lti_mats);
    pass = pass && cqlf_ok;
    out["lti_cqlf"] = {{"positive_definite", pd_lti},
                       {"form", swpll::quadratic_form_json(p_lti)},
                       {"holds_for_lti_pair", cqlf_ok}};
    out["bbpd_form"] = {{"positive_definite", pd_bbpd},
                        {"form", swpll::quadratic_form_json(p_bbpd)}};

    const auto search = swpll::search_cqlf(
        lti_mats, cfg.cqlf_budget,
        swpll::rng::derive(cfg.seed, swpll::rng::kCqlfLabel));
    json sj;
    sj["inputs_stable"] = search.inputs_stable;
    sj["found"] = search.certificate.has_value();
    sj["candidates_tried"] = search.candidates_tried;
    if (search.certificate) sj["p"] = swpll::quadratic_form_json(*search.certificate);
    out["cqlf_search"] = sj;
    pass = pass && search.certificate.has_value();

    const double c = 2.0 * g.kp3n + g.ki3n;
    json bj;
    try {
        const auto interval = swpll::bbpd_lyapunov_bound(
            p_bbpd, cfg.thresholds.phi_err_2, cfg.thresholds.phi_err_2);
        const bool inside = interval.c_min < c && c < interval.c_max;
        bj = {{"c_min", interval.c_min},
              {"c_max", interval.c_max},
              {"c", c},
              {"inside", inside}};
        pass = pass && inside;
    } catch (const std::domain_error& e) {
        bj = {{"error", e.what()}, {"c", c}, {"inside", false}};
        pass = false;
    }
    out["bbpd_gain_interval"] = bj;

    // reference run for the switch-on decrease checks
    const auto result = swpll::simulate(swpll::make_sim_config(cfg));
    json mlf = json::array();
    for (const auto& trace : result.report.switch_on_traces) {
        const auto report = swpll::mlf_check(trace);
        json t;
        t["subsystem"] = swpll::subsystem_token(trace.subsystem);
        t["samples"] = trace.values.size();
        t["pass"] = report.pass;
        if (report.first_violation()) {
            t["first_violation"] = *report.first_violation();
        } else {
            t["first_violation"] = nullptr;
        }
        mlf.push_back(t);
        const bool composite =
            trace.subsystem == swpll::SubsystemId::IntegratorLti ||
            trace.subsystem == swpll::SubsystemId::IntegratorDifferentiator;
        if (composite && trace.values.size() >= 2) pass = pass && report.pass;
    }
    out["mlf"] = mlf;
    out["reference_run"] = {
        {"settled_at", result.report.settled_at
                           ? json(*result.report.settled_at)
                           : json(nullptr)},
        {"chatter", result.report.chatter.chattering},
        {"diverged", result.report.diverged}};
    out["pass"] = pass;

    const fs::path dir = ensure_out_dir(cfg);
    write_text(dir / "verify.json", out.dump(2) + "\n");
    std::cout << "verify: pass=" << (pass ? "true" : "false") << ", wrote "
              << (dir / "verify.json").string() << "\n";
    return 0;
}

struct DesignFlags {
    double pm_deg = 35.0;
    double bw_hz = 7.0e6;
    double kpfd = 250.0 / (2.0 * std::numbers::pi);
    double loop_delay = 1.0;
    double bbpd_bw_hz = 2.0e6;
    double residual_lo = 0.002;
    double residual_hi = 0.01;
};

int run_design(const CommonFlags& flags, const DesignFlags& d) {
    const auto cfg = load_with_overrides(flags);
    const auto& circuit = cfg.circuit;

    swpll::LtiDesignSpec spec;
    spec.pm = d.pm_deg * std::numbers::pi / 180.0;
    spec.ugbw = 2.0 * std::numbers::pi * d.bw_hz;
    spec.loop_delay = d.loop_delay;

    const auto raw = swpll::design_lti_gains(spec, d.kpfd, circuit);
    const auto [kpn, kin] = swpll::normalize_gains(raw.kp, raw.ki, d.kpfd, circuit);

    const double omega_u = 2.0 * std::numbers::pi * d.bbpd_bw_hz;
    const double ratio_bound =
        swpll::bbpd_ratio_bound(omega_u, circuit.t_ref(), d.loop_delay, spec.pm);
    const double configured_ratio = cfg.gains.kp3n / cfg.gains.ki3n;

    const auto interval = swpll::bbpd_lyapunov_bound(
        swpll::bbpd_energy_form(), cfg.thresholds.phi_err_2, cfg.thresholds.phi_err_2);
    const double c = 2.0 * cfg.gains.kp3n + cfg.gains.ki3n;

    const auto kd = swpll::kd_init_range(cfg.gains.kp3n, cfg.gains.ki3n,
                                         d.residual_lo, d.residual_hi,
                                         cfg.gains.beta);

    json out;
    out["schema_version"] = "1";
    out["pi_design"] = {{"pm_rad", spec.pm},
                        {"ugbw_rad_s", spec.ugbw},
                        {"kpfd", d.kpfd},
                        {"kpfd_ideal_counter",
                         swpll::kpfd(circuit.t_ref(), circuit.dt_tdc_counter)},
                        {"kpfd_ideal_delayline",
                         swpll::kpfd(circuit.t_ref(), circuit.dt_tdc_delayline)},
                        {"kp", raw.kp},
                        {"ki", raw.ki},
                        {"kpn", kpn},
                        {"kin", kin}};
    out["bbpd_ratio_bound"] = {{"omega_u_rad_s", omega_u},
                               {"loop_delay_cycles", d.loop_delay},
                               {"min_ratio", ratio_bound},
                               {"configured_ratio", configured_ratio},
                               {"satisfied", configured_ratio >= ratio_bound}};
    out["bbpd_gain_interval"] = {{"c_min", interval.c_min},
                                 {"c_max", interval.c_max},
                                 {"c", c},
                                 {"inside", interval.c_min < c && c < interval.c_max}};
    out["kd_range"] = {{"kd_lo", kd.kd_lo},
                       {"kd_hi", kd.kd_hi},
                       {"kd_pick", kd.kd_pick}};

    const fs::path dir = ensure_out_dir(cfg);
    write_text(dir / "design.json", out.dump(2) + "\n");
    std::cout << "design: kp=" << swpll::format_g17(raw.kp)
              << " ki=" << swpll::format_g17(raw.ki) << " kd_pick=" << kd.kd_pick
              << ", wrote " << (dir / "design.json").string() << "\n";
    return 0;
}

// Scalar config fields addressable by the sweep command.
double* resolve_param(swpll::RunConfig& cfg, const std::string& name) {
    if (name == "circuit.f_ref") return &cfg.circuit.f_ref;
    if (name == "circuit.k_dco") return &cfg.circuit.k_dco;
    if (name == "circuit.n_div") return &cfg.circuit.n_div;
    if (name == "circuit.dt_tdc_counter") return &cfg.circuit.dt_tdc_counter;
    if (name == "circuit.dt_tdc_delayline") return &cfg.circuit.dt_tdc_delayline;
    if (name == "circuit.sigma_t_dco") return &cfg.circuit.sigma_t_dco;
    if (name == "gains.kp1n") return &cfg.gains.kp1n;
    if (name == "gains.ki1n") return &cfg.gains.ki1n;
    if (name == "gains.kp2n") return &cfg.gains.kp2n;
    if (name == "gains.ki2n") return &cfg.gains.ki2n;
    if (name == "gains.kp3n") return &cfg.gains.kp3n;
    if (name == "gains.ki3n") return &cfg.gains.ki3n;
    if (name == "thresholds.phi_err_1") return &cfg.thresholds.phi_err_1;
    if (name == "thresholds.phi_err_2") return &cfg.thresholds.phi_err_2;
    if (cfg.initial) {
        if (name == "initial.phi") return &cfg.initial->phi;
        if (name == "initial.dphi_f") return &cfg.initial->dphi_f;
    }
    return nullptr;
}

int run_sweep(const CommonFlags& flags, const std::string& param1,
              const std::vector<double>& values1, const std::string& param2,
              const std::vector<double>& values2) {
    const auto base = load_with_overrides(flags);
    if (param1.empty()) {
        throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                 "sweep needs a --param field name");
    }
    if (values1.empty()) {
        throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                 "sweep needs a non-empty --values list");
    }
    const bool two_axes = !param2.empty();
    if (two_axes && values2.empty()) {
        throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                 "sweep needs a non-empty --values2 list");
    }
    {
        swpll::RunConfig probe = base;
        if (!resolve_param(probe, param1)) {
            throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                     "unknown sweep parameter '" + param1 + "'");
        }
        if (two_axes && !resolve_param(probe, param2)) {
            throw swpll::ConfigError(swpll::ConfigErrorKind::Validation,
                                     "unknown sweep parameter '" + param2 + "'");
        }
    }

    std::vector<std::vector<double>> combos;
    for (double v1 : values1) {
        if (two_axes) {
            for (double v2 : values2) combos.push_back({v1, v2});
        } else {
            combos.push_back({v1});
        }
    }

    std::vector<std::future<swpll::SimResult>> futs;
    futs.reserve(combos.size());
    for (std::size_t i = 0; i < combos.size(); ++i) {
        swpll::RunConfig cfg = base;
        *resolve_param(cfg, param1) = combos[i][0];
        if (two_axes) *resolve_param(cfg, param2) = combos[i][1];
        try {
            validate(cfg.circuit);
            validate(cfg.gains);
        } catch (const std::invalid_argument& e) {
            throw swpll::ConfigError(swpll::ConfigErrorKind::Validation, e.what());
        }
        auto sim_cfg = swpll::make_sim_config(cfg, std::nullopt,
                                              static_cast<std::uint64_t>(i));
        futs.push_back(std::async(std::launch::async,
                                  [sim_cfg] { return swpll::simulate(sim_cfg); }));
    }

    std::vector<swpll::SweepRow> rows;
    rows.reserve(combos.size());
    for (std::size_t i = 0; i < combos.size(); ++i) {
        const auto result = futs[i].get();
        rows.push_back({combos[i], result.report.settled_at,
                        result.report.chatter.chattering,
                        result.trajectory.records.back().v3});
    }

    std::vector<std::string> names{param1};
    if (two_axes) names.push_back(param2);
    const fs::path dir = ensure_out_dir(base);
    std::ostringstream csv;
    swpll::write_sweep_csv(csv, names, rows);
    write_text(dir / "sweep.csv", csv.str());
    std::cout << "sweep: " << rows.size() << " runs, wrote "
              << (dir / "sweep.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Switched DPLL simulator and Lyapunov stability verifier"};
    app.require_subcommand(1);

    CommonFlags sim_flags;
    auto* sim_cmd = app.add_subcommand("simulate", "run one switched-loop trajectory");
    add_common(sim_cmd, sim_flags);

    CommonFlags portrait_flags;
    bool portrait_full = false;
    auto* portrait_cmd =
        app.add_subcommand("portrait", "run a grid of starts and summarize each");
    add_common(portrait_cmd, portrait_flags);
    portrait_cmd->add_flag("--full", portrait_full, "also write every trajectory");

    CommonFlags verify_flags;
    auto* verify_cmd =
        app.add_subcommand("verify", "stability certificates and gain bounds");
    add_common(verify_cmd, verify_flags);

    CommonFlags design_flags;
    DesignFlags design_opts;
    auto* design_cmd =
        app.add_subcommand("design", "derive loop gains from margin/bandwidth targets");
    add_common(design_cmd, design_flags);
    design_cmd->add_option("--pm-deg", design_opts.pm_deg, "phase margin [deg]");
    design_cmd->add_option("--bw-hz", design_opts.bw_hz, "unity-gain bandwidth [Hz]");
    design_cmd->add_option("--kpfd", design_opts.kpfd,
                           "detector gain [LSB/rad]; default is the calibrated "
                           "fine-TDC value");
    design_cmd->add_option("--loop-delay", design_opts.loop_delay,
                           "loop delay [reference cycles]");
    design_cmd->add_option("--bbpd-bw-hz", design_opts.bbpd_bw_hz,
                           "bang-bang mode bandwidth [Hz]");
    design_cmd->add_option("--residual-lo", design_opts.residual_lo,
                           "lower residual correction bound [rad]");
    design_cmd->add_option("--residual-hi", design_opts.residual_hi,
                           "upper residual correction bound [rad]");

    CommonFlags sweep_flags;
    std::string sweep_param1, sweep_param2;
    std::vector<double> sweep_values1, sweep_values2;
    auto* sweep_cmd = app.add_subcommand("sweep", "sweep one or two config scalars");
    add_common(sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--param", sweep_param1, "config field, e.g. gains.kp3n");
    sweep_cmd->add_option("--values", sweep_values1, "comma separated values")
        ->delimiter(',');
    sweep_cmd->add_option("--param2", sweep_param2, "second config field");
    sweep_cmd->add_option("--values2", sweep_values2, "values for --param2")
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim_cmd) return run_simulate(sim_flags);
        if (*portrait_cmd) return run_portrait(portrait_flags, portrait_full);
        if (*verify_cmd) return run_verify(verify_flags);
        if (*design_cmd) return run_design(design_flags, design_opts);
        if (*sweep_cmd) {
            return run_sweep(sweep_flags, sweep_param1, sweep_values1, sweep_param2,
                             sweep_values2);
        }
    } catch (const swpll::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
