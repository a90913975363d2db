#pragma once

// Execution of the full switched loop: phase-error driven mode selection,
// FSM sequencing, trajectory generation, and the detectors (settling,
// chattering, rotation direction, region classification).

#include "swpll/lyapunov.hpp"
#include "swpll/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace swpll {

struct SwitchThresholds {
    double phi_err_1 = 1.0;   // coarse/fine boundary [rad]
    double phi_err_2 = 0.01;  // fine/bang-bang boundary [rad]
};

struct LoopConfig {
    CircuitParams circuit{};
    LoopGains gains{};
};

enum class FsmStage { None, Integrator, Differentiator };
enum class FsmExitMode { AtZero, AtOne };
enum class ModeOverride { None, BbpdOnly, FsmIntegratorOnly };
enum class Rotation { Clockwise, CounterClockwise, Indeterminate };

struct SimPolicy {
    FsmExitMode fsm_exit = FsmExitMode::AtZero;
    bool fsm_ki_reset_on_reversal = true;  // restart the accumulator at reversals
    bool fsm_rearm = false;                // allow leaving the settled bang-bang mode
    ModeOverride override_mode = ModeOverride::None;
    long settle_hold = 20;                 // consecutive confined cycles required
    double settle_band_factor = 2.0;       // confinement band in units of 2*kp3n+ki3n
    bool halt_on_settle = true;
    double divergence_limit = 1e6;         // [rad]
    long chatter_count = 3;                // tolerated recurrences of one edge
    long chatter_window = 50;              // [cycles]
};

struct NoiseSpec {
    bool enabled = false;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;  // substream label (e.g. run index in a sweep)
};

struct SimConfig {
    LoopConfig loop{};
    SwitchThresholds thresholds{};
    SimPolicy policy{};
    NoiseSpec noise{};
    PllState x0{};
    long max_cycles = 2000;
};

struct TrajectoryRecord {
    long k = 0;
    ModeTag mode = ModeTag::Lti1;
    FsmStage stage = FsmStage::None;  // set while mode == BbpdFsm
    PllState state{};                 // cycle-start state the mode acts on
    int kd = 0;
    int ki_fsm = 0;
    double v1 = 0.0;  // energy under the linear-pair certificate form
    double v3 = 0.0;  // energy under the bang-bang form
    bool switch_event = false;        // mode differs from the previous record
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;
};

struct SwitchEventInfo {
    long k = 0;
    ModeTag from = ModeTag::Lti1;
    ModeTag to = ModeTag::Lti1;
};

struct ChatterReport {
    bool chattering = false;
    std::vector<SwitchEventInfo> offenders;
};

struct SimReport {
    std::optional<long> settled_at;
    ChatterReport chatter;
    ModeTag final_mode = ModeTag::Lti1;
    bool diverged = false;
    Rotation rotation = Rotation::Indeterminate;
    std::vector<SwitchOnTrace> switch_on_traces;
};

struct SimResult {
    Trajectory trajectory;
    SimReport report;
};

namespace rng {
// Single-seed substream derivation: every consumer hashes (seed, label,
// index) through splitmix64 so streams never overlap by construction.
inline std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t label,
                            std::uint64_t index = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= label * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= index * 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    return h;
}

inline constexpr std::uint64_t kNoiseLabel = 1;
inline constexpr std::uint64_t kCqlfLabel = 2;

inline double uniform01(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}
}  // namespace rng

// Phase-error driven switching rule. The fine/bang-bang boundary arms the
// FSM with a fresh derivative gain on every entry from a linear mode; the
// standalone bang-bang mode is absorbing unless re-arming is allowed.
inline Mode next_mode(const PllState& state, const Mode& current,
                      const SwitchThresholds& thresholds, const LoopGains& gains,
                      const SimPolicy& policy = {}) {
    if (policy.override_mode == ModeOverride::BbpdOnly) return {ModeTag::BbpdNlti, {}};
    if (policy.override_mode == ModeOverride::FsmIntegratorOnly) return current;
    if (current.tag == ModeTag::BbpdNlti && !policy.fsm_rearm) return current;

    const double a = std::abs(state.phi);
    if (a > thresholds.phi_err_1) return {ModeTag::Lti1, {}};
    if (a > thresholds.phi_err_2) return {ModeTag::Lti2, {}};

    if (current.tag == ModeTag::BbpdNlti) return current;
    if (current.tag == ModeTag::BbpdFsm) {
        const int floor_kd = policy.fsm_exit == FsmExitMode::AtZero ? 0 : 1;
        if (current.fsm.kd > floor_kd) return current;
        return {ModeTag::BbpdNlti, {}};
    }
    return {ModeTag::BbpdFsm, FsmState{gains.kd_init, 1, sigma(state.phi)}};
}

// Differentiator exactly at phase-error sign reversals, integrator otherwise.
inline FsmStage fsm_dispatch(const PllState& state, const FsmState& fsm) {
    return sigma(state.phi) != fsm.prev_sigma ? FsmStage::Differentiator
                                              : FsmStage::Integrator;
}

// Trajectory-level settling: the earliest cycle from which `hold` consecutive
// records run in the standalone bang-bang mode with |phi + dphi_f| inside the
// confinement band band_factor*(2*kp3n + ki3n). The factor-2 default is the
// band the locked oscillation provably stays in; the factor-1 band is grazed
// by the steady orbit and would make detection depend on orbit phase.
inline std::optional<long> detect_settling(const Trajectory& traj,
                                           const LoopGains& gains, long hold,
                                           double band_factor = 2.0) {
    if (hold < 1) throw std::invalid_argument("detect_settling: hold must be >= 1");
    const double band = band_factor * (2.0 * gains.kp3n + gains.ki3n);
    long run = 0;
    for (const auto& r : traj.records) {
        if (r.mode == ModeTag::BbpdNlti &&
            std::abs(r.state.phi + r.state.dphi_f) < band) {
            if (++run >= hold) return r.k - hold + 1;
        } else {
            run = 0;
        }
    }
    return std::nullopt;
}

namespace detail {
inline bool is_lti(ModeTag t) { return t == ModeTag::Lti1 || t == ModeTag::Lti2; }
inline bool is_bbpd(ModeTag t) {
    return t == ModeTag::BbpdFsm || t == ModeTag::BbpdNlti;
}
}  // namespace detail

// Chattering: leaving the settled bang-bang mode at all, or any directed
// linear<->bang-bang transition recurring more than `count` times inside a
// `window`-cycle span.
inline ChatterReport detect_chattering(const Trajectory& traj, long count = 3,
                                       long window = 50) {
    ChatterReport report;
    std::vector<SwitchEventInfo> events;
    for (std::size_t i = 1; i < traj.records.size(); ++i) {
        const auto& prev = traj.records[i - 1];
        const auto& cur = traj.records[i];
        if (cur.mode != prev.mode) {
            events.push_back({cur.k, prev.mode, cur.mode});
        }
    }
    for (const auto& e : events) {
        if (e.from == ModeTag::BbpdNlti) {
            report.chattering = true;
            report.offenders.push_back(e);
        }
    }
    // windowed recurrence per directed edge
    for (int from = 0; from < 4; ++from) {
        for (int to = 0; to < 4; ++to) {
            const auto f = static_cast<ModeTag>(from);
            const auto t = static_cast<ModeTag>(to);
            if (!((detail::is_lti(f) && detail::is_bbpd(t)) ||
                  (detail::is_bbpd(f) && detail::is_lti(t)))) {
                continue;
            }
            std::vector<long> ks;
            for (const auto& e : events) {
                if (e.from == f && e.to == t) ks.push_back(e.k);
            }
            const auto c = static_cast<std::size_t>(count < 0 ? 0 : count);
            for (std::size_t i = 0; i + c < ks.size(); ++i) {
                if (ks[i + c] - ks[i] < window) {
                    report.chattering = true;
                    report.offenders.push_back({ks[i + c], f, t});
                    break;
                }
            }
        }
    }
    return report;
}

// Net rotation sense of the trajectory in the (phi, dphi_f) plane from the
// summed cross products of consecutive states; negative means clockwise.
inline Rotation rotation_direction(const Trajectory& traj) {
    if (traj.records.size() < 3) return Rotation::Indeterminate;
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < traj.records.size(); ++i) {
        const auto& a = traj.records[i].state;
        const auto& b = traj.records[i + 1].state;
        sum += a.phi * b.dphi_f - a.dphi_f * b.phi;
    }
    if (sum < -1e-15) return Rotation::Clockwise;
    if (sum > 1e-15) return Rotation::CounterClockwise;
    return Rotation::Indeterminate;
}

enum class RegionTag {
    LtiRegion,
    BbpdSignReversal,
    BbpdSameSign,
    LimitCycleRegion,
    FsmIntegratorLtiQuadrant,
    FsmIntegratorDifferentiatorQuadrant,
};

// Phase-plane region of a state. With the FSM armed the composite acting in
// quadrants I/III (signs agree, |phi| grows) is integrator+linear and in
// II/IV integrator+differentiator. Without it, the bang-bang partition is the
// limit-cycle band and the reversal/same-sign pieces; a state belongs to the
// reversal region when the same-sign update would flip the sign of phi.
inline RegionTag classify_region(const PllState& state, bool fsm_active,
                                 const LoopGains& gains,
                                 const SwitchThresholds& thresholds) {
    if (std::abs(state.phi) > thresholds.phi_err_2) return RegionTag::LtiRegion;
    if (fsm_active) {
        return sigma(state.phi) == sigma(state.dphi_f)
                   ? RegionTag::FsmIntegratorLtiQuadrant
                   : RegionTag::FsmIntegratorDifferentiatorQuadrant;
    }
    if (in_limit_cycle_region(state, gains.kp3n, gains.ki3n)) {
        return RegionTag::LimitCycleRegion;
    }
    const double next_phi = state.phi + state.dphi_f - gains.ki3n * sigma(state.phi);
    return sigma(next_phi) != sigma(state.phi) ? RegionTag::BbpdSignReversal
                                               : RegionTag::BbpdSameSign;
}

// Jitter/lock-time/power figure of merit in dB.
inline double fom(double sigma_t, double t_s, double power_mw) {
    if (!(sigma_t > 0.0) || !(t_s > 0.0) || !(power_mw > 0.0)) {
        throw std::domain_error("fom: all arguments must be strictly positive");
    }
    return 10.0 * std::log10(sigma_t * sigma_t * t_s * t_s * power_mw);
}

// Full switched run. Mode selection reads the cycle-start state, the selected
// mode's one-step update produces the cycle-end state, and switch events are
// logged at the cycle where the new mode first acts. Energies are sampled at
// switch-on instants: the linear modes and the bang-bang hand-off on every
// entry, the two FSM composites once per arming episode at the first visit of
// their quadrant pair.
inline SimResult simulate(const SimConfig& config) {
    if (config.max_cycles < 1) {
        throw std::invalid_argument("simulate: max_cycles must be >= 1");
    }
    const LoopGains& g = config.loop.gains;
    const QuadraticForm v1_form = lti_cqlf_form();
    const QuadraticForm v3_form = bbpd_energy_form();

    SimResult result;
    auto& records = result.trajectory.records;
    records.reserve(static_cast<std::size_t>(std::min(config.max_cycles, 1L << 20)));

    SwitchOnTrace tr_lti1{SubsystemId::Lti1, {}};
    SwitchOnTrace tr_lti2{SubsystemId::Lti2, {}};
    SwitchOnTrace tr_int_lti{SubsystemId::IntegratorLti, {}};
    SwitchOnTrace tr_int_diff{SubsystemId::IntegratorDifferentiator, {}};
    SwitchOnTrace tr_nlti{SubsystemId::BbpdNlti, {}};

    std::mt19937_64 noise_eng(
        rng::derive(config.noise.seed, rng::kNoiseLabel, config.noise.stream));
    const double noise_amp = 2.0 * std::numbers::pi * config.loop.circuit.f_ref *
                             config.loop.circuit.sigma_t_dco;

    PllState x = config.x0;
    Mode mode{ModeTag::Lti1, {}};  // virtual pre-run mode for the cold start
    bool first_cycle = true;
    int nlti_sigma = sigma(x.phi);
    const int held_sigma = sigma(x.phi);  // integrator-override latch
    if (config.policy.override_mode == ModeOverride::FsmIntegratorOnly) {
        mode = {ModeTag::BbpdFsm, FsmState{g.kd_init, 1, held_sigma}};
    }

    const double settle_band =
        config.policy.settle_band_factor * (2.0 * g.kp3n + g.ki3n);
    long settle_run = 0;
    bool il_sampled = false;
    bool id_sampled = false;

    for (long k = 0; k < config.max_cycles; ++k) {
        const Mode prev_mode = mode;
        mode = next_mode(x, mode, config.thresholds, g, config.policy);

        FsmStage stage = FsmStage::None;
        if (mode.tag == ModeTag::BbpdFsm) {
            stage = config.policy.override_mode == ModeOverride::FsmIntegratorOnly
                        ? FsmStage::Integrator
                        : fsm_dispatch(x, mode.fsm);
        }
        if (mode.tag == ModeTag::BbpdNlti && prev_mode.tag == ModeTag::BbpdFsm &&
            !first_cycle) {
            nlti_sigma = prev_mode.fsm.prev_sigma;
        }

        TrajectoryRecord rec;
        rec.k = k;
        rec.mode = mode.tag;
        rec.stage = stage;
        rec.state = x;
        rec.kd = mode.tag == ModeTag::BbpdFsm ? mode.fsm.kd : 0;
        rec.ki_fsm = mode.tag == ModeTag::BbpdFsm ? mode.fsm.ki_fsm : 0;
        rec.v1 = evaluate(v1_form, x);
        rec.v3 = evaluate(v3_form, x);
        rec.switch_event = !first_cycle && mode.tag != prev_mode.tag;
        records.push_back(rec);

        // switch-on energy samples
        const bool entered = first_cycle || mode.tag != prev_mode.tag;
        if (entered) {
            switch (mode.tag) {
                case ModeTag::Lti1: tr_lti1.values.push_back(rec.v1); break;
                case ModeTag::Lti2: tr_lti2.values.push_back(rec.v1); break;
                case ModeTag::BbpdNlti: tr_nlti.values.push_back(rec.v3); break;
                case ModeTag::BbpdFsm: il_sampled = id_sampled = false; break;
            }
        }
        if (mode.tag == ModeTag::BbpdFsm) {
            const bool same_quadrant = sigma(x.phi) == sigma(x.dphi_f);
            if (same_quadrant && !il_sampled) {
                tr_int_lti.values.push_back(rec.v1);
                il_sampled = true;
            } else if (!same_quadrant && !id_sampled) {
                tr_int_diff.values.push_back(rec.v1);
                id_sampled = true;
            }
        }

        // settling bookkeeping on the record just written
        if (mode.tag == ModeTag::BbpdNlti &&
            std::abs(x.phi + x.dphi_f) < settle_band) {
            ++settle_run;
            if (settle_run >= config.policy.settle_hold &&
                !result.report.settled_at) {
                result.report.settled_at = k - config.policy.settle_hold + 1;
                if (config.policy.halt_on_settle) break;
            }
        } else {
            settle_run = 0;
        }

        // one-step update of the acting subsystem
        switch (mode.tag) {
            case ModeTag::Lti1:
                x = step_lti(x, g.kp1n, g.ki1n);
                break;
            case ModeTag::Lti2:
                x = step_lti(x, g.kp2n, g.ki2n);
                break;
            case ModeTag::BbpdFsm: {
                if (config.policy.override_mode == ModeOverride::FsmIntegratorOnly) {
                    // integrator-stage recursion: the sign input stays latched
                    // at its activation value (a live reversal would exit the
                    // stage, which the override suppresses)
                    const double corr =
                        (g.kp3n + g.ki3n * static_cast<double>(mode.fsm.ki_fsm)) *
                        held_sigma;
                    x = {x.phi + x.dphi_f - corr, x.dphi_f - corr};
                    mode.fsm.ki_fsm += 1;
                } else if (stage == FsmStage::Differentiator) {
                    auto [nx, nfsm] = step_fsm_differentiator(
                        x, mode.fsm, g.kp3n, g.ki3n, g.beta,
                        config.policy.fsm_ki_reset_on_reversal);
                    x = nx;
                    mode.fsm = nfsm;
                } else {
                    auto [nx, nfsm] = step_fsm_integrator(x, mode.fsm, g.kp3n, g.ki3n);
                    x = nx;
                    mode.fsm = nfsm;
                }
                break;
            }
            case ModeTag::BbpdNlti: {
                auto [nx, ns] = step_bbpd(x, nlti_sigma, g.kp3n, g.ki3n);
                x = nx;
                nlti_sigma = ns;
                break;
            }
        }

        if (config.noise.enabled) {
            x.dphi_f += noise_amp * (2.0 * rng::uniform01(noise_eng) - 1.0);
        }

        if (!std::isfinite(x.phi) || !std::isfinite(x.dphi_f) ||
            std::abs(x.phi) > config.policy.divergence_limit ||
            std::abs(x.dphi_f) > config.policy.divergence_limit) {
            result.report.diverged = true;
            break;
        }
        first_cycle = false;
    }

    result.report.final_mode = records.back().mode;
    result.report.chatter = detect_chattering(result.trajectory,
                                              config.policy.chatter_count,
                                              config.policy.chatter_window);
    result.report.rotation = rotation_direction(result.trajectory);
    result.report.switch_on_traces = {tr_lti1, tr_lti2, tr_int_lti, tr_int_diff,
                                      tr_nlti};
    return result;
}

}  // namespace swpll
