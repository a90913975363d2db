#pragma once

// Core state types and one-step dynamics of the switched DPLL subsystems.
// Everything here is a pure function of its arguments; the two-dimensional
// state is (phi, dphi_f): the phase error and the per-cycle phase increment
// caused by the residual frequency error, both in radians.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace swpll {

struct PllState {
    double phi = 0.0;      // phase error [rad]
    double dphi_f = 0.0;   // frequency-induced phase increment per cycle [rad]

    friend bool operator==(const PllState&, const PllState&) = default;
};

struct CircuitParams {
    double f_ref = 1.0e8;               // reference clock [Hz]
    double k_dco = 1.0e4;               // DCO gain [Hz/LSB]
    double n_div = 50.0;                // feedback division ratio
    double dt_tdc_counter = 1.67e-9;    // coarse TDC resolution [s]
    double dt_tdc_delayline = 2.0e-11;  // fine TDC resolution [s]
    double sigma_t_dco = 2.0e-13;       // DCO period jitter [s], disturbance amplitude

    double t_ref() const { return 1.0 / f_ref; }
};

struct LoopGains {
    double kp1n = 0.03;      // normalized proportional gain, coarse linear mode [rad]
    double ki1n = 0.007;     // normalized integral gain, coarse linear mode [rad]
    double kp2n = 0.05;      // normalized proportional gain, fine linear mode [rad]
    double ki2n = 0.003;     // normalized integral gain, fine linear mode [rad]
    double kp3n = 6.0e-5;    // normalized proportional gain, bang-bang mode [rad]
    double ki3n = 7.8e-6;    // normalized integral gain, bang-bang mode [rad]
    int kd_init = 64;        // initial derivative gain on FSM arming
    int beta = 2;            // derivative reduction factor per sign reversal
};

// FSM controller state carried by the bang-bang NLTV mode.
struct FsmState {
    int kd = 0;          // current derivative gain
    int ki_fsm = 1;      // integrator accumulator, >= 1
    int prev_sigma = 1;  // phase-error sign seen on the previous cycle

    friend bool operator==(const FsmState&, const FsmState&) = default;
};

enum class ModeTag { Lti1, Lti2, BbpdFsm, BbpdNlti };

struct Mode {
    ModeTag tag = ModeTag::Lti1;
    FsmState fsm{};  // meaningful only while tag == BbpdFsm
};

enum class RegionId { SignReversal, SameSign, LimitCycle };

// One affine piece x' = A x + a of the bang-bang dynamics, valid on a
// polyhedral region of the phase plane.
struct AffinePiece {
    Eigen::Matrix2d a_mat;
    Eigen::Vector2d a_vec;
    RegionId region = RegionId::SameSign;

    // Scalar-by-scalar evaluation so that the result is bit-identical to the
    // direct step update for the unit-triangular pieces used here.
    PllState apply(const PllState& x) const {
        return {a_mat(0, 0) * x.phi + a_mat(0, 1) * x.dphi_f + a_vec(0),
                a_mat(1, 0) * x.phi + a_mat(1, 1) * x.dphi_f + a_vec(1)};
    }
};

// Sign of the phase error as seen by the bang-bang detector. Zero maps to +1.
inline int sigma(double phi) { return phi >= 0.0 ? 1 : -1; }

// System matrix of the linear (PI-filtered) modes.
inline Eigen::Matrix2d lti_matrix(double kpn, double kin) {
    Eigen::Matrix2d a;
    a << 1.0 - kin, 1.0 - kpn,
         -kin, 1.0 - kpn;
    return a;
}

// State matrix shared by every bang-bang piece.
inline Eigen::Matrix2d bbpd_matrix() {
    Eigen::Matrix2d a;
    a << 1.0, 1.0,
         0.0, 1.0;
    return a;
}

inline PllState step_lti(const PllState& x, double kpn, double kin) {
    return {(1.0 - kin) * x.phi + (1.0 - kpn) * x.dphi_f,
            -kin * x.phi + (1.0 - kpn) * x.dphi_f};
}

// One bang-bang cycle. The correction depends on whether the phase-error sign
// reversed since the previous cycle; returns the updated state and the sign
// to feed into the next cycle.
inline std::pair<PllState, int> step_bbpd(const PllState& x, int sigma_prev,
                                          double kp3n, double ki3n) {
    const int s = sigma(x.phi);
    const double corr = (s != sigma_prev ? 2.0 * kp3n + ki3n : ki3n) * s;
    return {{x.phi + x.dphi_f - corr, x.dphi_f - corr}, s};
}

// FSM integrator stage: proportional plus accumulator-scaled integral
// correction; the accumulator grows by one every cycle the stage runs.
inline std::pair<PllState, FsmState> step_fsm_integrator(const PllState& x,
                                                         const FsmState& fsm,
                                                         double kp3n, double ki3n) {
    const int s = sigma(x.phi);
    const double corr = (kp3n + ki3n * static_cast<double>(fsm.ki_fsm)) * s;
    FsmState next = fsm;
    next.ki_fsm += 1;
    next.prev_sigma = s;
    return {{x.phi + x.dphi_f - corr, x.dphi_f - corr}, next};
}

// FSM differentiator stage: impulsive correction of magnitude
// kd*(kp3n+ki3n), independent of |phi|; kd is floor-divided by beta and the
// integrator accumulator restarts unless reset_ki_fsm is cleared.
inline std::pair<PllState, FsmState> step_fsm_differentiator(const PllState& x,
                                                             const FsmState& fsm,
                                                             double kp3n, double ki3n,
                                                             int beta,
                                                             bool reset_ki_fsm = true) {
    const int s = sigma(x.phi);
    const double corr = static_cast<double>(fsm.kd) * (kp3n + ki3n) * s;
    FsmState next = fsm;
    next.kd = fsm.kd / beta;
    if (reset_ki_fsm) next.ki_fsm = 1;
    next.prev_sigma = s;
    return {{x.phi + x.dphi_f - corr, x.dphi_f - corr}, next};
}

// The bounded oscillation band around lock: |phi + dphi_f| below the
// sign-reversal correction 2*kp3n + ki3n.
inline bool in_limit_cycle_region(const PllState& x, double kp3n, double ki3n) {
    return std::abs(x.phi + x.dphi_f) < 2.0 * kp3n + ki3n;
}

// Affine piece acting at x given the previous-cycle sign. The (A, a) pair
// always reproduces step_bbpd exactly; region marks limit-cycle membership.
inline AffinePiece affine_piece_for(const PllState& x, int sigma_prev,
                                    const LoopGains& gains) {
    const int s = sigma(x.phi);
    const bool reversal = s != sigma_prev;
    const double corr = (reversal ? 2.0 * gains.kp3n + gains.ki3n : gains.ki3n) * s;
    AffinePiece piece;
    piece.a_mat = bbpd_matrix();
    piece.a_vec = Eigen::Vector2d(-corr, -corr);
    if (in_limit_cycle_region(x, gains.kp3n, gains.ki3n)) {
        piece.region = RegionId::LimitCycle;
    } else {
        piece.region = reversal ? RegionId::SignReversal : RegionId::SameSign;
    }
    return piece;
}

inline void validate(const CircuitParams& c) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string("circuit.") + name +
                                        " must be strictly positive");
        }
    };
    positive(c.f_ref, "f_ref");
    positive(c.k_dco, "k_dco");
    positive(c.n_div, "n_div");
    positive(c.dt_tdc_counter, "dt_tdc_counter");
    positive(c.dt_tdc_delayline, "dt_tdc_delayline");
    positive(c.sigma_t_dco, "sigma_t_dco");
    if (!(c.dt_tdc_delayline < c.dt_tdc_counter)) {
        throw std::invalid_argument(
            "circuit.dt_tdc_delayline must be smaller than circuit.dt_tdc_counter");
    }
    if (!(c.dt_tdc_counter < c.t_ref())) {
        throw std::invalid_argument(
            "circuit.dt_tdc_counter must be smaller than the reference period");
    }
}

inline void validate(const LoopGains& g) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string("gains.") + name +
                                        " must be strictly positive");
        }
    };
    positive(g.kp1n, "kp1n");
    positive(g.ki1n, "ki1n");
    positive(g.kp2n, "kp2n");
    positive(g.ki2n, "ki2n");
    positive(g.kp3n, "kp3n");
    positive(g.ki3n, "ki3n");
    if (g.kd_init < 1) throw std::invalid_argument("gains.kd_init must be >= 1");
    if (g.beta < 2) throw std::invalid_argument("gains.beta must be >= 2");
}

}  // namespace swpll
