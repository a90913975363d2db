#pragma once

// Loop-filter gain synthesis from circuit parameters and phase-margin /
// bandwidth targets, plus the stability bounds on the bang-bang gains and
// the derivative-gain initialization.

#include "swpll/lyapunov.hpp"
#include "swpll/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace swpll {

struct LtiDesignSpec {
    double pm = 0.0;          // phase margin [rad], in (0, pi/2)
    double ugbw = 0.0;        // unity-gain bandwidth [rad/s]
    double omega_z = 0.0;     // loop-filter zero [rad/s]; 0 derives it from ki/kp
    double loop_delay = 1.0;  // loop delay [reference cycles]
};

struct RawGains {
    double kp = 0.0;  // loop-filter proportional gain [LSB]
    double ki = 0.0;  // loop-filter integral gain [LSB]
};

struct KdRange {
    double kd_lo = 0.0;
    double kd_hi = 0.0;
    int kd_pick = 0;
};

// Linear-detector gain: TDC codes per radian of phase error.
inline double kpfd(double t_ref, double dt_tdc) {
    if (!(t_ref > 0.0) || !(dt_tdc > 0.0)) {
        throw std::domain_error("kpfd: t_ref and dt_tdc must be strictly positive");
    }
    return t_ref / (2.0 * std::numbers::pi * dt_tdc);
}

// Raw filter gains [LSB] to normalized per-cycle gains [rad]. The detector
// factor is the linear-mode kpfd, or 1 for the bang-bang detector whose
// output is already a bare sign.
inline std::pair<double, double> normalize_gains(double kp, double ki,
                                                 double kpfd_factor,
                                                 const CircuitParams& circuit) {
    const double scale = kpfd_factor * 2.0 * std::numbers::pi * circuit.k_dco /
                         (circuit.n_div * circuit.f_ref);
    return {kp * scale, ki * scale};
}

// PI gains from z-domain crossover targets. The crossover enters in cycles
// per second (ugbw / 2pi) and the DCO gain through the same 2pi-scaled loop
// normalization used by normalize_gains; the phase-margin factors are
// 1/sqrt(1 + 1/tan^2) on the proportional path and 1/sqrt(1 + tan^2) on the
// integral path. When spec.omega_z is zero the zero frequency is taken as
// (ki/kp)/t_ref, closed with a single fixed-point pass: kp at omega_z = 0,
// then omega_z from that kp, then kp once more.
inline RawGains design_lti_gains(const LtiDesignSpec& spec, double kpfd_factor,
                                 const CircuitParams& circuit) {
    constexpr double half_pi = std::numbers::pi / 2.0;
    if (!(spec.pm > 0.0) || !(spec.pm < half_pi)) {
        throw std::domain_error("design_lti_gains: pm must lie strictly inside (0, pi/2)");
    }
    if (!(spec.ugbw > 0.0)) {
        throw std::domain_error("design_lti_gains: ugbw must be strictly positive");
    }
    if (!(kpfd_factor > 0.0)) {
        throw std::domain_error("design_lti_gains: kpfd must be strictly positive");
    }
    const double t_ref = circuit.t_ref();
    const double f_u = spec.ugbw / (2.0 * std::numbers::pi);
    const double denom = kpfd_factor * 2.0 * std::numbers::pi * circuit.k_dco;
    const double tan_pm = std::tan(spec.pm);
    const double kp0 = circuit.n_div * f_u /
                       (denom * std::sqrt(1.0 + 1.0 / (tan_pm * tan_pm)));
    const double ki = t_ref * circuit.n_div * f_u * f_u /
                      (denom * std::sqrt(1.0 + tan_pm * tan_pm));
    const double omega_z = spec.omega_z > 0.0 ? spec.omega_z : (ki / kp0) / t_ref;
    return {kp0 * (1.0 - 0.5 * t_ref * omega_z), ki};
}

// Minimum proportional-to-integral gain ratio keeping the linearized
// bang-bang loop stable for a given crossover, delay, and margin.
inline double bbpd_ratio_bound(double omega_u, double t_ref, double d, double pm) {
    if (!(omega_u > 0.0) || !(t_ref > 0.0) || d < 0.0 || pm < 0.0) {
        throw std::domain_error("bbpd_ratio_bound: invalid argument");
    }
    const double arg = omega_u * t_ref * d + pm;
    if (!(arg < std::numbers::pi / 2.0)) {
        throw std::domain_error(
            "bbpd_ratio_bound: omega_u*t_ref*d + pm must stay below pi/2");
    }
    return std::tan(arg) / (omega_u * t_ref);
}

struct GainInterval {
    double c_min = 0.0;  // admissible open interval for 2*kp3n + ki3n [rad]
    double c_max = 0.0;
};

// Admissible range of the sign-reversal correction c = 2*kp3n + ki3n such
// that the affine energy decrement is negative at the boundary state
// (phi_max, dphi_max). Solves the quadratic in c from the sign-reversal
// piece evaluated under the form p with positive sign.
inline GainInterval bbpd_lyapunov_bound(const QuadraticForm& p, double phi_max,
                                        double dphi_max) {
    if (!is_positive_definite(p)) {
        throw std::domain_error("bbpd_lyapunov_bound: p must be positive definite");
    }
    if (!(phi_max > 0.0) || !(dphi_max > 0.0)) {
        throw std::domain_error("bbpd_lyapunov_bound: boundary state must be positive");
    }
    const double alpha = p.p11 + 2.0 * p.p12 + p.p22;
    const double beta = 2.0 * ((p.p11 + p.p12) * (phi_max + dphi_max) +
                               (p.p12 + p.p22) * dphi_max);
    const double gamma = 2.0 * p.p11 * phi_max * dphi_max +
                         (p.p11 + 2.0 * p.p12) * dphi_max * dphi_max;
    const double disc = beta * beta - 4.0 * alpha * gamma;
    if (!(disc > 0.0)) {
        throw std::domain_error(
            "bbpd_lyapunov_bound: no stabilizing gain at this boundary point");
    }
    const double root = std::sqrt(disc);
    GainInterval interval{(beta - root) / (2.0 * alpha), (beta + root) / (2.0 * alpha)};
    if (!(interval.c_max > 0.0)) {
        throw std::domain_error(
            "bbpd_lyapunov_bound: no stabilizing gain at this boundary point");
    }
    return interval;
}

// Derivative-gain initialization: the admissible real range for the residual
// correction window, and the power-of-beta pick nearest below the midpoint
// target so the halving schedule lands exactly on 1 and then 0. The pick is
// kept inside the open range when the rounded-down value would fall out.
inline KdRange kd_init_range(double kp3n, double ki3n, double residual_lo,
                             double residual_hi, int beta = 2) {
    if (!(kp3n > 0.0) || !(ki3n > 0.0)) {
        throw std::domain_error("kd_init_range: gains must be strictly positive");
    }
    if (!(residual_lo > 0.0) || !(residual_lo < residual_hi)) {
        throw std::domain_error("kd_init_range: empty residual range");
    }
    if (beta < 2) throw std::domain_error("kd_init_range: beta must be >= 2");
    const double g = kp3n + ki3n;
    KdRange range{residual_lo / g, residual_hi / g, 0};
    const double target = 0.5 * (residual_lo + residual_hi) / g;

    double pick = 1.0;
    while (pick * beta <= target) pick *= beta;
    if (!(pick > range.kd_lo)) {
        // round up through the powers until inside the open interval
        while (pick <= range.kd_lo) pick *= beta;
    }
    if (!(pick < range.kd_hi) || pick > 1e9) {
        throw std::domain_error("kd_init_range: no power of beta inside the range");
    }
    range.kd_pick = static_cast<int>(pick);
    return range;
}

}  // namespace swpll
