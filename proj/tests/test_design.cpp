#include <catch2/catch_amalgamated.hpp>

#include "swpll/design.hpp"
#include "swpll/lyapunov.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace swpll;
using Catch::Approx;

namespace {
constexpr double kPi = std::numbers::pi;

std::mt19937_64& rng_engine() {
    static std::mt19937_64 eng(41);
    return eng;
}

double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng_engine()() >> 11) * 0x1.0p-53;
}
}  // namespace

TEST_CASE("detector gain from resolutions", "[design]") {
    // coarse counter: close to the published 6/(2 pi), limited by the rounded
    // 1.67 ns resolution
    CHECK(kpfd(10e-9, 1.67e-9) == Approx(6.0 / (2.0 * kPi)).epsilon(0.01));
    CHECK(kpfd(10e-9, 1.67e-9) == Approx(0.95302361132871459).epsilon(1e-12));
    CHECK(kpfd(1e-8, 1e-8) == Approx(1.0 / (2.0 * kPi)));
    CHECK(kpfd(10e-9, 20e-12) == Approx(500.0 / (2.0 * kPi)).epsilon(1e-12));
    CHECK_THROWS_AS(kpfd(-1e-8, 1e-9), std::domain_error);
    CHECK_THROWS_AS(kpfd(1e-8, 0.0), std::domain_error);
}

TEST_CASE("gain normalization", "[design]") {
    CircuitParams circuit;  // defaults: k_dco 10 kHz/LSB, n_div 50, f_ref 100 MHz
    const auto [kp3n, ki3n] = normalize_gains(8.0, 1.0, 1.0, circuit);
    CHECK(kp3n == Approx(1.0053096491487339e-4).epsilon(1e-12));
    CHECK(ki3n == Approx(kp3n / 8.0).epsilon(1e-12));

    const auto [kz, kiz] = normalize_gains(8.0, 0.0, 1.0, circuit);
    (void)kz;
    CHECK(kiz == 0.0);

    CircuitParams doubled = circuit;
    doubled.k_dco *= 2.0;
    const auto [kp2, ki2] = normalize_gains(8.0, 1.0, 1.0, doubled);
    CHECK(kp2 == Approx(2.0 * kp3n).epsilon(1e-12));
    CHECK(ki2 == Approx(2.0 * ki3n).epsilon(1e-12));
}

TEST_CASE("PI design reproduces the fine-mode production gains", "[design]") {
    CircuitParams circuit;
    LtiDesignSpec spec;
    spec.pm = 35.0 * kPi / 180.0;
    spec.ugbw = 2.0 * kPi * 7.0e6;
    const double kpfd_fine = 250.0 / (2.0 * kPi);

    const RawGains raw = design_lti_gains(spec, kpfd_fine, circuit);
    CHECK(raw.kp == Approx(76.2868560721303937).epsilon(1e-12));
    CHECK(raw.ki == Approx(8.0276900340321195).epsilon(1e-12));
    // within a factor of two of the production integers (128, 8)
    CHECK(raw.kp > 64.0);
    CHECK(raw.kp < 256.0);
    CHECK(raw.ki > 4.0);
    CHECK(raw.ki < 16.0);

    // an explicit zero frequency bypasses the fixed-point pass
    LtiDesignSpec pinned = spec;
    pinned.omega_z = 9997036.047194802;
    const RawGains same = design_lti_gains(pinned, kpfd_fine, circuit);
    CHECK(same.kp == Approx(raw.kp).epsilon(1e-9));
}

TEST_CASE("PI design limits", "[design]") {
    CircuitParams circuit;
    const double kpfd_fine = 250.0 / (2.0 * kPi);

    // integral gain is quadratic in the bandwidth
    LtiDesignSpec spec;
    spec.pm = 35.0 * kPi / 180.0;
    spec.ugbw = 2.0 * kPi * 7.0e6;
    const RawGains base = design_lti_gains(spec, kpfd_fine, circuit);
    LtiDesignSpec half = spec;
    half.ugbw *= 0.5;
    const RawGains halved = design_lti_gains(half, kpfd_fine, circuit);
    CHECK(halved.ki == Approx(base.ki / 4.0).epsilon(1e-9));

    // integral gain scales linearly with the reference period at fixed ugbw
    CircuitParams slow = circuit;
    slow.f_ref = circuit.f_ref / 2.0;
    LtiDesignSpec spec_z = spec;
    spec_z.omega_z = 1.0e7;  // pin the zero so only t_ref varies
    const RawGains a = design_lti_gains(spec_z, kpfd_fine, circuit);
    const RawGains b = design_lti_gains(spec_z, kpfd_fine, slow);
    CHECK(b.ki == Approx(2.0 * a.ki).epsilon(1e-9));

    LtiDesignSpec degenerate = spec;
    degenerate.pm = kPi / 2.0;
    CHECK_THROWS_AS(design_lti_gains(degenerate, kpfd_fine, circuit),
                    std::domain_error);
}

TEST_CASE("bang-bang ratio bound", "[design]") {
    // small-angle limit tan(x)/x -> 1
    CHECK(bbpd_ratio_bound(1.0e4, 1e-8, 1.0, 0.0) == Approx(1.0).epsilon(1e-6));

    // monotone in the phase margin
    const double t_ref = 1e-8;
    const double wu = 2.0 * kPi * 2.0e6;
    double last = 0.0;
    for (double pm_deg = 5.0; pm_deg <= 45.0; pm_deg += 5.0) {
        const double bound = bbpd_ratio_bound(wu, t_ref, 1.0, pm_deg * kPi / 180.0);
        CHECK(bound > last);
        last = bound;
    }

    // the production ratio 60/7.8 = 7.69 clears the bound for the bang-bang
    // bandwidth and margin targets
    const double bound = bbpd_ratio_bound(wu, t_ref, 1.0, 35.0 * kPi / 180.0);
    CHECK(bound == Approx(7.2156444968).epsilon(1e-9));
    CHECK(6.0e-5 / 7.8e-6 == Approx(7.6923076923).epsilon(1e-9));
    CHECK(6.0e-5 / 7.8e-6 >= bound);

    CHECK_THROWS_AS(bbpd_ratio_bound(wu, t_ref, 1.0, kPi / 2.0), std::domain_error);
    CHECK_THROWS_AS(bbpd_ratio_bound(-wu, t_ref, 1.0, 0.1), std::domain_error);
}

TEST_CASE("energy-decrement gain interval", "[design]") {
    const QuadraticForm p = bbpd_energy_form();
    const GainInterval interval = bbpd_lyapunov_bound(p, 0.01, 0.01);
    CHECK(interval.c_min == Approx(1.49812706042e-5).epsilon(1e-9));
    CHECK(interval.c_max == Approx(0.02000499874938).epsilon(1e-9));

    // the production correction lies inside
    const double c = 2.0 * 6.0e-5 + 7.8e-6;
    CHECK(interval.c_min < c);
    CHECK(c < interval.c_max);

    CHECK_THROWS_AS(bbpd_lyapunov_bound(p, 0.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(bbpd_lyapunov_bound({1.0, 2.0, 1.0}, 0.01, 0.01),
                    std::domain_error);
}

TEST_CASE("interval points give the right decrement sign", "[design]") {
    // dual route: the closed-form interval against the affine energy change
    // of the sign-reversal piece at the boundary state
    const QuadraticForm p = bbpd_energy_form();
    const PllState boundary{0.01, 0.01};
    const GainInterval interval = bbpd_lyapunov_bound(p, boundary.phi, boundary.dphi_f);

    auto dv_of_c = [&](double c) {
        AffinePiece piece;
        piece.a_mat = bbpd_matrix();
        piece.a_vec = Eigen::Vector2d(-c, -c);  // sign-reversal piece at sigma=+1
        return delta_v_affine(p, piece, boundary);
    };

    const double width = interval.c_max - interval.c_min;
    for (int i = 1; i <= 100; ++i) {
        const double c = interval.c_min + width * i / 101.0;
        CHECK(dv_of_c(c) < 0.0);
    }
    CHECK(dv_of_c(interval.c_min * 0.5) > 0.0);
    CHECK(dv_of_c(interval.c_max * 1.05) > 0.0);
}

TEST_CASE("derivative-gain range and pick", "[design]") {
    const KdRange range = kd_init_range(6.0e-5, 7.8e-6, 0.002, 0.01);
    CHECK(range.kd_lo == Approx(29.4985250737).epsilon(1e-9));
    CHECK(range.kd_hi == Approx(147.4926253687).epsilon(1e-9));
    CHECK(range.kd_pick == 64);

    CHECK_THROWS_AS(kd_init_range(6.0e-5, 7.8e-6, 0.002, 0.002), std::domain_error);
    CHECK_THROWS_AS(kd_init_range(6.0e-5, 7.8e-6, 0.01, 0.002), std::domain_error);
    CHECK_THROWS_AS(kd_init_range(0.0, 7.8e-6, 0.002, 0.01), std::domain_error);

    // doubling both gains halves the bounds
    const KdRange doubled = kd_init_range(1.2e-4, 1.56e-5, 0.002, 0.01);
    CHECK(doubled.kd_lo == Approx(range.kd_lo / 2.0).epsilon(1e-12));
    CHECK(doubled.kd_hi == Approx(range.kd_hi / 2.0).epsilon(1e-12));

    // the pick is a power of beta and lands inside the open interval
    for (int i = 0; i < 200; ++i) {
        const double g = uniform(1e-5, 1e-3);
        const double lo = uniform(0.5, 40.0) * g;
        double hi = lo * uniform(2.5, 30.0);
        KdRange r;
        try {
            r = kd_init_range(g * 0.9, g * 0.1, lo, hi);
        } catch (const std::domain_error&) {
            continue;  // no admissible power for this draw
        }
        int pick = r.kd_pick;
        REQUIRE(pick >= 1);
        while (pick > 1) {
            REQUIRE(pick % 2 == 0);
            pick /= 2;
        }
        CHECK(r.kd_pick > r.kd_lo);
        CHECK(r.kd_pick < r.kd_hi);
        CHECK(r.kd_pick * g > lo);
        CHECK(r.kd_pick * g < hi);
    }
}

TEST_CASE("design outputs are deterministic", "[design]") {
    CircuitParams circuit;
    LtiDesignSpec spec;
    spec.pm = 0.5;
    spec.ugbw = 4.0e7;
    const RawGains a = design_lti_gains(spec, 39.0, circuit);
    const RawGains b = design_lti_gains(spec, 39.0, circuit);
    CHECK(a.kp == b.kp);
    CHECK(a.ki == b.ki);
}
