#pragma once

// Quadratic Lyapunov machinery for the switched loop: energy evaluation,
// definiteness tests, energy decrements for linear and affine pieces, the
// discrete Lyapunov equation, a common-quadratic-function search, and the
// switch-on decrease check used by the multiple-Lyapunov-function argument.

#include "swpll/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace swpll {

// Symmetric 2x2 form V(x) = x' P x, stored by its three entries.
struct QuadraticForm {
    double p11 = 1.0;
    double p12 = 0.0;
    double p22 = 1.0;

    Eigen::Matrix2d matrix() const {
        Eigen::Matrix2d p;
        p << p11, p12,
             p12, p22;
        return p;
    }

    friend bool operator==(const QuadraticForm&, const QuadraticForm&) = default;
};

// Certificate used for both linear modes (valid under arbitrary switching
// between them) and for the switch-on traces of the FSM composites.
inline QuadraticForm lti_cqlf_form() { return {0.02, 0.06, 3.0}; }

// Energy form used for the standalone bang-bang mode.
inline QuadraticForm bbpd_energy_form() { return {1.0, 0.0, 1000.0}; }

inline double evaluate(const QuadraticForm& p, const PllState& x) {
    return p.p11 * x.phi * x.phi + 2.0 * p.p12 * x.phi * x.dphi_f +
           p.p22 * x.dphi_f * x.dphi_f;
}

namespace detail {
// Sylvester minors with a strict margin; definiteness decisions share this
// tolerance everywhere.
inline constexpr double kDefinitenessTol = 1e-12;

inline bool positive_definite_2x2(double m11, double m12, double m22) {
    return m11 > kDefinitenessTol && m11 * m22 - m12 * m12 > kDefinitenessTol;
}
}  // namespace detail

inline bool is_positive_definite(const QuadraticForm& p) {
    return detail::positive_definite_2x2(p.p11, p.p12, p.p22);
}

// Energy change x'(A'PA - P)x of the linear recursion x' = Ax.
inline double delta_v_linear(const QuadraticForm& p, const Eigen::Matrix2d& a_mat,
                             const PllState& x) {
    const Eigen::Matrix2d m = a_mat.transpose() * p.matrix() * a_mat - p.matrix();
    const Eigen::Vector2d xv(x.phi, x.dphi_f);
    return xv.dot(m * xv);
}

// Energy change of the affine recursion x' = Ax + a:
// x'(A'PA - P)x + 2 a'PAx + a'Pa.
inline double delta_v_affine(const QuadraticForm& p, const AffinePiece& piece,
                             const PllState& x) {
    const Eigen::Matrix2d pm = p.matrix();
    const Eigen::Vector2d xv(x.phi, x.dphi_f);
    const Eigen::Matrix2d m = piece.a_mat.transpose() * pm * piece.a_mat - pm;
    return xv.dot(m * xv) + 2.0 * piece.a_vec.dot(pm * piece.a_mat * xv) +
           piece.a_vec.dot(pm * piece.a_vec);
}

inline double spectral_radius(const Eigen::Matrix2d& a) {
    const double tr = a(0, 0) + a(1, 1);
    const double det = a.determinant();
    const double disc = tr * tr - 4.0 * det;
    if (disc < 0.0) return std::sqrt(std::abs(det));
    const double root = std::sqrt(disc);
    return std::max(std::abs((tr + root) / 2.0), std::abs((tr - root) / 2.0));
}

inline bool is_schur_stable(const Eigen::Matrix2d& a) { return spectral_radius(a) < 1.0; }

// Solves A'PA - P + Q = 0 for symmetric P via the vectorized 4x4 linear
// system. Requires Q positive definite and A Schur stable.
inline QuadraticForm solve_discrete_lyapunov(const Eigen::Matrix2d& a_mat,
                                             const QuadraticForm& q) {
    if (!is_positive_definite(q)) {
        throw std::domain_error("solve_discrete_lyapunov: Q must be positive definite");
    }
    if (!is_schur_stable(a_mat)) {
        throw std::domain_error(
            "solve_discrete_lyapunov: no positive definite solution, matrix is not "
            "Schur stable");
    }
    // kron(A', A') acting on vec(P) (column-major), minus identity.
    const Eigen::Matrix2d at = a_mat.transpose();
    Eigen::Matrix4d k;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            k.block<2, 2>(2 * i, 2 * j) = at(i, j) * at;
        }
    }
    const Eigen::Matrix4d lhs = k - Eigen::Matrix4d::Identity();
    const Eigen::Matrix2d qm = q.matrix();
    Eigen::Vector4d rhs;
    rhs << -qm(0, 0), -qm(1, 0), -qm(0, 1), -qm(1, 1);

    Eigen::FullPivLU<Eigen::Matrix4d> lu(lhs);
    if (!lu.isInvertible()) {
        throw std::runtime_error("solve_discrete_lyapunov: singular vectorized system");
    }
    const Eigen::Vector4d sol = lu.solve(rhs);
    QuadraticForm p{sol(0), 0.5 * (sol(1) + sol(2)), sol(3)};

    const Eigen::Matrix2d res =
        a_mat.transpose() * p.matrix() * a_mat - p.matrix() + qm;
    const double scale = std::max(1.0, p.matrix().cwiseAbs().maxCoeff());
    if (res.cwiseAbs().maxCoeff() > 1e-9 * scale) {
        throw std::runtime_error("solve_discrete_lyapunov: residual too large");
    }
    return p;
}

// True iff A'PA - P is negative definite for every matrix in the list.
inline bool check_cqlf(const QuadraticForm& p, const std::vector<Eigen::Matrix2d>& mats) {
    if (!is_positive_definite(p)) return false;
    const Eigen::Matrix2d pm = p.matrix();
    for (const auto& a : mats) {
        const Eigen::Matrix2d m = pm - a.transpose() * pm * a;
        if (!detail::positive_definite_2x2(m(0, 0), m(0, 1), m(1, 1))) return false;
    }
    return true;
}

struct CqlfSearchResult {
    std::optional<QuadraticForm> certificate;
    bool inputs_stable = true;   // false when some input matrix is not Schur stable
    long candidates_tried = 0;
};

// Heuristic search for a common quadratic form. The per-matrix solutions for
// Q = I come first; the pool then grows with per-matrix solutions for seeded
// random positive definite Q, tested directly and through random convex
// combinations. (Combinations of the fixed-Q solutions alone are not enough:
// for the production linear pair the whole segment between them fails, while
// a random-Q solution certifies both within a few draws.) Absence of a
// certificate means "not found", never "does not exist". Deterministic for a
// fixed seed; the earliest passing candidate wins.
inline CqlfSearchResult search_cqlf(const std::vector<Eigen::Matrix2d>& mats,
                                    long budget = 10000, std::uint64_t seed = 0) {
    CqlfSearchResult result;
    if (mats.empty()) {
        result.certificate = QuadraticForm{1.0, 0.0, 1.0};
        return result;
    }
    for (const auto& a : mats) {
        if (!is_schur_stable(a)) {
            result.inputs_stable = false;
            return result;
        }
    }
    auto accept = [&](const QuadraticForm& candidate) {
        ++result.candidates_tried;
        if (check_cqlf(candidate, mats)) result.certificate = candidate;
        return result.certificate.has_value();
    };

    std::vector<QuadraticForm> pool;
    const QuadraticForm identity{1.0, 0.0, 1.0};
    for (const auto& a : mats) {
        const QuadraticForm p = solve_discrete_lyapunov(a, identity);
        pool.push_back(p);
        if (accept(p) || result.candidates_tried >= budget) return result;
    }

    std::mt19937_64 eng(seed);
    auto uniform01 = [&eng] {
        return static_cast<double>(eng() >> 11) * 0x1.0p-53;
    };
    std::size_t next_mat = 0;
    while (result.candidates_tried < budget) {
        // per-matrix solution for a random positive definite Q = L L' + eps I
        const double l11 = 2.0 * uniform01() - 1.0;
        const double l12 = 2.0 * uniform01() - 1.0;
        const double l21 = 2.0 * uniform01() - 1.0;
        const double l22 = 2.0 * uniform01() - 1.0;
        const QuadraticForm q{l11 * l11 + l12 * l12 + 1e-3,
                              l11 * l21 + l12 * l22,
                              l21 * l21 + l22 * l22 + 1e-3};
        const QuadraticForm p =
            solve_discrete_lyapunov(mats[next_mat % mats.size()], q);
        ++next_mat;
        pool.push_back(p);
        if (accept(p) || result.candidates_tried >= budget) return result;

        double total = 0.0;
        std::vector<double> w(pool.size());
        for (auto& wi : w) {
            wi = uniform01() + 1e-6;
            total += wi;
        }
        QuadraticForm combo{0.0, 0.0, 0.0};
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const double wi = w[i] / total;
            combo.p11 += wi * pool[i].p11;
            combo.p12 += wi * pool[i].p12;
            combo.p22 += wi * pool[i].p22;
        }
        if (accept(combo)) return result;
    }
    return result;
}

// Subsystems whose energies are sampled at switch-on instants. The two
// composite entries describe the FSM phase: the integrator acting together
// with the linear mode in the quadrants where |phi| grows, and together with
// the differentiator in the quadrants where the sign reverses.
enum class SubsystemId {
    Lti1,
    Lti2,
    IntegratorLti,
    IntegratorDifferentiator,
    BbpdNlti,
};

struct SwitchOnTrace {
    SubsystemId subsystem = SubsystemId::Lti1;
    std::vector<double> values;  // energy at consecutive switch-on instants
};

struct MlfReport {
    bool pass = true;
    std::vector<std::size_t> violations;  // indices of non-decreasing samples

    std::optional<std::size_t> first_violation() const {
        if (violations.empty()) return std::nullopt;
        return violations.front();
    }
};

// Pass iff the switch-on energies are strictly decreasing; every adjacent
// violation is reported by the index of its later sample.
inline MlfReport mlf_check(const SwitchOnTrace& trace) {
    MlfReport report;
    for (std::size_t i = 1; i < trace.values.size(); ++i) {
        if (!(trace.values[i] < trace.values[i - 1])) {
            report.pass = false;
            report.violations.push_back(i);
        }
    }
    return report;
}

}  // namespace swpll
