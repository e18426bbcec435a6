#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "tables.hpp"

namespace rt {

// (Pi_pi f)(s) = sum_a pi(a|s) f(s,a)
inline SFn policy_average(const Policy& pi, const SAFn& f) {
    detail::require(pi.n_states == f.n_states && pi.n_actions == f.n_actions,
                    "policy_average: shape mismatch");
    SFn out(f.n_states);
    for (int s = 0; s < f.n_states; ++s) {
        double acc = 0.0;
        for (int a = 0; a < f.n_actions; ++a) acc += pi(s, a) * f(s, a);
        out(s) = acc;
    }
    return out;
}

// (P v)(s,a) = sum_{s'} P(s'|s,a) v(s')
inline SAFn kernel_apply(const Kernel& P, const SFn& v) {
    detail::require(P.n_states == v.n_states, "kernel_apply: shape mismatch");
    SAFn out(P.n_states, P.n_actions);
    for (int s = 0; s < P.n_states; ++s)
        for (int a = 0; a < P.n_actions; ++a) {
            double acc = 0.0;
            for (int sp = 0; sp < P.n_states; ++sp) acc += P(s, a, sp) * v(sp);
            out(s, a) = acc;
        }
    return out;
}

// (P^pi f)(s,a) = sum_{s'} P(s'|s,a) sum_{a'} pi(a'|s') f(s',a')
inline SAFn compose_policy_kernel(const Kernel& P, const Policy& pi, const SAFn& f) {
    detail::require(P.n_states == f.n_states && P.n_actions == f.n_actions &&
                        pi.n_states == f.n_states && pi.n_actions == f.n_actions,
                    "compose_policy_kernel: shape mismatch");
    return kernel_apply(P, policy_average(pi, f));
}

namespace detail {

// Dense SA x SA matrix of the composed operator P^pi.
inline Eigen::MatrixXd policy_kernel_matrix(const Kernel& P, const Policy& pi) {
    const int n = P.n_states * P.n_actions;
    Eigen::MatrixXd M(n, n);
    for (int s = 0; s < P.n_states; ++s)
        for (int a = 0; a < P.n_actions; ++a) {
            const int row = s * P.n_actions + a;
            for (int sp = 0; sp < P.n_states; ++sp)
                for (int ap = 0; ap < P.n_actions; ++ap)
                    M(row, sp * P.n_actions + ap) = P(s, a, sp) * pi(sp, ap);
        }
    return M;
}

inline Eigen::VectorXd to_vec(const SAFn& f) {
    return Eigen::Map<const Eigen::VectorXd>(f.values.data(),
                                             static_cast<Eigen::Index>(f.values.size()));
}

inline SAFn from_vec(const Eigen::VectorXd& v, int ns, int na) {
    SAFn f(ns, na);
    Eigen::Map<Eigen::VectorXd>(f.values.data(), v.size()) = v;
    return f;
}

} // namespace detail

inline double sup_diff(const SAFn& a, const SAFn& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

enum class ResolventMethod { Auto, Direct, Neumann };

// Solves h = f + gamma P^pi h, i.e. h = (I - gamma P^pi)^{-1} f.
inline SAFn resolvent_apply(const Kernel& P, const Policy& pi, double gamma, const SAFn& f,
                            double tol = 1e-10, ResolventMethod method = ResolventMethod::Auto) {
    detail::require(gamma >= 0.0 && gamma < 1.0, "resolvent_apply: gamma must be in [0,1)");
    if (gamma == 0.0) return f;

    if (method == ResolventMethod::Auto)
        method = (P.n_states <= 256) ? ResolventMethod::Direct : ResolventMethod::Neumann;

    if (method == ResolventMethod::Direct) {
        const int n = P.n_states * P.n_actions;
        Eigen::MatrixXd A =
            Eigen::MatrixXd::Identity(n, n) - gamma * detail::policy_kernel_matrix(P, pi);
        Eigen::VectorXd x = A.partialPivLu().solve(detail::to_vec(f));
        return detail::from_vec(x, P.n_states, P.n_actions);
    }

    // Neumann iteration h <- f + gamma P^pi h; geometric convergence at rate gamma.
    SAFn h = f;
    const double fnorm = f.sup_norm();
    long cap = 64;
    if (fnorm > tol && gamma > 0.0)
        cap = static_cast<long>(std::ceil(std::log(tol / fnorm) / std::log(gamma))) + 64;
    for (long it = 0; it < cap; ++it) {
        SAFn next = compose_policy_kernel(P, pi, h);
        for (std::size_t i = 0; i < next.values.size(); ++i)
            next.values[i] = f.values[i] + gamma * next.values[i];
        const double delta = sup_diff(next, h);
        h = std::move(next);
        if (delta * gamma / (1.0 - gamma) <= tol) return h;
    }
    // Verify the fixed-point defect before giving up.
    SAFn check = compose_policy_kernel(P, pi, h);
    for (std::size_t i = 0; i < check.values.size(); ++i)
        check.values[i] = f.values[i] + gamma * check.values[i];
    if (sup_diff(check, h) <= tol) return h;
    throw std::runtime_error("resolvent_apply: Neumann iteration did not converge");
}

// Normalized discounted occupancy d = (1-gamma) (I - gamma (P^pi)^T)^{-1} rho.
inline SADist discounted_occupancy(const Kernel& P, const Policy& pi, const SADist& rho,
                                   double gamma) {
    detail::require(gamma >= 0.0 && gamma < 1.0, "discounted_occupancy: gamma must be in [0,1)");
    if (gamma == 0.0) return rho;
    const int n = P.n_states * P.n_actions;
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) -
                        gamma * detail::policy_kernel_matrix(P, pi).transpose();
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(rho.weights.data(), n);
    Eigen::VectorXd d = (1.0 - gamma) * A.partialPivLu().solve(r);
    SADist out(P.n_states, P.n_actions);
    Eigen::Map<Eigen::VectorXd>(out.weights.data(), n) = d;
    // Round tiny negative values produced by the solve.
    double sum = 0.0;
    for (double& w : out.weights) {
        if (w < 0.0 && w > -1e-12) w = 0.0;
        sum += w;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-8, "discounted_occupancy: mass not preserved");
    for (double& w : out.weights) w /= sum;
    return out;
}

// Average and maximum per-(s,a) total-variation distance between two kernels.
inline std::pair<double, double> tv_shift_stats(const Kernel& P1, const Kernel& P2) {
    detail::require(P1.same_shape(P2), "tv_shift_stats: shape mismatch");
    double sum = 0.0, worst = 0.0;
    for (int s = 0; s < P1.n_states; ++s)
        for (int a = 0; a < P1.n_actions; ++a) {
            double tv = 0.0;
            for (int sp = 0; sp < P1.n_states; ++sp)
                tv += std::abs(P1(s, a, sp) - P2(s, a, sp));
            tv *= 0.5;
            sum += tv;
            worst = std::max(worst, tv);
        }
    return {sum / (static_cast<double>(P1.n_states) * P1.n_actions), worst};
}

// (I - Pi_mu) f, statewise centering under the anchor policy.
inline SAFn center_by_anchor(const SAFn& f, const Policy& mu) {
    SFn mean = policy_average(mu, f);
    SAFn out = f;
    for (int s = 0; s < f.n_states; ++s)
        for (int a = 0; a < f.n_actions; ++a) out(s, a) -= mean(s);
    return out;
}

// Adjoint of (I - Pi_mu) on state-action measures:
// ((I - Pi_mu)^T v)(s,a) = v(s,a) - mu(a|s) sum_{a'} v(s,a')
inline SAFn center_by_anchor_adjoint(const SAFn& v, const Policy& mu) {
    SAFn out = v;
    for (int s = 0; s < v.n_states; ++s) {
        double row = 0.0;
        for (int a = 0; a < v.n_actions; ++a) row += v(s, a);
        for (int a = 0; a < v.n_actions; ++a) out(s, a) -= mu(s, a) * row;
    }
    return out;
}

// Weighted inner product <f, g>_rho.
inline double weighted_dot(const SAFn& f, const SAFn& g, const SADist& rho) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i)
        acc += rho.weights[i] * f.values[i] * g.values[i];
    return acc;
}

inline double weighted_sq_norm(const SAFn& f, const SADist& rho) {
    return weighted_dot(f, f, rho);
}

} // namespace rt
