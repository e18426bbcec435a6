#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "linops.hpp"
#include "tables.hpp"

namespace rt {

// Discount, temperature, and full-support reference policy of one
// KL-regularized control problem.
struct SoftSpec {
    double gamma = 0.95;
    double tau = 1.0;
    Policy pi_ref;

    void validate() const {
        detail::require(gamma >= 0.0 && gamma < 1.0, "SoftSpec: gamma must be in [0,1)");
        detail::require(tau > 0.0, "SoftSpec: tau must be positive");
        pi_ref.validate("SoftSpec.pi_ref");
        detail::require(pi_ref.full_support(), "SoftSpec: pi_ref must have full support");
    }
};

// Omega(q)(s) = tau log sum_a pi_ref(a|s) exp(q(s,a)/tau), max-subtracted.
inline SFn omega(const SAFn& q, const SoftSpec& spec) {
    detail::require(q.n_states == spec.pi_ref.n_states && q.n_actions == spec.pi_ref.n_actions,
                    "omega: shape mismatch");
    SFn out(q.n_states);
    for (int s = 0; s < q.n_states; ++s) {
        double mx = q(s, 0);
        for (int a = 1; a < q.n_actions; ++a) mx = std::max(mx, q(s, a));
        double acc = 0.0;
        for (int a = 0; a < q.n_actions; ++a)
            acc += spec.pi_ref(s, a) * std::exp((q(s, a) - mx) / spec.tau);
        out(s) = mx + spec.tau * std::log(acc);
    }
    return out;
}

// pi(a|s) proportional to pi_ref(a|s) exp(q(s,a)/tau).
inline Policy softmax_policy(const SAFn& q, const SoftSpec& spec) {
    detail::require(q.n_states == spec.pi_ref.n_states && q.n_actions == spec.pi_ref.n_actions,
                    "softmax_policy: shape mismatch");
    Policy pi(q.n_states, q.n_actions, 0.0);
    for (int s = 0; s < q.n_states; ++s) {
        double mx = q(s, 0);
        for (int a = 1; a < q.n_actions; ++a) mx = std::max(mx, q(s, a));
        double z = 0.0;
        for (int a = 0; a < q.n_actions; ++a) {
            pi(s, a) = spec.pi_ref(s, a) * std::exp((q(s, a) - mx) / spec.tau);
            z += pi(s, a);
        }
        for (int a = 0; a < q.n_actions; ++a) pi(s, a) /= z;
    }
    return pi;
}

struct SoftSolve {
    SAFn q;
    long iters = 0;
};

// Fixed point of q = r + gamma P Omega(q), by contraction iteration.
inline SoftSolve soft_value_iteration(const SAFn& r, const Kernel& P, const SoftSpec& spec,
                                      double tol = 1e-10) {
    spec.validate();
    detail::require(P.n_states == r.n_states && P.n_actions == r.n_actions,
                    "soft_value_iteration: shape mismatch");
    SAFn q = r;
    if (spec.gamma == 0.0) return {q, 1};
    const long cap =
        10 * static_cast<long>(std::ceil(std::log(tol) / std::log(spec.gamma))) + 64;
    for (long it = 1; it <= cap; ++it) {
        SAFn next = kernel_apply(P, omega(q, spec));
        for (std::size_t i = 0; i < next.values.size(); ++i)
            next.values[i] = r.values[i] + spec.gamma * next.values[i];
        const double delta = sup_diff(next, q);
        q = std::move(next);
        if (delta * spec.gamma / (1.0 - spec.gamma) <= tol) {
            // Certify the fixed-point defect.
            SAFn check = kernel_apply(P, omega(q, spec));
            for (std::size_t i = 0; i < check.values.size(); ++i)
                check.values[i] = r.values[i] + spec.gamma * check.values[i];
            if (sup_diff(check, q) <= tol) return {q, it};
        }
    }
    throw std::runtime_error("soft_value_iteration: iteration cap exceeded");
}

// V(s) = sum_a pi(a|s) q(s,a)
inline SFn state_value(const SAFn& q, const Policy& pi) { return policy_average(pi, q); }

// Exact regularized return J(pi) = (1-gamma)^{-1} E_d[r - tau log(pi/pi_ref)],
// with d the discounted occupancy of (P, pi, rho).
inline double regularized_return(const Policy& pi, const SAFn& r, const Kernel& P,
                                 const SoftSpec& spec, const SADist& rho) {
    detail::require(pi.n_states == r.n_states && pi.n_actions == r.n_actions,
                    "regularized_return: shape mismatch");
    SADist d = discounted_occupancy(P, pi, rho, spec.gamma);
    double acc = 0.0;
    for (int s = 0; s < r.n_states; ++s)
        for (int a = 0; a < r.n_actions; ++a) {
            const double w = d(s, a);
            if (w <= 0.0) continue;
            const double p = pi(s, a);
            detail::require(p > 0.0,
                            "regularized_return: policy places zero mass where occupancy is "
                            "positive; KL penalty undefined");
            acc += w * (r(s, a) - spec.tau * std::log(p / spec.pi_ref(s, a)));
        }
    return acc / (1.0 - spec.gamma);
}

} // namespace rt
