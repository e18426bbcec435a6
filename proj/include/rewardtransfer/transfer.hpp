#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "linops.hpp"
#include "soft_control.hpp"
#include "tables.hpp"

namespace rt {

// Anchor normalization (mu, g): selects the reward representative with
// (mu r)(s) = g(s).
struct AnchorSpec {
    Policy mu;
    SFn g;

    void validate() const {
        mu.validate("AnchorSpec.mu");
        for (double v : g.values) detail::require(std::isfinite(v), "AnchorSpec.g must be finite");
    }
};

struct SourceEnv {
    Kernel P1;
    double gamma1 = 0.95;
    Policy pi_b1;
    Policy pi_ref1;
};

struct TargetEnv {
    Kernel P2;
    SoftSpec spec2;
};

struct TransferProblem {
    SourceEnv source;
    TargetEnv target;
    AnchorSpec anchor;
    std::optional<double> C; // reward shift; empty means choose automatically

    void validate() const {
        require_valid_kernel(source.P1, "TransferProblem.P1");
        require_valid_kernel(target.P2, "TransferProblem.P2");
        detail::require(source.gamma1 >= 0.0 && source.gamma1 < 1.0,
                        "TransferProblem: gamma1 must be in [0,1)");
        source.pi_b1.validate("TransferProblem.pi_b1");
        source.pi_ref1.validate("TransferProblem.pi_ref1");
        detail::require(source.pi_b1.full_support() && source.pi_ref1.full_support(),
                        "TransferProblem: behavior and reference policies must have full support");
        target.spec2.validate();
        anchor.validate();
        if (C) detail::require(*C >= 0.0, "TransferProblem: C must be nonnegative");
    }
};

// u_g(s,a) = log pi_b1(a|s) - log pi_ref1(a|s) - g(s)
inline SAFn source_signal(const Policy& pi_b1, const Policy& pi_ref1, const SFn& g) {
    detail::require(pi_b1.n_states == pi_ref1.n_states && pi_b1.n_actions == pi_ref1.n_actions,
                    "source_signal: shape mismatch");
    SAFn u(pi_b1.n_states, pi_b1.n_actions);
    for (int s = 0; s < u.n_states; ++s)
        for (int a = 0; a < u.n_actions; ++a) {
            detail::require(pi_b1(s, a) > 0.0 && pi_ref1(s, a) > 0.0,
                            "source_signal: zero probability in behavior or reference policy");
            u(s, a) = std::log(pi_b1(s, a)) - std::log(pi_ref1(s, a)) - g(s);
        }
    return u;
}

// q1 solving q1 = u_g + gamma1 P1^mu q1.
inline SAFn source_fixed_point(const SAFn& u_g, const Kernel& P1, const Policy& mu, double gamma1,
                               double tol = 1e-10) {
    return resolvent_apply(P1, mu, gamma1, u_g, tol);
}

// r(s,a) = q1(s,a) - (mu q1)(s) + g(s); satisfies (mu r)(s) = g(s) exactly.
inline SAFn recover_reward(const SAFn& q1, const AnchorSpec& anchor) {
    SAFn r = center_by_anchor(q1, anchor.mu);
    for (int s = 0; s < r.n_states; ++s)
        for (int a = 0; a < r.n_actions; ++a) r(s, a) += anchor.g(s);
    return r;
}

// Smallest nonnegative shift making r + C >= 0.
inline double choose_shift(const SAFn& r) {
    double mn = r.values[0];
    for (double v : r.values) mn = std::min(mn, v);
    return std::max(0.0, -mn);
}

// Source Bellman residual b1(q1) = u_g + gamma1 P1^mu q1 - q1.
inline SAFn source_residual(const SAFn& q1, const TransferProblem& pb) {
    SAFn u = source_signal(pb.source.pi_b1, pb.source.pi_ref1, pb.anchor.g);
    SAFn pq = compose_policy_kernel(pb.source.P1, pb.anchor.mu, q1);
    SAFn b = u;
    for (std::size_t i = 0; i < b.values.size(); ++i)
        b.values[i] += pb.source.gamma1 * pq.values[i] - q1.values[i];
    return b;
}

// Target residual b2(q1,q2) = (I-Pi_mu)q1 + g + C + gamma2 P2 Omega(q2) - q2.
inline SAFn target_residual(const SAFn& q1, const SAFn& q2, const TransferProblem& pb, double C) {
    SAFn b = center_by_anchor(q1, pb.anchor.mu);
    SAFn pom = kernel_apply(pb.target.P2, omega(q2, pb.target.spec2));
    for (int s = 0; s < b.n_states; ++s)
        for (int a = 0; a < b.n_actions; ++a)
            b(s, a) += pb.anchor.g(s) + C + pb.target.spec2.gamma * pom(s, a) - q2(s, a);
    return b;
}

struct OracleSolution {
    SAFn q1;
    SAFn r;       // anchor-normalized reward, unshifted
    double C = 0; // shift actually used
    SAFn r_shifted;
    SAFn q2;
    Policy pi2;
    SFn V2;
};

// Population pipeline: source fixed point, reward recovery, shift, target
// soft control.
inline OracleSolution oracle_transfer(const TransferProblem& pb, double tol = 1e-10) {
    pb.validate();
    OracleSolution out;
    SAFn u = source_signal(pb.source.pi_b1, pb.source.pi_ref1, pb.anchor.g);
    out.q1 = source_fixed_point(u, pb.source.P1, pb.anchor.mu, pb.source.gamma1, tol);
    out.r = recover_reward(out.q1, pb.anchor);
    out.C = pb.C ? *pb.C : choose_shift(out.r);
    out.r_shifted = out.r;
    for (double& v : out.r_shifted.values) v += out.C;
    out.q2 = soft_value_iteration(out.r_shifted, pb.target.P2, pb.target.spec2, tol).q;
    out.pi2 = softmax_policy(out.q2, pb.target.spec2);
    out.V2 = state_value(out.q2, out.pi2);
    return out;
}

// Profiled (Schur-complement) target residual
//   b2_tilde = b2(q1,q2) + (I-Pi_mu)(I - gamma1 P1^mu)^{-1} b1(q1),
// evaluated with the population source operator. Independent of q1 to first
// order at the truth, and in fact exactly here since b1 is affine in q1.
inline SAFn profiled_target_residual(const SAFn& q1, const SAFn& q2, const TransferProblem& pb,
                                     double C, double tol = 1e-10) {
    SAFn b2 = target_residual(q1, q2, pb, C);
    SAFn corr = resolvent_apply(pb.source.P1, pb.anchor.mu, pb.source.gamma1,
                                source_residual(q1, pb), tol);
    corr = center_by_anchor(corr, pb.anchor.mu);
    for (std::size_t i = 0; i < b2.values.size(); ++i) b2.values[i] += corr.values[i];
    return b2;
}

// Same correction but through an explicitly supplied (e.g. empirical) source
// kernel. Kept as a separate entry point so population and empirical
// operators are never silently mixed.
inline SAFn profiled_target_residual_empirical(const SAFn& q1, const SAFn& q2,
                                               const TransferProblem& pb, double C,
                                               const Kernel& P1_hat, double tol = 1e-10) {
    SAFn u = source_signal(pb.source.pi_b1, pb.source.pi_ref1, pb.anchor.g);
    SAFn pq = compose_policy_kernel(P1_hat, pb.anchor.mu, q1);
    SAFn b1 = u;
    for (std::size_t i = 0; i < b1.values.size(); ++i)
        b1.values[i] += pb.source.gamma1 * pq.values[i] - q1.values[i];
    SAFn b2 = target_residual(q1, q2, pb, C);
    SAFn corr = resolvent_apply(P1_hat, pb.anchor.mu, pb.source.gamma1, b1, tol);
    corr = center_by_anchor(corr, pb.anchor.mu);
    for (std::size_t i = 0; i < b2.values.size(); ++i) b2.values[i] += corr.values[i];
    return b2;
}

// Augmented profiled residual with the behavior policy as a nuisance, under
// the nonparametric normalization S_pi(pi) = pi - pi_b1:
//   b2_tilde^pi = b2 + (I-Pi_mu)R[b1(q1,pi)] - (I-Pi_mu)R[(pi-pi_b1)/pi_b1],
// with R = (I - gamma1 P1^mu)^{-1}.
inline SAFn augmented_profiled_residual(const SAFn& q1, const SAFn& q2, const Policy& pi,
                                        const TransferProblem& pb, double C,
                                        double tol = 1e-10) {
    detail::require(pi.full_support(), "augmented_profiled_residual: pi must have full support");
    SAFn u_pi = source_signal(pi, pb.source.pi_ref1, pb.anchor.g);
    SAFn pq = compose_policy_kernel(pb.source.P1, pb.anchor.mu, q1);
    SAFn b1 = u_pi;
    for (std::size_t i = 0; i < b1.values.size(); ++i)
        b1.values[i] += pb.source.gamma1 * pq.values[i] - q1.values[i];

    SAFn score(pi.n_states, pi.n_actions);
    for (int s = 0; s < pi.n_states; ++s)
        for (int a = 0; a < pi.n_actions; ++a) {
            detail::require(pb.source.pi_b1(s, a) > 0.0,
                            "augmented_profiled_residual: zero pi_b1 entry");
            score(s, a) = (pi(s, a) - pb.source.pi_b1(s, a)) / pb.source.pi_b1(s, a);
        }

    for (std::size_t i = 0; i < b1.values.size(); ++i) b1.values[i] -= score.values[i];
    SAFn corr = resolvent_apply(pb.source.P1, pb.anchor.mu, pb.source.gamma1, b1, tol);
    corr = center_by_anchor(corr, pb.anchor.mu);

    SAFn b2 = target_residual(q1, q2, pb, C);
    for (std::size_t i = 0; i < b2.values.size(); ++i) b2.values[i] += corr.values[i];
    return b2;
}

// --- serialization ---

inline Json to_json(const TransferProblem& pb) {
    Json j;
    j["source"] = Json{{"P1", to_json(pb.source.P1)},
                       {"gamma1", pb.source.gamma1},
                       {"pi_b1", to_json(pb.source.pi_b1)},
                       {"pi_ref1", to_json(pb.source.pi_ref1)}};
    j["target"] = Json{{"P2", to_json(pb.target.P2)},
                       {"gamma2", pb.target.spec2.gamma},
                       {"tau2", pb.target.spec2.tau},
                       {"pi_ref2", to_json(pb.target.spec2.pi_ref)}};
    j["anchor"] = Json{{"mu", to_json(pb.anchor.mu)}, {"g", pb.anchor.g.values}};
    j["C"] = pb.C ? Json(*pb.C) : Json(nullptr);
    return j;
}

inline TransferProblem transfer_problem_from_json(const Json& j) {
    TransferProblem pb;
    pb.source.P1 = kernel_from_json(j.at("source").at("P1"));
    pb.source.gamma1 = j.at("source").at("gamma1").get<double>();
    pb.source.pi_b1 = policy_from_json(j.at("source").at("pi_b1"));
    pb.source.pi_ref1 = policy_from_json(j.at("source").at("pi_ref1"));
    pb.target.P2 = kernel_from_json(j.at("target").at("P2"));
    pb.target.spec2.gamma = j.at("target").at("gamma2").get<double>();
    pb.target.spec2.tau = j.at("target").at("tau2").get<double>();
    pb.target.spec2.pi_ref = policy_from_json(j.at("target").at("pi_ref2"));
    pb.anchor.mu = policy_from_json(j.at("anchor").at("mu"));
    pb.anchor.g = SFn(pb.anchor.mu.n_states);
    pb.anchor.g.values = j.at("anchor").at("g").get<std::vector<double>>();
    if (!j.at("C").is_null()) pb.C = j.at("C").get<double>();
    return pb;
}

} // namespace rt
