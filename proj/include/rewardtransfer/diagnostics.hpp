#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data_sim.hpp"
#include "estimators.hpp"
#include "linops.hpp"
#include "soft_control.hpp"
#include "tables.hpp"
#include "transfer.hpp"

namespace rt {

struct MetricReport {
    double regret = 0.0;
    double q2_mse_rho2 = 0.0;
    double v2_mse_unif = 0.0;
    double r_mse_rho1 = 0.0;
    double q1_mse_rho1 = 0.0;
    double v2_policy_weighted_term = 0.0;
    double v2_mismatch_term = 0.0;
    double anchor_action_q1_mse = 0.0;
};

struct CertificateCheck {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double tol = 0.0;
    bool inequality = true; // pass iff lhs <= rhs + tol; else |lhs-rhs| <= tol
    bool pass = false;
};

struct CertificateReport {
    std::vector<CertificateCheck> checks;

    void add(std::string name, double lhs, double rhs, double tol, bool inequality = true) {
        CertificateCheck c{std::move(name), lhs, rhs, tol, inequality, false};
        c.pass = inequality ? (lhs <= rhs + tol) : (std::abs(lhs - rhs) <= tol);
        checks.push_back(std::move(c));
    }

    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

// J(pi) seeded at a state distribution with pi acting from t = 0; regret
// against the soft-optimal policy is then nonnegative by construction.
inline double policy_return(const Policy& pi, const SAFn& r, const Kernel& P,
                            const SoftSpec& spec, const SFn& rho_states) {
    SADist rho0(pi.n_states, pi.n_actions);
    for (int s = 0; s < pi.n_states; ++s)
        for (int a = 0; a < pi.n_actions; ++a) rho0(s, a) = rho_states(s) * pi(s, a);
    return regularized_return(pi, r, P, spec, rho0);
}

inline SFn state_marginal(const SADist& rho) {
    SFn out(rho.n_states);
    for (int s = 0; s < rho.n_states; ++s)
        for (int a = 0; a < rho.n_actions; ++a) out(s) += rho(s, a);
    return out;
}

// Evaluation weights rho1/rho2 are the population discounted visitations of
// the logging setups (see harness); a rho_hat-weighted variant is obtained by
// passing the empirical weights instead.
inline MetricReport evaluate_output(const EstimatorOutput& out, const OracleSolution& oracle,
                                    const TransferProblem& pb, const SADist& rho1,
                                    const SADist& rho2) {
    detail::require(out.q2_hat.same_shape(oracle.q2), "evaluate_output: shape mismatch");
    MetricReport rep;

    SAFn dq2 = out.q2_hat;
    for (std::size_t i = 0; i < dq2.values.size(); ++i) dq2.values[i] -= oracle.q2.values[i];
    rep.q2_mse_rho2 = weighted_sq_norm(dq2, rho2);

    SAFn dq1 = out.q1_hat;
    for (std::size_t i = 0; i < dq1.values.size(); ++i) dq1.values[i] -= oracle.q1.values[i];
    rep.q1_mse_rho1 = weighted_sq_norm(dq1, rho1);

    SAFn dr = out.r_hat;
    for (std::size_t i = 0; i < dr.values.size(); ++i) dr.values[i] -= oracle.r.values[i];
    rep.r_mse_rho1 = weighted_sq_norm(dr, rho1);

    const SFn rho2_s = state_marginal(rho2);
    const double j_star =
        policy_return(oracle.pi2, oracle.r_shifted, pb.target.P2, pb.target.spec2, rho2_s);
    const double j_hat =
        policy_return(out.pi2_hat, oracle.r_shifted, pb.target.P2, pb.target.spec2, rho2_s);
    rep.regret = j_star - j_hat;

    SFn v_hat = state_value(out.q2_hat, out.pi2_hat);
    const int ns = oracle.q2.n_states, na = oracle.q2.n_actions;
    double v_mse = 0.0, pw = 0.0, mm = 0.0;
    for (int s = 0; s < ns; ++s) {
        double dv = v_hat(s) - oracle.V2(s);
        v_mse += dv * dv;
        double pws = 0.0, mms = 0.0;
        for (int a = 0; a < na; ++a) {
            pws += out.pi2_hat(s, a) * dq2(s, a);
            mms += (out.pi2_hat(s, a) - oracle.pi2(s, a)) * oracle.q2(s, a);
        }
        pw += pws * pws;
        mm += mms * mms;
    }
    rep.v2_mse_unif = v_mse / ns;
    rep.v2_policy_weighted_term = pw / ns;
    rep.v2_mismatch_term = mm / ns;

    // anchor-action q1 error, state-averaged (point-mass anchor)
    double aa = 0.0;
    for (int s = 0; s < ns; ++s) {
        int a0 = 0;
        for (int a = 0; a < na; ++a)
            if (pb.anchor.mu(s, a) > pb.anchor.mu(s, a0)) a0 = a;
        aa += dq1(s, a0) * dq1(s, a0);
    }
    rep.anchor_action_q1_mse = aa / ns;
    return rep;
}

// Statewise split of V2 error into the policy-weighted q2 term and the
// policy-mismatch term, plus an exact reconstruction check.
struct V2Decomposition {
    double policy_weighted_term = 0.0;
    double mismatch_term = 0.0;
    double reconstruction_error = 0.0; // max_s |pw(s)+mm(s) - (Vhat-Vstar)(s)|
};

inline V2Decomposition v2_error_decomposition(const EstimatorOutput& out,
                                              const OracleSolution& oracle) {
    const int ns = oracle.q2.n_states, na = oracle.q2.n_actions;
    SFn v_hat = state_value(out.q2_hat, out.pi2_hat);
    V2Decomposition d;
    for (int s = 0; s < ns; ++s) {
        double pws = 0.0, mms = 0.0;
        for (int a = 0; a < na; ++a) {
            pws += out.pi2_hat(s, a) * (out.q2_hat(s, a) - oracle.q2(s, a));
            mms += (out.pi2_hat(s, a) - oracle.pi2(s, a)) * oracle.q2(s, a);
        }
        d.policy_weighted_term += pws * pws;
        d.mismatch_term += mms * mms;
        d.reconstruction_error =
            std::max(d.reconstruction_error, std::abs(pws + mms - (v_hat(s) - oracle.V2(s))));
    }
    d.policy_weighted_term /= ns;
    d.mismatch_term /= ns;
    return d;
}

struct AnchorContrastReport {
    double anchor_action_q1_mse = 0.0;
    double contrast_identity_error = 0.0; // sup |(r_hat-r*) - (dq1 - dq1(.,a0))|
};

// Under a point-mass anchor the reward error is the q1 error contrast
// against the anchor action.
inline AnchorContrastReport anchor_contrast_diagnostic(const EstimatorOutput& out,
                                                       const OracleSolution& oracle,
                                                       const AnchorSpec& anchor) {
    const int ns = oracle.q1.n_states, na = oracle.q1.n_actions;
    AnchorContrastReport rep;
    for (int s = 0; s < ns; ++s) {
        int a0 = 0;
        for (int a = 0; a < na; ++a)
            if (anchor.mu(s, a) > anchor.mu(s, a0)) a0 = a;
        detail::require(anchor.mu(s, a0) > 1.0 - 1e-9,
                        "anchor_contrast_diagnostic: anchor must be a point mass");
        const double base = out.q1_hat(s, a0) - oracle.q1(s, a0);
        rep.anchor_action_q1_mse += base * base;
        for (int a = 0; a < na; ++a) {
            const double dq = out.q1_hat(s, a) - oracle.q1(s, a);
            const double dr = out.r_hat(s, a) - oracle.r(s, a);
            rep.contrast_identity_error =
                std::max(rep.contrast_identity_error, std::abs(dr - (dq - base)));
        }
    }
    rep.anchor_action_q1_mse /= ns;
    return rep;
}

// --- dual certificates and kappa constants ---

struct DualCertificates {
    SAFn l2_star;
    SAFn l1_self_star; // modular source dual (unit quadratic weight)
    SAFn l1_coup_star; // beta * l1_self + cross term
    SAFn l1_cross_star;
    double kappa1 = 0.0, kappa2 = 0.0, kappa12 = 0.0, kappa_mu_b1 = 0.0, kappa12_s = 0.0;
};

namespace detail {

inline Eigen::VectorXd transpose_resolvent_solve(const Eigen::MatrixXd& M, double gamma,
                                                 const Eigen::VectorXd& rhs) {
    const Eigen::Index n = M.rows();
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * M.transpose();
    return A.partialPivLu().solve(rhs);
}

} // namespace detail

// Population multipliers from the transpose-resolvent formulas; requires
// strictly positive rho on the evaluation support.
inline DualCertificates dual_certificates(const TransferProblem& pb, const OracleSolution& oracle,
                                          double beta, const SADist& rho1, const SADist& rho2) {
    const int ns = oracle.q1.n_states, na = oracle.q1.n_actions, n = ns * na;
    for (double w : rho1.weights) detail::require(w > 0.0, "dual_certificates: rho1 has zeros");
    for (double w : rho2.weights) detail::require(w > 0.0, "dual_certificates: rho2 has zeros");

    DualCertificates dc;
    Eigen::MatrixXd M2 = detail::policy_kernel_matrix(pb.target.P2, oracle.pi2);
    Eigen::MatrixXd M1 = detail::policy_kernel_matrix(pb.source.P1, pb.anchor.mu);

    Eigen::VectorXd rhs2(n);
    for (int i = 0; i < n; ++i) rhs2(i) = rho2.weights[i] * oracle.q2.values[i];
    Eigen::VectorXd x2 = detail::transpose_resolvent_solve(M2, pb.target.spec2.gamma, rhs2);
    dc.l2_star = SAFn(ns, na);
    for (int i = 0; i < n; ++i) dc.l2_star.values[i] = x2(i) / rho2.weights[i];

    Eigen::VectorXd rhs1(n);
    for (int i = 0; i < n; ++i) rhs1(i) = rho1.weights[i] * oracle.q1.values[i];
    Eigen::VectorXd x1 = detail::transpose_resolvent_solve(M1, pb.source.gamma1, rhs1);
    dc.l1_self_star = SAFn(ns, na);
    for (int i = 0; i < n; ++i) dc.l1_self_star.values[i] = x1(i) / rho1.weights[i];

    SAFn weighted_l2(ns, na);
    for (int i = 0; i < n; ++i) weighted_l2.values[i] = rho2.weights[i] * dc.l2_star.values[i];
    SAFn cross_rhs = center_by_anchor_adjoint(weighted_l2, pb.anchor.mu);
    Eigen::VectorXd xc = detail::transpose_resolvent_solve(
        M1, pb.source.gamma1, Eigen::Map<const Eigen::VectorXd>(cross_rhs.values.data(), n));
    dc.l1_cross_star = SAFn(ns, na);
    for (int i = 0; i < n; ++i) dc.l1_cross_star.values[i] = xc(i) / rho1.weights[i];

    dc.l1_coup_star = SAFn(ns, na);
    for (int i = 0; i < n; ++i)
        dc.l1_coup_star.values[i] =
            beta * dc.l1_self_star.values[i] + dc.l1_cross_star.values[i];

    // concentrability constants
    SADist d2 = discounted_occupancy(pb.target.P2, oracle.pi2, rho2, pb.target.spec2.gamma);
    SADist d1 = discounted_occupancy(pb.source.P1, pb.anchor.mu, rho1, pb.source.gamma1);
    SFn d2s = state_marginal(d2), rho1s = state_marginal(rho1);
    for (int i = 0; i < n; ++i) {
        dc.kappa2 = std::max(dc.kappa2, d2.weights[i] / rho2.weights[i]);
        dc.kappa1 = std::max(dc.kappa1, d1.weights[i] / rho1.weights[i]);
        dc.kappa12 = std::max(dc.kappa12, d2.weights[i] / rho1.weights[i]);
        dc.kappa_mu_b1 =
            std::max(dc.kappa_mu_b1, pb.anchor.mu.probs[i] / pb.source.pi_b1.probs[i]);
    }
    for (int s = 0; s < ns; ++s) dc.kappa12_s = std::max(dc.kappa12_s, d2s(s) / rho1s(s));
    return dc;
}

// Adjoint identities and kappa-based sup-norm bounds, tested against random
// directions.
inline CertificateReport check_dual_certificates(const TransferProblem& pb,
                                                 const OracleSolution& oracle,
                                                 const DualCertificates& dc, double beta,
                                                 const SADist& rho1, const SADist& rho2,
                                                 int n_directions, Rng rng) {
    CertificateReport rep;
    const int ns = oracle.q1.n_states, na = oracle.q1.n_actions;
    double worst2 = 0.0, worst1 = 0.0;
    for (int k = 0; k < n_directions; ++k) {
        SAFn h(ns, na);
        for (double& v : h.values) v = rng.normal();
        // <l2*, (I - gamma2 P2^{pi2*}) h>_rho2 = <q2*, h>_rho2
        SAFn ph2 = compose_policy_kernel(pb.target.P2, oracle.pi2, h);
        SAFn op2 = h;
        for (std::size_t i = 0; i < op2.values.size(); ++i)
            op2.values[i] -= pb.target.spec2.gamma * ph2.values[i];
        double lhs2 = weighted_dot(dc.l2_star, op2, rho2);
        double rhs2 = weighted_dot(oracle.q2, h, rho2);
        worst2 = std::max(worst2, std::abs(lhs2 - rhs2) / (1.0 + std::abs(rhs2)));
        // <l1_coup*, (I - gamma1 P1^mu) h>_rho1
        //   = beta <q1*, h>_rho1 + <l2*, (I - Pi_mu) h>_rho2
        SAFn ph1 = compose_policy_kernel(pb.source.P1, pb.anchor.mu, h);
        SAFn op1 = h;
        for (std::size_t i = 0; i < op1.values.size(); ++i)
            op1.values[i] -= pb.source.gamma1 * ph1.values[i];
        double lhs1 = weighted_dot(dc.l1_coup_star, op1, rho1);
        double rhs1 = beta * weighted_dot(oracle.q1, h, rho1) +
                      weighted_dot(dc.l2_star, center_by_anchor(h, pb.anchor.mu), rho2);
        worst1 = std::max(worst1, std::abs(lhs1 - rhs1) / (1.0 + std::abs(rhs1)));
    }
    rep.add("dual_adjoint_l2", worst2, 0.0, 1e-7);
    rep.add("dual_adjoint_l1", worst1, 0.0, 1e-7);

    const double bq1 = 1.5 * oracle.q1.sup_norm();
    const double bq2 = 1.5 * oracle.q2.sup_norm();
    const double g1 = pb.source.gamma1, g2 = pb.target.spec2.gamma;
    rep.add("dual_bound_l2", dc.l2_star.sup_norm(), dc.kappa2 / (1.0 - g2) * bq2, 1e-9);
    rep.add("dual_bound_l1_mod", dc.l1_self_star.sup_norm(), dc.kappa1 / (1.0 - g1) * bq1, 1e-9);
    rep.add("dual_bound_l1_coup", dc.l1_coup_star.sup_norm(),
            beta * dc.kappa1 / (1.0 - g1) * bq1 +
                dc.kappa1 * (dc.kappa12 + dc.kappa_mu_b1 * dc.kappa12_s) /
                    ((1.0 - g1) * (1.0 - g2)) * bq2,
            1e-9);
    // l2* >= 0 is the sign condition behind quadratic growth
    double min_l2 = dc.l2_star.values[0];
    for (double v : dc.l2_star.values) min_l2 = std::min(min_l2, v);
    rep.add("l2_star_nonnegative", -min_l2, 0.0, 1e-9);
    return rep;
}

// Population coupled Lagrangian at fixed duals.
inline double population_lagrangian(const TransferProblem& pb, double C, const SAFn& q1,
                                    const SAFn& q2, const SAFn& l1, const SAFn& l2, double beta,
                                    const SADist& rho1, const SADist& rho2) {
    SAFn b1 = source_residual(q1, pb);
    SAFn b2 = target_residual(q1, q2, pb, C);
    return 0.5 * beta * weighted_sq_norm(q1, rho1) + 0.5 * weighted_sq_norm(q2, rho2) +
           weighted_dot(l1, b1, rho1) + weighted_dot(l2, b2, rho2);
}

// Quadratic growth of the population saddle objective at the oracle duals,
// plus the first-order contrast between the coupled and the modular source
// dual (finite differences, so the gradient code is not its own oracle).
inline CertificateReport check_quadratic_growth(const TransferProblem& pb,
                                                const OracleSolution& oracle,
                                                const DualCertificates& dc, double beta,
                                                const SADist& rho1, const SADist& rho2,
                                                int trials, Rng rng) {
    CertificateReport rep;
    const int ns = oracle.q1.n_states, na = oracle.q1.n_actions;
    const double L0 = population_lagrangian(pb, oracle.C, oracle.q1, oracle.q2, dc.l1_coup_star,
                                            dc.l2_star, beta, rho1, rho2);
    const double scale = 1.0 + std::abs(L0);

    double worst_slack = 0.0; // most negative (gap - quadratic lower bound)
    for (int k = 0; k < trials; ++k) {
        SAFn d1(ns, na), d2(ns, na);
        const double amp = std::exp(rng.uniform(-3.0, 1.0)); // span small & large moves
        for (double& v : d1.values) v = amp * rng.normal();
        for (double& v : d2.values) v = amp * rng.normal();
        SAFn q1 = oracle.q1, q2 = oracle.q2;
        for (std::size_t i = 0; i < q1.values.size(); ++i) {
            q1.values[i] += d1.values[i];
            q2.values[i] += d2.values[i];
        }
        const double gap = population_lagrangian(pb, oracle.C, q1, q2, dc.l1_coup_star,
                                                 dc.l2_star, beta, rho1, rho2) -
                           L0;
        const double lower =
            0.5 * beta * weighted_sq_norm(d1, rho1) + 0.5 * weighted_sq_norm(d2, rho2);
        worst_slack = std::min(worst_slack, gap - lower);
    }
    rep.add("quadratic_growth_slack", -worst_slack, 0.0, 1e-9 * scale);

    // Source-direction slope: zero with the coupled dual, equal to
    // <l2*, (I - Pi_mu) d1>_rho2 when the modular dual beta*l1_self* is
    // substituted. L is quadratic in q1 at fixed duals, so central
    // differences are exact up to roundoff.
    SAFn l1_mod(ns, na);
    for (std::size_t i = 0; i < l1_mod.values.size(); ++i)
        l1_mod.values[i] = beta * dc.l1_self_star.values[i];
    double coup_slope_max = 0.0, mod_match = 0.0, mod_mag = 0.0;
    const int slope_trials = std::max(trials / 4, 8);
    for (int k = 0; k < slope_trials; ++k) {
        SAFn d1(ns, na);
        for (double& v : d1.values) v = rng.normal();
        const double t = 1e-5 * (1.0 + d1.sup_norm());
        SAFn qp = oracle.q1, qm = oracle.q1;
        for (std::size_t i = 0; i < qp.values.size(); ++i) {
            qp.values[i] += t * d1.values[i];
            qm.values[i] -= t * d1.values[i];
        }
        auto slope_with = [&](const SAFn& l1) {
            const double lp = population_lagrangian(pb, oracle.C, qp, oracle.q2, l1, dc.l2_star,
                                                    beta, rho1, rho2);
            const double lm = population_lagrangian(pb, oracle.C, qm, oracle.q2, l1, dc.l2_star,
                                                    beta, rho1, rho2);
            return (lp - lm) / (2.0 * t);
        };
        coup_slope_max = std::max(coup_slope_max, std::abs(slope_with(dc.l1_coup_star)));
        const double s_mod = slope_with(l1_mod);
        const double predicted = weighted_dot(dc.l2_star, center_by_anchor(d1, pb.anchor.mu), rho2);
        mod_match = std::max(mod_match, std::abs(s_mod - predicted));
        mod_mag = std::max(mod_mag, std::abs(s_mod));
    }
    rep.add("coupled_dual_slope_zero", coup_slope_max, 0.0, 1e-6 * scale);
    rep.add("modular_dual_slope_formula", mod_match, 0.0, 1e-6 * scale);
    // negated so the <= convention expresses "magnitude at least 1e-6"
    rep.add("modular_dual_slope_nonzero", -mod_mag, -1e-6, 0.0);
    return rep;
}

// Exact source-error decomposition through the empirical resolvent:
//   qhat1 - q1* = gamma1 Rhat (Phat1^mu - P1^mu) q1* - Rhat bhat1(qhat1),
// with Rhat = (I - gamma1 Phat1^mu)^{-1}. An algebraic identity for any
// qhat1; returns the worst absolute defect.
inline double source_error_identity_defect(const TransferProblem& pb, const Kernel& P1_hat,
                                           const SAFn& q1_hat, const SAFn& q1_star,
                                           double tol = 1e-12) {
    SAFn shift = compose_policy_kernel(P1_hat, pb.anchor.mu, q1_star);
    SAFn shift_pop = compose_policy_kernel(pb.source.P1, pb.anchor.mu, q1_star);
    for (std::size_t i = 0; i < shift.values.size(); ++i) shift.values[i] -= shift_pop.values[i];
    SAFn term1 = resolvent_apply(P1_hat, pb.anchor.mu, pb.source.gamma1, shift, tol);

    SAFn u = source_signal(pb.source.pi_b1, pb.source.pi_ref1, pb.anchor.g);
    SAFn pq = compose_policy_kernel(P1_hat, pb.anchor.mu, q1_hat);
    SAFn b1 = u;
    for (std::size_t i = 0; i < b1.values.size(); ++i)
        b1.values[i] += pb.source.gamma1 * pq.values[i] - q1_hat.values[i];
    SAFn term2 = resolvent_apply(P1_hat, pb.anchor.mu, pb.source.gamma1, b1, tol);

    double worst = 0.0;
    for (std::size_t i = 0; i < q1_hat.values.size(); ++i) {
        const double lhs = q1_hat.values[i] - q1_star.values[i];
        const double rhs = pb.source.gamma1 * term1.values[i] - term2.values[i];
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

// --- stability and conversion bounds with explicit constants ---

struct BoundConstants {
    double kappa1 = 0.0, kappa2 = 0.0, kappa12 = 0.0;
    double b_q2 = 0.0;      // 1.5 x observed oracle sup norm
    double eps_pi2 = 0.0;   // min_s,a pi2*(a|s)
    double c_pi = 0.0;      // regret conversion constant
};

inline BoundConstants bound_constants(const TransferProblem& pb, const OracleSolution& oracle,
                                      const DualCertificates& dc) {
    BoundConstants bc;
    bc.kappa1 = dc.kappa1;
    bc.kappa2 = dc.kappa2;
    bc.kappa12 = dc.kappa12;
    bc.b_q2 = 1.5 * oracle.q2.sup_norm();
    bc.eps_pi2 = oracle.pi2.probs[0];
    for (double p : oracle.pi2.probs) bc.eps_pi2 = std::min(bc.eps_pi2, p);
    const int na = oracle.q2.n_actions;
    bc.c_pi = bc.b_q2 * std::sqrt(static_cast<double>(na) * bc.kappa2) /
              ((1.0 - pb.target.spec2.gamma) * pb.target.spec2.tau * std::sqrt(bc.eps_pi2));
    return bc;
}

// Checks the stability/conversion inequalities on random instances:
// resolvent L2 stability, softmax L1 sensitivity, the KL-to-L2 conversion
// for clipped policies, and the regret conversion for supplied estimates.
inline CertificateReport check_bounds(const TransferProblem& pb, const OracleSolution& oracle,
                                      const BoundConstants& bc, const SADist& rho1,
                                      const SADist& rho2,
                                      const std::vector<std::pair<std::string, MetricReport>>& runs,
                                      int trials, Rng rng) {
    CertificateReport rep;
    const int ns = oracle.q2.n_states, na = oracle.q2.n_actions;
    const double g2 = pb.target.spec2.gamma, tau2 = pb.target.spec2.tau;

    double worst_resolvent = 0.0;
    for (int k = 0; k < trials; ++k) {
        SAFn f(ns, na);
        for (double& v : f.values) v = rng.normal();
        SAFn h = resolvent_apply(pb.target.P2, oracle.pi2, g2, f, 1e-12);
        const double lhs = std::sqrt(weighted_sq_norm(h, rho2));
        const double rhs =
            std::sqrt(bc.kappa2) / (1.0 - g2) * std::sqrt(weighted_sq_norm(f, rho2));
        worst_resolvent = std::max(worst_resolvent, lhs - rhs);
    }
    rep.add("resolvent_l2_stability", worst_resolvent, 0.0, 1e-9);

    double worst_softmax = 0.0;
    SoftSpec spec = pb.target.spec2;
    for (int k = 0; k < trials; ++k) {
        SAFn qa(ns, na), qb(ns, na);
        const double amp = std::exp(rng.uniform(-3.0, 1.0));
        for (std::size_t i = 0; i < qa.values.size(); ++i) {
            qa.values[i] = rng.normal(0.0, 2.0);
            qb.values[i] = qa.values[i] + amp * rng.normal();
        }
        Policy pa = softmax_policy(qa, spec), pib = softmax_policy(qb, spec);
        for (int s = 0; s < ns; ++s) {
            double l1 = 0.0, l2sq = 0.0;
            for (int a = 0; a < na; ++a) {
                l1 += std::abs(pa(s, a) - pib(s, a));
                const double d = qa(s, a) - qb(s, a);
                l2sq += d * d;
            }
            const double rhs = std::sqrt(static_cast<double>(na)) / tau2 * std::sqrt(l2sq);
            worst_softmax = std::max(worst_softmax, l1 - rhs);
        }
    }
    rep.add("softmax_l1_sensitivity", worst_softmax, 0.0, 1e-9);

    // KL-to-L2 for epsilon-clipped policies: rho1-weighted squared log-ratio
    // against (2/eps) times the state-weighted KL of behavior vs estimate.
    const double eps = 1e-2;
    const SFn rho1_s = state_marginal(rho1);
    double worst_kl = 0.0;
    for (int k = 0; k < trials; ++k) {
        Policy b(ns, na, 0.0), p(ns, na, 0.0);
        for (int s = 0; s < ns; ++s) {
            double zb = 0.0, zp = 0.0;
            for (int a = 0; a < na; ++a) {
                b(s, a) = eps + rng.uniform();
                p(s, a) = eps + rng.uniform();
                zb += b(s, a);
                zp += p(s, a);
            }
            for (int a = 0; a < na; ++a) {
                b(s, a) /= zb;
                p(s, a) /= zp;
            }
        }
        double min_p = 1.0;
        for (double v : p.probs) min_p = std::min(min_p, v);
        double lhs = 0.0, kl = 0.0;
        for (int s = 0; s < ns; ++s) {
            double kls = 0.0;
            for (int a = 0; a < na; ++a) {
                const double lr = std::log(b(s, a) / p(s, a));
                lhs += rho1_s(s) * b(s, a) * lr * lr;
                kls += b(s, a) * lr;
            }
            kl += rho1_s(s) * kls;
        }
        worst_kl = std::max(worst_kl, lhs - (2.0 / min_p) * kl);
    }
    rep.add("kl_to_l2_conversion", worst_kl, 0.0, 1e-9);

    for (const auto& [name, m] : runs)
        rep.add("regret_conversion_" + name, m.regret, bc.c_pi * std::sqrt(m.q2_mse_rho2), 1e-9);
    return rep;
}

} // namespace rt
