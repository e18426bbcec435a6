#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "data_sim.hpp"
#include "linops.hpp"
#include "rng.hpp"
#include "soft_control.hpp"
#include "tables.hpp"
#include "transfer.hpp"

namespace rt {

struct OptimConfig {
    double lr_q = 1e-3;
    double lr_l = 1e-4;
    int dual_steps_per_round = 10;
    int primal_steps_per_round = 1;
    long source_rounds = 40000;
    long target_rounds = 70000;
    long joint_rounds = 40000;
    double beta = 100.0;
    double init_noise_sd = 1.5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    long checkpoint_interval = 1000;
    std::uint64_t seed = 0;
    bool warm_start_duals = false; // Coupled-Offset: reuse Modular's duals

    void validate() const {
        detail::require(lr_q >= 0.0 && lr_l >= 0.0, "OptimConfig: rates must be nonnegative");
        detail::require(dual_steps_per_round >= primal_steps_per_round,
                        "OptimConfig: dual:primal step ratio must be >= 1");
        detail::require(init_noise_sd >= 0.0 && beta >= 0.0, "OptimConfig: bad beta or noise sd");
    }
};

struct SaddleVars {
    SAFn q1, l1, q2, l2;
};

struct TracePoint {
    long round = 0;
    double objective = 0.0;
    double b1_norm = 0.0; // rho1-weighted L2 norm of the empirical source residual
    double b2_norm = 0.0;
};

struct EstimatorOutput {
    SAFn q1_hat;
    SAFn r_hat;
    double C_used = 0.0;
    SAFn q2_hat;
    Policy pi2_hat;
    SAFn l1_hat, l2_hat;
    std::vector<TracePoint> trace;
};

// Everything the empirical saddle objective needs: the source signal, anchor,
// shift, target soft spec, and the two empirical models.
struct SaddleProblem {
    SAFn u_g;
    Policy mu;
    SFn g;
    double C = 0.0;
    SoftSpec spec2;
    EmpiricalModel src;
    EmpiricalModel tgt;
};

// --- per-sample objective values (App-level definitions; the training path
// --- aggregates them exactly through the empirical model) ---

inline double sample_source_objective(const SAFn& q1, const SAFn& l1, const Transition& t,
                                      const SAFn& u_g, const Policy& mu, double gamma1,
                                      double beta) {
    double mu_q_next = 0.0;
    for (int a = 0; a < q1.n_actions; ++a) mu_q_next += mu(t.sp, a) * q1(t.sp, a);
    const double resid = u_g(t.s, t.a) + gamma1 * mu_q_next - q1(t.s, t.a);
    return 0.5 * beta * q1(t.s, t.a) * q1(t.s, t.a) + l1(t.s, t.a) * resid;
}

inline double sample_target_objective(const SAFn& q1, const SAFn& q2, const SAFn& l2,
                                      const Transition& t, const Policy& mu, const SFn& g,
                                      double C, const SoftSpec& spec2) {
    double mu_q1 = 0.0;
    for (int a = 0; a < q1.n_actions; ++a) mu_q1 += mu(t.s, a) * q1(t.s, a);
    const SFn om = omega(q2, spec2); // evaluated at the sampled next state below
    const double resid =
        (q1(t.s, t.a) - mu_q1) + g(t.s) + C + spec2.gamma * om(t.sp) - q2(t.s, t.a);
    return 0.5 * q2(t.s, t.a) * q2(t.s, t.a) + l2(t.s, t.a) * resid;
}

namespace detail {

// b1_hat = u_g + gamma1 Phat1^mu q1 - q1 (rows off the visited mask carry
// zero weight and are ignored by every objective term)
inline SAFn empirical_source_residual(const SaddleProblem& sp, const SAFn& q1, double gamma1) {
    SAFn pq = compose_policy_kernel(sp.src.P_hat, sp.mu, q1);
    SAFn b = sp.u_g;
    for (std::size_t i = 0; i < b.values.size(); ++i)
        b.values[i] += gamma1 * pq.values[i] - q1.values[i];
    return b;
}

inline SAFn empirical_target_residual(const SaddleProblem& sp, const SAFn& q1, const SAFn& q2) {
    SAFn b = center_by_anchor(q1, sp.mu);
    SAFn pom = kernel_apply(sp.tgt.P_hat, omega(q2, sp.spec2));
    for (int s = 0; s < b.n_states; ++s)
        for (int a = 0; a < b.n_actions; ++a)
            b(s, a) += sp.g(s) + sp.C + sp.spec2.gamma * pom(s, a) - q2(s, a);
    return b;
}

struct Adam {
    SAFn m, v;
    long t = 0;
    explicit Adam(int ns, int na) : m(ns, na), v(ns, na) {}

    void step(SAFn& x, const SAFn& grad, double lr, double sign, const OptimConfig& cfg,
              const std::vector<char>& mask) {
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < x.values.size(); ++i) {
            if (!mask[i]) continue;
            const double gi = grad.values[i];
            m.values[i] = cfg.adam_beta1 * m.values[i] + (1.0 - cfg.adam_beta1) * gi;
            v.values[i] = cfg.adam_beta2 * v.values[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            const double mhat = m.values[i] / bc1;
            const double vhat = v.values[i] / bc2;
            x.values[i] += sign * lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
};

// (Phat^T y) aggregated to states: out(t) = sum_{s,a} y(s,a) Phat(t|s,a)
inline SFn kernel_transpose_apply(const Kernel& P, const SAFn& y) {
    SFn out(P.n_states);
    for (int s = 0; s < P.n_states; ++s)
        for (int a = 0; a < P.n_actions; ++a) {
            const double ysa = y(s, a);
            if (ysa == 0.0) continue;
            for (int sp = 0; sp < P.n_states; ++sp) out(sp) += ysa * P(s, a, sp);
        }
    return out;
}

} // namespace detail

// Assembled empirical Lagrangian; equals the dataset average of the
// per-sample objectives (exactly, because both are linear in the empirical
// next-state frequencies).
inline double empirical_lagrangian(const SaddleProblem& sp, const SaddleVars& v, double gamma1,
                                   double quad1) {
    SAFn b1 = detail::empirical_source_residual(sp, v.q1, gamma1);
    SAFn b2 = detail::empirical_target_residual(sp, v.q1, v.q2);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.q1.values.size(); ++i) {
        acc += sp.src.rho_hat.weights[i] *
               (0.5 * quad1 * v.q1.values[i] * v.q1.values[i] + v.l1.values[i] * b1.values[i]);
        acc += sp.tgt.rho_hat.weights[i] *
               (0.5 * v.q2.values[i] * v.q2.values[i] + v.l2.values[i] * b2.values[i]);
    }
    return acc;
}

// Which blocks a training stage updates.
struct TrainMask {
    bool source = true; // q1, l1
    bool target = true; // q2, l2
};

// Primal-dual Adam loop: per round, dual ascent steps on (l1,l2) then primal
// descent steps on (q1,q2). Gradients are analytic and restricted to visited
// state-action pairs. Deterministic given (vars, cfg).
inline std::vector<TracePoint> saddle_optimize(const SaddleProblem& sp, SaddleVars& v,
                                               double gamma1, double quad1, long rounds,
                                               const OptimConfig& cfg, TrainMask mask = {}) {
    cfg.validate();
    const int ns = v.q1.n_states, na = v.q1.n_actions;
    bool any_src = false, any_tgt = false;
    for (char c : sp.src.visited) any_src |= (c != 0);
    for (char c : sp.tgt.visited) any_tgt |= (c != 0);
    detail::require(any_src && any_tgt, "saddle_optimize: empty visited mask");

    detail::Adam adam_q1(ns, na), adam_l1(ns, na), adam_q2(ns, na), adam_l2(ns, na);
    std::vector<TracePoint> trace;

    for (long round = 0; round < rounds; ++round) {
        // dual ascent: residuals depend only on the (fixed) primal tables
        SAFn b1 = detail::empirical_source_residual(sp, v.q1, gamma1);
        SAFn b2 = detail::empirical_target_residual(sp, v.q1, v.q2);
        SAFn g_l1(ns, na), g_l2(ns, na);
        for (std::size_t i = 0; i < g_l1.values.size(); ++i) {
            g_l1.values[i] = sp.src.rho_hat.weights[i] * b1.values[i];
            g_l2.values[i] = sp.tgt.rho_hat.weights[i] * b2.values[i];
        }
        for (int k = 0; k < cfg.dual_steps_per_round; ++k) {
            if (mask.source) adam_l1.step(v.l1, g_l1, cfg.lr_l, +1.0, cfg, sp.src.visited);
            if (mask.target) adam_l2.step(v.l2, g_l2, cfg.lr_l, +1.0, cfg, sp.tgt.visited);
        }

        for (int k = 0; k < cfg.primal_steps_per_round; ++k) {
            SAFn y1(ns, na), y2(ns, na);
            for (std::size_t i = 0; i < y1.values.size(); ++i) {
                y1.values[i] = sp.src.rho_hat.weights[i] * v.l1.values[i];
                y2.values[i] = sp.tgt.rho_hat.weights[i] * v.l2.values[i];
            }
            if (mask.source) {
                SFn back1 = detail::kernel_transpose_apply(sp.src.P_hat, y1);
                SAFn g_q1(ns, na);
                for (int s = 0; s < ns; ++s) {
                    double y2row = 0.0;
                    for (int a = 0; a < na; ++a) y2row += y2(s, a);
                    for (int a = 0; a < na; ++a) {
                        double g = quad1 * sp.src.rho_hat(s, a) * v.q1(s, a);
                        g += gamma1 * sp.mu(s, a) * back1(s) - y1(s, a);
                        if (mask.target) g += y2(s, a) - sp.mu(s, a) * y2row;
                        g_q1(s, a) = g;
                    }
                }
                adam_q1.step(v.q1, g_q1, cfg.lr_q, -1.0, cfg, sp.src.visited);
            }
            if (mask.target) {
                SFn back2 = detail::kernel_transpose_apply(sp.tgt.P_hat, y2);
                Policy pi_q2 = softmax_policy(v.q2, sp.spec2);
                SAFn g_q2(ns, na);
                for (int s = 0; s < ns; ++s)
                    for (int a = 0; a < na; ++a)
                        g_q2(s, a) = sp.tgt.rho_hat(s, a) * v.q2(s, a) +
                                     sp.spec2.gamma * pi_q2(s, a) * back2(s) - y2(s, a);
                adam_q2.step(v.q2, g_q2, cfg.lr_q, -1.0, cfg, sp.tgt.visited);
            }
        }

        if ((round + 1) % cfg.checkpoint_interval == 0 || round + 1 == rounds) {
            for (const SAFn* tbl : {&v.q1, &v.l1, &v.q2, &v.l2})
                if (!tbl->all_finite())
                    throw std::runtime_error("saddle_optimize: divergence at round " +
                                             std::to_string(round + 1));
            SAFn b1c = detail::empirical_source_residual(sp, v.q1, gamma1);
            SAFn b2c = detail::empirical_target_residual(sp, v.q1, v.q2);
            trace.push_back({round + 1, empirical_lagrangian(sp, v, gamma1, quad1),
                             std::sqrt(weighted_sq_norm(b1c, sp.src.rho_hat)),
                             std::sqrt(weighted_sq_norm(b2c, sp.tgt.rho_hat))});
        }
    }
    return trace;
}

namespace detail {

inline SAFn noise_table(int ns, int na, double sd, Rng rng) {
    SAFn t(ns, na);
    for (double& v : t.values) v = rng.normal(0.0, sd);
    return t;
}

inline SaddleProblem make_saddle_problem(const TransferProblem& pb, double C,
                                         const EmpiricalModel& src, const EmpiricalModel& tgt) {
    SaddleProblem sp;
    sp.u_g = source_signal(pb.source.pi_b1, pb.source.pi_ref1, pb.anchor.g);
    sp.mu = pb.anchor.mu;
    sp.g = pb.anchor.g;
    sp.C = C;
    sp.spec2 = pb.target.spec2;
    sp.src = src;
    sp.tgt = tgt;
    return sp;
}

inline EstimatorOutput finalize(const TransferProblem& pb, double C, const SaddleVars& v,
                                std::vector<TracePoint> trace) {
    EstimatorOutput out;
    out.q1_hat = v.q1;
    out.r_hat = recover_reward(v.q1, pb.anchor);
    out.C_used = C;
    out.q2_hat = v.q2;
    out.pi2_hat = softmax_policy(v.q2, pb.target.spec2);
    out.l1_hat = v.l1;
    out.l2_hat = v.l2;
    out.trace = std::move(trace);
    return out;
}

} // namespace detail

// Two-stage plug-in: fit (q1,l1) on the source block with unit quadratic
// weight, freeze q1, then fit (q2,l2) on the target block.
inline EstimatorOutput fit_modular(const EmpiricalModel& src, const EmpiricalModel& tgt,
                                   const TransferProblem& pb, double C, const OptimConfig& cfg) {
    SaddleProblem sp = detail::make_saddle_problem(pb, C, src, tgt);
    const int ns = pb.source.P1.n_states, na = pb.source.P1.n_actions;
    Rng root(cfg.seed);
    SaddleVars v;
    v.q1 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(1));
    v.l1 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(2));
    v.q2 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(3));
    v.l2 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(4));

    auto tr1 = saddle_optimize(sp, v, pb.source.gamma1, 1.0, cfg.source_rounds, cfg,
                               {.source = true, .target = false});
    auto tr2 = saddle_optimize(sp, v, pb.source.gamma1, 1.0, cfg.target_rounds, cfg,
                               {.source = false, .target = true});
    tr1.insert(tr1.end(), tr2.begin(), tr2.end());
    return detail::finalize(pb, C, v, std::move(tr1));
}

// Single joint saddle over (q1,q2,l1,l2) with source quadratic weight beta.
inline EstimatorOutput fit_coupled(const EmpiricalModel& src, const EmpiricalModel& tgt,
                                   const TransferProblem& pb, double C, const OptimConfig& cfg) {
    SaddleProblem sp = detail::make_saddle_problem(pb, C, src, tgt);
    const int ns = pb.source.P1.n_states, na = pb.source.P1.n_actions;
    Rng root(cfg.seed);
    SaddleVars v;
    v.q1 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(1));
    v.l1 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(2));
    v.q2 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(3));
    v.l2 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(4));
    auto tr = saddle_optimize(sp, v, pb.source.gamma1, cfg.beta, cfg.joint_rounds, cfg);
    return detail::finalize(pb, C, v, std::move(tr));
}

// Modular first, then a joint correction initialized exactly at the modular
// solution (zero offsets); duals freshly re-initialized unless warm-started.
inline EstimatorOutput fit_coupled_offset(const EmpiricalModel& src, const EmpiricalModel& tgt,
                                          const TransferProblem& pb, double C,
                                          const OptimConfig& cfg) {
    EstimatorOutput mod = fit_modular(src, tgt, pb, C, cfg);
    if (cfg.joint_rounds == 0) return mod;
    SaddleProblem sp = detail::make_saddle_problem(pb, C, src, tgt);
    const int ns = pb.source.P1.n_states, na = pb.source.P1.n_actions;
    Rng root(cfg.seed);
    SaddleVars v;
    v.q1 = mod.q1_hat;
    v.q2 = mod.q2_hat;
    if (cfg.warm_start_duals) {
        v.l1 = mod.l1_hat;
        v.l2 = mod.l2_hat;
    } else {
        v.l1 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(5));
        v.l2 = detail::noise_table(ns, na, cfg.init_noise_sd, root.stream(6));
    }
    auto tr = saddle_optimize(sp, v, pb.source.gamma1, cfg.beta, cfg.joint_rounds, cfg);
    auto trace = std::move(mod.trace);
    trace.insert(trace.end(), tr.begin(), tr.end());
    return detail::finalize(pb, C, v, std::move(trace));
}

// --- serialization ---

inline Json to_json(const EstimatorOutput& out) {
    Json j;
    j["q1_hat"] = out.q1_hat.values;
    j["r_hat"] = out.r_hat.values;
    j["C_used"] = out.C_used;
    j["q2_hat"] = out.q2_hat.values;
    j["pi2_hat"] = to_json(out.pi2_hat);
    j["l1_hat"] = out.l1_hat.values;
    j["l2_hat"] = out.l2_hat.values;
    return j;
}

inline void save_trace_csv(const std::vector<TracePoint>& trace, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "save_trace_csv: cannot open " + path);
    out << "round,objective,b1_norm,b2_norm\n";
    out.precision(17);
    for (const TracePoint& t : trace)
        out << t.round << ',' << t.objective << ',' << t.b1_norm << ',' << t.b2_norm << "\n";
}

} // namespace rt
