#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <vector>

#include "linops.hpp"
#include "rng.hpp"
#include "soft_control.hpp"
#include "tables.hpp"

namespace rt {

// Per-state outcome labels: abnormal-variable count and discharge flag.
struct StateLabel {
    int abnormal = 0;
    bool discharge = false;
};

struct EnvConfig {
    int n_states = 128;
    int n_actions = 8;
    int support_degree = 4;   // next states per (s,a)
    double shift_magnitude = 0.0;
    std::uint64_t seed = 0;
    int n_start_states = 0;   // 0 means all states are start states

    void validate() const {
        detail::require(n_states > 0 && n_actions > 0, "EnvConfig: dimensions must be positive");
        detail::require(support_degree >= 1 && support_degree <= n_states,
                        "EnvConfig: support_degree out of range");
        detail::require(shift_magnitude >= 0.0, "EnvConfig: shift_magnitude must be >= 0");
    }
};

struct GeneratedEnv {
    Kernel P1;
    std::vector<StateLabel> labels;
    std::vector<int> start_states;
};

namespace detail {

inline bool all_reachable(const Kernel& P, const std::vector<int>& start) {
    std::vector<char> seen(P.n_states, 0);
    std::queue<int> frontier;
    for (int s : start) {
        seen[s] = 1;
        frontier.push(s);
    }
    while (!frontier.empty()) {
        int s = frontier.front();
        frontier.pop();
        for (int a = 0; a < P.n_actions; ++a)
            for (int sp = 0; sp < P.n_states; ++sp)
                if (P(s, a, sp) > 0.0 && !seen[sp]) {
                    seen[sp] = 1;
                    frontier.push(sp);
                }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

} // namespace detail

// Structured random tabular MDP: each (s,a) row supported on support_degree
// states with Dirichlet(1)-style weights; retries until every state is
// reachable from the start set.
inline GeneratedEnv generate_mdp(const EnvConfig& cfg) {
    cfg.validate();
    const int ns = cfg.n_states, na = cfg.n_actions, deg = cfg.support_degree;
    GeneratedEnv env;
    env.start_states.clear();
    const int n_start = (cfg.n_start_states > 0) ? std::min(cfg.n_start_states, ns) : ns;
    for (int s = 0; s < n_start; ++s) env.start_states.push_back(s);

    const int retry_budget = 50;
    for (int attempt = 0; attempt < retry_budget; ++attempt) {
        Rng rng = Rng(cfg.seed).stream(0xE57ULL + attempt);
        Kernel P(ns, na);
        for (int s = 0; s < ns; ++s)
            for (int a = 0; a < na; ++a) {
                // sample support without replacement; always include a chain
                // successor so the state graph tends to be connected
                std::vector<int> support;
                support.push_back((s + 1) % ns);
                while (static_cast<int>(support.size()) < deg) {
                    int cand = rng.uniform_int(ns);
                    if (std::find(support.begin(), support.end(), cand) == support.end())
                        support.push_back(cand);
                }
                double z = 0.0;
                std::vector<double> w(support.size());
                for (std::size_t i = 0; i < support.size(); ++i) {
                    w[i] = -std::log(1.0 - rng.uniform()); // Exp(1) => Dirichlet(1) after norm
                    z += w[i];
                }
                for (std::size_t i = 0; i < support.size(); ++i) P(s, a, support[i]) = w[i] / z;
            }
        if (!detail::all_reachable(P, env.start_states)) continue;
        env.P1 = std::move(P);
        Rng lab = Rng(cfg.seed).stream(0x1ABE1ULL);
        env.labels.resize(ns);
        for (int s = 0; s < ns; ++s) {
            env.labels[s].abnormal = lab.uniform_int(5);
            env.labels[s].discharge = env.labels[s].abnormal == 0 && lab.uniform() < 0.5;
        }
        return env;
    }
    throw std::runtime_error("generate_mdp: reachability failed within retry budget");
}

// Support-preserving multiplicative perturbation: supported entries scaled by
// exp(magnitude * xi), xi ~ N(0,1), rows renormalized.
inline Kernel perturb_kernel(const Kernel& P1, double magnitude, std::uint64_t seed) {
    detail::require(magnitude >= 0.0 && magnitude < 1.0e3, "perturb_kernel: bad magnitude");
    if (magnitude == 0.0) return P1;
    Kernel P2 = P1;
    Rng rng = Rng(seed).stream(0x5117ULL);
    for (int s = 0; s < P1.n_states; ++s)
        for (int a = 0; a < P1.n_actions; ++a) {
            double z = 0.0;
            for (int sp = 0; sp < P1.n_states; ++sp) {
                if (P1(s, a, sp) <= 0.0) continue;
                P2(s, a, sp) = P1(s, a, sp) * std::exp(magnitude * rng.normal());
                z += P2(s, a, sp);
            }
            for (int sp = 0; sp < P1.n_states; ++sp)
                if (P1(s, a, sp) > 0.0) P2(s, a, sp) /= z;
        }
    return P2;
}

// Bisection on magnitude so the achieved average TV matches the target.
inline double calibrate_shift_magnitude(const Kernel& P1, double target_tv_avg,
                                        std::uint64_t seed) {
    detail::require(target_tv_avg >= 0.0 && target_tv_avg < 1.0,
                    "calibrate_shift_magnitude: target out of range");
    if (target_tv_avg == 0.0) return 0.0;
    double lo = 0.0, hi = 0.05;
    while (tv_shift_stats(P1, perturb_kernel(P1, hi, seed)).first < target_tv_avg && hi < 64.0)
        hi *= 2.0;
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (tv_shift_stats(P1, perturb_kernel(P1, mid, seed)).first < target_tv_avg)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Next-state outcome reward: +1 discharge, -1 for >= 2 abnormal variables,
// 0 otherwise.
inline SFn outcome_reward(const std::vector<StateLabel>& labels) {
    detail::require(!labels.empty(), "outcome_reward: labels missing");
    SFn R(static_cast<int>(labels.size()));
    for (std::size_t s = 0; s < labels.size(); ++s) {
        if (labels[s].discharge)
            R(static_cast<int>(s)) = 1.0;
        else if (labels[s].abnormal >= 2)
            R(static_cast<int>(s)) = -1.0;
        else
            R(static_cast<int>(s)) = 0.0;
    }
    return R;
}

// Expected one-step outcome reward under P.
inline SAFn expected_outcome_reward(const Kernel& P, const SFn& R) { return kernel_apply(P, R); }

// Expert-like behavior policy: soft Q-iteration on the expected outcome
// reward with a uniform reference, then the softmax policy. Full support by
// construction.
inline Policy build_expert_policy(const Kernel& P1, const SFn& R, double gamma_b, double tau_b,
                                  double tol = 1e-10) {
    detail::require(gamma_b >= 0.0 && gamma_b < 1.0 && tau_b > 0.0,
                    "build_expert_policy: need gamma_b in [0,1), tau_b > 0");
    SoftSpec spec{gamma_b, tau_b, Policy::uniform(P1.n_states, P1.n_actions)};
    SAFn rbar = expected_outcome_reward(P1, R);
    SAFn qb = soft_value_iteration(rbar, P1, spec, tol).q;
    return softmax_policy(qb, spec);
}

} // namespace rt
