#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "data_sim.hpp"
#include "diagnostics.hpp"
#include "envgen.hpp"
#include "estimators.hpp"
#include "transfer.hpp"

namespace rt {

struct ExperimentConfig {
    EnvConfig env;                 // [env] section
    std::string shift = "mild";    // mild | large | custom
    double shift_tv_custom = 0.0;  // average-TV target when shift = custom
    double gamma_b = 0.95;         // expert construction discount
    double tau_b = 0.0;            // 0 means calibrate to the target concentration
    double expert_top_prob = 0.844;
    double gamma1 = 0.95;
    double gamma2 = 0.975;
    std::vector<double> tau2_list = {0.05, 0.2, 0.4};
    std::vector<double> d1_fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
    long d1_reference_episodes = 12500;
    long d2_episodes = 25000;
    int horizon = 20;
    double eps2 = 0.2;      // target logging mixture weight on uniform
    double eps_clip = 1e-3; // behavior-policy estimation floor
    std::vector<std::string> methods = {"modular", "coupled", "coupled_offset"};
    OptimConfig optim;
    int n_dataset_draws = 10;
    int n_opt_seeds = 10;
    std::string out_dir = "out";
    std::uint64_t root_seed = 0;
    int n_threads = 0; // 0 means hardware concurrency

    void validate() const {
        env.validate();
        detail::require(shift == "mild" || shift == "large" || shift == "custom",
                        "ExperimentConfig: shift must be mild, large, or custom");
        detail::require(shift != "custom" || (shift_tv_custom > 0.0 && shift_tv_custom < 1.0),
                        "ExperimentConfig: custom shift needs shift_tv_custom in (0,1)");
        detail::require(gamma1 >= 0.0 && gamma1 < 1.0 && gamma2 >= 0.0 && gamma2 < 1.0,
                        "ExperimentConfig: discounts must be in [0,1)");
        detail::require(gamma_b >= 0.0 && gamma_b < 1.0 && tau_b >= 0.0,
                        "ExperimentConfig: bad expert parameters");
        detail::require(!tau2_list.empty() && !d1_fractions.empty() && !methods.empty(),
                        "ExperimentConfig: tau2_list, d1_fractions, methods must be nonempty");
        for (double t : tau2_list)
            detail::require(t > 0.0, "ExperimentConfig: tau2 values must be positive");
        for (double f : d1_fractions)
            detail::require(f > 0.0 && f <= 1.0, "ExperimentConfig: fractions must be in (0,1]");
        detail::require(d1_reference_episodes >= 1 && d2_episodes >= 1 && horizon >= 1,
                        "ExperimentConfig: episode counts and horizon must be >= 1");
        detail::require(eps2 >= 0.0 && eps2 <= 1.0, "ExperimentConfig: eps2 must be in [0,1]");
        detail::require(eps_clip > 0.0 && eps_clip <= 1.0 / env.n_actions,
                        "ExperimentConfig: eps_clip must be in (0, 1/n_actions]");
        for (const std::string& m : methods)
            detail::require(m == "modular" || m == "coupled" || m == "coupled_offset",
                            "ExperimentConfig: unknown method " + m);
        detail::require(n_dataset_draws >= 1 && n_opt_seeds >= 1,
                        "ExperimentConfig: draws and seeds must be >= 1");
        optim.validate();
    }
};

// Reduced-scale profile for interactive runs and the acceptance suite; the
// struct defaults are the full-scale protocol.
inline void apply_profile(ExperimentConfig& cfg, const std::string& profile) {
    if (profile == "paper") return; // struct defaults
    detail::require(profile == "desk", "apply_profile: profile must be desk or paper");
    cfg.env.n_states = 32;
    cfg.env.n_actions = 4;
    cfg.env.support_degree = 4;
    cfg.d1_reference_episodes = 2500;
    cfg.d2_episodes = 5000;
    cfg.n_dataset_draws = 5;
    cfg.n_opt_seeds = 2;
    cfg.tau2_list = {0.05};
    cfg.d1_fractions = {0.2, 0.6, 1.0};
    // A softer expert keeps the log-ratio reward scale small, and milder
    // discounts keep the value scale (and the dual variables' scale, which
    // grows roughly quadratically in 1/(1-gamma)) traversable within the
    // reduced schedules.
    cfg.expert_top_prob = 0.6;
    cfg.gamma1 = 0.8;
    cfg.gamma2 = 0.8;
    // Keep the primal step small (Adam's final-iterate jitter scales with
    // lr_q and is amplified through the two-stage pipeline), raise the dual
    // step so the multipliers can traverse their larger scale, and extend
    // the schedules to compensate.
    cfg.optim.lr_q = 1e-3;
    cfg.optim.lr_l = 1e-2;
    cfg.optim.source_rounds = 60000;
    cfg.optim.target_rounds = 240000;
    cfg.optim.joint_rounds = 240000;
}

// --- config file: "key = value" lines with [env] / [optim] sections ---

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<double> parse_double_list(const std::string& s, const std::string& key) {
    std::vector<double> out;
    for (const std::string& item : split_list(s)) {
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw std::invalid_argument("config: bad number '" + item + "' for " + key);
        }
    }
    return out;
}

inline double parse_double(const std::string& s, const std::string& key) {
    try {
        return std::stod(s);
    } catch (...) {
        throw std::invalid_argument("config: bad number '" + s + "' for " + key);
    }
}

inline long parse_long(const std::string& s, const std::string& key) {
    try {
        return std::stol(s);
    } catch (...) {
        throw std::invalid_argument("config: bad integer '" + s + "' for " + key);
    }
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("config: bad bool '" + s + "' for " + key);
}

inline void apply_config_key(ExperimentConfig& cfg, const std::string& section,
                             const std::string& key, const std::string& value) {
    if (section.empty()) {
        if (key == "shift") cfg.shift = value;
        else if (key == "shift_tv_custom") cfg.shift_tv_custom = parse_double(value, key);
        else if (key == "gamma_b") cfg.gamma_b = parse_double(value, key);
        else if (key == "tau_b") cfg.tau_b = parse_double(value, key);
        else if (key == "expert_top_prob") cfg.expert_top_prob = parse_double(value, key);
        else if (key == "gamma1") cfg.gamma1 = parse_double(value, key);
        else if (key == "gamma2") cfg.gamma2 = parse_double(value, key);
        else if (key == "tau2_list") cfg.tau2_list = parse_double_list(value, key);
        else if (key == "d1_fractions") cfg.d1_fractions = parse_double_list(value, key);
        else if (key == "d1_reference_episodes")
            cfg.d1_reference_episodes = parse_long(value, key);
        else if (key == "d2_episodes") cfg.d2_episodes = parse_long(value, key);
        else if (key == "horizon") cfg.horizon = static_cast<int>(parse_long(value, key));
        else if (key == "eps2") cfg.eps2 = parse_double(value, key);
        else if (key == "eps_clip") cfg.eps_clip = parse_double(value, key);
        else if (key == "methods") cfg.methods = split_list(value);
        else if (key == "n_dataset_draws")
            cfg.n_dataset_draws = static_cast<int>(parse_long(value, key));
        else if (key == "n_opt_seeds") cfg.n_opt_seeds = static_cast<int>(parse_long(value, key));
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "root_seed")
            cfg.root_seed = static_cast<std::uint64_t>(std::stoull(value));
        else if (key == "n_threads") cfg.n_threads = static_cast<int>(parse_long(value, key));
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    } else if (section == "env") {
        if (key == "n_states") cfg.env.n_states = static_cast<int>(parse_long(value, key));
        else if (key == "n_actions") cfg.env.n_actions = static_cast<int>(parse_long(value, key));
        else if (key == "support_degree")
            cfg.env.support_degree = static_cast<int>(parse_long(value, key));
        else if (key == "shift_magnitude") cfg.env.shift_magnitude = parse_double(value, key);
        else if (key == "seed") cfg.env.seed = static_cast<std::uint64_t>(std::stoull(value));
        else if (key == "n_start_states")
            cfg.env.n_start_states = static_cast<int>(parse_long(value, key));
        else throw std::invalid_argument("config: unknown key 'env." + key + "'");
    } else if (section == "optim") {
        if (key == "lr_q") cfg.optim.lr_q = parse_double(value, key);
        else if (key == "lr_l") cfg.optim.lr_l = parse_double(value, key);
        else if (key == "dual_steps_per_round")
            cfg.optim.dual_steps_per_round = static_cast<int>(parse_long(value, key));
        else if (key == "primal_steps_per_round")
            cfg.optim.primal_steps_per_round = static_cast<int>(parse_long(value, key));
        else if (key == "source_rounds") cfg.optim.source_rounds = parse_long(value, key);
        else if (key == "target_rounds") cfg.optim.target_rounds = parse_long(value, key);
        else if (key == "joint_rounds") cfg.optim.joint_rounds = parse_long(value, key);
        else if (key == "beta") cfg.optim.beta = parse_double(value, key);
        else if (key == "init_noise_sd") cfg.optim.init_noise_sd = parse_double(value, key);
        else if (key == "adam_beta1") cfg.optim.adam_beta1 = parse_double(value, key);
        else if (key == "adam_beta2") cfg.optim.adam_beta2 = parse_double(value, key);
        else if (key == "adam_eps") cfg.optim.adam_eps = parse_double(value, key);
        else if (key == "checkpoint_interval")
            cfg.optim.checkpoint_interval = parse_long(value, key);
        else if (key == "warm_start_duals") cfg.optim.warm_start_duals = parse_bool(value, key);
        else throw std::invalid_argument("config: unknown key 'optim." + key + "'");
    } else {
        throw std::invalid_argument("config: unknown section [" + section + "]");
    }
}

} // namespace detail

// Parses on top of `base`, so keys absent from the file keep the base (e.g.
// profile-adjusted) values.
inline ExperimentConfig parse_experiment_config(std::istream& in, ExperimentConfig base = {}) {
    ExperimentConfig cfg = std::move(base);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        detail::require(eq != std::string::npos,
                        "config: line " + std::to_string(line_no) + " is not 'key = value'");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        detail::apply_config_key(cfg, section, key, value);
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path,
                                               ExperimentConfig base = {}) {
    std::ifstream in(path);
    detail::require(in.good(), "load_experiment_config: cannot open " + path);
    return parse_experiment_config(in, std::move(base));
}

// --- instance construction ---

// One fully specified transfer instance: generated environments, expert and
// logging policies, the true problem with its oracle solution, and the
// population evaluation weights of the logging setup.
struct Instance {
    GeneratedEnv gen;
    Kernel P2;
    double shift_magnitude = 0.0;
    double tau_b_used = 0.0;
    SFn R;              // next-state outcome reward
    SFn rho0;           // initial state distribution (uniform on start states)
    Policy pi_b1;       // source logging = expert policy
    Policy pi_b2;       // target logging = eps2-mixture of the expert
    TransferProblem problem;
    OracleSolution oracle;
    SADist rho1, rho2;  // population discounted visitations of the loggers
};

// Temperature for the expert construction calibrated so the mean top-action
// probability matches the requested concentration (bisection; the map is
// monotone decreasing in tau).
inline double calibrate_expert_temperature(const Kernel& P1, const SFn& R, double gamma_b,
                                           double target_top_prob) {
    detail::require(target_top_prob > 1.0 / P1.n_actions && target_top_prob < 1.0,
                    "calibrate_expert_temperature: target out of range");
    auto top_prob = [&](double tau) {
        Policy pi = build_expert_policy(P1, R, gamma_b, tau);
        double acc = 0.0;
        for (int s = 0; s < pi.n_states; ++s) {
            double mx = 0.0;
            for (int a = 0; a < pi.n_actions; ++a) mx = std::max(mx, pi(s, a));
            acc += mx;
        }
        return acc / pi.n_states;
    };
    double lo = 1e-4, hi = 1.0;
    while (top_prob(hi) > target_top_prob && hi < 1e4) hi *= 2.0;
    for (int it = 0; it < 50; ++it) {
        const double mid = std::sqrt(lo * hi); // geometric bisection on scale
        if (top_prob(mid) > target_top_prob)
            lo = mid;
        else
            hi = mid;
    }
    return std::sqrt(lo * hi);
}

inline SADist joint_from_state_dist(const SFn& rho_s, const Policy& pi) {
    SADist out(pi.n_states, pi.n_actions);
    for (int s = 0; s < pi.n_states; ++s)
        for (int a = 0; a < pi.n_actions; ++a) out(s, a) = rho_s(s) * pi(s, a);
    return out;
}

inline Instance build_instance(const ExperimentConfig& cfg, double tau2) {
    cfg.validate();
    detail::require(tau2 > 0.0, "build_instance: tau2 must be positive");
    Instance inst;
    inst.gen = generate_mdp(cfg.env);
    const Kernel& P1 = inst.gen.P1;
    const int ns = P1.n_states, na = P1.n_actions;

    double tv_target = 0.015;
    if (cfg.shift == "large") tv_target = 0.088;
    if (cfg.shift == "custom") tv_target = cfg.shift_tv_custom;
    inst.shift_magnitude = (cfg.env.shift_magnitude > 0.0)
                               ? cfg.env.shift_magnitude
                               : calibrate_shift_magnitude(P1, tv_target, cfg.env.seed);
    inst.P2 = perturb_kernel(P1, inst.shift_magnitude, cfg.env.seed);

    inst.R = outcome_reward(inst.gen.labels);
    inst.tau_b_used = (cfg.tau_b > 0.0)
                          ? cfg.tau_b
                          : calibrate_expert_temperature(P1, inst.R, cfg.gamma_b,
                                                         cfg.expert_top_prob);
    inst.pi_b1 = build_expert_policy(P1, inst.R, cfg.gamma_b, inst.tau_b_used);
    inst.pi_b2 = mixture_policy(inst.pi_b1, cfg.eps2);

    inst.rho0 = SFn(ns);
    for (int s : inst.gen.start_states) inst.rho0(s) = 1.0 / inst.gen.start_states.size();

    // Anchor: point mass on action 0, g = expected one-step outcome there.
    SAFn rbar = expected_outcome_reward(P1, inst.R);
    AnchorSpec anchor;
    anchor.mu = Policy::point_mass(ns, na, 0);
    anchor.g = SFn(ns);
    for (int s = 0; s < ns; ++s) anchor.g(s) = rbar(s, 0);

    inst.problem.source = {P1, cfg.gamma1, inst.pi_b1, Policy::uniform(ns, na)};
    inst.problem.target = {inst.P2, SoftSpec{cfg.gamma2, tau2, Policy::uniform(ns, na)}};
    inst.problem.anchor = anchor;
    inst.oracle = oracle_transfer(inst.problem);

    inst.rho1 = discounted_occupancy(P1, inst.pi_b1,
                                     joint_from_state_dist(inst.rho0, inst.pi_b1), cfg.gamma1);
    inst.rho2 = discounted_occupancy(inst.P2, inst.pi_b2,
                                     joint_from_state_dist(inst.rho0, inst.pi_b2), cfg.gamma2);
    return inst;
}

// --- grid execution ---

struct ResultRow {
    std::string method;
    double tau2 = 0.0;
    double d1_fraction = 0.0;
    int dataset_draw = 0;
    int opt_seed = 0;
    std::string status = "ok";
    MetricReport metrics;
    double runtime_sec = 0.0;
};

inline std::uint64_t derive_data_seed(std::uint64_t root, int draw) {
    return Rng::mix(Rng::mix(root, 0xDA7AULL), static_cast<std::uint64_t>(draw));
}

inline std::uint64_t derive_fit_seed(std::uint64_t root, int draw, int opt_seed) {
    return Rng::mix(derive_data_seed(root, draw), static_cast<std::uint64_t>(opt_seed));
}

inline EstimatorOutput fit_method(const std::string& method, const EmpiricalModel& src,
                                  const EmpiricalModel& tgt, const TransferProblem& pb, double C,
                                  const OptimConfig& cfg) {
    if (method == "modular") return fit_modular(src, tgt, pb, C, cfg);
    if (method == "coupled") return fit_coupled(src, tgt, pb, C, cfg);
    if (method == "coupled_offset") return fit_coupled_offset(src, tgt, pb, C, cfg);
    throw std::invalid_argument("fit_method: unknown method " + method);
}

// Full sweep: method x tau2 x fraction x draw x opt-seed. Datasets are shared
// across methods and tau2 within a (fraction, draw) cell; fraction f uses the
// first f x reference episodes, which under per-episode RNG streams is exactly
// a prefix of the reference dataset. Cell failures are recorded in the status
// column and the grid continues.
inline std::vector<ResultRow> run_grid(const ExperimentConfig& cfg) {
    cfg.validate();

    // Environments and datasets do not depend on tau2; oracles do.
    ExperimentConfig base = cfg;
    std::map<double, Instance> instances;
    for (double tau2 : cfg.tau2_list) instances.emplace(tau2, build_instance(base, tau2));
    const Instance& env0 = instances.begin()->second;

    struct CellData {
        EmpiricalModel src;
        Policy pi_b1_hat;
    };
    // (draw, fraction index) -> source model; draw -> target model
    std::vector<EmpiricalModel> tgt_models(cfg.n_dataset_draws);
    std::vector<std::vector<CellData>> src_models(
        cfg.n_dataset_draws, std::vector<CellData>(cfg.d1_fractions.size()));
    for (int draw = 0; draw < cfg.n_dataset_draws; ++draw) {
        const std::uint64_t dseed = derive_data_seed(cfg.root_seed, draw);
        TransitionDataset d2 = rollout(env0.P2, env0.pi_b2, env0.rho0, cfg.horizon,
                                       static_cast<int>(cfg.d2_episodes), Rng::mix(dseed, 2));
        tgt_models[draw] = empirical_model(d2);
        for (std::size_t fi = 0; fi < cfg.d1_fractions.size(); ++fi) {
            const int episodes = std::max(
                1L, static_cast<long>(std::lround(cfg.d1_fractions[fi] *
                                                  static_cast<double>(cfg.d1_reference_episodes))));
            TransitionDataset d1 = rollout(env0.gen.P1, env0.pi_b1, env0.rho0, cfg.horizon,
                                           static_cast<int>(episodes), Rng::mix(dseed, 1));
            src_models[draw][fi].src = empirical_model(d1);
            src_models[draw][fi].pi_b1_hat = estimate_behavior_policy(d1, cfg.eps_clip);
        }
    }

    struct Job {
        std::string method;
        double tau2;
        std::size_t fi;
        int draw, opt_seed;
    };
    std::vector<Job> jobs;
    for (const std::string& method : cfg.methods)
        for (double tau2 : cfg.tau2_list)
            for (std::size_t fi = 0; fi < cfg.d1_fractions.size(); ++fi)
                for (int draw = 0; draw < cfg.n_dataset_draws; ++draw)
                    for (int os = 0; os < cfg.n_opt_seeds; ++os)
                        jobs.push_back({method, tau2, fi, draw, os});

    std::vector<ResultRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job& job = jobs[j];
            ResultRow& row = rows[j];
            row.method = job.method;
            row.tau2 = job.tau2;
            row.d1_fraction = cfg.d1_fractions[job.fi];
            row.dataset_draw = job.draw;
            row.opt_seed = job.opt_seed;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const Instance& inst = instances.at(job.tau2);
                const CellData& cell = src_models[job.draw][job.fi];
                TransferProblem est_pb = inst.problem;
                est_pb.source.pi_b1 = cell.pi_b1_hat;
                OptimConfig oc = cfg.optim;
                oc.seed = derive_fit_seed(cfg.root_seed, job.draw, job.opt_seed);
                EstimatorOutput out = fit_method(job.method, cell.src, tgt_models[job.draw],
                                                 est_pb, inst.oracle.C, oc);
                row.metrics = evaluate_output(out, inst.oracle, inst.problem, inst.rho1,
                                              inst.rho2);
            } catch (const std::exception& e) {
                std::string msg = e.what();
                for (char& c : msg)
                    if (c == ',' || c == '\n') c = ';';
                row.status = "error: " + msg;
            }
            row.runtime_sec =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    int threads = cfg.n_threads > 0 ? cfg.n_threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    return rows;
}

// results.csv carries only deterministic fields so reruns with the same root
// seed are byte-identical; wall-clock timings go to a separate file.
inline void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "write_results_csv: cannot open " + path);
    out.precision(17);
    out << "method,tau2,d1_fraction,dataset_draw,opt_seed,status,regret,q2_mse_rho2,"
           "v2_mse_unif,r_mse_rho1,q1_mse_rho1,v2_policy_weighted_term,v2_mismatch_term,"
           "anchor_action_q1_mse\n";
    for (const ResultRow& r : rows) {
        out << r.method << ',' << r.tau2 << ',' << r.d1_fraction << ',' << r.dataset_draw << ','
            << r.opt_seed << ',' << r.status;
        if (r.status == "ok") {
            const MetricReport& m = r.metrics;
            out << ',' << m.regret << ',' << m.q2_mse_rho2 << ',' << m.v2_mse_unif << ','
                << m.r_mse_rho1 << ',' << m.q1_mse_rho1 << ',' << m.v2_policy_weighted_term << ','
                << m.v2_mismatch_term << ',' << m.anchor_action_q1_mse;
        } else {
            out << ",,,,,,,,";
        }
        out << "\n";
    }
}

inline void write_timings_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "write_timings_csv: cannot open " + path);
    out << "method,tau2,d1_fraction,dataset_draw,opt_seed,runtime_sec\n";
    for (const ResultRow& r : rows)
        out << r.method << ',' << r.tau2 << ',' << r.d1_fraction << ',' << r.dataset_draw << ','
            << r.opt_seed << ',' << r.runtime_sec << "\n";
}

inline std::vector<ResultRow> load_results_csv(const std::string& path) {
    std::ifstream in(path);
    detail::require(in.good(), "load_results_csv: cannot open " + path);
    std::string line;
    std::getline(in, line); // header
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        while (f.size() < 14) f.push_back("");
        ResultRow r;
        r.method = f[0];
        r.tau2 = std::stod(f[1]);
        r.d1_fraction = std::stod(f[2]);
        r.dataset_draw = std::stoi(f[3]);
        r.opt_seed = std::stoi(f[4]);
        r.status = f[5];
        if (r.status == "ok") {
            r.metrics.regret = std::stod(f[6]);
            r.metrics.q2_mse_rho2 = std::stod(f[7]);
            r.metrics.v2_mse_unif = std::stod(f[8]);
            r.metrics.r_mse_rho1 = std::stod(f[9]);
            r.metrics.q1_mse_rho1 = std::stod(f[10]);
            r.metrics.v2_policy_weighted_term = std::stod(f[11]);
            r.metrics.v2_mismatch_term = std::stod(f[12]);
            r.metrics.anchor_action_q1_mse = std::stod(f[13]);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// --- summaries ---

struct SummaryRow {
    std::string method;
    double tau2 = 0.0;
    double d1_fraction = 0.0;
    int n = 0;
    double q2_mse_mean = 0.0, q2_mse_sd = 0.0;
    double v2_mse_mean = 0.0, v2_mse_sd = 0.0;
    double regret_mean = 0.0, regret_sd = 0.0;
    double q2_mse_improvement_pct = 0.0; // (Modular - method)/Modular x 100
    double v2_mse_improvement_pct = 0.0;
};

inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    detail::require(!rows.empty(), "summarize: no rows");
    struct Acc {
        int n = 0;
        double q2 = 0, q2sq = 0, v2 = 0, v2sq = 0, rg = 0, rgsq = 0;
    };
    std::map<std::tuple<std::string, double, double>, Acc> cells;
    for (const ResultRow& r : rows) {
        if (r.status != "ok") continue;
        Acc& a = cells[{r.method, r.tau2, r.d1_fraction}];
        ++a.n;
        a.q2 += r.metrics.q2_mse_rho2;
        a.q2sq += r.metrics.q2_mse_rho2 * r.metrics.q2_mse_rho2;
        a.v2 += r.metrics.v2_mse_unif;
        a.v2sq += r.metrics.v2_mse_unif * r.metrics.v2_mse_unif;
        a.rg += r.metrics.regret;
        a.rgsq += r.metrics.regret * r.metrics.regret;
    }
    detail::require(!cells.empty(), "summarize: no successful rows");
    auto sd = [](double sum, double sumsq, int n) {
        if (n < 2) return 0.0;
        const double mean = sum / n;
        return std::sqrt(std::max(0.0, (sumsq - n * mean * mean) / (n - 1)));
    };
    std::vector<SummaryRow> out;
    for (const auto& [key, a] : cells) {
        SummaryRow s;
        std::tie(s.method, s.tau2, s.d1_fraction) = key;
        s.n = a.n;
        s.q2_mse_mean = a.q2 / a.n;
        s.q2_mse_sd = sd(a.q2, a.q2sq, a.n);
        s.v2_mse_mean = a.v2 / a.n;
        s.v2_mse_sd = sd(a.v2, a.v2sq, a.n);
        s.regret_mean = a.rg / a.n;
        s.regret_sd = sd(a.rg, a.rgsq, a.n);
        out.push_back(std::move(s));
    }
    for (SummaryRow& s : out) {
        auto it = cells.find({"modular", s.tau2, s.d1_fraction});
        detail::require(it != cells.end(),
                        "summarize: missing modular baseline for improvement column");
        const double mq2 = it->second.q2 / it->second.n;
        const double mv2 = it->second.v2 / it->second.n;
        s.q2_mse_improvement_pct = (mq2 != 0.0) ? (mq2 - s.q2_mse_mean) / mq2 * 100.0 : 0.0;
        s.v2_mse_improvement_pct = (mv2 != 0.0) ? (mv2 - s.v2_mse_mean) / mv2 * 100.0 : 0.0;
    }
    return out;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "write_summary_csv: cannot open " + path);
    out.precision(17);
    out << "method,tau2,d1_fraction,n,q2_mse_mean,q2_mse_sd,v2_mse_mean,v2_mse_sd,"
           "regret_mean,regret_sd,q2_mse_improvement_pct,v2_mse_improvement_pct\n";
    for (const SummaryRow& s : rows)
        out << s.method << ',' << s.tau2 << ',' << s.d1_fraction << ',' << s.n << ','
            << s.q2_mse_mean << ',' << s.q2_mse_sd << ',' << s.v2_mse_mean << ',' << s.v2_mse_sd
            << ',' << s.regret_mean << ',' << s.regret_sd << ',' << s.q2_mse_improvement_pct
            << ',' << s.v2_mse_improvement_pct << "\n";
}

// Script-friendly per-fraction table (absolute metrics and percent
// improvement vs the modular baseline).
inline void write_plot_data_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "write_plot_data_csv: cannot open " + path);
    out.precision(17);
    out << "method,tau2,d1_fraction,q2_mse_mean,v2_mse_mean,q2_mse_improvement_pct,"
           "v2_mse_improvement_pct\n";
    for (const SummaryRow& s : rows)
        out << s.method << ',' << s.tau2 << ',' << s.d1_fraction << ',' << s.q2_mse_mean << ','
            << s.v2_mse_mean << ',' << s.q2_mse_improvement_pct << ','
            << s.v2_mse_improvement_pct << "\n";
}

// --- certification bundle ---

// Runs the identity/inequality certificate suite on the configured instance
// (first tau2) plus small randomized property instances.
inline CertificateReport certify(const ExperimentConfig& cfg) {
    cfg.validate();
    CertificateReport all;
    auto absorb = [&all](const CertificateReport& r, const std::string& prefix) {
        for (CertificateCheck c : r.checks) {
            c.name = prefix + "/" + c.name;
            all.checks.push_back(std::move(c));
        }
    };

    std::vector<ExperimentConfig> instances_cfg;
    {
        ExperimentConfig small = cfg;
        small.env.n_states = 4;
        small.env.n_actions = 2;
        small.env.support_degree = 2;
        instances_cfg.push_back(small);
        small.env.seed = cfg.env.seed + 1;
        small.env.n_states = 6;
        small.env.n_actions = 3;
        small.env.support_degree = 3;
        instances_cfg.push_back(small);
    }
    if (cfg.env.n_states <= 64) instances_cfg.push_back(cfg);

    int idx = 0;
    for (ExperimentConfig icfg : instances_cfg) {
        const std::string tag = "inst" + std::to_string(idx++);
        Instance inst = build_instance(icfg, icfg.tau2_list.front());
        // Small instances can draw an all-zero outcome labeling, which makes
        // every certificate vacuous; advance the seed until the reward has
        // both signs.
        for (int bump = 0; bump < 50; ++bump) {
            bool has_pos = false, has_neg = false;
            for (double v : inst.R.values) {
                has_pos |= v > 0.0;
                has_neg |= v < 0.0;
            }
            if (has_pos && has_neg) break;
            icfg.env.seed += 1;
            inst = build_instance(icfg, icfg.tau2_list.front());
        }
        const double beta = icfg.optim.beta;
        DualCertificates dc =
            dual_certificates(inst.problem, inst.oracle, beta, inst.rho1, inst.rho2);
        Rng rng(Rng::mix(icfg.root_seed, 0xCE47ULL));
        absorb(check_dual_certificates(inst.problem, inst.oracle, dc, beta, inst.rho1, inst.rho2,
                                       50, rng.stream(1)),
               tag);
        absorb(check_quadratic_growth(inst.problem, inst.oracle, dc, beta, inst.rho1, inst.rho2,
                                      100, rng.stream(2)),
               tag);
        BoundConstants bc = bound_constants(inst.problem, inst.oracle, dc);
        absorb(check_bounds(inst.problem, inst.oracle, bc, inst.rho1, inst.rho2, {}, 100,
                            rng.stream(3)),
               tag);

        // Lemma-style source error identity on random perturbed inputs.
        Rng prng = rng.stream(4);
        double worst = 0.0;
        for (int k = 0; k < 10; ++k) {
            Kernel P1_hat = perturb_kernel(inst.gen.P1, 0.2, prng.next_u64());
            SAFn q1_hat = inst.oracle.q1;
            for (double& v : q1_hat.values) v += prng.normal();
            worst = std::max(worst, source_error_identity_defect(inst.problem, P1_hat, q1_hat,
                                                                 inst.oracle.q1));
        }
        all.add(tag + "/source_error_identity", worst, 0.0, 1e-9);
    }
    return all;
}

inline Json to_json(const CertificateReport& rep) {
    Json arr = Json::array();
    for (const CertificateCheck& c : rep.checks)
        arr.push_back(Json{{"name", c.name},
                           {"lhs", c.lhs},
                           {"rhs", c.rhs},
                           {"tol", c.tol},
                           {"inequality", c.inequality},
                           {"pass", c.pass}});
    return Json{{"all_pass", rep.all_pass()}, {"checks", arr}};
}

inline Json to_json(const MetricReport& m) {
    return Json{{"regret", m.regret},
                {"q2_mse_rho2", m.q2_mse_rho2},
                {"v2_mse_unif", m.v2_mse_unif},
                {"r_mse_rho1", m.r_mse_rho1},
                {"q1_mse_rho1", m.q1_mse_rho1},
                {"v2_policy_weighted_term", m.v2_policy_weighted_term},
                {"v2_mismatch_term", m.v2_mismatch_term},
                {"anchor_action_q1_mse", m.anchor_action_q1_mse}};
}

// Environment snapshot for gen-env: the transfer problem plus labels, start
// states, and the realized shift statistics.
inline Json environment_snapshot(const Instance& inst) {
    Json j;
    j["problem"] = to_json(inst.problem);
    Json labels = Json::array();
    for (const StateLabel& l : inst.gen.labels)
        labels.push_back(Json{{"abnormal", l.abnormal}, {"discharge", l.discharge}});
    j["labels"] = labels;
    j["start_states"] = inst.gen.start_states;
    j["shift_magnitude"] = inst.shift_magnitude;
    auto [tv_avg, tv_max] = tv_shift_stats(inst.gen.P1, inst.P2);
    j["tv_avg"] = tv_avg;
    j["tv_max"] = tv_max;
    j["tau_b_used"] = inst.tau_b_used;
    return j;
}

} // namespace rt
