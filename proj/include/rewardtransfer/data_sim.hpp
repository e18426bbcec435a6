#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tables.hpp"

namespace rt {

struct Transition {
    int s = 0;
    int a = 0;
    int sp = 0;
};

struct TransitionDataset {
    int n_states = 0;
    int n_actions = 0;
    int horizon = 0;
    int episodes = 0;
    std::uint64_t seed = 0;
    std::vector<Transition> samples;

    std::size_t size() const { return samples.size(); }
};

// Empirical transition model and state-action weights; unvisited rows are
// masked, never imputed.
struct EmpiricalModel {
    Kernel P_hat;
    SADist rho_hat;
    std::vector<long> counts;       // (s,a,s') visit counts
    std::vector<char> visited;      // (s,a) mask
    long total = 0;

    bool is_visited(int s, int a) const {
        return visited[static_cast<std::size_t>(s) * P_hat.n_actions + a] != 0;
    }
};

// Seeded episode rollouts; the RNG stream is derived per episode so episode
// order and parallel generation do not change the data.
inline TransitionDataset rollout(const Kernel& P, const Policy& pi, const SFn& rho0, int horizon,
                                 int episodes, std::uint64_t seed) {
    detail::require(horizon >= 1 && episodes >= 1, "rollout: horizon and episodes must be >= 1");
    detail::require(P.n_states == pi.n_states && P.n_actions == pi.n_actions &&
                        rho0.n_states == P.n_states,
                    "rollout: shape mismatch");
    TransitionDataset data;
    data.n_states = P.n_states;
    data.n_actions = P.n_actions;
    data.horizon = horizon;
    data.episodes = episodes;
    data.seed = seed;
    data.samples.reserve(static_cast<std::size_t>(horizon) * episodes);
    const Rng root(seed);
    for (int ep = 0; ep < episodes; ++ep) {
        Rng rng = root.stream(static_cast<std::uint64_t>(ep));
        int s = rng.categorical(rho0.values);
        for (int t = 0; t < horizon; ++t) {
            std::span<const double> pi_row(&pi.probs[static_cast<std::size_t>(s) * P.n_actions],
                                           static_cast<std::size_t>(P.n_actions));
            int a = rng.categorical(pi_row);
            std::span<const double> p_row(
                &P.probs[(static_cast<std::size_t>(s) * P.n_actions + a) * P.n_states],
                static_cast<std::size_t>(P.n_states));
            int sp = rng.categorical(p_row);
            data.samples.push_back({s, a, sp});
            s = sp;
        }
    }
    return data;
}

inline EmpiricalModel empirical_model(const TransitionDataset& data) {
    detail::require(!data.samples.empty(), "empirical_model: dataset is empty");
    const int ns = data.n_states, na = data.n_actions;
    EmpiricalModel m;
    m.P_hat = Kernel(ns, na);
    m.rho_hat = SADist(ns, na);
    m.counts.assign(static_cast<std::size_t>(ns) * na * ns, 0);
    m.visited.assign(static_cast<std::size_t>(ns) * na, 0);
    for (const Transition& t : data.samples) {
        m.counts[(static_cast<std::size_t>(t.s) * na + t.a) * ns + t.sp] += 1;
        m.visited[static_cast<std::size_t>(t.s) * na + t.a] = 1;
    }
    m.total = static_cast<long>(data.samples.size());
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            long row = 0;
            for (int sp = 0; sp < ns; ++sp)
                row += m.counts[(static_cast<std::size_t>(s) * na + a) * ns + sp];
            if (row == 0) continue;
            m.rho_hat(s, a) = static_cast<double>(row) / static_cast<double>(m.total);
            for (int sp = 0; sp < ns; ++sp)
                m.P_hat(s, a, sp) =
                    static_cast<double>(m.counts[(static_cast<std::size_t>(s) * na + a) * ns + sp]) /
                    static_cast<double>(row);
        }
    return m;
}

// Population ("infinite data") analogue: weights rho, rows from P, all pairs
// with positive rho marked visited.
inline EmpiricalModel population_model(const Kernel& P, const SADist& rho) {
    EmpiricalModel m;
    m.P_hat = P;
    m.rho_hat = rho;
    m.counts.assign(P.probs.size(), 0);
    m.visited.assign(rho.weights.size(), 0);
    for (std::size_t i = 0; i < rho.weights.size(); ++i)
        if (rho.weights[i] > 0.0) m.visited[i] = 1;
    m.total = 0;
    return m;
}

// Row-stochastic completion of P_hat: unvisited rows are taken from the
// fallback kernel so resolvents are well defined.
inline Kernel completed_kernel(const EmpiricalModel& m, const Kernel& fallback) {
    detail::require(m.P_hat.same_shape(fallback), "completed_kernel: shape mismatch");
    Kernel out = m.P_hat;
    for (int s = 0; s < out.n_states; ++s)
        for (int a = 0; a < out.n_actions; ++a)
            if (!m.is_visited(s, a))
                for (int sp = 0; sp < out.n_states; ++sp) out(s, a, sp) = fallback(s, a, sp);
    return out;
}

// Per-state count frequencies floored at epsilon_clip and renormalized;
// unvisited states fall back to uniform.
inline Policy estimate_behavior_policy(const TransitionDataset& data, double epsilon_clip) {
    const int ns = data.n_states, na = data.n_actions;
    detail::require(epsilon_clip > 0.0 && epsilon_clip <= 1.0 / na,
                    "estimate_behavior_policy: epsilon_clip must be in (0, 1/n_actions]");
    std::vector<long> counts(static_cast<std::size_t>(ns) * na, 0);
    for (const Transition& t : data.samples)
        counts[static_cast<std::size_t>(t.s) * na + t.a] += 1;
    Policy pi(ns, na, 0.0);
    for (int s = 0; s < ns; ++s) {
        long row = 0;
        for (int a = 0; a < na; ++a) row += counts[static_cast<std::size_t>(s) * na + a];
        if (row == 0) {
            for (int a = 0; a < na; ++a) pi(s, a) = 1.0 / na;
            continue;
        }
        // Entries below the floor are set to exactly epsilon_clip; the rest
        // are scaled to absorb the remaining mass.
        double unclipped = 0.0;
        int n_clipped = 0;
        for (int a = 0; a < na; ++a) {
            double p = static_cast<double>(counts[static_cast<std::size_t>(s) * na + a]) /
                       static_cast<double>(row);
            pi(s, a) = p;
            if (p < epsilon_clip)
                ++n_clipped;
            else
                unclipped += p;
        }
        const double scale = (1.0 - epsilon_clip * n_clipped) / unclipped;
        for (int a = 0; a < na; ++a)
            pi(s, a) = pi(s, a) < epsilon_clip ? epsilon_clip : pi(s, a) * scale;
    }
    return pi;
}

// (1 - eps2) pi + eps2 * uniform
inline Policy mixture_policy(const Policy& pi, double eps2) {
    detail::require(eps2 >= 0.0 && eps2 <= 1.0, "mixture_policy: eps2 must be in [0,1]");
    Policy out = pi;
    const double u = eps2 / pi.n_actions;
    for (double& p : out.probs) p = (1.0 - eps2) * p + u;
    return out;
}

// --- serialization: CSV triple list with a JSON header line ---

inline void save_dataset(const TransitionDataset& data, const std::string& path) {
    std::ofstream out(path);
    detail::require(out.good(), "save_dataset: cannot open " + path);
    Json header{{"n_states", data.n_states},
                {"n_actions", data.n_actions},
                {"horizon", data.horizon},
                {"episodes", data.episodes},
                {"seed", data.seed}};
    out << "# " << header.dump() << "\n";
    out << "s,a,sp\n";
    for (const Transition& t : data.samples) out << t.s << ',' << t.a << ',' << t.sp << "\n";
}

inline TransitionDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    detail::require(in.good(), "load_dataset: cannot open " + path);
    std::string line;
    std::getline(in, line);
    detail::require(line.size() > 2 && line[0] == '#', "load_dataset: missing header");
    Json header = Json::parse(line.substr(1));
    TransitionDataset data;
    data.n_states = header.at("n_states").get<int>();
    data.n_actions = header.at("n_actions").get<int>();
    data.horizon = header.at("horizon").get<int>();
    data.episodes = header.at("episodes").get<int>();
    data.seed = header.at("seed").get<std::uint64_t>();
    std::getline(in, line); // column row
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Transition t;
        char c;
        ss >> t.s >> c >> t.a >> c >> t.sp;
        data.samples.push_back(t);
    }
    return data;
}

} // namespace rt
