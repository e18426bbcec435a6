#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rt {

using Json = nlohmann::ordered_json;

inline constexpr double kProbTol = 1e-9;

namespace detail {
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}
} // namespace detail

// Real-valued state-action table.
struct SAFn {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> values;

    SAFn() = default;
    SAFn(int ns, int na, double fill = 0.0)
        : n_states(ns), n_actions(na), values(static_cast<std::size_t>(ns) * na, fill) {
        detail::require(ns > 0 && na > 0, "SAFn: dimensions must be positive");
    }

    double& operator()(int s, int a) { return values[static_cast<std::size_t>(s) * n_actions + a]; }
    double operator()(int s, int a) const {
        return values[static_cast<std::size_t>(s) * n_actions + a];
    }

    bool same_shape(const SAFn& other) const {
        return n_states == other.n_states && n_actions == other.n_actions;
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }
};

// Real-valued per-state table.
struct SFn {
    int n_states = 0;
    std::vector<double> values;

    SFn() = default;
    explicit SFn(int ns, double fill = 0.0) : n_states(ns), values(ns, fill) {
        detail::require(ns > 0, "SFn: n_states must be positive");
    }

    double& operator()(int s) { return values[s]; }
    double operator()(int s) const { return values[s]; }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }
};

// Per-state action distribution, rows sum to one.
struct Policy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> probs;

    Policy() = default;
    Policy(int ns, int na, double fill)
        : n_states(ns), n_actions(na), probs(static_cast<std::size_t>(ns) * na, fill) {}

    static Policy uniform(int ns, int na) { return Policy(ns, na, 1.0 / na); }

    // Per-state point mass on a fixed action.
    static Policy point_mass(int ns, int na, int action) {
        Policy pi(ns, na, 0.0);
        for (int s = 0; s < ns; ++s) pi(s, action) = 1.0;
        return pi;
    }

    double& operator()(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
    double operator()(int s, int a) const {
        return probs[static_cast<std::size_t>(s) * n_actions + a];
    }

    bool row_stochastic(double tol = kProbTol) const {
        for (int s = 0; s < n_states; ++s) {
            double sum = 0.0;
            for (int a = 0; a < n_actions; ++a) {
                double p = (*this)(s, a);
                if (p < -tol || p > 1.0 + tol) return false;
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol) return false;
        }
        return true;
    }

    bool full_support() const {
        for (double p : probs)
            if (p <= 0.0) return false;
        return true;
    }

    void validate(const std::string& name) const {
        detail::require(row_stochastic(), name + ": rows must sum to 1 within 1e-9");
    }
};

// Per-(s,a) next-state distribution.
struct Kernel {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> probs; // (s, a, s') row-major

    Kernel() = default;
    Kernel(int ns, int na, double fill = 0.0)
        : n_states(ns), n_actions(na),
          probs(static_cast<std::size_t>(ns) * na * ns, fill) {
        detail::require(ns > 0 && na > 0, "Kernel: dimensions must be positive");
    }

    static Kernel identity(int ns, int na) {
        Kernel p(ns, na);
        for (int s = 0; s < ns; ++s)
            for (int a = 0; a < na; ++a) p(s, a, s) = 1.0;
        return p;
    }

    double& operator()(int s, int a, int sp) {
        return probs[(static_cast<std::size_t>(s) * n_actions + a) * n_states + sp];
    }
    double operator()(int s, int a, int sp) const {
        return probs[(static_cast<std::size_t>(s) * n_actions + a) * n_states + sp];
    }

    bool same_shape(const Kernel& other) const {
        return n_states == other.n_states && n_actions == other.n_actions;
    }
};

// Nonnegative state-action weights summing to one.
struct SADist {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> weights;

    SADist() = default;
    SADist(int ns, int na, double fill = 0.0)
        : n_states(ns), n_actions(na), weights(static_cast<std::size_t>(ns) * na, fill) {}

    static SADist uniform(int ns, int na) {
        return SADist(ns, na, 1.0 / (static_cast<double>(ns) * na));
    }

    double& operator()(int s, int a) { return weights[static_cast<std::size_t>(s) * n_actions + a]; }
    double operator()(int s, int a) const {
        return weights[static_cast<std::size_t>(s) * n_actions + a];
    }

    double total() const {
        double sum = 0.0;
        for (double w : weights) sum += w;
        return sum;
    }

    void validate(const std::string& name) const {
        for (double w : weights) detail::require(w >= 0.0, name + ": weights must be nonnegative");
        detail::require(std::abs(total() - 1.0) <= kProbTol, name + ": weights must sum to 1");
    }

    void normalize() {
        double sum = total();
        detail::require(sum > 0.0, "SADist: cannot normalize zero mass");
        for (double& w : weights) w /= sum;
    }
};

struct KernelViolation {
    int s = 0;
    int a = 0;
    enum class Kind { RowSum, Range } kind = Kind::RowSum;
    double value = 0.0; // offending row sum or entry
};

// Report-style check: one entry per violating (s,a) row.
inline std::vector<KernelViolation> validate_kernel(const Kernel& P, double tol = kProbTol) {
    std::vector<KernelViolation> report;
    for (int s = 0; s < P.n_states; ++s) {
        for (int a = 0; a < P.n_actions; ++a) {
            double sum = 0.0;
            bool range_bad = false;
            double bad_entry = 0.0;
            for (int sp = 0; sp < P.n_states; ++sp) {
                double p = P(s, a, sp);
                if (p < -tol || p > 1.0 + tol) {
                    range_bad = true;
                    bad_entry = p;
                }
                sum += p;
            }
            if (range_bad)
                report.push_back({s, a, KernelViolation::Kind::Range, bad_entry});
            if (std::abs(sum - 1.0) > tol)
                report.push_back({s, a, KernelViolation::Kind::RowSum, sum});
        }
    }
    return report;
}

inline void require_valid_kernel(const Kernel& P, const std::string& name) {
    detail::require(validate_kernel(P).empty(), name + ": kernel rows violate invariants");
}

// --- JSON serialization: {"n_states", "n_actions", "probs": row-major} ---

inline Json to_json(const Kernel& P) {
    return Json{{"n_states", P.n_states}, {"n_actions", P.n_actions}, {"probs", P.probs}};
}

inline Json to_json(const Policy& pi) {
    return Json{{"n_states", pi.n_states}, {"n_actions", pi.n_actions}, {"probs", pi.probs}};
}

inline Json to_json(const SADist& rho) {
    return Json{{"n_states", rho.n_states}, {"n_actions", rho.n_actions}, {"probs", rho.weights}};
}

inline Kernel kernel_from_json(const Json& j) {
    Kernel P(j.at("n_states").get<int>(), j.at("n_actions").get<int>());
    P.probs = j.at("probs").get<std::vector<double>>();
    detail::require(P.probs.size() ==
                        static_cast<std::size_t>(P.n_states) * P.n_actions * P.n_states,
                    "kernel_from_json: probs length mismatch");
    return P;
}

inline Policy policy_from_json(const Json& j) {
    Policy pi;
    pi.n_states = j.at("n_states").get<int>();
    pi.n_actions = j.at("n_actions").get<int>();
    pi.probs = j.at("probs").get<std::vector<double>>();
    detail::require(pi.probs.size() == static_cast<std::size_t>(pi.n_states) * pi.n_actions,
                    "policy_from_json: probs length mismatch");
    return pi;
}

inline SADist sadist_from_json(const Json& j) {
    SADist rho;
    rho.n_states = j.at("n_states").get<int>();
    rho.n_actions = j.at("n_actions").get<int>();
    rho.weights = j.at("probs").get<std::vector<double>>();
    detail::require(rho.weights.size() == static_cast<std::size_t>(rho.n_states) * rho.n_actions,
                    "sadist_from_json: probs length mismatch");
    return rho;
}

} // namespace rt
