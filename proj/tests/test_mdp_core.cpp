#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <rewardtransfer/envgen.hpp>
#include <rewardtransfer/linops.hpp>
#include <rewardtransfer/rng.hpp>
#include <rewardtransfer/tables.hpp>

using namespace rt;

namespace {

Kernel random_kernel(int ns, int na, Rng& rng) {
    Kernel P(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            double z = 0.0;
            for (int sp = 0; sp < ns; ++sp) {
                P(s, a, sp) = -std::log(1.0 - rng.uniform());
                z += P(s, a, sp);
            }
            for (int sp = 0; sp < ns; ++sp) P(s, a, sp) /= z;
        }
    return P;
}

Policy random_policy(int ns, int na, Rng& rng) {
    Policy pi(ns, na, 0.0);
    for (int s = 0; s < ns; ++s) {
        double z = 0.0;
        for (int a = 0; a < na; ++a) {
            pi(s, a) = 0.05 + rng.uniform();
            z += pi(s, a);
        }
        for (int a = 0; a < na; ++a) pi(s, a) /= z;
    }
    return pi;
}

} // namespace

TEST_CASE("kernel validation accepts stochastic rows and reports violations") {
    Rng rng(7);
    Kernel P = random_kernel(5, 3, rng);
    CHECK(validate_kernel(P).empty());

    P(2, 1, 0) += 0.5; // break one row sum
    auto report = validate_kernel(P);
    REQUIRE(report.size() == 1);
    CHECK(report[0].s == 2);
    CHECK(report[0].a == 1);
    CHECK(report[0].kind == KernelViolation::Kind::RowSum);
    CHECK(report[0].value == doctest::Approx(1.5));

    Kernel Q = random_kernel(3, 2, rng);
    Q(0, 0, 1) = -0.2;
    bool found_range = false;
    for (const auto& v : validate_kernel(Q))
        if (v.kind == KernelViolation::Kind::Range) found_range = true;
    CHECK(found_range);
}

TEST_CASE("policy_average and kernel_apply against hand arithmetic") {
    // 2 states, 2 actions, deterministic chain
    Kernel P = Kernel::identity(2, 2);
    P(0, 0, 0) = 0.0;
    P(0, 0, 1) = 1.0;
    SFn v(2);
    v(0) = 3.0;
    v(1) = -1.0;
    SAFn pv = kernel_apply(P, v);
    CHECK(pv(0, 0) == doctest::Approx(-1.0));
    CHECK(pv(0, 1) == doctest::Approx(3.0));
    CHECK(pv(1, 0) == doctest::Approx(-1.0));

    Policy pi = Policy::uniform(2, 2);
    SAFn f(2, 2);
    f(0, 0) = 2.0;
    f(0, 1) = 4.0;
    SFn mean = policy_average(pi, f);
    CHECK(mean(0) == doctest::Approx(3.0));
    CHECK(mean(1) == doctest::Approx(0.0));
}

TEST_CASE("resolvent: direct and Neumann routes agree and satisfy the fixed point") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int ns = 4 + trial, na = 2 + trial % 2;
        Kernel P = random_kernel(ns, na, rng);
        Policy pi = random_policy(ns, na, rng);
        SAFn f(ns, na);
        for (double& x : f.values) x = rng.normal();
        const double gamma = 0.9;

        SAFn hd = resolvent_apply(P, pi, gamma, f, 1e-12, ResolventMethod::Direct);
        SAFn hn = resolvent_apply(P, pi, gamma, f, 1e-12, ResolventMethod::Neumann);
        CHECK(sup_diff(hd, hn) <= 1e-9);

        // defining equation h = f + gamma P^pi h
        SAFn rhs = compose_policy_kernel(P, pi, hd);
        for (std::size_t i = 0; i < rhs.values.size(); ++i)
            rhs.values[i] = f.values[i] + gamma * rhs.values[i];
        CHECK(sup_diff(rhs, hd) <= 1e-9);
    }
}

TEST_CASE("resolvent: gamma=0 is the identity; constant input gives 1/(1-gamma)") {
    Rng rng(3);
    Kernel P = random_kernel(4, 2, rng);
    Policy pi = random_policy(4, 2, rng);
    SAFn f(4, 2, 2.0);
    CHECK(sup_diff(resolvent_apply(P, pi, 0.0, f), f) == 0.0);

    SAFn h = resolvent_apply(P, pi, 0.5, f, 1e-12);
    for (double v : h.values) CHECK(v == doctest::Approx(4.0)); // 2 / (1 - 0.5)
}

TEST_CASE("discounted occupancy: normalized, nonnegative, fixed-point property") {
    Rng rng(19);
    const int ns = 6, na = 3;
    Kernel P = random_kernel(ns, na, rng);
    Policy pi = random_policy(ns, na, rng);
    SADist rho = SADist::uniform(ns, na);
    const double gamma = 0.95;
    SADist d = discounted_occupancy(P, pi, rho, gamma);

    double total = 0.0;
    for (double w : d.weights) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0));

    // d = (1-gamma) rho + gamma (P^pi)^T d, checked via inner products with
    // random test functions: <d, f> = (1-gamma)<rho, f> + gamma <d, P^pi f>.
    for (int k = 0; k < 10; ++k) {
        SAFn f(ns, na);
        for (double& v : f.values) v = rng.normal();
        double lhs = weighted_dot(f, f, d) / 1.0; // placeholder to use helper
        lhs = 0.0;
        for (std::size_t i = 0; i < f.values.size(); ++i) lhs += d.weights[i] * f.values[i];
        SAFn pf = compose_policy_kernel(P, pi, f);
        double rhs = 0.0;
        for (std::size_t i = 0; i < f.values.size(); ++i)
            rhs += (1.0 - gamma) * rho.weights[i] * f.values[i] + gamma * d.weights[i] * pf.values[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
}

TEST_CASE("centering operator and its adjoint are dual under any weights") {
    Rng rng(23);
    const int ns = 5, na = 4;
    Policy mu = random_policy(ns, na, rng);
    for (int k = 0; k < 20; ++k) {
        SAFn f(ns, na), v(ns, na);
        for (double& x : f.values) x = rng.normal();
        for (double& x : v.values) x = rng.normal();
        // <v, (I-Pi_mu) f> = <(I-Pi_mu)^T v, f> with unweighted sums
        double lhs = 0.0, rhs = 0.0;
        SAFn cf = center_by_anchor(f, mu);
        SAFn av = center_by_anchor_adjoint(v, mu);
        for (std::size_t i = 0; i < f.values.size(); ++i) {
            lhs += v.values[i] * cf.values[i];
            rhs += av.values[i] * f.values[i];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
    // centering kills anchor averages
    SAFn f(ns, na);
    Rng rng2(5);
    for (double& x : f.values) x = rng2.normal();
    SFn mean = policy_average(mu, center_by_anchor(f, mu));
    for (int s = 0; s < ns; ++s) CHECK(std::abs(mean(s)) <= 1e-12);
}

TEST_CASE("tv_shift_stats: zero for identical kernels, exact for a hand case") {
    Rng rng(31);
    Kernel P = random_kernel(3, 2, rng);
    auto [avg0, max0] = tv_shift_stats(P, P);
    CHECK(avg0 == 0.0);
    CHECK(max0 == 0.0);

    Kernel Q = P;
    Q(0, 0, 0) = P(0, 0, 0) + 0.1;
    Q(0, 0, 1) = P(0, 0, 1) - 0.1;
    auto [avg, mx] = tv_shift_stats(P, Q);
    CHECK(mx == doctest::Approx(0.1));
    CHECK(avg == doctest::Approx(0.1 / 6.0));
}

TEST_CASE("JSON round trips preserve kernels, policies, and weights") {
    Rng rng(41);
    Kernel P = random_kernel(4, 3, rng);
    Policy pi = random_policy(4, 3, rng);
    SADist rho = SADist::uniform(4, 3);

    Kernel P2 = kernel_from_json(to_json(P));
    Policy pi2 = policy_from_json(to_json(pi));
    SADist rho2 = sadist_from_json(to_json(rho));
    CHECK(P2.probs == P.probs);
    CHECK(pi2.probs == pi.probs);
    CHECK(rho2.weights == rho.weights);
}

TEST_CASE("rng: determinism, stream independence, and basic statistics") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng root(9);
    Rng s1 = root.stream(1), s2 = root.stream(2);
    CHECK(s1.next_u64() != s2.next_u64());

    // uniform mean ~ 1/2 over 100k draws (3-sigma band, sd = 1/sqrt(12n))
    Rng u(77);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += u.uniform();
    const double mean = acc / n;
    CHECK(std::abs(mean - 0.5) <= 3.0 * (1.0 / std::sqrt(12.0 * n)));

    // categorical respects weights
    Rng c(101);
    std::vector<double> w = {0.2, 0.8};
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += c.categorical(w);
    const double p = static_cast<double>(ones) / n;
    CHECK(std::abs(p - 0.8) <= 3.0 * std::sqrt(0.8 * 0.2 / n));
}
