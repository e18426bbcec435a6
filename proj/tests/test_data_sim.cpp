#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include <rewardtransfer/rewardtransfer.hpp>

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

} // namespace

TEST_CASE("rollout: deterministic dynamics with a point-mass policy are fully predictable") {
    // cycle 0 -> 1 -> 2 -> 0 under action 0
    Kernel P(3, 2);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) P(s, a, (s + 1) % 3) = 1.0;
    Policy pi(3, 2, 0.0);
    for (int s = 0; s < 3; ++s) pi(s, 0) = 1.0;
    SFn rho0(3, 0.0);
    rho0(0) = 1.0;

    TransitionDataset d = rollout(P, pi, rho0, 6, 2, 99);
    REQUIRE(d.samples.size() == 12);
    for (int ep = 0; ep < 2; ++ep)
        for (int t = 0; t < 6; ++t) {
            const Transition& tr = d.samples[static_cast<std::size_t>(ep) * 6 + t];
            CHECK(tr.s == t % 3);
            CHECK(tr.a == 0);
            CHECK(tr.sp == (t + 1) % 3);
        }
}

TEST_CASE("rollout: seed determinism and episode-prefix property") {
    Rng rng(5);
    Kernel P = random_kernel(4, 3, rng);
    Policy pi = Policy::uniform(4, 3);
    SFn rho0(4, 0.25);

    TransitionDataset a = rollout(P, pi, rho0, 10, 50, 1234);
    TransitionDataset b = rollout(P, pi, rho0, 10, 50, 1234);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].s == b.samples[i].s);
        CHECK(a.samples[i].a == b.samples[i].a);
        CHECK(a.samples[i].sp == b.samples[i].sp);
    }

    // fewer episodes with the same seed give an exact prefix (per-episode streams)
    TransitionDataset c = rollout(P, pi, rho0, 10, 20, 1234);
    REQUIRE(c.samples.size() == 200);
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
        CHECK(a.samples[i].s == c.samples[i].s);
        CHECK(a.samples[i].a == c.samples[i].a);
        CHECK(a.samples[i].sp == c.samples[i].sp);
    }

    TransitionDataset d = rollout(P, pi, rho0, 10, 50, 1235);
    bool any_diff = false;
    for (std::size_t i = 0; i < d.samples.size(); ++i)
        any_diff = any_diff || d.samples[i].s != a.samples[i].s ||
                   d.samples[i].a != a.samples[i].a || d.samples[i].sp != a.samples[i].sp;
    CHECK(any_diff);
}

TEST_CASE("rollout: empirical frequencies within binomial bands on a 2-state chain") {
    Kernel P(2, 1);
    P(0, 0, 0) = 0.3;
    P(0, 0, 1) = 0.7;
    P(1, 0, 0) = 0.6;
    P(1, 0, 1) = 0.4;
    Policy pi = Policy::uniform(2, 1);
    SFn rho0(2, 0.5);
    TransitionDataset d = rollout(P, pi, rho0, 100, 1000, 2024);
    EmpiricalModel m = empirical_model(d);
    for (int s = 0; s < 2; ++s) {
        long n = 0;
        for (int sp = 0; sp < 2; ++sp) n += m.counts[static_cast<std::size_t>(s) * 2 + sp];
        double p = P(s, 0, 1);
        double sd = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        CHECK(std::abs(m.P_hat(s, 0, 1) - p) <= 3.0 * sd);
    }
}

TEST_CASE("empirical_model: single transition, exhaustive deterministic data, hand counts") {
    TransitionDataset one;
    one.n_states = 3;
    one.n_actions = 2;
    one.horizon = 1;
    one.episodes = 1;
    one.samples = {{0, 1, 2}};
    EmpiricalModel m = empirical_model(one);
    CHECK(m.P_hat(0, 1, 2) == doctest::Approx(1.0));
    CHECK(m.rho_hat(0, 1) == doctest::Approx(1.0));
    CHECK(m.is_visited(0, 1));
    CHECK_FALSE(m.is_visited(0, 0));
    CHECK_FALSE(m.is_visited(2, 1));

    // deterministic MDP enumerated exhaustively reproduces P exactly
    Kernel P(2, 2);
    P(0, 0, 1) = 1.0;
    P(0, 1, 0) = 1.0;
    P(1, 0, 0) = 1.0;
    P(1, 1, 1) = 1.0;
    TransitionDataset all;
    all.n_states = 2;
    all.n_actions = 2;
    all.horizon = 1;
    all.episodes = 4;
    all.samples = {{0, 0, 1}, {0, 1, 0}, {1, 0, 0}, {1, 1, 1}};
    EmpiricalModel me = empirical_model(all);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a)
            for (int sp = 0; sp < 2; ++sp) CHECK(me.P_hat(s, a, sp) == P(s, a, sp));

    // counts {s'1: 3, s'2: 1} -> row (0.75, 0.25)
    TransitionDataset four;
    four.n_states = 2;
    four.n_actions = 1;
    four.horizon = 4;
    four.episodes = 1;
    four.samples = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 1}};
    EmpiricalModel mf = empirical_model(four);
    CHECK(mf.P_hat(0, 0, 0) == doctest::Approx(0.75));
    CHECK(mf.P_hat(0, 0, 1) == doctest::Approx(0.25));

    // rho_hat sums to one; visited rows are stochastic
    double z = 0.0;
    for (double w : mf.rho_hat.weights) z += w;
    CHECK(z == doctest::Approx(1.0));
}

TEST_CASE("completed_kernel fills unvisited rows from the fallback only") {
    TransitionDataset one;
    one.n_states = 2;
    one.n_actions = 2;
    one.horizon = 1;
    one.episodes = 1;
    one.samples = {{0, 0, 1}};
    EmpiricalModel m = empirical_model(one);
    Rng rng(8);
    Kernel fb = random_kernel(2, 2, rng);
    Kernel full = completed_kernel(m, fb);
    CHECK(validate_kernel(full).empty());
    CHECK(full(0, 0, 1) == doctest::Approx(1.0)); // visited row kept
    for (int sp = 0; sp < 2; ++sp) {
        CHECK(full(0, 1, sp) == fb(0, 1, sp));
        CHECK(full(1, 0, sp) == fb(1, 0, sp));
        CHECK(full(1, 1, sp) == fb(1, 1, sp));
    }
}

TEST_CASE("population_model marks exactly the support of rho as visited") {
    Rng rng(13);
    Kernel P = random_kernel(3, 2, rng);
    SADist rho(3, 2);
    rho(0, 0) = 0.5;
    rho(2, 1) = 0.5;
    EmpiricalModel m = population_model(P, rho);
    CHECK(m.is_visited(0, 0));
    CHECK(m.is_visited(2, 1));
    CHECK_FALSE(m.is_visited(0, 1));
    CHECK_FALSE(m.is_visited(1, 0));
    for (std::size_t i = 0; i < P.probs.size(); ++i) CHECK(m.P_hat.probs[i] == P.probs[i]);
}

TEST_CASE("estimate_behavior_policy: hand counts, clipping, unvisited fallback") {
    TransitionDataset d;
    d.n_states = 3;
    d.n_actions = 2;
    d.horizon = 10;
    d.episodes = 2;
    // state 0: counts (8, 2); state 1: counts (10, 0); state 2 unvisited
    for (int i = 0; i < 8; ++i) d.samples.push_back({0, 0, 0});
    for (int i = 0; i < 2; ++i) d.samples.push_back({0, 1, 0});
    for (int i = 0; i < 10; ++i) d.samples.push_back({1, 0, 0});

    Policy loose = estimate_behavior_policy(d, 0.01);
    CHECK(loose(0, 0) == doctest::Approx(0.8));
    CHECK(loose(0, 1) == doctest::Approx(0.2));

    Policy clipped = estimate_behavior_policy(d, 0.1);
    CHECK(clipped(1, 0) == doctest::Approx(0.9 / 1.0));
    CHECK(clipped(1, 1) == doctest::Approx(0.1 / 1.0));

    CHECK(clipped(2, 0) == doctest::Approx(0.5));
    CHECK(clipped(2, 1) == doctest::Approx(0.5));

    CHECK_THROWS(estimate_behavior_policy(d, 0.0));
    CHECK_THROWS(estimate_behavior_policy(d, 0.6));
}

TEST_CASE("mixture_policy endpoints and hand arithmetic") {
    Policy pi(2, 2, 0.0);
    pi(0, 0) = 1.0;
    pi(1, 1) = 1.0;

    Policy same = mixture_policy(pi, 0.0);
    for (std::size_t i = 0; i < pi.probs.size(); ++i) CHECK(same.probs[i] == pi.probs[i]);

    Policy uni = mixture_policy(pi, 1.0);
    for (double p : uni.probs) CHECK(p == doctest::Approx(0.5));

    Policy mixed = mixture_policy(pi, 0.2);
    CHECK(mixed(0, 0) == doctest::Approx(0.9));
    CHECK(mixed(0, 1) == doctest::Approx(0.1));
}

TEST_CASE("row TV error of the empirical kernel shrinks with sample size") {
    Rng rng(17);
    Kernel P = random_kernel(3, 2, rng);
    Policy pi = Policy::uniform(3, 2);
    SFn rho0(3, 1.0 / 3.0);
    double prev = 2.0;
    for (int episodes : {20, 200, 2000}) {
        TransitionDataset d = rollout(P, pi, rho0, 20, episodes, 7);
        EmpiricalModel m = empirical_model(d);
        double worst = 0.0;
        for (int s = 0; s < 3; ++s)
            for (int a = 0; a < 2; ++a) {
                if (!m.is_visited(s, a)) continue;
                double tv = 0.0;
                for (int sp = 0; sp < 3; ++sp) tv += std::abs(m.P_hat(s, a, sp) - P(s, a, sp));
                worst = std::max(worst, 0.5 * tv);
            }
        CHECK(worst < prev);
        prev = worst;
    }
}

TEST_CASE("dataset save/load round trip preserves header and samples") {
    Rng rng(29);
    Kernel P = random_kernel(3, 2, rng);
    TransitionDataset d = rollout(P, Policy::uniform(3, 2), SFn(3, 1.0 / 3.0), 5, 7, 4242);
    const std::string path = "/tmp/rt_dataset_roundtrip.csv";
    save_dataset(d, path);
    TransitionDataset back = load_dataset(path);
    std::remove(path.c_str());
    CHECK(back.n_states == d.n_states);
    CHECK(back.n_actions == d.n_actions);
    CHECK(back.horizon == d.horizon);
    CHECK(back.episodes == d.episodes);
    CHECK(back.seed == d.seed);
    REQUIRE(back.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(back.samples[i].s == d.samples[i].s);
        CHECK(back.samples[i].a == d.samples[i].a);
        CHECK(back.samples[i].sp == d.samples[i].sp);
    }
}
