#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

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

SAFn random_safn(int ns, int na, Rng& rng, double scale = 1.0) {
    SAFn f(ns, na);
    for (double& v : f.values) v = scale * rng.normal();
    return f;
}

TransferProblem random_problem(int ns, int na, Rng& rng, bool point_mass_anchor = true) {
    TransferProblem pb;
    pb.source.P1 = random_kernel(ns, na, rng);
    pb.source.gamma1 = 0.9;
    pb.source.pi_b1 = random_policy(ns, na, rng);
    pb.source.pi_ref1 = Policy::uniform(ns, na);
    pb.target.P2 = random_kernel(ns, na, rng);
    pb.target.spec2.gamma = 0.9;
    pb.target.spec2.tau = 0.5;
    pb.target.spec2.pi_ref = Policy::uniform(ns, na);
    if (point_mass_anchor) {
        pb.anchor.mu = Policy(ns, na, 0.0);
        for (int s = 0; s < ns; ++s) pb.anchor.mu(s, 0) = 1.0;
    } else {
        pb.anchor.mu = random_policy(ns, na, rng);
    }
    pb.anchor.g = SFn(ns);
    for (double& v : pb.anchor.g.values) v = rng.normal();
    return pb;
}

} // namespace

TEST_CASE("source_signal: identical policies, hand arithmetic, g shift") {
    Policy uni = Policy::uniform(3, 2);
    SFn g0(3, 0.0);
    SAFn u0 = source_signal(uni, uni, g0);
    for (double v : u0.values) CHECK(v == doctest::Approx(0.0));

    Policy pb(3, 2, 0.0);
    for (int s = 0; s < 3; ++s) {
        pb(s, 0) = 0.75;
        pb(s, 1) = 0.25;
    }
    SAFn u = source_signal(pb, uni, g0);
    for (int s = 0; s < 3; ++s) {
        CHECK(u(s, 0) == doctest::Approx(std::log(1.5)));
        CHECK(u(s, 1) == doctest::Approx(std::log(0.5)));
    }

    SFn gc(3, 2.25);
    SAFn uc = source_signal(pb, uni, gc);
    for (std::size_t i = 0; i < uc.values.size(); ++i)
        CHECK(uc.values[i] - u.values[i] == doctest::Approx(-2.25));
}

TEST_CASE("source_fixed_point: gamma zero, geometric series, dense-solve oracle") {
    Rng rng(3);
    Kernel P = random_kernel(3, 2, rng);
    Policy mu = random_policy(3, 2, rng);
    SAFn u = random_safn(3, 2, rng);

    SAFn q0 = source_fixed_point(u, P, mu, 0.0);
    CHECK(sup_diff(q0, u) == doctest::Approx(0.0));

    Kernel P1(1, 1);
    P1(0, 0, 0) = 1.0;
    SAFn uc(1, 1, 4.0);
    SAFn qc = source_fixed_point(uc, P1, Policy::uniform(1, 1), 0.75);
    CHECK(qc(0, 0) == doctest::Approx(16.0));

    // dense oracle: solve (I - gamma M) x = u with M the (s,a)x(s,a) matrix of
    // P1^mu, built by composing the kernel with mu on indicator functions.
    const double gamma = 0.9;
    SAFn q = source_fixed_point(u, P, mu, gamma, 1e-12);
    const int n = 6;
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
    for (int j = 0; j < n; ++j) {
        SAFn e(3, 2, 0.0);
        e.values[j] = 1.0;
        SAFn Me = compose_policy_kernel(P, mu, e);
        for (int i = 0; i < n; ++i) A(i, j) -= gamma * Me.values[i];
    }
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) b(i) = u.values[i];
    Eigen::VectorXd x = A.partialPivLu().solve(b);
    for (int i = 0; i < n; ++i) CHECK(q.values[i] == doctest::Approx(x(i)).epsilon(1e-8));
}

TEST_CASE("recover_reward: anchor consistency, constants, hand arithmetic") {
    Rng rng(9);

    // mu point-mass on action 0 -> r(s, 0) = g(s); also (mu r) = g for random mu
    for (int trial = 0; trial < 20; ++trial) {
        bool point = trial % 2 == 0;
        TransferProblem pb = random_problem(4, 3, rng, point);
        SAFn q1 = random_safn(4, 3, rng, 2.0);
        SAFn r = recover_reward(q1, pb.anchor);
        SFn mur = policy_average(pb.anchor.mu, r);
        for (int s = 0; s < 4; ++s) {
            CHECK(mur(s) == doctest::Approx(pb.anchor.g(s)).epsilon(1e-12));
            if (point) CHECK(r(s, 0) == doctest::Approx(pb.anchor.g(s)).epsilon(1e-12));
        }
    }

    // constant q1, g = 0 -> r = 0
    TransferProblem pb = random_problem(3, 2, rng);
    pb.anchor.g = SFn(3, 0.0);
    SAFn qconst(3, 2, 5.5);
    SAFn r0 = recover_reward(qconst, pb.anchor);
    for (double v : r0.values) CHECK(v == doctest::Approx(0.0));

    // q1(s,.) = (1, 4), mu point-mass on action 0, g = 2 -> r(s,.) = (2, 5)
    AnchorSpec anchor;
    anchor.mu = Policy(1, 2, 0.0);
    anchor.mu(0, 0) = 1.0;
    anchor.g = SFn(1, 2.0);
    SAFn q1(1, 2);
    q1(0, 0) = 1.0;
    q1(0, 1) = 4.0;
    SAFn r = recover_reward(q1, anchor);
    CHECK(r(0, 0) == doctest::Approx(2.0));
    CHECK(r(0, 1) == doctest::Approx(5.0));
}

TEST_CASE("choose_shift: nonnegative reward, forced value, policy invariance") {
    SAFn rpos(2, 2, 0.25);
    CHECK(choose_shift(rpos) == doctest::Approx(0.0));

    SAFn rneg(2, 2, 1.0);
    rneg(1, 0) = -3.5;
    CHECK(choose_shift(rneg) == doctest::Approx(3.5));

    // the induced softmax-optimal policy is unchanged by a constant shift
    Rng rng(21);
    Kernel P = random_kernel(4, 2, rng);
    SoftSpec sp;
    sp.gamma = 0.9;
    sp.tau = 0.4;
    sp.pi_ref = Policy::uniform(4, 2);
    SAFn r = random_safn(4, 2, rng);
    SAFn rc = r;
    for (double& v : rc.values) v += choose_shift(r);
    Policy pa = softmax_policy(soft_value_iteration(r, P, sp, 1e-11).q, sp);
    Policy pc = softmax_policy(soft_value_iteration(rc, P, sp, 1e-11).q, sp);
    for (std::size_t i = 0; i < pa.probs.size(); ++i)
        CHECK(pa.probs[i] == doctest::Approx(pc.probs[i]).epsilon(1e-8));
}

TEST_CASE("oracle_transfer: degenerate world, residuals vanish") {
    // 1 state, 1 action: (I - Pi_mu) q1 = 0, so q2 = (g + C)/(1 - gamma2)
    TransferProblem pb;
    pb.source.P1 = Kernel(1, 1);
    pb.source.P1(0, 0, 0) = 1.0;
    pb.source.gamma1 = 0.8;
    pb.source.pi_b1 = Policy::uniform(1, 1);
    pb.source.pi_ref1 = Policy::uniform(1, 1);
    pb.target.P2 = pb.source.P1;
    pb.target.spec2.gamma = 0.75;
    pb.target.spec2.tau = 0.3;
    pb.target.spec2.pi_ref = Policy::uniform(1, 1);
    pb.anchor.mu = Policy::uniform(1, 1);
    pb.anchor.g = SFn(1, -1.5);
    OracleSolution sol = oracle_transfer(pb);
    CHECK(sol.C == doctest::Approx(1.5));
    CHECK(sol.q2(0, 0) == doctest::Approx((-1.5 + sol.C) / 0.25));

    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        TransferProblem rp = random_problem(5, 3, rng, trial % 2 == 0);
        OracleSolution s = oracle_transfer(rp, 1e-11);
        CHECK(s.q1.sup_norm() > 0.0);
        CHECK(source_residual(s.q1, rp).sup_norm() <= 1e-9);
        CHECK(target_residual(s.q1, s.q2, rp, s.C).sup_norm() <= 1e-9);
        // shifted reward is nonnegative and matches q1 through the reward map
        for (double v : s.r_shifted.values) CHECK(v >= -1e-12);
    }
}

TEST_CASE("profiled residual: vanishes at truth, exactly q1-independent") {
    Rng rng(47);
    for (int trial = 0; trial < 5; ++trial) {
        TransferProblem pb = random_problem(4, 2, rng, trial % 2 == 0);
        OracleSolution sol = oracle_transfer(pb, 1e-11);

        SAFn at_truth = profiled_target_residual(sol.q1, sol.q2, pb, sol.C, 1e-12);
        CHECK(at_truth.sup_norm() <= 1e-9);

        // arbitrary q1 perturbations leave the profiled residual unchanged
        SAFn q2 = random_safn(4, 2, rng, 2.0);
        SAFn base = profiled_target_residual(sol.q1, q2, pb, sol.C, 1e-12);
        for (int k = 0; k < 5; ++k) {
            SAFn q1p = sol.q1;
            SAFn d = random_safn(4, 2, rng, 3.0);
            for (std::size_t i = 0; i < q1p.values.size(); ++i) q1p.values[i] += d.values[i];
            SAFn moved = profiled_target_residual(q1p, q2, pb, sol.C, 1e-12);
            CHECK(sup_diff(moved, base) <= 1e-8);

            // the same perturbation does change the unprofiled residual
            SAFn b2_base = target_residual(sol.q1, q2, pb, sol.C);
            SAFn b2_moved = target_residual(q1p, q2, pb, sol.C);
            CHECK(sup_diff(b2_moved, b2_base) > 1e-4);
        }
    }
}

TEST_CASE("profiled residual: finite-difference orthogonality vs unprofiled sensitivity") {
    Rng rng(59);
    TransferProblem pb = random_problem(5, 3, rng);
    OracleSolution sol = oracle_transfer(pb, 1e-11);
    const double t = 1e-5;
    for (int k = 0; k < 10; ++k) {
        SAFn d = random_safn(5, 3, rng);
        double dn = d.sup_norm();
        SAFn qp = sol.q1, qm = sol.q1;
        for (std::size_t i = 0; i < d.values.size(); ++i) {
            qp.values[i] += t * d.values[i];
            qm.values[i] -= t * d.values[i];
        }
        SAFn rp = profiled_target_residual(qp, sol.q2, pb, sol.C, 1e-12);
        SAFn rm = profiled_target_residual(qm, sol.q2, pb, sol.C, 1e-12);
        double slope_profiled = sup_diff(rp, rm) / (2.0 * t * dn);
        CHECK(slope_profiled <= 1e-6);

        SAFn bp = target_residual(qp, sol.q2, pb, sol.C);
        SAFn bm = target_residual(qm, sol.q2, pb, sol.C);
        double slope_plain = sup_diff(bp, bm) / (2.0 * t * dn);
        CHECK(slope_plain >= 0.1);
    }
}

TEST_CASE("empirical profiled residual entry point uses the supplied kernel") {
    Rng rng(71);
    TransferProblem pb = random_problem(4, 2, rng);
    OracleSolution sol = oracle_transfer(pb, 1e-11);

    // with the population kernel it agrees with the population entry point
    SAFn q1 = random_safn(4, 2, rng);
    SAFn q2 = random_safn(4, 2, rng);
    SAFn a = profiled_target_residual(q1, q2, pb, sol.C, 1e-12);
    SAFn b = profiled_target_residual_empirical(q1, q2, pb, sol.C, pb.source.P1, 1e-12);
    CHECK(sup_diff(a, b) <= 1e-10);

    // with a different kernel the correction changes
    Kernel other = random_kernel(4, 2, rng);
    SAFn c = profiled_target_residual_empirical(q1, q2, pb, sol.C, other, 1e-12);
    CHECK(sup_diff(a, c) > 1e-6);
}

TEST_CASE("augmented profiled residual: behavior-policy reduction and insensitivity at truth") {
    Rng rng(83);
    TransferProblem pb = random_problem(4, 3, rng);
    OracleSolution sol = oracle_transfer(pb, 1e-11);

    // pi = pi_b1 -> the policy-score correction vanishes
    SAFn q1 = random_safn(4, 3, rng);
    SAFn q2 = random_safn(4, 3, rng);
    SAFn aug = augmented_profiled_residual(q1, q2, pb.source.pi_b1, pb, sol.C, 1e-12);
    SAFn plain = profiled_target_residual(q1, q2, pb, sol.C, 1e-12);
    CHECK(sup_diff(aug, plain) <= 1e-10);

    // directional derivatives at the truth vanish, in pi and in q1
    const double t = 1e-5;
    for (int k = 0; k < 5; ++k) {
        // pi direction: rows must stay stochastic, so perturb within the simplex
        Policy dp = random_policy(4, 3, rng);
        Policy pip = pb.source.pi_b1, pim = pb.source.pi_b1;
        for (std::size_t i = 0; i < dp.probs.size(); ++i) {
            double step = t * (dp.probs[i] - pb.source.pi_b1.probs[i]);
            pip.probs[i] += step;
            pim.probs[i] -= step;
        }
        SAFn rp = augmented_profiled_residual(sol.q1, sol.q2, pip, pb, sol.C, 1e-12);
        SAFn rm = augmented_profiled_residual(sol.q1, sol.q2, pim, pb, sol.C, 1e-12);
        CHECK(sup_diff(rp, rm) / (2.0 * t) <= 1e-6);

        SAFn dq = random_safn(4, 3, rng);
        SAFn qp = sol.q1, qm = sol.q1;
        for (std::size_t i = 0; i < dq.values.size(); ++i) {
            qp.values[i] += t * dq.values[i];
            qm.values[i] -= t * dq.values[i];
        }
        SAFn sp_ = augmented_profiled_residual(qp, sol.q2, pb.source.pi_b1, pb, sol.C, 1e-12);
        SAFn sm = augmented_profiled_residual(qm, sol.q2, pb.source.pi_b1, pb, sol.C, 1e-12);
        CHECK(sup_diff(sp_, sm) / (2.0 * t * dq.sup_norm()) <= 1e-6);
    }
}

TEST_CASE("source error decomposition holds for arbitrary q1 and perturbed kernels") {
    Rng rng(97);
    for (int trial = 0; trial < 20; ++trial) {
        int ns = 3 + static_cast<int>(rng.uniform_int(4));
        int na = 2 + static_cast<int>(rng.uniform_int(2));
        TransferProblem pb = random_problem(ns, na, rng, trial % 2 == 0);
        OracleSolution sol = oracle_transfer(pb, 1e-12);

        // random empirical kernel: mix the true kernel with a random one
        Kernel Ph = random_kernel(ns, na, rng);
        for (std::size_t i = 0; i < Ph.probs.size(); ++i)
            Ph.probs[i] = 0.7 * pb.source.P1.probs[i] + 0.3 * Ph.probs[i];

        SAFn q1_hat = random_safn(ns, na, rng, 2.0);
        double defect = source_error_identity_defect(pb, Ph, q1_hat, sol.q1, 1e-13);
        CHECK(defect <= 1e-9);
    }
}

TEST_CASE("transfer problem JSON round trip preserves every field") {
    Rng rng(109);
    TransferProblem pb = random_problem(3, 2, rng);
    pb.C = 2.5;
    Json j = to_json(pb);
    TransferProblem back = transfer_problem_from_json(j);
    for (std::size_t i = 0; i < pb.source.pi_b1.probs.size(); ++i)
        CHECK(pb.source.pi_b1.probs[i] == back.source.pi_b1.probs[i]);
    CHECK(pb.source.gamma1 == back.source.gamma1);
    CHECK(pb.target.spec2.tau == back.target.spec2.tau);
    REQUIRE(back.C.has_value());
    CHECK(*back.C == 2.5);
    for (std::size_t i = 0; i < pb.source.P1.probs.size(); ++i)
        CHECK(pb.source.P1.probs[i] == back.source.P1.probs[i]);
    for (int s = 0; s < 3; ++s) CHECK(pb.anchor.g(s) == back.anchor.g(s));
}
