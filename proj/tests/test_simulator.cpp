#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pcis/simulator.hpp"

using namespace pcis;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

StepFn linear_step(const MatrixXd& A, const MatrixXd& B, const VectorXd& noise_std) {
    return [A, B, noise_std](const VectorXd& x, const VectorXd& u, std::mt19937_64& rng) {
        VectorXd next = A * x + B * u;
        std::normal_distribution<double> normal(0, 1);
        for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += noise_std(i) * normal(rng);
        return next;
    };
}

PciResult make_pci(const MatrixXd& P, const MatrixXd& L) {
    PciResult pci;
    pci.P = P;
    pci.L = L;
    return pci;
}

}  // namespace

TEST_CASE("rollout: zero dynamics stay at the origin") {
    std::mt19937_64 rng(1);
    auto step = linear_step(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 1), VectorXd::Zero(2));
    auto r = rollout(step, MatrixXd::Zero(1, 2), VectorXd::Zero(2), 10, rng);
    CHECK(r.states.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(r.valid_steps == 10);
    CHECK_FALSE(r.diverged);
}

TEST_CASE("rollout: deterministic linear recursion") {
    std::mt19937_64 rng(2);
    MatrixXd A(2, 2), B(2, 1), L(1, 2);
    A << 1.0, 0.1, 0.0, 1.0;
    B << 0.005, 0.1;
    L << -2.0, -2.2;
    auto step = linear_step(A, B, VectorXd::Zero(2));
    VectorXd x0(2);
    x0 << 1.0, -0.5;
    auto r = rollout(step, L, x0, 30, rng);
    const MatrixXd A_cl = A + B * L;
    VectorXd x = x0;
    for (int k = 1; k <= 30; ++k) {
        x = (A_cl * x).eval();
        CHECK((r.states.row(k).transpose() - x).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("rollout: posterior collapse matches the closed-loop recursion") {
    // Exact linear data and (numerically) zero kernels: the posterior draw
    // reduces to A x + B u.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0, 1);
    const int N = 12, n = 2, m = 1;
    MatrixXd A(n, n), B(n, m), L(m, n);
    A << 0.9, 0.1, 0.0, 0.8;
    B << 0.0, 0.1;
    L << -0.5, -1.0;
    Dataset d;
    d.X.resize(N, n);
    d.U.resize(N, m);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < n; ++j) d.X(i, j) = normal(rng);
        for (int j = 0; j < m; ++j) d.U(i, j) = normal(rng);
    }
    d.Xplus = d.X * A.transpose() + d.U * B.transpose();
    SquaredExpKernel k;
    k.signal_variance = 1e-30;
    k.lengthscales = VectorXd::Constant(n + m, 1.0);
    GpssmModel model(A, B, {k, k}, VectorXd::Zero(n), d);

    VectorXd x0(2);
    x0 << 0.4, -0.1;
    auto r = rollout(posterior_step_fn(model), L, x0, 20, rng);
    const MatrixXd A_cl = A + B * L;
    VectorXd x = x0;
    for (int kstep = 1; kstep <= 20; ++kstep) {
        x = (A_cl * x).eval();
        CHECK((r.states.row(kstep).transpose() - x).lpNorm<Eigen::Infinity>() <= 1e-10);
    }
}

TEST_CASE("rollout: divergence is recorded and truncates") {
    std::mt19937_64 rng(5);
    auto step = linear_step(10.0 * MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1),
                            VectorXd::Zero(1));
    auto r = rollout(step, MatrixXd::Zero(1, 1), VectorXd::Constant(1, 1.0), 40, rng);
    CHECK(r.diverged);
    CHECK(r.valid_steps < 40);
}

TEST_CASE("wilson_interval: reference values") {
    auto ci = wilson_interval(50, 100);
    CHECK(ci.lower == doctest::Approx(0.4038).epsilon(1e-3));
    CHECK(ci.upper == doctest::Approx(0.5962).epsilon(1e-3));
    auto all = wilson_interval(100, 100);
    CHECK(all.upper == doctest::Approx(1.0));
    CHECK(all.lower > 0.95);
}

TEST_CASE("monte_carlo: deterministic contraction gives all-ones metrics") {
    MatrixXd A = 0.5 * MatrixXd::Identity(2, 2);
    auto step = linear_step(A, MatrixXd::Zero(2, 1), VectorXd::Zero(2));
    PciResult pci = make_pci(MatrixXd::Identity(2, 2), MatrixXd::Zero(1, 2));
    PolytopeConstraints constraints;
    constraints.state_rows = box_rows(VectorXd::Constant(2, -100.0),
                                      VectorXd::Constant(2, 100.0));
    constraints.input_rows = box_rows(VectorXd::Constant(1, -100.0),
                                      VectorXd::Constant(1, 100.0));
    RolloutConfig config;
    config.horizon = 50;
    config.n_rollouts = 200;
    config.seed = 9;
    auto report = monte_carlo(step, pci, constraints, config);
    CHECK(report.min_k_containment == 1.0);
    CHECK(report.input_admissibility == 1.0);
    CHECK(report.all_time_safety == 1.0);
    CHECK(report.all_time_containment == 1.0);
}

TEST_CASE("monte_carlo: point-sized set with noise fails containment") {
    auto step = linear_step(MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1),
                            VectorXd::Constant(1, 1.0));
    PciResult pci = make_pci(1e12 * MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1));
    PolytopeConstraints constraints;
    RolloutConfig config;
    config.horizon = 5;
    config.n_rollouts = 500;
    config.initial_state_mode = InitialStateMode::Fixed;
    config.x0 = VectorXd::Zero(1);
    config.seed = 11;
    auto report = monte_carlo(step, pci, constraints, config);
    CHECK(report.min_k_containment <= 0.01);
    CHECK(report.all_time_containment <= report.min_k_containment);
}

TEST_CASE("monte_carlo: seed determinism, also across jobs") {
    MatrixXd A(2, 2);
    A << 0.9, 0.05, 0.0, 0.9;
    auto step = linear_step(A, MatrixXd::Zero(2, 1), VectorXd::Constant(2, 0.05));
    PciResult pci = make_pci(MatrixXd::Identity(2, 2), MatrixXd::Zero(1, 2));
    PolytopeConstraints constraints;
    constraints.state_rows = box_rows(VectorXd::Constant(2, -2.0), VectorXd::Constant(2, 2.0));
    RolloutConfig config;
    config.horizon = 20;
    config.n_rollouts = 400;
    config.seed = 123;
    auto a = monte_carlo(step, pci, constraints, config);
    auto b = monte_carlo(step, pci, constraints, config);
    config.jobs = 4;
    auto c = monte_carlo(step, pci, constraints, config);
    CHECK(a.min_k_containment == b.min_k_containment);
    CHECK(a.all_time_containment == b.all_time_containment);
    CHECK(a.min_k_containment == c.min_k_containment);
    CHECK(a.all_time_safety == c.all_time_safety);
    CHECK(a.input_admissibility == c.input_admissibility);
    // Metric ordering holds on every report.
    CHECK(a.all_time_containment <= a.min_k_containment);
    CHECK(a.min_k_containment <= 1.0);
}

TEST_CASE("monte_carlo: empirical containment matches the analytic value") {
    // 1-D linear-Gaussian chain: x+ = a x + w with known per-step variance;
    // containment in [-1, 1] has a closed-form probability per step.
    const double a = 0.8, q = 0.02;
    const int T = 20;
    auto step = linear_step(MatrixXd::Constant(1, 1, a), MatrixXd::Zero(1, 1),
                            VectorXd::Constant(1, std::sqrt(q)));
    PciResult pci = make_pci(MatrixXd::Identity(1, 1), MatrixXd::Zero(1, 1));
    PolytopeConstraints constraints;
    RolloutConfig config;
    config.horizon = T;
    config.n_rollouts = 100000;
    config.initial_state_mode = InitialStateMode::Fixed;
    config.x0 = VectorXd::Zero(1);
    config.seed = 29;
    auto report = monte_carlo(step, pci, constraints, config);

    // The per-step variance grows monotonically, so the minimum is at k = T.
    const double var_T = q * (1.0 - std::pow(a, 2 * T)) / (1.0 - a * a);
    const double analytic = std::erf(1.0 / std::sqrt(2.0 * var_T));
    CHECK(report.min_k_containment_ci.lower <= analytic);
    CHECK(analytic <= report.min_k_containment_ci.upper);
}

TEST_CASE("ground_truth_quadrotor: discretization and linear consistency") {
    QuadrotorParams params;
    params.drag = 0.0;

    VectorXd x = VectorXd::Zero(4), u = VectorXd::Zero(2);
    x(0) = 1.5;
    x(2) = -2.0;
    CHECK((ground_truth_quadrotor(x, u, params) - x).lpNorm<Eigen::Infinity>() == 0.0);

    // Constant unit acceleration: v += 0.1 and x += 0.1 v + 0.005.
    u << 1.0, 0.0;
    VectorXd next = ground_truth_quadrotor(x, u, params);
    CHECK(next(0) == doctest::Approx(1.5 + 0.005).epsilon(1e-15));
    CHECK(next(1) == doctest::Approx(0.1).epsilon(1e-15));

    // With drag = 0 one step equals the linear (A, B) pair.
    MatrixXd A = MatrixXd::Identity(4, 4);
    A(0, 1) = A(2, 3) = params.dt;
    MatrixXd B(4, 2);
    B << 0.5 * params.dt * params.dt, 0, params.dt, 0, 0, 0.5 * params.dt * params.dt, 0,
        params.dt;
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal(0, 1);
    for (int t = 0; t < 50; ++t) {
        VectorXd xs(4), us(2);
        for (int i = 0; i < 4; ++i) xs(i) = normal(rng);
        for (int i = 0; i < 2; ++i) us(i) = normal(rng);
        CHECK((ground_truth_quadrotor(xs, us, params) - (A * xs + B * us))
                  .lpNorm<Eigen::Infinity>() <= 1e-14);
    }

    // Drag opposes motion quadratically.
    QuadrotorParams dragged;
    dragged.drag = 0.1;
    VectorXd moving = VectorXd::Zero(4);
    moving(1) = 2.0;
    VectorXd slowed = ground_truth_quadrotor(moving, VectorXd::Zero(2), dragged);
    CHECK(slowed(1) < 2.0);
    CHECK_THROWS_AS(ground_truth_quadrotor(VectorXd::Zero(3), u, params),
                    std::invalid_argument);
}

TEST_CASE("RolloutConfig validation") {
    RolloutConfig config;
    config.horizon = 0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config = RolloutConfig{};
    config.initial_state_mode = InitialStateMode::Fixed;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}
