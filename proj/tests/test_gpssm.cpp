#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pcis/gpssm.hpp"
#include "pcis/rng.hpp"

using namespace pcis;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset random_dataset(int N, int n, int m, std::mt19937_64& rng, double input_scale = 1.0) {
    std::normal_distribution<double> normal(0, 1);
    Dataset d;
    d.X.resize(N, n);
    d.U.resize(N, m);
    d.Xplus.resize(N, n);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < n; ++j) d.X(i, j) = input_scale * normal(rng);
        for (int j = 0; j < m; ++j) d.U(i, j) = input_scale * normal(rng);
        for (int j = 0; j < n; ++j) d.Xplus(i, j) = normal(rng);
    }
    return d;
}

SquaredExpKernel kernel(double s, const VectorXd& ell) {
    SquaredExpKernel k;
    k.signal_variance = s;
    k.lengthscales = ell;
    return k;
}

}  // namespace

TEST_CASE("fit_mean: noiseless linear system is recovered exactly") {
    std::mt19937_64 rng(3);
    const int n = 3, m = 2;
    MatrixXd A0(n, n), B0(n, m);
    std::normal_distribution<double> normal(0, 1);
    for (int i = 0; i < n * n; ++i) A0(i / n, i % n) = normal(rng);
    for (int i = 0; i < n * m; ++i) B0(i / m, i % m) = normal(rng);

    Dataset d = random_dataset(2 * (n + m), n, m, rng);
    d.Xplus = d.X * A0.transpose() + d.U * B0.transpose();
    MeanFit fit = fit_mean(d);
    CHECK((fit.A - A0).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((fit.B - B0).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(fit.residuals.lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("fit_mean: zero outputs give zero matrices") {
    std::mt19937_64 rng(5);
    Dataset d = random_dataset(12, 2, 1, rng);
    d.Xplus.setZero();
    MeanFit fit = fit_mean(d);
    CHECK(fit.A.lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(fit.B.lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("fit_mean: rank deficiency is reported with directions") {
    Dataset d;
    const int N = 8;
    d.X.resize(N, 2);
    d.U.resize(N, 1);
    d.Xplus.resize(N, 2);
    for (int i = 0; i < N; ++i) {
        d.X(i, 0) = i + 1.0;
        d.X(i, 1) = 2.0 * (i + 1.0);  // collinear columns
        d.U(i, 0) = 0.5 * i;
        d.Xplus.row(i).setZero();
    }
    CHECK_THROWS_WITH_AS(fit_mean(d),
                         doctest::Contains("deficient directions"), std::invalid_argument);

    Dataset small = d;
    small.X.conservativeResize(2, 2);
    small.U.conservativeResize(2, 1);
    small.Xplus.conservativeResize(2, 2);
    CHECK_THROWS_AS(fit_mean(small), std::invalid_argument);
}

TEST_CASE("fit_mean: synthetic regeneration recovers published-scale dynamics") {
    // Matrices of the quadrotor case study regenerated with process noise;
    // the OLS estimate must land within 3 standard errors entrywise.
    MatrixXd A(4, 4), B(4, 2);
    A << 0.9999, 0.1009, -0.0001, -0.0005, -0.0018, 1.0160, -0.0025, -0.0086, 0, 0.0008,
        0.9999, 0.0996, -0.0014, 0.0149, -0.0024, 0.9926;
    B << 0.0028, -0.0017, 0.0603, -0.0291, -0.0017, 0.0028, -0.0309, 0.0619;
    VectorXd q(4);
    q << 2.6429e-4, 2.5738e-4, 2.3335e-4, 2.5739e-4;

    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0, 1);
    const int N = 550;
    Dataset d = random_dataset(N, 4, 2, rng);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < 4; ++j)
            d.Xplus(i, j) = A.row(j).dot(d.X.row(i)) + B.row(j).dot(d.U.row(i)) +
                            std::sqrt(q(j)) * normal(rng);

    MeanFit fit = fit_mean(d);
    MatrixXd Z(N, 6);
    Z << d.X, d.U;
    const MatrixXd ZtZinv = (Z.transpose() * Z).inverse();
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 6; ++j) {
            const double se = std::sqrt(q(i) * ZtZinv(j, j));
            const double est = j < 4 ? fit.A(i, j) : fit.B(i, j - 4);
            const double truth = j < 4 ? A(i, j) : B(i, j - 4);
            CHECK(std::abs(est - truth) <= 3.0 * se);
        }
    }
}

TEST_CASE("fit_kernels: iid noise residuals recover the noise variance") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> noise(0.0, 0.1);  // variance 0.01
    const int N = 300;
    Dataset d = random_dataset(N, 1, 1, rng);
    MatrixXd residuals(N, 1);
    for (int i = 0; i < N; ++i) residuals(i, 0) = noise(rng);

    KernelFit fit = fit_kernels(d, residuals, 3, 42);
    CHECK(fit.q_diag(0) >= 0.005);
    CHECK(fit.q_diag(0) <= 0.02);
    CHECK(fit.kernels[0].signal_variance < 10.0 * fit.q_diag(0));
}

TEST_CASE("fit_kernels: zero residuals push to the noise floor with a warning") {
    std::mt19937_64 rng(17);
    Dataset d = random_dataset(20, 2, 1, rng);
    MatrixXd residuals = MatrixXd::Zero(20, 2);
    KernelFit fit = fit_kernels(d, residuals, 2, 0);
    CHECK(fit.q_diag.maxCoeff() <= 1e-8);
    bool warned = false;
    for (const auto& msg : fit.diagnostics) warned = warned || msg.find("zero") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("fit_kernels: 1-D toy held-out accuracy") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    std::normal_distribution<double> noise(0.0, 0.01);
    const int N = 100;
    Dataset d;
    d.X.resize(N, 1);
    d.U.resize(N, 0);
    d.Xplus.resize(N, 1);
    for (int i = 0; i < N; ++i) {
        d.X(i, 0) = unif(rng);
        d.Xplus(i, 0) = std::sin(3.0 * d.X(i, 0)) + noise(rng);
    }
    MatrixXd residuals = d.Xplus;  // zero mean function

    KernelFit fit = fit_kernels(d, residuals, 3, 7);
    GpssmModel model(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 0), fit.kernels, fit.q_diag, d);

    double sq_err = 0.0;
    int count = 0;
    for (double x = -1.8; x <= 1.8; x += 0.05, ++count) {
        const auto post = posterior(model, VectorXd::Constant(1, x), VectorXd::Zero(0));
        const double err = post.mean(0) - std::sin(3.0 * x);
        sq_err += err * err;
    }
    CHECK(std::sqrt(sq_err / count) < 0.05);
}

TEST_CASE("posterior: zero residuals collapse to the linear mean") {
    std::mt19937_64 rng(23);
    const int n = 2, m = 1;
    MatrixXd A(n, n), B(n, m);
    A << 0.9, 0.1, 0.0, 0.8;
    B << 0.0, 0.1;
    Dataset d = random_dataset(6, n, m, rng);
    d.Xplus = d.X * A.transpose() + d.U * B.transpose();  // exact linear data
    std::vector<SquaredExpKernel> kernels{kernel(0.5, VectorXd::Constant(3, 1.5)),
                                          kernel(0.7, VectorXd::Constant(3, 2.0))};
    GpssmModel model(A, B, kernels, VectorXd::Constant(2, 1e-4), d);
    const VectorXd x = VectorXd::Constant(n, 0.3), u = VectorXd::Constant(m, -0.2);
    const auto post = posterior(model, x, u);
    CHECK((post.mean - (A * x + B * u)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("posterior: N = 1 scalar closed form") {
    Dataset d;
    d.X.resize(1, 1);
    d.U.resize(1, 0);
    d.Xplus.resize(1, 1);
    d.X(0, 0) = 0.4;
    d.Xplus(0, 0) = 1.3;
    const double s = 0.9, ell = 1.1, q = 0.05, a = 0.5;
    GpssmModel model(MatrixXd::Constant(1, 1, a), MatrixXd::Zero(1, 0),
                     {kernel(s, VectorXd::Constant(1, ell))}, VectorXd::Constant(1, q), d);
    const double xq = -0.3;
    const auto post = posterior(model, VectorXd::Constant(1, xq), VectorXd::Zero(0));

    const double resid = 1.3 - a * 0.4;
    const double dx = (xq - 0.4) / ell;
    const double kq = s * std::exp(-dx * dx);
    const double mu = a * xq + kq * resid / (s + q);
    const double xi = s - kq * kq / (s + q);
    CHECK(post.mean(0) == doctest::Approx(mu).epsilon(1e-12));
    CHECK(post.variance(0) == doctest::Approx(xi).epsilon(1e-12));
}

TEST_CASE("posterior: joint-Gaussian conditioning oracle at N = 3") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> normal(0, 1);
    std::uniform_real_distribution<double> unif(0.5, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2, m = 1, N = 3;
        Dataset d = random_dataset(N, n, m, rng);
        MatrixXd A(n, n), B(n, m);
        for (int i = 0; i < n * n; ++i) A(i / n, i % n) = 0.3 * normal(rng);
        for (int i = 0; i < n * m; ++i) B(i / m, i % m) = 0.3 * normal(rng);
        std::vector<SquaredExpKernel> kernels;
        VectorXd q(n);
        for (int i = 0; i < n; ++i) {
            VectorXd ell(n + m);
            for (int j = 0; j < n + m; ++j) ell(j) = unif(rng);
            kernels.push_back(kernel(unif(rng), ell));
            q(i) = 0.1 * unif(rng);
        }
        GpssmModel model(A, B, kernels, q, d);

        VectorXd x(n), u(m);
        for (int i = 0; i < n; ++i) x(i) = normal(rng);
        for (int i = 0; i < m; ++i) u(i) = normal(rng);
        const auto post = posterior(model, x, u);

        // Brute-force conditioning of the (N+1)-point joint Gaussian.
        VectorXd xhat(n + m);
        xhat << x, u;
        for (int i = 0; i < n; ++i) {
            MatrixXd S11(N, N);
            VectorXd k_star(N);
            for (int a2 = 0; a2 < N; ++a2) {
                for (int b = 0; b < N; ++b)
                    S11(a2, b) = kernels[i](d.regressor(a2), d.regressor(b));
                k_star(a2) = kernels[i](d.regressor(a2), xhat);
            }
            S11 += q(i) * MatrixXd::Identity(N, N);
            VectorXd resid(N);
            for (int j = 0; j < N; ++j)
                resid(j) = d.Xplus(j, i) - A.row(i).dot(d.X.row(j)) - B.row(i).dot(d.U.row(j));
            const MatrixXd S11inv = S11.inverse();
            const double mu =
                A.row(i).dot(x) + B.row(i).dot(u) + k_star.dot(S11inv * resid);
            const double xi =
                kernels[i].signal_variance - k_star.dot(S11inv * k_star);
            CHECK(std::abs(post.mean(i) - mu) <= 1e-8);
            CHECK(std::abs(post.variance(i) - std::max(xi, 0.0)) <= 1e-8);
        }
    }
}

TEST_CASE("compute_phi: zero residuals and scalar closed form") {
    Dataset d;
    d.X.resize(1, 1);
    d.U.resize(1, 0);
    d.Xplus.resize(1, 1);
    d.X(0, 0) = 0.2;
    d.Xplus(0, 0) = 0.1;  // residual = 0.1 with A = 0
    const double s = 0.6, q = 0.2;
    GpssmModel model(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 0),
                     {kernel(s, VectorXd::Constant(1, 1.0))}, VectorXd::Constant(1, q), d);
    const double expected = std::pow(s * (1.0 / (s + q)) * 0.1, 2);
    CHECK(compute_phi(model) == doctest::Approx(expected).epsilon(1e-12));

    Dataset dz = d;
    dz.Xplus(0, 0) = 0.0;
    GpssmModel zero(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 0),
                    {kernel(s, VectorXd::Constant(1, 1.0))}, VectorXd::Constant(1, q), dz);
    CHECK(compute_phi(zero) == 0.0);
}

TEST_CASE("compute_phi: sampled mean-correction containment") {
    // Long-lengthscale regime (the case-study regime): the containment
    // ||mu_hat||^2 <= phi must hold at every sampled query point.
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal(0, 1);
    const int N = 60, n = 2, m = 1;
    Dataset d = random_dataset(N, n, m, rng);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < n; ++j) d.Xplus(i, j) = 0.01 * normal(rng);
    std::vector<SquaredExpKernel> kernels{kernel(1e-4, VectorXd::Constant(3, 50.0)),
                                          kernel(2e-4, VectorXd::Constant(3, 80.0))};
    GpssmModel model(MatrixXd::Zero(n, n), MatrixXd::Zero(n, m), kernels,
                     VectorXd::Constant(n, 1e-4), d);
    const double phi = compute_phi(model, 1000, 7);

    std::uniform_real_distribution<double> unif(-1.5, 1.5);
    for (int t = 0; t < 1000; ++t) {
        VectorXd x(n), u(m);
        for (int i = 0; i < n; ++i) x(i) = unif(rng);
        for (int i = 0; i < m; ++i) u(i) = unif(rng);
        CHECK(posterior_mean_correction(model, x, u).squaredNorm() <= phi * (1.0 + 1e-9));
    }
}

TEST_CASE("theta: closed forms and the block-product oracle") {
    UncertaintyBounds b;
    b.phi = 0.0;
    b.sigma_hat_diag = VectorXd::Constant(1, 1.0);
    b.q_diag = VectorXd::Constant(1, 1.0);
    CHECK(theta(b, 0.5, 1)(0, 0) == doctest::Approx(8.0).epsilon(1e-14));

    UncertaintyBounds noise_free;
    noise_free.phi = 1.0;
    noise_free.sigma_hat_diag = VectorXd::Zero(3);
    noise_free.q_diag = VectorXd::Zero(3);
    for (double p : {0.0, 0.4, 0.99})
        CHECK((theta(noise_free, p, 3) - 2.0 * MatrixXd::Identity(3, 3)).norm() <= 1e-14);

    UncertaintyBounds g;
    g.phi = 0.37;
    g.sigma_hat_diag = (VectorXd(2) << 0.5, 1.5).finished();
    g.q_diag = (VectorXd(2) << 0.1, 0.2).finished();
    const double p = 0.8;
    const int n = 2;
    // Direct block product [I  I2n] BlkDiag(2 phi I, (2n/(1-p)) Qbar) [I; I2n^T].
    MatrixXd script_i(n, 2 * n);
    script_i << MatrixXd::Identity(n, n), MatrixXd::Identity(n, n);
    MatrixXd sel(n, 3 * n);
    sel << MatrixXd::Identity(n, n), script_i;
    MatrixXd blk = MatrixXd::Zero(3 * n, 3 * n);
    blk.topLeftCorner(n, n) = 2.0 * g.phi * MatrixXd::Identity(n, n);
    blk.bottomRightCorner(2 * n, 2 * n) = (2.0 * n / (1.0 - p)) * g.q_bar();
    const MatrixXd direct = sel * blk * sel.transpose();
    CHECK((theta(g, p, n) - direct).lpNorm<Eigen::Infinity>() <= 1e-12);

    CHECK_THROWS_AS(theta(g, 1.0, n), std::invalid_argument);
}

TEST_CASE("theta: monotone in p (PSD order)") {
    UncertaintyBounds g;
    g.phi = 0.1;
    g.sigma_hat_diag = (VectorXd(2) << 0.3, 0.6).finished();
    g.q_diag = (VectorXd(2) << 0.05, 0.1).finished();
    double prev = 0.0;
    for (double p : {0.2, 0.5, 0.8, 0.95}) {
        MatrixXd diff = theta(g, p, 2) - theta(g, prev, 2);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(diff, Eigen::EigenvaluesOnly);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12);
        prev = p;
    }
}

TEST_CASE("sample_posterior_step: deterministic limit and moment checks") {
    Dataset d;
    d.X.resize(1, 1);
    d.U.resize(1, 1);
    d.Xplus.resize(1, 1);
    d.X(0, 0) = 0.5;
    d.U(0, 0) = 0.1;
    d.Xplus(0, 0) = 0.45;

    // Query at the training input with zero noise: variance vanishes.
    GpssmModel exact(MatrixXd::Constant(1, 1, 0.9), MatrixXd::Constant(1, 1, 0.1),
                     {kernel(0.4, VectorXd::Constant(2, 1.0))}, VectorXd::Zero(1), d);
    std::mt19937_64 rng(37);
    const VectorXd x = VectorXd::Constant(1, 0.5), u = VectorXd::Constant(1, 0.1);
    const auto post = posterior(exact, x, u);
    CHECK(post.variance(0) <= 1e-12);
    CHECK((sample_posterior_step(exact, x, u, rng) - post.mean).lpNorm<Eigen::Infinity>() <=
          1e-6);

    // CLT and empirical covariance at a noisy model.
    GpssmModel noisy(MatrixXd::Constant(1, 1, 0.9), MatrixXd::Constant(1, 1, 0.1),
                     {kernel(0.4, VectorXd::Constant(2, 1.0))}, VectorXd::Constant(1, 0.02), d);
    const VectorXd xq = VectorXd::Constant(1, -0.2), uq = VectorXd::Constant(1, 0.3);
    const auto pq = posterior(noisy, xq, uq);
    const double total_var = pq.variance(0) + 0.02;
    const int S = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < S; ++i) {
        const double v = sample_posterior_step(noisy, xq, uq, rng)(0);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / S;
    const double var = sumsq / S - mean * mean;
    CHECK(std::abs(mean - pq.mean(0)) <= 4.0 * std::sqrt(total_var / S));
    CHECK(std::abs(var - total_var) <= 0.05 * total_var);
}

TEST_CASE("invariants: stationarity, variance dominance, Eq.-25 style consistency") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> normal(0, 1);
    const int n = 2, m = 1, N = 25;
    Dataset d = random_dataset(N, n, m, rng);
    MatrixXd A = 0.5 * MatrixXd::Identity(n, n);
    MatrixXd B = MatrixXd::Constant(n, m, 0.1);
    std::vector<SquaredExpKernel> kernels{kernel(0.8, VectorXd::Constant(3, 2.0)),
                                          kernel(0.3, VectorXd::Constant(3, 1.0))};
    GpssmModel model(A, B, kernels, VectorXd::Constant(n, 0.05), d);

    for (int t = 0; t < 1000; ++t) {
        VectorXd x(n), u(m);
        for (int i = 0; i < n; ++i) x(i) = 2.0 * normal(rng);
        for (int i = 0; i < m; ++i) u(i) = 2.0 * normal(rng);
        const auto post = posterior(model, x, u);
        for (int i = 0; i < n; ++i) {
            // Sigma_hat - Sigma(xhat) >= -1e-10 (posterior never exceeds prior).
            CHECK(kernels[i].signal_variance - post.variance(i) >= -1e-10);
        }
        // Stationarity: k(xhat, xhat) equals the signal variance everywhere.
        VectorXd xhat(n + m);
        xhat << x, u;
        CHECK(kernels[0](xhat, xhat) == doctest::Approx(0.8).epsilon(1e-12));
        // mu_hat(xhat) = mu(xhat) - (A x + B u) reconstruction.
        const VectorXd mu_hat = posterior_mean_correction(model, x, u);
        CHECK((A * x + B * u + mu_hat - post.mean).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("invariants: posterior interpolation with vanishing noise") {
    std::mt19937_64 rng(43);
    Dataset d = random_dataset(10, 1, 1, rng);
    GpssmModel model(MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1),
                     {kernel(1.0, VectorXd::Constant(2, 2.0))}, VectorXd::Constant(1, 1e-12),
                     d);
    for (int j = 0; j < 5; ++j) {
        const auto post = posterior(model, d.X.row(j), d.U.row(j));
        CHECK(std::abs(post.mean(0) - d.Xplus(j, 0)) <= 1e-4);
    }
}

TEST_CASE("cached factorizations reproduce direct solves") {
    std::mt19937_64 rng(47);
    const int N = 30;
    Dataset d = random_dataset(N, 2, 1, rng);
    std::vector<SquaredExpKernel> kernels{kernel(0.5, VectorXd::Constant(3, 1.0)),
                                          kernel(0.9, VectorXd::Constant(3, 3.0))};
    GpssmModel model(0.2 * MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 1), kernels,
                     VectorXd::Constant(2, 0.01), d);
    for (int i = 0; i < 2; ++i) {
        MatrixXd K(N, N);
        for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) K(a, b) = kernels[i](d.regressor(a), d.regressor(b));
        K.diagonal().array() += 0.01;
        const VectorXd direct = K.fullPivLu().solve(VectorXd(model.residuals().col(i)));
        CHECK((model.alpha(i) - direct).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
}
