#include "pcis/demo.hpp"

#include "pcis/rng.hpp"

namespace pcis {

DemoConfig::DemoConfig() {
    q_true.resize(4);
    q_true << 2e-5, 5e-5, 2e-5, 5e-5;
    synthesis.delta = 1e-3;
}

PolytopeConstraints quadrotor_constraints() {
    PolytopeConstraints c;
    Eigen::VectorXd state_lo(4), state_hi(4);
    state_lo << -5, -7, -5, -7;
    state_hi << 5, 7, 5, 7;
    c.state_rows = box_rows(state_lo, state_hi);
    Eigen::VectorXd input_lo(2), input_hi(2);
    input_lo << -5, -5;
    input_hi << 5, 5;
    c.input_rows = box_rows(input_lo, input_hi);
    return c;
}

Dataset generate_quadrotor_data(const DemoConfig& config) {
    const int N = config.transitions;
    std::mt19937_64 rng(derive_seed(config.seed, 0xdddd));
    std::uniform_real_distribution<double> dither(-1.5, 1.5);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::VectorXd noise_std = config.q_true.cwiseSqrt();

    Dataset data;
    data.X.resize(N, 4);
    data.U.resize(N, 2);
    data.Xplus.resize(N, 4);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
    for (int j = 0; j < N; ++j) {
        Eigen::VectorXd u(2);
        // Stabilizing feedback plus dither keeps the trajectory inside the
        // boxes while exciting both axes.
        u(0) = -1.0 * x(0) - 1.4 * x(1) + dither(rng);
        u(1) = -1.0 * x(2) - 1.4 * x(3) + dither(rng);
        Eigen::VectorXd next = ground_truth_quadrotor(x, u, config.truth);
        for (int i = 0; i < 4; ++i) next(i) += noise_std(i) * normal(rng);
        data.X.row(j) = x;
        data.U.row(j) = u;
        data.Xplus.row(j) = next;
        x = next;
    }
    return data;
}

DemoResult run_quadrotor_demo(const DemoConfig& config) {
    Dataset data = generate_quadrotor_data(config);

    MeanFit mean = fit_mean(data);
    KernelFit kernel_fit =
        fit_kernels(data, mean.residuals, config.restarts, derive_seed(config.seed, 0xf17));
    GpssmModel model(mean.A, mean.B, kernel_fit.kernels, kernel_fit.q_diag, data);
    UncertaintyBounds bounds = uncertainty_bounds(model);

    PolytopeConstraints constraints = quadrotor_constraints();

    SynthesisConfig synth = config.synthesis;
    synth.jobs = config.jobs;
    PciResult pci = synthesize(model.A(), model.B(), bounds, constraints, synth);

    VerificationReport verification = verify_controller(
        model.A(), model.B(), bounds, pci.L, pci.p_star, default_alpha_grid(), &constraints);

    RolloutConfig mc;
    mc.horizon = config.horizon;
    mc.n_rollouts = config.rollouts;
    mc.initial_state_mode = InitialStateMode::UniformInSet;
    mc.seed = derive_seed(config.seed, 0x3c);
    mc.jobs = config.jobs;
    McReport report =
        monte_carlo(ground_truth_step_fn(config.truth, config.q_true), pci, constraints, mc);

    return DemoResult{std::move(data),        std::move(model), std::move(bounds),
                      std::move(constraints), std::move(pci),   std::move(verification),
                      std::move(report)};
}

}  // namespace pcis
