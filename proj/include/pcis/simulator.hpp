#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>

#include "pcis/gpssm.hpp"
#include "pcis/invariance.hpp"
#include "pcis/synthesis.hpp"

// Monte Carlo validation: closed-loop rollouts under either the fitted GPSSM
// posterior or a ground-truth dynamics, and empirical estimates of the
// containment / constraint-satisfaction metrics.

namespace pcis {

// One closed-loop step: x_next = f(x, u, rng).
using StepFn =
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&, std::mt19937_64&)>;

enum class InitialStateMode { Fixed, UniformInSet };
enum class DynamicsMode { IidPosterior, GroundTruth };

struct RolloutConfig {
    int horizon = 100;   // T
    int n_rollouts = 1;
    InitialStateMode initial_state_mode = InitialStateMode::UniformInSet;
    Eigen::VectorXd x0;  // used in Fixed mode
    std::uint64_t seed = 0;
    int jobs = 1;

    void validate() const;
};

struct Rollout {
    Eigen::MatrixXd states;  // (T+1) x n, including x0
    bool diverged = false;
    int valid_steps = 0;  // states beyond this index are unsafe by decree
};

// Closed-loop rollout x_{k+1} = step(x_k, L x_k, rng).  Divergence
// (||x|| > 1e9 or non-finite) truncates the rollout; remaining steps count
// as unsafe.
Rollout rollout(const StepFn& step, const Eigen::MatrixXd& L, const Eigen::VectorXd& x0, int T,
                std::mt19937_64& rng);

struct WilsonInterval {
    double lower = 0.0;
    double upper = 1.0;
};

WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials, double z = 1.96);

struct McReport {
    // min over k of Pr(x_k in E(0, P^{-1})).
    double min_k_containment = 0.0;
    // min over k of Pr(u_k in U | x_k in E).
    double input_admissibility = 0.0;
    double all_time_safety = 0.0;       // Pr(x_k in X for all k)
    double all_time_containment = 0.0;  // Pr(x_k in E for all k)
    WilsonInterval min_k_containment_ci, input_admissibility_ci, all_time_safety_ci,
        all_time_containment_ci;
    std::int64_t rollouts = 0;
};

// Estimates the containment metrics over config.n_rollouts closed-loop
// rollouts.  Rollouts use derived per-index seeds and count-only
// aggregation, so the result is independent of execution order.
McReport monte_carlo(const StepFn& step, const PciResult& pci,
                     const PolytopeConstraints& constraints, const RolloutConfig& config);

// Step function drawing from the fitted posterior (Eq.-8 moments plus
// process noise), independently at each step.
StepFn posterior_step_fn(const GpssmModel& model);

struct QuadrotorParams {
    double dt = 0.1;
    double drag = 0.02;          // quadratic velocity drag coefficient
    double actuator_gain = 1.0;  // commanded-to-achieved acceleration gain
};

// Planar double integrator with quadratic drag, standing in for an external
// high-fidelity model.  States (x, vx, y, vy), inputs (ax, ay); exact
// discretization of the constant-acceleration step:
//   v+ = v + dt a,  x+ = x + dt v + dt^2/2 a,
// with a = actuator_gain * u - drag * v |v| evaluated at the current state.
Eigen::VectorXd ground_truth_quadrotor(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                       const QuadrotorParams& params);

// Ground-truth step function: deterministic map plus N(0, Q) noise.
StepFn ground_truth_step_fn(const QuadrotorParams& params, const Eigen::VectorXd& q_diag);

}  // namespace pcis
