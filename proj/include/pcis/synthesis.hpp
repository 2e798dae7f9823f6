#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcis/gpssm.hpp"
#include "pcis/invariance.hpp"
#include "pcis/lmi.hpp"
#include "pcis/sdp.hpp"

// Joint PCI-set / state-feedback design: the semidefinite program in
// (W = P^{-1}, M) for fixed (p, eta), the eta sweep, and the outer bisection
// on the probability level p.

namespace pcis {

std::vector<double> default_eta_grid(int count = 20);  // uniform in [0.05, 0.95]

struct SynthesisConfig {
    double delta = 1e-3;            // bisection precision
    std::vector<double> eta_grid = default_eta_grid();
    double p_init = 0.5;
    SolverSettings solver;
    int jobs = 1;                   // parallelism of the eta sweep

    void validate() const;
};

struct FeasibilityLogEntry {
    double p = 0.0;
    double eta = 0.0;
    SolveStatus status = SolveStatus::Inaccurate;
    double solve_ms = 0.0;
};

struct PciResult {
    Eigen::MatrixXd P;  // shape matrix of the PCI set E(0, P^{-1})
    Eigen::MatrixXd L;  // feedback gain, L = M P
    double p_star = 0.0;
    double eta_star = 0.0;
    double logdet = 0.0;  // log det P^{-1}, the volume proxy
    int bisection_iterations = 0;
    std::vector<FeasibilityLogEntry> log;
    std::vector<std::string> warnings;
};

class SynthesisInfeasible : public std::runtime_error {
   public:
    explicit SynthesisInfeasible(const std::string& what, std::vector<FeasibilityLogEntry> log,
                                 double best_margin)
        : std::runtime_error(what), log(std::move(log)), best_margin(best_margin) {}
    std::vector<FeasibilityLogEntry> log;
    double best_margin;  // most-nearly-feasible phase-1 slack observed
};

// The design SDP for fixed (p, eta): variables W = P^{-1} (symmetric) and
// M (m x n), with the contraction Schur block, the disturbance margin
// H W H^T >= (1 - sqrt(eta))^{-2} I with H = Theta(p)^{-1/2} (dropped when
// Theta = 0), the scalar state rows and the input Schur blocks.
LmiProblem build_design_sdp(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const UncertaintyBounds& bounds,
                            const PolytopeConstraints& constraints, double p, double eta);

struct BisectionResult {
    double p_low = 0.0;
    double p_up = 1.0;
    int iterations = 0;
};

// Bisection on the probability level: p_low = 0, p_up = 1, first probe at
// p_init, midpoint updates; terminates when p_up - p_low <= delta.
BisectionResult bisect_probability(const std::function<bool(double)>& feasible_at, double delta,
                                   double p_init = 0.5);

PciResult synthesize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const UncertaintyBounds& bounds, const PolytopeConstraints& constraints,
                     const SynthesisConfig& config = {});

// Validates the monotonicity assumption behind the bisection: the
// feasibility indicator over ascending p samples must be non-increasing.
bool feasibility_is_monotone_check(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const UncertaintyBounds& bounds,
                                   const PolytopeConstraints& constraints, double eta,
                                   const std::vector<double>& p_samples,
                                   const SolverSettings& settings = {});

}  // namespace pcis
