#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcis/lmi.hpp"

// A narrow conic-optimization layer: decides feasibility of an LmiProblem or
// maximizes a linear / log-determinant objective over its feasible set.
//
// The engine is a dense log-barrier path-following method (damped Newton on
// the central path), adequate for the small block sizes this project
// produces.  Every Feasible outcome is re-checked by independent eigenvalue
// evaluation of all constraints; the solver is never trusted blindly.

namespace pcis {

enum class SolveStatus { Feasible, Infeasible, Inaccurate, IterationLimit };

const char* to_string(SolveStatus s);

struct SolveOutcome {
    SolveStatus status = SolveStatus::Inaccurate;
    // Variable values, present when status is Feasible or Inaccurate.
    std::map<std::string, Eigen::MatrixXd> point;
    std::optional<double> objective_value;
    // Worst normalized constraint violation at the returned point (0 when
    // strictly feasible) and the barrier duality-gap bound at termination.
    double primal_residual = 0.0;
    double gap_bound = 0.0;
    // Phase-1 slack: the best certified margin by which all (equilibrated)
    // constraints can be made positive definite.  Negative means infeasible.
    double feasibility_margin = 0.0;
    int newton_iterations = 0;
    // Objective value after each centering step (monotone for logdet runs).
    std::vector<double> objective_trace;
};

struct SolverSettings {
    double tolerance = 1e-8;
    int max_iterations = 200;     // centering steps per phase
    double variable_bound = 1e8;  // |x_k| safeguard box
    double slack_cap = 1.0;       // cap on the phase-1 feasibility slack
};

// Decides feasibility, or optimizes the problem's own objective if one is
// set.  Structural errors (undeclared variables, asymmetric constraints) are
// raised by LmiProblem at construction time, before solving.
SolveOutcome solve(const LmiProblem& problem, const SolverSettings& settings = {});

// Maximizes log det of the named symmetric variable subject to the problem's
// constraints.  The variable must be kept positive definite by the
// constraints (append an epsilon * I lower bound).
SolveOutcome maximize_logdet(const LmiProblem& problem, const std::string& target_variable,
                             const SolverSettings& settings = {});

}  // namespace pcis
