#pragma once

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "pcis/ellipsoid.hpp"
#include "pcis/gpssm.hpp"
#include "pcis/lmi.hpp"
#include "pcis/sdp.hpp"

// Robust / probabilistic invariance machinery: the S-procedure LMI whose
// feasibility certifies an ellipsoid robustly positively invariant, its
// GPSSM specialization, the robust-to-probabilistic substitution, and the
// polytope containment checks.

namespace pcis {

// z+ = A z + B d + C v with d and v unknown-but-bounded in ellipsoids.
struct DisturbedLinearSystem {
    Eigen::MatrixXd A_mat;  // n_z x n_z
    Eigen::MatrixXd B_mat;  // n_z x n_d
    Eigen::MatrixXd C_mat;  // n_z x n_v
    Ellipsoidd d_set;       // E(mu_d, Sigma_d), Sigma_d invertible
    Ellipsoidd v_set;       // E(mu_v, Sigma_v), Sigma_v invertible

    Eigen::Index nz() const { return A_mat.rows(); }
    void validate() const;
};

// X = {x : beta_i^T x <= 1}, U = {u : zeta_j^T u <= 1}.
struct PolytopeConstraints {
    std::vector<Eigen::VectorXd> state_rows;
    std::vector<Eigen::VectorXd> input_rows;
};

// Expands box bounds into the 2k rows +-e_i / bound_i.
std::vector<Eigen::VectorXd> box_rows(const Eigen::VectorXd& lower,
                                      const Eigen::VectorXd& upper);

// The Theorem-1 LMI over the symmetric variable "P": feasibility certifies
// E(c, P^{-1}) robustly positively invariant for the given system, for the
// fixed S-procedure multiplier alpha.  Includes the strictness constraint
// P >= 1e-8 I.
LmiProblem build_ris_lmi(const DisturbedLinearSystem& sys, const Eigen::VectorXd& c,
                         double alpha);

// GPSSM specialization: the same S-procedure matrix with A <- A + B L,
// the mean-correction channel (identity, Sigma_d = phi I, dropped when
// phi = 0) and the inflated noise channel ([I I], Sigma_v = n/(1-p) Qbar).
// Feasibility certifies E(0, P^{-1}) probabilistically positively invariant
// at level p.
LmiProblem build_gpssm_verification_lmi(const UncertaintyBounds& bounds,
                                        const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                        const Eigen::MatrixXd& L, double p, double alpha);

// Inflated disturbance set E(0, n_z/(1-p) * cov_bound) that turns a robust
// certificate into a probabilistic one at level p.
Ellipsoidd pis_from_ris_substitution(const Eigen::MatrixXd& cov_bound, double p,
                                     Eigen::Index n_z);

// Default S-procedure multiplier grid: 25 logarithmically spaced plus 25
// linearly spaced points in [0.01, 0.99].
std::vector<double> default_alpha_grid();

struct AlphaLogEntry {
    double alpha = 0.0;
    SolveStatus status = SolveStatus::Inaccurate;
};

struct VerificationReport {
    bool feasible = false;
    double alpha = 0.0;
    Eigen::MatrixXd P;  // certificate when feasible
    std::vector<AlphaLogEntry> alpha_log;
    // Present when constraints were supplied and a certificate was found.
    bool constraints_checked = false;
    bool constraints_ok = false;
    std::vector<double> state_margins;  // beta^T P^{-1} beta per row
    std::vector<double> input_margins;  // zeta^T L P^{-1} L^T zeta per row
};

// Sweeps the alpha grid, reports the first feasible certificate, and when
// constraints are supplied additionally checks set containment margins.
VerificationReport verify_controller(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const UncertaintyBounds& bounds, const Eigen::MatrixXd& L,
                                     double p, const std::vector<double>& alpha_grid,
                                     const PolytopeConstraints* constraints = nullptr,
                                     const SolverSettings& settings = {});

// Brute-force check of the quadratic-boundedness property behind Theorem 1:
// samples z on/outside the ellipsoid boundary and disturbances in their
// sets, and verifies the one-step decrease condition.
bool sampled_invariance_oracle(const DisturbedLinearSystem& sys, const Eigen::VectorXd& c,
                               const Eigen::MatrixXd& P, int samples, std::mt19937_64& rng);

}  // namespace pcis
