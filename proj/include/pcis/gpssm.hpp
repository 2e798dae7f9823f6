#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

// Gaussian Process State Space Model with a linear mean A x + B u and one
// stationary squared-exponential kernel per output dimension.  Fitting is
// two-stage: ordinary least squares for (A, B), then per-output marginal
// likelihood maximization over the kernel hyperparameters and the noise
// variance on the mean residuals.

namespace pcis {

struct Dataset {
    Eigen::MatrixXd X;      // N x n states
    Eigen::MatrixXd U;      // N x m inputs (m may be zero)
    Eigen::MatrixXd Xplus;  // N x n successor states

    Eigen::Index size() const { return X.rows(); }
    Eigen::Index state_dim() const { return X.cols(); }
    Eigen::Index input_dim() const { return U.cols(); }

    // Stacked regression input [x_j; u_j] for sample j.
    Eigen::VectorXd regressor(Eigen::Index j) const;
    void validate() const;
};

struct SquaredExpKernel {
    double signal_variance = 1.0;       // value of k(z, z) for every z
    Eigen::VectorXd lengthscales;       // ARD, one per input dimension

    void validate() const;
    // k(a, b) = s * exp(-sum_d ((a_d - b_d) / l_d)^2)
    double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
};

struct MeanFit {
    Eigen::MatrixXd A;          // n x n
    Eigen::MatrixXd B;          // n x m
    Eigen::MatrixXd residuals;  // N x n, outputs minus mean predictions
};

// Ordinary least squares for the linear mean.  Requires N >= n + m and a
// full-rank regressor matrix; otherwise throws naming the deficient
// directions.
MeanFit fit_mean(const Dataset& data);

struct KernelFit {
    std::vector<SquaredExpKernel> kernels;  // one per output
    Eigen::VectorXd q_diag;                 // fitted noise variances
    Eigen::VectorXd log_marginal;           // best log marginal likelihood per output
    std::vector<std::string> diagnostics;   // rejected restarts, degenerate-data warnings
};

// Maximizes the per-output log marginal likelihood over
// (signal_variance, lengthscales, noise variance) in log space with
// multi-start local optimization.  Deterministic given `seed`.
KernelFit fit_kernels(const Dataset& data, const Eigen::MatrixXd& residuals, int restarts,
                      std::uint64_t seed);

struct PosteriorMoments {
    Eigen::VectorXd mean;      // mu(xhat)
    Eigen::VectorXd variance;  // diagonal entries xi_i(xhat) of Sigma(xhat)
};

class GpssmModel {
   public:
    GpssmModel(Eigen::MatrixXd A, Eigen::MatrixXd B, std::vector<SquaredExpKernel> kernels,
               Eigen::VectorXd q_diag, Dataset data);

    Eigen::Index n() const { return A_.rows(); }
    Eigen::Index m() const { return B_.cols(); }
    const Eigen::MatrixXd& A() const { return A_; }
    const Eigen::MatrixXd& B() const { return B_; }
    const Eigen::VectorXd& q_diag() const { return q_diag_; }
    const std::vector<SquaredExpKernel>& kernels() const { return kernels_; }
    const Dataset& data() const { return data_; }

    // Cached quantities for output i.
    const Eigen::VectorXd& alpha(Eigen::Index i) const { return alpha_[i]; }
    const Eigen::LLT<Eigen::MatrixXd>& factor(Eigen::Index i) const { return factor_[i]; }
    double jitter(Eigen::Index i) const { return jitter_[i]; }
    // Cross-kernel vector kbar_i(xhat) against all training inputs.
    Eigen::VectorXd kernel_vector(Eigen::Index i, const Eigen::VectorXd& xhat) const;
    // Residual targets y_i - ybar_i used by the posterior.
    const Eigen::MatrixXd& residuals() const { return residuals_; }

   private:
    Eigen::MatrixXd A_, B_;
    std::vector<SquaredExpKernel> kernels_;
    Eigen::VectorXd q_diag_;
    Dataset data_;
    Eigen::MatrixXd residuals_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factor_;
    std::vector<Eigen::VectorXd> alpha_;
    std::vector<double> jitter_;
};

// Exact posterior moments of g(x, u) given the training data.
PosteriorMoments posterior(const GpssmModel& model, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u);

// GP mean correction mu_hat(xhat) = mu(xhat) - (A x + B u).
Eigen::VectorXd posterior_mean_correction(const GpssmModel& model, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& u);

// Data-dependent constant bounding ||mu_hat(xhat)||^2 over the operating
// region.  Verified on a sample of query points drawn from the (inflated)
// training-input bounding box; a sampled violation throws.
double compute_phi(const GpssmModel& model, int check_samples = 256, std::uint64_t seed = 0);

struct UncertaintyBounds {
    double phi = 0.0;
    Eigen::VectorXd sigma_hat_diag;  // prior variances s_1..s_n
    Eigen::VectorXd q_diag;          // noise variances

    Eigen::Index n() const { return sigma_hat_diag.size(); }
    // BlkDiag(SigmaHat, Q), 2n x 2n.
    Eigen::MatrixXd q_bar() const;
};

UncertaintyBounds uncertainty_bounds(const GpssmModel& model);

// Theta(p) = 2 phi I + (2 n / (1 - p)) (SigmaHat + Q), the shape of the
// outer ellipsoid bounding the combined mean deviation and inflated noise.
Eigen::MatrixXd theta(const UncertaintyBounds& bounds, double p, Eigen::Index n);

// One successor-state draw: g(x,u)|D ~ N(mu, Sigma) plus w ~ N(0, Q).
Eigen::VectorXd sample_posterior_step(const GpssmModel& model, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& u, std::mt19937_64& rng);

}  // namespace pcis
