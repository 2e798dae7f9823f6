#include "pcis/gpssm.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pcis/rng.hpp"

namespace pcis {

Eigen::VectorXd Dataset::regressor(Eigen::Index j) const {
    Eigen::VectorXd z(state_dim() + input_dim());
    z.head(state_dim()) = X.row(j);
    z.tail(input_dim()) = U.row(j);
    return z;
}

void Dataset::validate() const {
    if (X.rows() < 1) throw std::invalid_argument("Dataset: need at least one sample");
    if (U.rows() != X.rows() || Xplus.rows() != X.rows())
        throw std::invalid_argument("Dataset: inconsistent sample counts");
    if (Xplus.cols() != X.cols())
        throw std::invalid_argument("Dataset: successor dimension differs from state dimension");
    if (!X.allFinite() || !U.allFinite() || !Xplus.allFinite())
        throw std::invalid_argument("Dataset: non-finite entries");
}

void SquaredExpKernel::validate() const {
    if (!(signal_variance > 0.0))
        throw std::invalid_argument("SquaredExpKernel: signal variance must be positive");
    if (lengthscales.size() < 1 || (lengthscales.array() <= 0.0).any())
        throw std::invalid_argument("SquaredExpKernel: lengthscales must be positive");
}

double SquaredExpKernel::operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    const Eigen::ArrayXd d = (a - b).array() / lengthscales.array();
    return signal_variance * std::exp(-(d * d).sum());
}

MeanFit fit_mean(const Dataset& data) {
    data.validate();
    const Eigen::Index N = data.size();
    const Eigen::Index n = data.state_dim();
    const Eigen::Index m = data.input_dim();
    if (N < n + m)
        throw std::invalid_argument("fit_mean: need at least n + m = " + std::to_string(n + m) +
                                    " samples, got " + std::to_string(N));
    Eigen::MatrixXd Z(N, n + m);
    Z.leftCols(n) = data.X;
    Z.rightCols(m) = data.U;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double tol = static_cast<double>(std::max(N, n + m)) *
                       std::numeric_limits<double>::epsilon() * sv(0);
    if (sv.minCoeff() <= tol) {
        std::ostringstream msg;
        msg << "fit_mean: rank-deficient regressor matrix; deficient directions:";
        for (Eigen::Index k = 0; k < sv.size(); ++k) {
            if (sv(k) > tol) continue;
            msg << " [";
            for (Eigen::Index j = 0; j < n + m; ++j) {
                msg << (j ? "," : "") << svd.matrixV()(j, k);
            }
            msg << "]";
        }
        throw std::invalid_argument(msg.str());
    }

    MeanFit fit;
    Eigen::MatrixXd Gamma = svd.solve(data.Xplus).transpose();  // n x (n+m)
    fit.A = Gamma.leftCols(n);
    fit.B = Gamma.rightCols(m);
    fit.residuals = data.Xplus - Z * Gamma.transpose();
    return fit;
}

namespace {

constexpr double kLogSigLo = -20.0, kLogSigHi = 5.0;
constexpr double kLogLenLo = -5.0, kLogLenHi = 12.0;
constexpr double kLogNoiseLo = -20.0, kLogNoiseHi = 5.0;

// Per-dimension squared-difference matrices, shared across outputs/restarts.
std::vector<Eigen::MatrixXd> squared_diffs(const Dataset& data) {
    const Eigen::Index N = data.size();
    const Eigen::Index D = data.state_dim() + data.input_dim();
    Eigen::MatrixXd Z(N, D);
    Z.leftCols(data.state_dim()) = data.X;
    Z.rightCols(data.input_dim()) = data.U;
    std::vector<Eigen::MatrixXd> diffs(D);
    for (Eigen::Index d = 0; d < D; ++d) {
        diffs[d].resize(N, N);
        for (Eigen::Index i = 0; i < N; ++i)
            for (Eigen::Index j = 0; j < N; ++j) {
                const double dz = Z(i, d) - Z(j, d);
                diffs[d](i, j) = dz * dz;
            }
    }
    return diffs;
}

Eigen::MatrixXd kernel_matrix(const std::vector<Eigen::MatrixXd>& diffs,
                              const Eigen::VectorXd& theta) {
    const double s = std::exp(theta(0));
    const Eigen::Index N = diffs.empty() ? 0 : diffs[0].rows();
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(N, N);
    for (size_t d = 0; d < diffs.size(); ++d) {
        const double inv_l2 = std::exp(-2.0 * theta(1 + static_cast<Eigen::Index>(d)));
        E.noalias() += inv_l2 * diffs[d];
    }
    return s * (-E.array()).exp().matrix();
}

// Cholesky with the retry-with-jitter policy: 1e-10 trace(K)/N, growing x10,
// up to 3 retries.
bool llt_with_jitter(const Eigen::MatrixXd& Ky, Eigen::LLT<Eigen::MatrixXd>& llt,
                     double* jitter_used = nullptr) {
    const Eigen::Index N = Ky.rows();
    double jitter = 0.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
        Eigen::MatrixXd M = Ky;
        if (jitter > 0.0) M.diagonal().array() += jitter;
        llt.compute(M);
        if (llt.info() == Eigen::Success) {
            if (jitter_used != nullptr) *jitter_used = jitter;
            return true;
        }
        const double base = 1e-10 * Ky.trace() / static_cast<double>(N);
        jitter = jitter == 0.0 ? std::max(base, 1e-300) : jitter * 10.0;
    }
    return false;
}

struct MlEval {
    double nll = std::numeric_limits<double>::infinity();
    Eigen::VectorXd grad;
    bool ok = false;
};

// Negative log marginal likelihood and its gradient in the log parameters
// theta = (log s, log l_1..l_D, log sigma^2).
MlEval marginal_nll(const std::vector<Eigen::MatrixXd>& diffs, const Eigen::VectorXd& r,
                    const Eigen::VectorXd& theta, bool want_grad) {
    MlEval out;
    const Eigen::Index N = r.size();
    const Eigen::Index D = static_cast<Eigen::Index>(diffs.size());
    const double noise = std::exp(theta(D + 1));
    Eigen::MatrixXd K = kernel_matrix(diffs, theta);
    Eigen::MatrixXd Ky = K;
    Ky.diagonal().array() += noise;
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (!llt_with_jitter(Ky, llt)) return out;

    const Eigen::VectorXd alpha = llt.solve(r);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
    out.nll = 0.5 * r.dot(alpha) + 0.5 * logdet +
              0.5 * static_cast<double>(N) * std::log(2.0 * M_PI);
    if (!std::isfinite(out.nll)) return out;
    out.ok = true;
    if (!want_grad) return out;

    // d nll / d theta_j = -1/2 tr((alpha alpha^T - Ky^-1) dKy/dtheta_j)
    Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(N, N));
    out.grad.resize(D + 2);
    auto trace_term = [&](const Eigen::MatrixXd& dK) {
        return alpha.dot(dK * alpha) - Kinv.cwiseProduct(dK).sum();
    };
    out.grad(0) = -0.5 * trace_term(K);  // dKy/dlog s = K
    for (Eigen::Index d = 0; d < D; ++d) {
        const double inv_l2 = std::exp(-2.0 * theta(1 + d));
        const Eigen::MatrixXd dK = K.cwiseProduct(2.0 * inv_l2 * diffs[d]);
        out.grad(1 + d) = -0.5 * trace_term(dK);
    }
    // dKy/dlog sigma^2 = sigma^2 I
    out.grad(D + 1) = -0.5 * noise * (alpha.squaredNorm() - Kinv.trace());
    return out;
}

struct BoxResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::infinity();
    bool ok = false;
};

// L-BFGS with box projection; resets curvature memory when the projection
// binds.  Minimizes f via the supplied value+gradient callable.
template <typename Eval>
BoxResult lbfgs_box(const Eval& eval, Eigen::VectorXd x, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi, int max_iter = 150) {
    const auto clamp = [&](Eigen::VectorXd v) {
        return v.cwiseMax(lo).cwiseMin(hi).eval();
    };
    x = clamp(std::move(x));
    MlEval cur = eval(x, true);
    BoxResult res;
    if (!cur.ok) return res;

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;  // (s, y)
    for (int iter = 0; iter < max_iter; ++iter) {
        // Projected gradient convergence test.
        Eigen::VectorXd pg = cur.grad;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (x(i) <= lo(i) && pg(i) > 0) pg(i) = 0;
            if (x(i) >= hi(i) && pg(i) < 0) pg(i) = 0;
        }
        if (pg.lpNorm<Eigen::Infinity>() < 1e-7 * std::max(1.0, std::abs(cur.nll))) break;

        // Two-loop recursion for d = -H_approx * grad.
        Eigen::VectorXd d = -cur.grad;
        if (!mem.empty()) {
            std::vector<double> a(mem.size());
            for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
                const auto& [s, y] = mem[i];
                a[i] = s.dot(d) / y.dot(s);
                d -= a[i] * y;
            }
            const auto& [s_last, y_last] = mem.back();
            d *= s_last.dot(y_last) / y_last.squaredNorm();
            for (size_t i = 0; i < mem.size(); ++i) {
                const auto& [s, y] = mem[i];
                d += (a[i] - y.dot(d) / y.dot(s)) * s;
            }
        }
        if (d.dot(cur.grad) > -1e-14) d = -cur.grad;

        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd xn;
        MlEval next;
        while (step > 1e-16) {
            xn = clamp(x + step * d);
            if ((xn - x).lpNorm<Eigen::Infinity>() == 0.0) break;
            next = eval(xn, true);
            if (next.ok && next.nll <= cur.nll + 1e-4 * cur.grad.dot(xn - x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const bool projected = ((x + step * d) - xn).lpNorm<Eigen::Infinity>() > 0.0;
        if (projected) {
            mem.clear();
        } else {
            Eigen::VectorXd s = xn - x;
            Eigen::VectorXd y = next.grad - cur.grad;
            if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                mem.emplace_back(std::move(s), std::move(y));
                if (mem.size() > 8) mem.pop_front();
            }
        }
        x = std::move(xn);
        cur = std::move(next);
    }
    res.x = std::move(x);
    res.f = cur.nll;
    res.ok = true;
    return res;
}

}  // namespace

KernelFit fit_kernels(const Dataset& data, const Eigen::MatrixXd& residuals, int restarts,
                      std::uint64_t seed) {
    data.validate();
    if (restarts < 1) throw std::invalid_argument("fit_kernels: restarts must be >= 1");
    if (residuals.rows() != data.size() || residuals.cols() != data.state_dim())
        throw std::invalid_argument("fit_kernels: residual matrix has wrong shape");

    const Eigen::Index n = data.state_dim();
    const Eigen::Index D = data.state_dim() + data.input_dim();
    const auto diffs = squared_diffs(data);

    // Input spans guide lengthscale initialization.
    Eigen::VectorXd span(D);
    {
        Eigen::MatrixXd Z(data.size(), D);
        Z.leftCols(data.state_dim()) = data.X;
        Z.rightCols(data.input_dim()) = data.U;
        for (Eigen::Index d = 0; d < D; ++d) {
            span(d) = Z.col(d).maxCoeff() - Z.col(d).minCoeff();
            if (span(d) <= 0.0) span(d) = 1.0;
        }
    }

    Eigen::VectorXd lo(D + 2), hi(D + 2);
    lo(0) = kLogSigLo;
    hi(0) = kLogSigHi;
    lo.segment(1, D).setConstant(kLogLenLo);
    hi.segment(1, D).setConstant(kLogLenHi);
    lo(D + 1) = kLogNoiseLo;
    hi(D + 1) = kLogNoiseHi;
    const auto clamp_box = [&](Eigen::VectorXd v) {
        return v.cwiseMax(lo).cwiseMin(hi).eval();
    };

    KernelFit fit;
    fit.kernels.resize(n);
    fit.q_diag.resize(n);
    fit.log_marginal.resize(n);

    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd r = residuals.col(i);
        const double var = r.squaredNorm() / static_cast<double>(r.size());

        if (var == 0.0) {
            // Degenerate data: the likelihood is maximized at the noise floor.
            fit.diagnostics.push_back("output " + std::to_string(i) +
                                      ": residuals identically zero, pushed to noise floor");
            Eigen::VectorXd theta(D + 2);
            theta(0) = kLogSigLo;
            theta.segment(1, D) = span.array().log().matrix();
            theta(D + 1) = kLogNoiseLo;
            theta = clamp_box(theta);
            fit.kernels[i].signal_variance = std::exp(theta(0));
            fit.kernels[i].lengthscales = theta.segment(1, D).array().exp();
            fit.q_diag(i) = std::exp(theta(D + 1));
            fit.log_marginal(i) =
                -marginal_nll(diffs, r, theta, false).nll;
            continue;
        }

        const auto eval = [&](const Eigen::VectorXd& th, bool grad) {
            return marginal_nll(diffs, r, th, grad);
        };

        BoxResult best;
        for (int restart = 0; restart < restarts; ++restart) {
            Eigen::VectorXd theta0(D + 2);
            if (restart == 0) {
                theta0(0) = std::log(var);
                theta0.segment(1, D) = span.array().log().matrix();
                theta0(D + 1) = std::log(0.25 * var);
            } else {
                std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i) * 1000 +
                                                          static_cast<std::uint64_t>(restart)));
                std::uniform_real_distribution<double> unif(0.0, 1.0);
                theta0(0) = std::log(var) + (unif(rng) * 12.0 - 9.0);
                for (Eigen::Index d = 0; d < D; ++d)
                    theta0(1 + d) = std::log(span(d)) + (unif(rng) * 8.0 - 3.0);
                theta0(D + 1) = std::log(var) + (unif(rng) * 8.0 - 7.0);
            }
            theta0 = clamp_box(theta0);
            if (!marginal_nll(diffs, r, theta0, false).ok) {
                fit.diagnostics.push_back("output " + std::to_string(i) + " restart " +
                                          std::to_string(restart) +
                                          ": non-finite likelihood at start, rejected");
                continue;
            }
            BoxResult res = lbfgs_box(eval, theta0, lo, hi);
            if (res.ok && res.f < best.f) best = std::move(res);
        }
        if (!best.ok)
            throw std::runtime_error("fit_kernels: all restarts failed for output " +
                                     std::to_string(i));

        fit.kernels[i].signal_variance = std::exp(best.x(0));
        fit.kernels[i].lengthscales = best.x.segment(1, D).array().exp();
        fit.q_diag(i) = std::exp(best.x(D + 1));
        fit.log_marginal(i) = -best.f;
    }
    return fit;
}

GpssmModel::GpssmModel(Eigen::MatrixXd A, Eigen::MatrixXd B,
                       std::vector<SquaredExpKernel> kernels, Eigen::VectorXd q_diag,
                       Dataset data)
    : A_(std::move(A)),
      B_(std::move(B)),
      kernels_(std::move(kernels)),
      q_diag_(std::move(q_diag)),
      data_(std::move(data)) {
    data_.validate();
    const Eigen::Index n = data_.state_dim();
    const Eigen::Index m = data_.input_dim();
    const Eigen::Index N = data_.size();
    if (A_.rows() != n || A_.cols() != n || B_.rows() != n || B_.cols() != m)
        throw std::invalid_argument("GpssmModel: A/B dimensions do not match the data");
    if (static_cast<Eigen::Index>(kernels_.size()) != n || q_diag_.size() != n)
        throw std::invalid_argument("GpssmModel: need one kernel and noise entry per output");
    if ((q_diag_.array() < 0.0).any())
        throw std::invalid_argument("GpssmModel: noise variances must be nonnegative");
    for (const auto& k : kernels_) {
        k.validate();
        if (k.lengthscales.size() != n + m)
            throw std::invalid_argument("GpssmModel: kernel lengthscale dimension mismatch");
    }

    residuals_ = data_.Xplus - data_.X * A_.transpose() - data_.U * B_.transpose();
    factor_.resize(n);
    alpha_.resize(n);
    jitter_.assign(n, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::MatrixXd K(N, N);
        for (Eigen::Index a = 0; a < N; ++a) {
            const Eigen::VectorXd za = data_.regressor(a);
            K(a, a) = kernels_[i].signal_variance;
            for (Eigen::Index b = 0; b < a; ++b) {
                K(a, b) = kernels_[i](za, data_.regressor(b));
                K(b, a) = K(a, b);
            }
        }
        K.diagonal().array() += q_diag_(i);
        if (!llt_with_jitter(K, factor_[i], &jitter_[i]))
            throw std::runtime_error("GpssmModel: kernel matrix factorization failed for output " +
                                     std::to_string(i));
        alpha_[i] = factor_[i].solve(residuals_.col(i));
    }
}

Eigen::VectorXd GpssmModel::kernel_vector(Eigen::Index i, const Eigen::VectorXd& xhat) const {
    const Eigen::Index N = data_.size();
    Eigen::VectorXd k(N);
    for (Eigen::Index j = 0; j < N; ++j) k(j) = kernels_[i](data_.regressor(j), xhat);
    return k;
}

PosteriorMoments posterior(const GpssmModel& model, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u) {
    if (x.size() != model.n() || u.size() != model.m())
        throw std::invalid_argument("posterior: dimension mismatch");
    Eigen::VectorXd xhat(model.n() + model.m());
    xhat << x, u;
    PosteriorMoments out;
    out.mean = model.A() * x + model.B() * u;
    out.variance.resize(model.n());
    for (Eigen::Index i = 0; i < model.n(); ++i) {
        const Eigen::VectorXd kbar = model.kernel_vector(i, xhat);
        out.mean(i) += kbar.dot(model.alpha(i));
        double xi = model.kernels()[i].signal_variance - kbar.dot(model.factor(i).solve(kbar));
        if (xi < -1e-10)
            throw std::runtime_error("posterior: negative variance beyond tolerance");
        out.variance(i) = std::max(xi, 0.0);
    }
    return out;
}

Eigen::VectorXd posterior_mean_correction(const GpssmModel& model, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& u) {
    Eigen::VectorXd xhat(model.n() + model.m());
    xhat << x, u;
    Eigen::VectorXd mu_hat(model.n());
    for (Eigen::Index i = 0; i < model.n(); ++i)
        mu_hat(i) = model.kernel_vector(i, xhat).dot(model.alpha(i));
    return mu_hat;
}

double compute_phi(const GpssmModel& model, int check_samples, std::uint64_t seed) {
    // phi_i = (s_i * ||alpha_i||_1)^2: since 0 < kbar_ij <= s_i for a
    // stationary SE kernel, |kbar^T alpha| <= s_i ||alpha||_1 pointwise.
    double phi = 0.0;
    for (Eigen::Index i = 0; i < model.n(); ++i) {
        const double term = model.kernels()[i].signal_variance *
                            model.alpha(i).lpNorm<1>();
        phi += term * term;
    }

    if (check_samples > 0) {
        // Sampled containment check over the inflated training-input box.
        const Eigen::Index n = model.n(), m = model.m();
        Eigen::VectorXd lo(n + m), hi(n + m);
        lo.head(n) = model.data().X.colwise().minCoeff();
        hi.head(n) = model.data().X.colwise().maxCoeff();
        lo.tail(m) = model.data().U.colwise().minCoeff();
        hi.tail(m) = model.data().U.colwise().maxCoeff();
        const Eigen::VectorXd margin = 0.25 * (hi - lo).cwiseMax(1e-6);
        lo -= margin;
        hi += margin;
        std::mt19937_64 rng(derive_seed(seed, 0xfee1));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int t = 0; t < check_samples; ++t) {
            Eigen::VectorXd z(n + m);
            for (Eigen::Index d = 0; d < n + m; ++d)
                z(d) = lo(d) + unif(rng) * (hi(d) - lo(d));
            const Eigen::VectorXd mu_hat =
                posterior_mean_correction(model, z.head(n), z.tail(m));
            if (mu_hat.squaredNorm() > phi * (1.0 + 1e-9) + 1e-300)
                throw std::runtime_error(
                    "compute_phi: sampled ||mu_hat||^2 = " + std::to_string(mu_hat.squaredNorm()) +
                    " exceeds phi = " + std::to_string(phi));
        }
    }
    return phi;
}

Eigen::MatrixXd UncertaintyBounds::q_bar() const {
    const Eigen::Index nn = n();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2 * nn, 2 * nn);
    Q.topLeftCorner(nn, nn) = sigma_hat_diag.asDiagonal();
    Q.bottomRightCorner(nn, nn) = q_diag.asDiagonal();
    return Q;
}

UncertaintyBounds uncertainty_bounds(const GpssmModel& model) {
    UncertaintyBounds b;
    b.phi = compute_phi(model);
    b.sigma_hat_diag.resize(model.n());
    for (Eigen::Index i = 0; i < model.n(); ++i)
        b.sigma_hat_diag(i) = model.kernels()[i].signal_variance;
    b.q_diag = model.q_diag();
    return b;
}

Eigen::MatrixXd theta(const UncertaintyBounds& bounds, double p, Eigen::Index n) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("theta: require 0 <= p < 1");
    if (bounds.sigma_hat_diag.size() != n || bounds.q_diag.size() != n)
        throw std::invalid_argument("theta: bounds dimension mismatch");
    const double scale = 2.0 * static_cast<double>(n) / (1.0 - p);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
    T.diagonal() = (scale * (bounds.sigma_hat_diag + bounds.q_diag)).array() + 2.0 * bounds.phi;
    return T;
}

Eigen::VectorXd sample_posterior_step(const GpssmModel& model, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& u, std::mt19937_64& rng) {
    const PosteriorMoments post = posterior(model, x, u);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd next = post.mean;
    for (Eigen::Index i = 0; i < model.n(); ++i)
        next(i) += std::sqrt(post.variance(i)) * normal(rng);
    for (Eigen::Index i = 0; i < model.n(); ++i)
        next(i) += std::sqrt(model.q_diag()(i)) * normal(rng);
    return next;
}

}  // namespace pcis
