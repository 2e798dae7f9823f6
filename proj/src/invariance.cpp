#include "pcis/invariance.hpp"

#include <cmath>
#include <stdexcept>

namespace pcis {

namespace {

// Exactly-symmetric inverse of a PD matrix; throws when singular.
Eigen::MatrixXd sym_inverse(const Eigen::MatrixXd& S, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const double lmax = es.eigenvalues().maxCoeff();
    if (es.eigenvalues().minCoeff() <= 1e-14 * std::max(lmax, 0.0))
        throw std::invalid_argument(std::string(what) + " is singular");
    Eigen::VectorXd d = es.eigenvalues().cwiseInverse();
    Eigen::MatrixXd V = es.eigenvectors();
    return congruence(V, Eigen::MatrixXd(d.asDiagonal()));
}

// One unknown-but-bounded input channel of the S-procedure matrix.
struct Channel {
    Eigen::MatrixXd G;          // n_z x n_i input matrix
    Eigen::VectorXd mu;         // center of the bounding ellipsoid
    Eigen::MatrixXd sigma_inv;  // inverse shape matrix
};

// Assembles the S-procedure block matrix of Theorem 1 for z+ = A z + sum_i
// G_i w_i with w_i in E(mu_i, Sigma_i), candidate set E(c, P^{-1}) and
// multiplier alpha.  The trailing constant row/column is included only when
// `with_constant` (it is identically zero for c = 0, mu_i = 0).
Eigen::MatrixXd sproc_matrix(const Eigen::MatrixXd& P, const Eigen::MatrixXd& A,
                             const std::vector<Channel>& channels, const Eigen::VectorXd& c,
                             double alpha, bool with_constant) {
    const Eigen::Index nz = A.rows();
    Eigen::Index total = nz;
    std::vector<Eigen::Index> offset(channels.size());
    for (size_t i = 0; i < channels.size(); ++i) {
        offset[i] = total;
        total += channels[i].G.cols();
    }
    const Eigen::Index last = total;
    if (with_constant) total += 1;

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(total, total);
    M.topLeftCorner(nz, nz) = (1.0 - alpha) * P - congruence_t(A, P);
    const Eigen::MatrixXd PA = P * A;
    for (size_t i = 0; i < channels.size(); ++i) {
        const auto& ch = channels[i];
        const Eigen::Index ni = ch.G.cols();
        M.block(0, offset[i], nz, ni) = -PA.transpose() * ch.G;
        M.block(offset[i], 0, ni, nz) = M.block(0, offset[i], nz, ni).transpose();
        M.block(offset[i], offset[i], ni, ni) =
            0.5 * alpha * ch.sigma_inv - congruence_t(ch.G, P);
        for (size_t j = i + 1; j < channels.size(); ++j) {
            const auto& cj = channels[j];
            M.block(offset[i], offset[j], ni, cj.G.cols()) =
                -(ch.G.transpose() * P) * cj.G;
            M.block(offset[j], offset[i], cj.G.cols(), ni) =
                M.block(offset[i], offset[j], ni, cj.G.cols()).transpose();
        }
    }
    if (with_constant) {
        const Eigen::VectorXd Pc = P * c;
        M.block(0, last, nz, 1) = (alpha - 1.0) * Pc + A.transpose() * Pc;
        M.block(last, 0, 1, nz) = M.block(0, last, nz, 1).transpose();
        double corner = (1.0 - alpha) * c.dot(Pc);
        for (size_t i = 0; i < channels.size(); ++i) {
            const auto& ch = channels[i];
            M.block(offset[i], last, ch.G.cols(), 1) =
                ch.G.transpose() * Pc - 0.5 * alpha * ch.sigma_inv * ch.mu;
            M.block(last, offset[i], 1, ch.G.cols()) =
                M.block(offset[i], last, ch.G.cols(), 1).transpose();
            corner += 0.5 * alpha * ch.mu.dot(ch.sigma_inv * ch.mu);
        }
        M(last, last) = corner;
    }
    return M;
}

void append_strictness(LmiProblem& problem, Eigen::Index n) {
    problem.add_constraint("strict_P", [n](const LmiPoint& v) {
        return Eigen::MatrixXd(v.value("P") -
                               1e-8 * Eigen::MatrixXd::Identity(n, n));
    });
}

}  // namespace

void DisturbedLinearSystem::validate() const {
    const Eigen::Index n = nz();
    if (A_mat.cols() != n) throw std::invalid_argument("DisturbedLinearSystem: A not square");
    if (B_mat.rows() != n || C_mat.rows() != n)
        throw std::invalid_argument("DisturbedLinearSystem: B/C row count mismatch");
    if (d_set.dim() != B_mat.cols() || v_set.dim() != C_mat.cols())
        throw std::invalid_argument("DisturbedLinearSystem: disturbance set dimension mismatch");
}

std::vector<Eigen::VectorXd> box_rows(const Eigen::VectorXd& lower,
                                      const Eigen::VectorXd& upper) {
    if (lower.size() != upper.size())
        throw std::invalid_argument("box_rows: bound dimension mismatch");
    std::vector<Eigen::VectorXd> rows;
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (!(lower(i) < 0.0 && upper(i) > 0.0))
            throw std::invalid_argument(
                "box_rows: boxes must contain the origin strictly (row " + std::to_string(i) +
                ")");
        Eigen::VectorXd up = Eigen::VectorXd::Zero(lower.size());
        up(i) = 1.0 / upper(i);
        rows.push_back(up);
        Eigen::VectorXd dn = Eigen::VectorXd::Zero(lower.size());
        dn(i) = 1.0 / lower(i);
        rows.push_back(dn);
    }
    return rows;
}

LmiProblem build_ris_lmi(const DisturbedLinearSystem& sys, const Eigen::VectorXd& c,
                         double alpha) {
    sys.validate();
    if (alpha < 0.0) throw std::invalid_argument("build_ris_lmi: alpha must be nonnegative");
    if (c.size() != sys.nz()) throw std::invalid_argument("build_ris_lmi: center dimension");
    std::vector<Channel> channels{
        {sys.B_mat, sys.d_set.center, sym_inverse(sys.d_set.shape, "Sigma_d")},
        {sys.C_mat, sys.v_set.center, sym_inverse(sys.v_set.shape, "Sigma_v")}};
    const Eigen::MatrixXd A = sys.A_mat;
    LmiProblem problem;
    problem.add_symmetric_variable("P", static_cast<int>(sys.nz()));
    problem.add_constraint("theorem1", [A, channels, c, alpha](const LmiPoint& v) {
        return sproc_matrix(v.value("P"), A, channels, c, alpha, /*with_constant=*/true);
    });
    append_strictness(problem, sys.nz());
    return problem;
}

LmiProblem build_gpssm_verification_lmi(const UncertaintyBounds& bounds,
                                        const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                        const Eigen::MatrixXd& L, double p, double alpha) {
    const Eigen::Index n = A.rows();
    if (!(p >= 0.0 && p < 1.0))
        throw std::invalid_argument("build_gpssm_verification_lmi: require 0 <= p < 1");
    if (alpha < 0.0)
        throw std::invalid_argument("build_gpssm_verification_lmi: alpha must be nonnegative");
    if (bounds.phi < 0.0)
        throw std::invalid_argument("build_gpssm_verification_lmi: phi must be nonnegative");
    if (B.rows() != n || L.cols() != n || L.rows() != B.cols())
        throw std::invalid_argument("build_gpssm_verification_lmi: dimension mismatch");

    const Eigen::MatrixXd A_bl = A + B * L;
    std::vector<Channel> channels;
    if (bounds.phi > 0.0) {
        // Mean-correction channel mu_hat in E(0, phi I).
        channels.push_back({Eigen::MatrixXd::Identity(n, n), Eigen::VectorXd::Zero(n),
                            Eigen::MatrixXd((1.0 / bounds.phi) *
                                            Eigen::MatrixXd::Identity(n, n))});
    }
    // Inflated GP/process noise channel wbar in E(0, n/(1-p) Qbar).
    Eigen::MatrixXd script_i(n, 2 * n);
    script_i << Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd qbar_inv = sym_inverse(bounds.q_bar(), "Qbar");
    channels.push_back({script_i, Eigen::VectorXd::Zero(2 * n),
                        Eigen::MatrixXd(((1.0 - p) / static_cast<double>(n)) * qbar_inv)});

    LmiProblem problem;
    problem.add_symmetric_variable("P", static_cast<int>(n));
    const Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    problem.add_constraint("theorem5", [A_bl, channels, c, alpha](const LmiPoint& v) {
        // c = 0 and centered disturbances: the constant channel is dropped.
        return sproc_matrix(v.value("P"), A_bl, channels, c, alpha, /*with_constant=*/false);
    });
    append_strictness(problem, n);
    return problem;
}

Ellipsoidd pis_from_ris_substitution(const Eigen::MatrixXd& cov_bound, double p,
                                     Eigen::Index n_z) {
    if (!(p >= 0.0 && p < 1.0))
        throw std::invalid_argument("pis_from_ris_substitution: require 0 <= p < 1");
    const double scale = static_cast<double>(n_z) / (1.0 - p);
    return Ellipsoidd(Eigen::VectorXd::Zero(cov_bound.rows()),
                      Eigen::MatrixXd(scale * cov_bound));
}

std::vector<double> default_alpha_grid() {
    std::vector<double> grid;
    const double lo = 0.01, hi = 0.99;
    for (int i = 0; i < 25; ++i)
        grid.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / 24.0));
    for (int i = 0; i < 25; ++i)
        grid.push_back(lo + (hi - lo) * static_cast<double>(i) / 24.0);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

VerificationReport verify_controller(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                     const UncertaintyBounds& bounds, const Eigen::MatrixXd& L,
                                     double p, const std::vector<double>& alpha_grid,
                                     const PolytopeConstraints* constraints,
                                     const SolverSettings& settings) {
    if (alpha_grid.empty())
        throw std::invalid_argument("verify_controller: empty alpha grid");
    VerificationReport report;
    for (double alpha : alpha_grid) {
        LmiProblem problem = build_gpssm_verification_lmi(bounds, A, B, L, p, alpha);
        SolveOutcome out = solve(problem, settings);
        report.alpha_log.push_back({alpha, out.status});
        if (out.status == SolveStatus::Feasible) {
            report.feasible = true;
            report.alpha = alpha;
            report.P = out.point.at("P");
            break;
        }
    }
    if (report.feasible && constraints != nullptr) {
        report.constraints_checked = true;
        report.constraints_ok = true;
        Eigen::MatrixXd W = sym_inverse(report.P, "P");
        for (const auto& beta : constraints->state_rows) {
            const double margin = beta.dot(W * beta);
            report.state_margins.push_back(margin);
            if (margin > 1.0 + 1e-9) report.constraints_ok = false;
        }
        const Eigen::MatrixXd LWL = L * W * L.transpose();
        for (const auto& zeta : constraints->input_rows) {
            const double margin = zeta.dot(LWL * zeta);
            report.input_margins.push_back(margin);
            if (margin > 1.0 + 1e-9) report.constraints_ok = false;
        }
    }
    return report;
}

bool sampled_invariance_oracle(const DisturbedLinearSystem& sys, const Eigen::VectorXd& c,
                               const Eigen::MatrixXd& P, int samples, std::mt19937_64& rng) {
    sys.validate();
    if (samples < 1) throw std::invalid_argument("sampled_invariance_oracle: samples >= 1");
    const Eigen::MatrixXd P_inv_sqrt = psd_sqrt_inv(P);
    std::uniform_real_distribution<double> unif(1.0, 3.0);
    for (int t = 0; t < samples; ++t) {
        // z on or outside the boundary of E(c, P^{-1}).
        const Eigen::VectorXd dir = unit_sphere_sample<double>(sys.nz(), rng);
        const double radius = unif(rng);
        const Eigen::VectorXd z = c + radius * (P_inv_sqrt * dir);
        const Eigen::VectorXd d = sample_uniform(sys.d_set, rng);
        const Eigen::VectorXd v = sample_uniform(sys.v_set, rng);
        const Eigen::VectorXd znext = sys.A_mat * z + sys.B_mat * d + sys.C_mat * v;
        const double before = (z - c).dot(P * (z - c));
        const double after = (znext - c).dot(P * (znext - c));
        if (after > before * (1.0 + 1e-9) + 1e-12) return false;
    }
    return true;
}

}  // namespace pcis
