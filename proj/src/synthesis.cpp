#include "pcis/synthesis.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "pcis/ellipsoid.hpp"

namespace pcis {

std::vector<double> default_eta_grid(int count) {
    std::vector<double> grid;
    for (int i = 0; i < count; ++i)
        grid.push_back(0.05 + (0.95 - 0.05) * static_cast<double>(i) /
                                  static_cast<double>(count - 1));
    return grid;
}

void SynthesisConfig::validate() const {
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("SynthesisConfig: require 0 < delta < 1");
    if (eta_grid.empty()) throw std::invalid_argument("SynthesisConfig: empty eta grid");
    for (double eta : eta_grid)
        if (!(eta > 0.0 && eta < 1.0))
            throw std::invalid_argument("SynthesisConfig: eta samples must lie in (0, 1)");
    if (!(p_init > 0.0 && p_init < 1.0))
        throw std::invalid_argument("SynthesisConfig: p_init must lie in (0, 1)");
    if (jobs < 1) throw std::invalid_argument("SynthesisConfig: jobs must be >= 1");
}

LmiProblem build_design_sdp(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const UncertaintyBounds& bounds,
                            const PolytopeConstraints& constraints, double p, double eta) {
    const Eigen::Index n = A.rows();
    const Eigen::Index m = B.cols();
    if (A.cols() != n || B.rows() != n)
        throw std::invalid_argument("build_design_sdp: A/B dimension mismatch");
    if (!(eta > 0.0 && eta < 1.0))
        throw std::invalid_argument("build_design_sdp: eta must lie strictly in (0, 1)");
    if (!(p >= 0.0 && p < 1.0))
        throw std::invalid_argument("build_design_sdp: require 0 <= p < 1");

    const Eigen::MatrixXd Theta = theta(bounds, p, n);
    const bool has_disturbance = Theta.lpNorm<Eigen::Infinity>() > 0.0;
    Eigen::MatrixXd H;
    if (has_disturbance) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Theta, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("build_design_sdp: Theta(p) is singular");
        H = psd_sqrt_inv(Theta);
    }

    LmiProblem problem;
    problem.add_symmetric_variable("W", static_cast<int>(n));
    problem.add_rectangular_variable("M", static_cast<int>(m), static_cast<int>(n));

    problem.add_constraint("contraction_schur", [A, B, eta, n](const LmiPoint& v) {
        const Eigen::MatrixXd W = v.value("W");
        const Eigen::MatrixXd X = A * W + B * v.value("M");
        Eigen::MatrixXd G(2 * n, 2 * n);
        G.topLeftCorner(n, n) = W;
        G.topRightCorner(n, n) = X;
        G.bottomLeftCorner(n, n) = X.transpose();
        G.bottomRightCorner(n, n) = eta * W;
        return G;
    });

    if (has_disturbance) {
        const double margin = 1.0 / ((1.0 - std::sqrt(eta)) * (1.0 - std::sqrt(eta)));
        problem.add_constraint("disturbance_margin", [H, margin, n](const LmiPoint& v) {
            return Eigen::MatrixXd(congruence(H, v.value("W")) -
                                   margin * Eigen::MatrixXd::Identity(n, n));
        });
    }

    for (size_t i = 0; i < constraints.state_rows.size(); ++i) {
        const Eigen::VectorXd beta = constraints.state_rows[i];
        if (beta.size() != n)
            throw std::invalid_argument("build_design_sdp: state row dimension mismatch");
        problem.add_constraint("state_row_" + std::to_string(i), [beta](const LmiPoint& v) {
            return Eigen::MatrixXd(
                Eigen::MatrixXd::Constant(1, 1, 1.0 - beta.dot(v.value("W") * beta)));
        });
    }
    for (size_t i = 0; i < constraints.input_rows.size(); ++i) {
        const Eigen::VectorXd zeta = constraints.input_rows[i];
        if (zeta.size() != m)
            throw std::invalid_argument("build_design_sdp: input row dimension mismatch");
        problem.add_constraint("input_row_" + std::to_string(i), [zeta, n](const LmiPoint& v) {
            Eigen::MatrixXd G(n + 1, n + 1);
            G.topLeftCorner(n, n) = v.value("W");
            const Eigen::VectorXd col = v.value("M").transpose() * zeta;
            G.topRightCorner(n, 1) = col;
            G.bottomLeftCorner(1, n) = col.transpose();
            G(n, n) = 1.0;
            return G;
        });
    }
    return problem;
}

BisectionResult bisect_probability(const std::function<bool(double)>& feasible_at, double delta,
                                   double p_init) {
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("bisect_probability: require 0 < delta < 1");
    if (!(p_init > 0.0 && p_init < 1.0))
        throw std::invalid_argument("bisect_probability: p_init must lie in (0, 1)");
    BisectionResult res;
    double p = p_init;
    while (res.p_up - res.p_low > delta) {
        if (feasible_at(p))
            res.p_low = p;
        else
            res.p_up = p;
        p = 0.5 * (res.p_up + res.p_low);
        ++res.iterations;
    }
    return res;
}

namespace {

struct CellResult {
    double eta = 0.0;
    SolveStatus status = SolveStatus::Inaccurate;
    double logdet = 0.0;
    double margin = 0.0;  // phase-1 slack, for near-feasibility reporting
    double solve_ms = 0.0;
    Eigen::MatrixXd W, M;
};

CellResult solve_cell(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                      const UncertaintyBounds& bounds, const PolytopeConstraints& constraints,
                      double p, double eta, const SolverSettings& settings) {
    CellResult cell;
    cell.eta = eta;
    const auto start = std::chrono::steady_clock::now();
    LmiProblem problem = build_design_sdp(A, B, bounds, constraints, p, eta);
    const Eigen::Index n = A.rows();
    problem.add_constraint("strict_W", [n](const LmiPoint& v) {
        return Eigen::MatrixXd(v.value("W") - 1e-8 * Eigen::MatrixXd::Identity(n, n));
    });
    SolveOutcome out = maximize_logdet(problem, "W", settings);
    cell.status = out.status;
    cell.margin = out.feasibility_margin;
    if (out.status == SolveStatus::Feasible) {
        cell.W = out.point.at("W");
        cell.M = out.point.at("M");
        cell.logdet = *out.objective_value;
    }
    cell.solve_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    return cell;
}

std::vector<CellResult> sweep_etas(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const UncertaintyBounds& bounds,
                                   const PolytopeConstraints& constraints, double p,
                                   const SynthesisConfig& config) {
    const auto& etas = config.eta_grid;
    std::vector<CellResult> cells(etas.size());
    if (config.jobs <= 1 || etas.size() <= 1) {
        for (size_t i = 0; i < etas.size(); ++i)
            cells[i] = solve_cell(A, B, bounds, constraints, p, etas[i], config.solver);
        return cells;
    }
    // Independent solver instances per eta; results land in eta order, so
    // parallelism does not change the output.
    std::vector<std::thread> workers;
    std::atomic<size_t> next{0};
    const int threads = std::min<int>(config.jobs, static_cast<int>(etas.size()));
    for (int t = 0; t < threads; ++t) {
        workers.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < etas.size(); i = next.fetch_add(1))
                cells[i] = solve_cell(A, B, bounds, constraints, p, etas[i], config.solver);
        });
    }
    for (auto& w : workers) w.join();
    return cells;
}

}  // namespace

PciResult synthesize(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const UncertaintyBounds& bounds, const PolytopeConstraints& constraints,
                     const SynthesisConfig& config) {
    config.validate();
    PciResult result;
    if (constraints.state_rows.empty())
        result.warnings.push_back("no state constraint rows: state set is unbounded");
    if (constraints.input_rows.empty())
        result.warnings.push_back("no input constraint rows: input set is unbounded");

    std::vector<CellResult> best_cells;
    double best_p = -1.0;
    double best_margin = -std::numeric_limits<double>::infinity();

    const auto feasible_at = [&](double p) {
        std::vector<CellResult> cells = sweep_etas(A, B, bounds, constraints, p, config);
        bool any = false;
        for (const auto& c : cells) {
            result.log.push_back({p, c.eta, c.status, c.solve_ms});
            any = any || c.status == SolveStatus::Feasible;
            best_margin = std::max(best_margin, c.margin);
        }
        if (any) {
            best_cells = std::move(cells);
            best_p = p;
        }
        return any;
    };

    BisectionResult bis = bisect_probability(feasible_at, config.delta, config.p_init);
    result.bisection_iterations = bis.iterations;
    if (best_p < 0.0)
        throw SynthesisInfeasible(
            "synthesize: no (p, eta) cell is feasible; best phase-1 slack " +
                std::to_string(best_margin),
            std::move(result.log), best_margin);

    // Maximum-volume cell at p*; ties (within 1e-5 relative) break toward
    // the smallest eta.
    const CellResult* best = nullptr;
    for (const auto& c : best_cells) {
        if (c.status != SolveStatus::Feasible) continue;
        if (best == nullptr ||
            c.logdet > best->logdet + 1e-5 * std::max(1.0, std::abs(best->logdet)))
            best = &c;
    }
    result.p_star = bis.p_low;
    result.eta_star = best->eta;
    result.logdet = best->logdet;

    Eigen::MatrixXd W = best->W;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esW(W);
    Eigen::MatrixXd P = congruence(
        esW.eigenvectors(), Eigen::MatrixXd(esW.eigenvalues().cwiseInverse().asDiagonal()));
    result.P = P;
    result.L = best->M * P;

    // Independent eigenvalue re-check of the returned certificate.
    const Eigen::Index n = A.rows();
    const Eigen::MatrixXd A_bl = A + B * result.L;
    const double p_norm = P.operatorNorm();
    {
        Eigen::MatrixXd G = congruence_t(A_bl, P) - best->eta * P;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().maxCoeff() > 1e-7 * p_norm)
            throw std::runtime_error("synthesize: contraction re-check failed");
    }
    const Eigen::MatrixXd Theta = theta(bounds, result.p_star, n);
    if (Theta.lpNorm<Eigen::Infinity>() > 0.0) {
        const Eigen::MatrixXd H = psd_sqrt_inv(Theta);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(congruence(H, W),
                                                          Eigen::EigenvaluesOnly);
        const double required = 1.0 / std::pow(1.0 - std::sqrt(best->eta), 2);
        if (es.eigenvalues().minCoeff() < required * (1.0 - 1e-7))
            throw std::runtime_error("synthesize: disturbance margin re-check failed");
    }
    for (const auto& beta : constraints.state_rows)
        if (beta.dot(W * beta) > 1.0 + 1e-7)
            throw std::runtime_error("synthesize: state containment re-check failed");
    const Eigen::MatrixXd LWL = result.L * W * result.L.transpose();
    for (const auto& zeta : constraints.input_rows)
        if (zeta.dot(LWL * zeta) > 1.0 + 1e-7)
            throw std::runtime_error("synthesize: input containment re-check failed");

    return result;
}

bool feasibility_is_monotone_check(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const UncertaintyBounds& bounds,
                                   const PolytopeConstraints& constraints, double eta,
                                   const std::vector<double>& p_samples,
                                   const SolverSettings& settings) {
    bool seen_infeasible = false;
    for (double p : p_samples) {
        LmiProblem problem = build_design_sdp(A, B, bounds, constraints, p, eta);
        const Eigen::Index n = A.rows();
        problem.add_constraint("strict_W", [n](const LmiPoint& v) {
            return Eigen::MatrixXd(v.value("W") - 1e-8 * Eigen::MatrixXd::Identity(n, n));
        });
        const bool feasible = solve(problem, settings).status == SolveStatus::Feasible;
        if (seen_infeasible && feasible) return false;
        if (!feasible) seen_infeasible = true;
    }
    return true;
}

}  // namespace pcis
