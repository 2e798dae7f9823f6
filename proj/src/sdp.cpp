#include "pcis/sdp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pcis {

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Feasible: return "feasible";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::Inaccurate: return "inaccurate";
        case SolveStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

namespace {

// Compiled constraint block: G(x) = F0 + sum_k x(k) * F_k, after structural
// reduction (rows/cols that are zero in every matrix are dropped, which is
// lossless for PSD-ness) and symmetric diagonal equilibration.
struct Block {
    Eigen::MatrixXd F0;
    std::vector<std::pair<int, Eigen::MatrixXd>> coeffs;

    Eigen::MatrixXd value(const Eigen::VectorXd& x) const {
        Eigen::MatrixXd G = F0;
        for (const auto& [k, F] : coeffs) G += x(k) * F;
        return G;
    }
};

std::vector<Block> compile(const LmiProblem& problem) {
    std::vector<Block> blocks;
    for (const auto& c : problem.constraints()) {
        const Eigen::Index m = c.size();
        // Structural reduction.
        std::vector<Eigen::Index> keep;
        for (Eigen::Index r = 0; r < m; ++r) {
            bool nonzero = c.constant.row(r).lpNorm<Eigen::Infinity>() > 0.0;
            for (const auto& [k, F] : c.coeffs)
                nonzero = nonzero || F.row(r).lpNorm<Eigen::Infinity>() > 0.0;
            if (nonzero) keep.push_back(r);
        }
        if (keep.empty()) continue;  // all-zero constraint, trivially PSD
        auto take = [&](const Eigen::MatrixXd& M) {
            Eigen::MatrixXd R(keep.size(), keep.size());
            for (size_t i = 0; i < keep.size(); ++i)
                for (size_t j = 0; j < keep.size(); ++j) R(i, j) = M(keep[i], keep[j]);
            return R;
        };
        Block b;
        b.F0 = take(c.constant);
        for (const auto& [k, F] : c.coeffs) b.coeffs.emplace_back(k, take(F));
        // Equilibration: scale row/col r by 1/sqrt(max abs entry in row r).
        const Eigen::Index mr = b.F0.rows();
        Eigen::VectorXd rowmax = b.F0.cwiseAbs().rowwise().maxCoeff();
        for (const auto& [k, F] : b.coeffs)
            rowmax = rowmax.cwiseMax(F.cwiseAbs().rowwise().maxCoeff());
        Eigen::VectorXd d = rowmax.cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
        auto scale = [&](Eigen::MatrixXd& M) {
            for (Eigen::Index i = 0; i < mr; ++i)
                for (Eigen::Index j = 0; j < mr; ++j) M(i, j) *= d(i) * d(j);
        };
        scale(b.F0);
        for (auto& [k, F] : b.coeffs) scale(F);
        blocks.push_back(std::move(b));
    }
    return blocks;
}

std::optional<double> logdet_if_pd(const Eigen::MatrixXd& G) {
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) return std::nullopt;
    double ld = 0.0;
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
        const double lii = llt.matrixLLT()(i, i);
        if (!(lii > 0.0)) return std::nullopt;
        ld += std::log(lii);
    }
    return 2.0 * ld;
}

// Barrier-augmented objective:
//   f(x) = c^T x + det_weight * logdet(det_block(x)) + mu * sum_j logdet(G_j(x))
// maximized over x.  Returns nullopt when any required matrix is not PD.
struct Objective {
    const std::vector<Block>* blocks = nullptr;
    Eigen::VectorXd c;  // may be zero-length
    double det_weight = 0.0;
    const Block* det_block = nullptr;

    std::optional<double> value(const Eigen::VectorXd& x, double mu) const {
        double f = c.size() ? c.dot(x) : 0.0;
        if (det_block != nullptr) {
            auto ld = logdet_if_pd(det_block->value(x));
            if (!ld) return std::nullopt;
            f += det_weight * *ld;
        }
        for (const auto& b : *blocks) {
            auto ld = logdet_if_pd(b.value(x));
            if (!ld) return std::nullopt;
            f += mu * *ld;
        }
        return f;
    }

    // Gradient and Hessian of f at a strictly feasible x.
    bool derivatives(const Eigen::VectorXd& x, double mu, Eigen::VectorXd& g,
                     Eigen::MatrixXd& H) const {
        const Eigen::Index K = x.size();
        g = c.size() ? Eigen::VectorXd(c) : Eigen::VectorXd::Zero(K);
        H = Eigen::MatrixXd::Zero(K, K);
        auto accumulate = [&](const Block& b, double w) -> bool {
            Eigen::LLT<Eigen::MatrixXd> llt(b.value(x));
            if (llt.info() != Eigen::Success) return false;
            std::vector<std::pair<int, Eigen::MatrixXd>> S;
            S.reserve(b.coeffs.size());
            for (const auto& [k, F] : b.coeffs) S.emplace_back(k, llt.solve(F));
            for (const auto& [k, Sk] : S) g(k) += w * Sk.trace();
            for (size_t a = 0; a < S.size(); ++a)
                for (size_t bidx = a; bidx < S.size(); ++bidx) {
                    const double h =
                        -w * S[a].second.cwiseProduct(S[bidx].second.transpose()).sum();
                    H(S[a].first, S[bidx].first) += h;
                    if (a != bidx) H(S[bidx].first, S[a].first) += h;
                }
            return true;
        };
        if (det_block != nullptr && !accumulate(*det_block, det_weight)) return false;
        for (const auto& b : *blocks)
            if (!accumulate(b, mu)) return false;
        return true;
    }
};

struct NewtonResult {
    int iterations = 0;
    bool stalled = false;
};

// Damped Newton ascent toward the central point at barrier weight mu.
// Approximate centering is sufficient for path following; the iteration cap
// guards against creeping along nearly-flat directions.
NewtonResult newton_center(const Objective& obj, Eigen::VectorXd& x, double mu,
                           int budget = 40) {
    NewtonResult res;
    for (; res.iterations < budget; ++res.iterations) {
        Eigen::VectorXd g;
        Eigen::MatrixXd H;
        if (!obj.derivatives(x, mu, g, H)) {
            res.stalled = true;
            return res;
        }
        Eigen::MatrixXd A = -H;
        A.diagonal().array() += 1e-12 * std::max(1.0, A.diagonal().cwiseAbs().maxCoeff());
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        Eigen::VectorXd dx = ldlt.solve(g);
        const double lam2 = g.dot(dx);
        const double f0 = obj.value(x, mu).value_or(-std::numeric_limits<double>::infinity());
        if (!(lam2 > 1e-11 * (1.0 + std::abs(f0)))) return res;
        double s = 1.0;
        bool accepted = false;
        while (s > 1e-14) {
            const Eigen::VectorXd xn = x + s * dx;
            const auto fn = obj.value(xn, mu);
            if (fn && *fn >= f0 + 0.25 * s * lam2 - 1e-14 * (1.0 + std::abs(f0))) {
                x = xn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if (!accepted) {
            res.stalled = true;
            return res;
        }
        if (s * dx.lpNorm<Eigen::Infinity>() <=
            1e-14 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
            res.stalled = true;
            return res;
        }
    }
    return res;
}

struct Phase1Result {
    Eigen::VectorXd x;       // strictly feasible iff margin > 0
    double margin = 0.0;     // achieved slack t
    double gap = 0.0;        // bound on sup t - achieved t
    int newton_iterations = 0;
    bool budget_exhausted = false;
};

// Maximizes the uniform slack t with G_j(x) - t I >= 0 for every block,
// t <= slack_cap, |x_k| <= variable_bound.
Phase1Result phase1(const std::vector<Block>& blocks, int K, const SolverSettings& st) {
    std::vector<Block> aug;
    aug.reserve(blocks.size() + 2 * K + 1);
    double t0 = st.slack_cap;
    for (const auto& b : blocks) {
        Block a = b;
        a.coeffs.emplace_back(K, -Eigen::MatrixXd::Identity(b.F0.rows(), b.F0.rows()));
        aug.push_back(std::move(a));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.F0, Eigen::EigenvaluesOnly);
        t0 = std::min(t0, es.eigenvalues().minCoeff());
    }
    // Slack cap and variable box (safeguards; strictly feasible at x = 0).
    Block cap;
    cap.F0 = Eigen::MatrixXd::Constant(1, 1, st.slack_cap);
    cap.coeffs.emplace_back(K, Eigen::MatrixXd::Constant(1, 1, -1.0));
    aug.push_back(std::move(cap));
    for (int k = 0; k < K; ++k) {
        for (double sgn : {1.0, -1.0}) {
            Block box;
            box.F0 = Eigen::MatrixXd::Constant(1, 1, st.variable_bound);
            box.coeffs.emplace_back(k, Eigen::MatrixXd::Constant(1, 1, sgn));
            aug.push_back(std::move(box));
        }
    }

    Eigen::VectorXd y = Eigen::VectorXd::Zero(K + 1);
    y(K) = t0 - 1.0;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(K + 1);
    c(K) = 1.0;
    Objective obj{&aug, c, 0.0, nullptr};

    double nu = 0.0;
    for (const auto& b : aug) nu += static_cast<double>(b.F0.rows());

    Phase1Result res;
    double mu = 1.0;
    double mu_done = 1.0;
    int outer = 0;
    while (mu > 1e-12) {
        if (outer++ >= st.max_iterations) {
            res.budget_exhausted = true;
            break;
        }
        auto nr = newton_center(obj, y, mu);
        res.newton_iterations += nr.iterations;
        mu_done = mu;
        if (y(K) >= 1e-4) break;  // clearly strictly feasible
        mu *= 0.15;
    }
    res.x = y.head(K);
    res.margin = y(K);
    res.gap = 2.0 * nu * mu_done;
    return res;
}

struct Phase2Result {
    Eigen::VectorXd x;
    double gap = 0.0;
    int newton_iterations = 0;
    bool budget_exhausted = false;
    std::vector<double> trace;  // objective value per centering step
};

Phase2Result phase2(const std::vector<Block>& blocks, Eigen::VectorXd x,
                    const Eigen::VectorXd& c, double det_weight, const Block* det_block,
                    const SolverSettings& st,
                    const std::function<double(const Eigen::VectorXd&)>& report) {
    std::vector<Block> aug = blocks;
    const int K = static_cast<int>(x.size());
    for (int k = 0; k < K; ++k) {
        for (double sgn : {1.0, -1.0}) {
            Block box;
            box.F0 = Eigen::MatrixXd::Constant(1, 1, st.variable_bound);
            box.coeffs.emplace_back(k, Eigen::MatrixXd::Constant(1, 1, sgn));
            aug.push_back(std::move(box));
        }
    }
    Objective obj{&aug, c, det_weight, det_block};
    double nu = 0.0;
    for (const auto& b : aug) nu += static_cast<double>(b.F0.rows());

    Phase2Result res;
    double mu = 1.0;
    double mu_done = 1.0;
    int outer = 0;
    const double mu_min = std::max(st.tolerance / (10.0 * nu), 1e-13);
    while (true) {
        if (outer++ >= st.max_iterations) {
            res.budget_exhausted = true;
            break;
        }
        auto nr = newton_center(obj, x, mu);
        res.newton_iterations += nr.iterations;
        mu_done = mu;
        res.trace.push_back(report(x));
        if (mu <= mu_min) break;
        mu = std::max(mu * 0.15, mu_min);
    }
    res.x = std::move(x);
    res.gap = nu * mu_done;
    return res;
}

// Independent eigenvalue re-check of every original constraint.
double recheck_residual(const LmiProblem& problem, const Eigen::VectorXd& x) {
    double worst = 0.0;
    for (const auto& c : problem.constraints()) {
        const Eigen::MatrixXd G = c.value(x);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
        const double scale = std::max(1.0, G.lpNorm<Eigen::Infinity>());
        worst = std::max(worst, -es.eigenvalues().minCoeff() / scale);
    }
    return worst;
}

std::map<std::string, Eigen::MatrixXd> extract_point(const LmiProblem& problem,
                                                     const Eigen::VectorXd& x) {
    std::map<std::string, Eigen::MatrixXd> point;
    LmiPoint p(problem, x);
    for (const auto& v : problem.variables()) point[v.name] = p.value(v.name);
    return point;
}

SolveOutcome run(const LmiProblem& problem, LmiObjective mode, const Eigen::VectorXd& lin,
                 const std::string& det_var, const SolverSettings& st) {
    const int K = problem.param_count();
    SolveOutcome out;
    const std::vector<Block> blocks = compile(problem);

    if (K == 0) {
        // No variables: constraints are constant; just check them.
        out.feasibility_margin = st.slack_cap;
        const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(0);
        out.primal_residual = recheck_residual(problem, x0);
        out.status =
            out.primal_residual <= 1e-7 ? SolveStatus::Feasible : SolveStatus::Infeasible;
        if (out.status == SolveStatus::Feasible) out.point = extract_point(problem, x0);
        return out;
    }

    Phase1Result p1 = phase1(blocks, K, st);
    out.feasibility_margin = p1.margin;
    out.gap_bound = p1.gap;
    out.newton_iterations = p1.newton_iterations;

    const double feas_threshold = 1e-9;
    if (p1.margin < feas_threshold) {
        if (p1.budget_exhausted)
            out.status = SolveStatus::IterationLimit;
        else if (p1.margin + p1.gap < 0.0)
            out.status = SolveStatus::Infeasible;
        else
            out.status = SolveStatus::Inaccurate;
        return out;
    }

    Eigen::VectorXd x = p1.x;
    if (mode == LmiObjective::None) {
        out.status = SolveStatus::Feasible;
    } else {
        Eigen::VectorXd c;
        Block det_block;
        const Block* det_ptr = nullptr;
        double det_weight = 0.0;
        std::function<double(const Eigen::VectorXd&)> report;
        if (mode == LmiObjective::MaximizeLinear) {
            c = lin / std::max(1.0, lin.lpNorm<Eigen::Infinity>());
            report = [&lin](const Eigen::VectorXd& xv) { return lin.dot(xv); };
        } else {
            const LmiVariable& v = problem.variable(det_var);
            if (!v.symmetric)
                throw std::invalid_argument("maximize_logdet: target must be symmetric");
            det_block.F0 = Eigen::MatrixXd::Zero(v.rows, v.rows);
            for (int k = v.offset; k < v.offset + v.count; ++k) {
                Eigen::VectorXd basis = Eigen::VectorXd::Zero(K);
                basis(k) = 1.0;
                det_block.coeffs.emplace_back(k, LmiPoint(problem, basis).value(v.name));
            }
            det_ptr = &det_block;
            det_weight = 1.0;
            report = [&](const Eigen::VectorXd& xv) {
                return logdet_if_pd(det_block.value(xv)).value_or(
                    -std::numeric_limits<double>::infinity());
            };
        }
        Phase2Result p2 = phase2(blocks, x, c, det_weight, det_ptr, st, report);
        x = p2.x;
        out.gap_bound = p2.gap;
        out.newton_iterations += p2.newton_iterations;
        out.objective_trace = std::move(p2.trace);
        out.objective_value = out.objective_trace.empty() ? report(x) : out.objective_trace.back();
        out.status = p2.budget_exhausted ? SolveStatus::IterationLimit : SolveStatus::Feasible;
    }

    out.primal_residual = recheck_residual(problem, x);
    if (out.status == SolveStatus::Feasible && out.primal_residual > 1e-7)
        out.status = SolveStatus::Inaccurate;
    if (out.status == SolveStatus::Feasible || out.status == SolveStatus::Inaccurate)
        out.point = extract_point(problem, x);
    return out;
}

}  // namespace

SolveOutcome solve(const LmiProblem& problem, const SolverSettings& settings) {
    if (settings.tolerance <= 0.0) throw std::invalid_argument("solve: tolerance must be > 0");
    return run(problem, problem.objective(), problem.objective_coeffs(),
               problem.logdet_variable(), settings);
}

SolveOutcome maximize_logdet(const LmiProblem& problem, const std::string& target_variable,
                             const SolverSettings& settings) {
    if (settings.tolerance <= 0.0)
        throw std::invalid_argument("maximize_logdet: tolerance must be > 0");
    return run(problem, LmiObjective::MaximizeLogDet, Eigen::VectorXd(), target_variable,
               settings);
}

}  // namespace pcis
