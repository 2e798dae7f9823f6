#include "pcis/lmi.hpp"

#include <stdexcept>

namespace pcis {

LmiPoint::LmiPoint(const LmiProblem& problem, Eigen::VectorXd params)
    : problem_(&problem), params_(std::move(params)) {
    if (params_.size() != problem.param_count())
        throw std::invalid_argument("LmiPoint: parameter vector has wrong length");
}

Eigen::MatrixXd LmiPoint::value(const std::string& name) const {
    const LmiVariable& v = problem_->variable(name);
    Eigen::MatrixXd M(v.rows, v.cols);
    if (v.symmetric) {
        int k = v.offset;
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j <= i; ++j) {
                M(i, j) = params_(k);
                M(j, i) = params_(k);
                ++k;
            }
    } else {
        int k = v.offset;
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j < v.cols; ++j) M(i, j) = params_(k++);
    }
    return M;
}

Eigen::MatrixXd LmiConstraint::value(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd G = constant;
    for (const auto& [k, F] : coeffs) G += x(k) * F;
    return G;
}

double LmiConstraint::min_eigenvalue(const Eigen::VectorXd& x) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(value(x), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double LmiConstraint::scale() const {
    double s = std::max(1.0, constant.lpNorm<Eigen::Infinity>());
    for (const auto& [k, F] : coeffs) s = std::max(s, F.lpNorm<Eigen::Infinity>());
    return s;
}

void LmiProblem::add_symmetric_variable(const std::string& name, int n) {
    if (n <= 0) throw std::invalid_argument("LmiProblem: variable dimension must be positive");
    if (has_variable(name)) throw std::invalid_argument("LmiProblem: duplicate variable " + name);
    LmiVariable v{name, n, n, true, param_count_, n * (n + 1) / 2};
    param_count_ += v.count;
    variables_.push_back(std::move(v));
}

void LmiProblem::add_rectangular_variable(const std::string& name, int rows, int cols) {
    if (rows <= 0 || cols <= 0)
        throw std::invalid_argument("LmiProblem: variable dimensions must be positive");
    if (has_variable(name)) throw std::invalid_argument("LmiProblem: duplicate variable " + name);
    LmiVariable v{name, rows, cols, false, param_count_, rows * cols};
    param_count_ += v.count;
    variables_.push_back(std::move(v));
}

const LmiVariable& LmiProblem::variable(const std::string& name) const {
    for (const auto& v : variables_)
        if (v.name == name) return v;
    throw std::invalid_argument("LmiProblem: undeclared variable " + name);
}

bool LmiProblem::has_variable(const std::string& name) const {
    for (const auto& v : variables_)
        if (v.name == name) return true;
    return false;
}

namespace {

void require_exactly_symmetric(const Eigen::MatrixXd& M, const std::string& label) {
    if (M.rows() != M.cols())
        throw std::invalid_argument("LmiProblem: constraint " + label + " is not square");
    if ((M - M.transpose()).lpNorm<Eigen::Infinity>() != 0.0)
        throw std::invalid_argument("LmiProblem: constraint " + label +
                                    " is not built symmetric");
}

}  // namespace

void LmiProblem::add_constraint(const std::string& label, const MatrixExpr& expr) {
    const int K = param_count_;
    LmiConstraint c;
    c.label = label;
    c.constant = expr(LmiPoint(*this, Eigen::VectorXd::Zero(K)));
    require_exactly_symmetric(c.constant, label);
    Eigen::MatrixXd probe_sum = c.constant;
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd basis = Eigen::VectorXd::Zero(K);
        basis(k) = 1.0;
        // Affine expression: the constant parts cancel bitwise since both
        // evaluations run the same code path.
        Eigen::MatrixXd Fk = expr(LmiPoint(*this, basis)) - c.constant;
        require_exactly_symmetric(Fk, label);
        if (Fk.lpNorm<Eigen::Infinity>() > 0.0) {
            probe_sum += Fk;
            c.coeffs.emplace_back(k, std::move(Fk));
        }
    }
    // Affinity check at the all-ones assignment.
    const Eigen::MatrixXd at_ones = expr(LmiPoint(*this, Eigen::VectorXd::Ones(K)));
    const double scale = std::max(1.0, at_ones.lpNorm<Eigen::Infinity>());
    if ((at_ones - probe_sum).lpNorm<Eigen::Infinity>() > 1e-9 * scale)
        throw std::invalid_argument("LmiProblem: constraint " + label +
                                    " is not affine in the variables");
    constraints_.push_back(std::move(c));
}

void LmiProblem::set_objective_maximize(const ScalarExpr& linear) {
    const int K = param_count_;
    const double f0 = linear(LmiPoint(*this, Eigen::VectorXd::Zero(K)));
    objective_coeffs_.resize(K);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd basis = Eigen::VectorXd::Zero(K);
        basis(k) = 1.0;
        objective_coeffs_(k) = linear(LmiPoint(*this, basis)) - f0;
    }
    objective_ = LmiObjective::MaximizeLinear;
    logdet_variable_.clear();
}

void LmiProblem::set_objective_logdet(const std::string& symmetric_variable) {
    const LmiVariable& v = variable(symmetric_variable);
    if (!v.symmetric)
        throw std::invalid_argument("LmiProblem: logdet objective requires a symmetric variable");
    objective_ = LmiObjective::MaximizeLogDet;
    logdet_variable_ = symmetric_variable;
    objective_coeffs_.resize(0);
}

Eigen::VectorXd LmiProblem::pack(const std::string& name, const Eigen::MatrixXd& value) const {
    const LmiVariable& v = variable(name);
    if (value.rows() != v.rows || value.cols() != v.cols)
        throw std::invalid_argument("LmiProblem: pack dimension mismatch for " + name);
    Eigen::VectorXd x(v.count);
    int k = 0;
    if (v.symmetric) {
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j <= i; ++j) x(k++) = value(i, j);
    } else {
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j < v.cols; ++j) x(k++) = value(i, j);
    }
    return x;
}

}  // namespace pcis
