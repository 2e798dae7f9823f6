#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

// Symbolic block-LMI problems over named symmetric / rectangular matrix
// variables.  Constraints are affine-in-variables symmetric matrix
// expressions required PSD.  Expressions are supplied as callables over a
// variable assignment; since they are affine, probing the callable at basis
// assignments extracts the exact constant and coefficient matrices that the
// SDP engine consumes.

namespace pcis {

class LmiProblem;

// A concrete assignment of all variables, indexed by a flat parameter
// vector.  Symmetric variables are parameterized by their lower triangle.
class LmiPoint {
   public:
    LmiPoint(const LmiProblem& problem, Eigen::VectorXd params);

    // Materializes the named variable's matrix at this point.
    Eigen::MatrixXd value(const std::string& name) const;

    const Eigen::VectorXd& params() const { return params_; }

   private:
    const LmiProblem* problem_;
    Eigen::VectorXd params_;
};

struct LmiVariable {
    std::string name;
    int rows = 0;
    int cols = 0;
    bool symmetric = false;
    int offset = 0;  // first index into the flat parameter vector
    int count = 0;   // number of scalar parameters
};

// One PSD constraint in compiled affine form: F0 + sum_k x_k * coeff[k] >= 0.
struct LmiConstraint {
    std::string label;
    Eigen::MatrixXd constant;
    std::vector<std::pair<int, Eigen::MatrixXd>> coeffs;  // (param index, matrix)

    Eigen::Index size() const { return constant.rows(); }
    Eigen::MatrixXd value(const Eigen::VectorXd& x) const;
    double min_eigenvalue(const Eigen::VectorXd& x) const;
    // Scale used for relative feasibility tolerances.
    double scale() const;
};

enum class LmiObjective { None, MaximizeLinear, MaximizeLogDet };

class LmiProblem {
   public:
    using MatrixExpr = std::function<Eigen::MatrixXd(const LmiPoint&)>;
    using ScalarExpr = std::function<double(const LmiPoint&)>;

    void add_symmetric_variable(const std::string& name, int n);
    void add_rectangular_variable(const std::string& name, int rows, int cols);

    // Probes `expr` at basis assignments to extract the affine form; throws
    // if the result is non-square, exactly asymmetric, or non-affine.
    void add_constraint(const std::string& label, const MatrixExpr& expr);

    void set_objective_maximize(const ScalarExpr& linear);
    void set_objective_logdet(const std::string& symmetric_variable);

    int param_count() const { return param_count_; }
    const std::vector<LmiVariable>& variables() const { return variables_; }
    const LmiVariable& variable(const std::string& name) const;
    bool has_variable(const std::string& name) const;
    const std::vector<LmiConstraint>& constraints() const { return constraints_; }

    LmiObjective objective() const { return objective_; }
    const Eigen::VectorXd& objective_coeffs() const { return objective_coeffs_; }
    const std::string& logdet_variable() const { return logdet_variable_; }

    // Extracts the flat parameters of `value` for the named variable
    // (inverse of LmiPoint::value for a single variable).
    Eigen::VectorXd pack(const std::string& name, const Eigen::MatrixXd& value) const;

   private:
    std::vector<LmiVariable> variables_;
    std::vector<LmiConstraint> constraints_;
    int param_count_ = 0;
    LmiObjective objective_ = LmiObjective::None;
    Eigen::VectorXd objective_coeffs_;
    std::string logdet_variable_;
};

}  // namespace pcis
