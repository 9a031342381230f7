#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dempc {

/// min 1/2 x'Hx + g'x  subject to  C x >= d, with H symmetric positive definite.
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd constraints;  // m x n
  Eigen::VectorXd lower;        // m

  Eigen::Index variables() const { return gradient.size(); }
  Eigen::Index rows() const { return lower.size(); }
};

enum class QpStatus { Optimal, Infeasible, MaxIterations, NotConvex };

const char* to_string(QpStatus s);

struct QpOptions {
  double feasibility_tol = 1e-9;
  int max_iterations = 0;  // 0 = 10 (n + m) + 50
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per constraint row, >= 0, zero when inactive
  std::vector<int> active;
  QpStatus status = QpStatus::Infeasible;
  int iterations = 0;
  double objective = 0;
};

/// Goldfarb-Idnani dual active-set method: starts from the unconstrained
/// minimizer and adds the most violated constraint each major iteration.
QpResult solve_qp(const QpProblem& qp, const QpOptions& opt = {});

/// max |Hx + g - C' lambda|
double qp_stationarity(const QpProblem& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda);

}  // namespace dempc
