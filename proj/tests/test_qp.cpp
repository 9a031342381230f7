#include "support.hpp"

#include "dempc/errors.hpp"
#include "dempc/qp.hpp"

#include <doctest.h>

using namespace dempc;

namespace {

QpProblem random_qp(Eigen::Index n, Eigen::Index m, std::mt19937_64& rng) {
  QpProblem qp;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) a.col(i) = testing::random_vector(n, rng);
  qp.hessian = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.gradient = testing::random_vector(n, rng, -3, 3);
  qp.constraints.resize(m, n);
  for (Eigen::Index i = 0; i < m; ++i) qp.constraints.row(i) = testing::random_vector(n, rng).transpose();
  // x = 0 is strictly feasible.
  qp.lower = testing::random_vector(m, rng, -1.0, -0.1);
  return qp;
}

double objective(const QpProblem& qp, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
}

// Enumerates every active set, solves the equality-constrained KKT system and
// keeps the best primal-feasible point.
double enumerate_optimum(const QpProblem& qp) {
  const Eigen::Index n = qp.variables(), m = qp.rows();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask & (1u << i)) act.push_back(i);
    if (static_cast<Eigen::Index>(act.size()) > n) continue;
    const auto k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = qp.hessian;
    rhs.head(n) = -qp.gradient;
    for (Eigen::Index a = 0; a < k; ++a) {
      kkt.block(0, n + a, n, 1) = qp.constraints.row(act[static_cast<std::size_t>(a)]).transpose();
      kkt.block(n + a, 0, 1, n) = qp.constraints.row(act[static_cast<std::size_t>(a)]);
      rhs(n + a) = qp.lower(act[static_cast<std::size_t>(a)]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + k) continue;
    const Eigen::VectorXd x = lu.solve(rhs).head(n);
    if (((qp.constraints * x - qp.lower).array() >= -1e-9).all()) best = std::min(best, objective(qp, x));
  }
  return best;
}

}  // namespace

TEST_CASE("unconstrained QP returns the Newton point") {
  QpProblem qp;
  qp.hessian = Eigen::Matrix2d{{4, 1}, {1, 3}};
  qp.gradient = Eigen::Vector2d(1, 2);
  qp.constraints.resize(0, 2);
  qp.lower.resize(0);
  const QpResult r = solve_qp(qp);
  CHECK(r.status == QpStatus::Optimal);
  const Eigen::Vector2d expect = -qp.hessian.ldlt().solve(qp.gradient);
  CHECK((r.x - expect).norm() < 1e-12);
  CHECK(r.active.empty());
}

TEST_CASE("single active bound has the textbook multiplier") {
  // min (x - 2)^2 / 2  s.t.  -x >= -1  ->  x = 1, lambda = 1
  QpProblem qp;
  qp.hessian = Eigen::MatrixXd::Identity(1, 1);
  qp.gradient = Eigen::VectorXd::Constant(1, -2.0);
  qp.constraints = Eigen::MatrixXd::Constant(1, 1, -1.0);
  qp.lower = Eigen::VectorXd::Constant(1, -1.0);
  const QpResult r = solve_qp(qp);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(r.x(0) == doctest::Approx(1.0));
  CHECK(r.multipliers(0) == doctest::Approx(1.0));
  CHECK(r.objective == doctest::Approx(0.5 - 2.0));
  CHECK(r.active == std::vector<int>{0});
}

TEST_CASE("random QPs satisfy KKT and match active-set enumeration") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index n = 2 + trial % 4, m = 3 + trial % 6;
    const QpProblem qp = random_qp(n, m, rng);
    const QpResult r = solve_qp(qp);
    REQUIRE(r.status == QpStatus::Optimal);
    const Eigen::VectorXd slack = qp.constraints * r.x - qp.lower;
    CHECK(slack.minCoeff() >= -1e-8);
    CHECK(r.multipliers.minCoeff() >= 0.0);
    CHECK(std::abs(slack.dot(r.multipliers)) < 1e-8);
    CHECK(qp_stationarity(qp, r.x, r.multipliers) < 1e-8);
    CHECK(objective(qp, r.x) == doctest::Approx(enumerate_optimum(qp)).epsilon(1e-9));
  }
}

TEST_CASE("contradictory rows are reported infeasible") {
  QpProblem qp;
  qp.hessian = Eigen::MatrixXd::Identity(1, 1);
  qp.gradient = Eigen::VectorXd::Zero(1);
  qp.constraints = Eigen::MatrixXd(2, 1);
  qp.constraints << 1.0, -1.0;
  qp.lower = Eigen::Vector2d(1.0, 0.0);  // x >= 1 and x <= 0
  CHECK(solve_qp(qp).status == QpStatus::Infeasible);

  QpProblem zero_row = qp;
  zero_row.constraints = Eigen::MatrixXd::Zero(1, 1);
  zero_row.lower = Eigen::VectorXd::Constant(1, 0.5);
  CHECK(solve_qp(zero_row).status == QpStatus::Infeasible);
}

TEST_CASE("indefinite Hessian is rejected") {
  QpProblem qp;
  qp.hessian = Eigen::Matrix2d{{1, 0}, {0, -1}};
  qp.gradient = Eigen::Vector2d::Zero();
  qp.constraints.resize(0, 2);
  qp.lower.resize(0);
  CHECK(solve_qp(qp).status == QpStatus::NotConvex);
}

TEST_CASE("shape mismatches throw") {
  QpProblem qp;
  qp.hessian = Eigen::Matrix3d::Identity();
  qp.gradient = Eigen::Vector2d::Zero();
  CHECK_THROWS_AS(solve_qp(qp), StructuralError);
  qp.gradient = Eigen::Vector3d::Zero();
  qp.constraints = Eigen::MatrixXd::Ones(2, 2);
  qp.lower = Eigen::Vector2d::Zero();
  CHECK_THROWS_AS(solve_qp(qp), StructuralError);
}

TEST_CASE("redundant duplicated constraints do not break the solver") {
  QpProblem qp;
  qp.hessian = Eigen::Matrix2d::Identity();
  qp.gradient = Eigen::Vector2d(-4, -4);
  qp.constraints = Eigen::MatrixXd(3, 2);
  qp.constraints << -1, -1, -1, -1, -2, -2;
  qp.lower = Eigen::Vector3d(-2, -2, -4);  // x + y <= 2, three times
  const QpResult r = solve_qp(qp);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(r.x(0) == doctest::Approx(1.0));
  CHECK(r.x(1) == doctest::Approx(1.0));
  CHECK(qp_stationarity(qp, r.x, r.multipliers) < 1e-9);
}

TEST_CASE("status names") {
  CHECK(std::string(to_string(QpStatus::Optimal)) == "optimal");
  CHECK(std::string(to_string(QpStatus::NotConvex)) == "not_convex");
}
