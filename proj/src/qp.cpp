#include "dempc/qp.hpp"

#include "dempc/errors.hpp"

#include <cmath>
#include <limits>

namespace dempc {

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
    case QpStatus::NotConvex: return "not_convex";
  }
  return "infeasible";
}

double qp_stationarity(const QpProblem& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
  Eigen::VectorXd r = qp.hessian * x + qp.gradient;
  if (qp.rows() > 0) r -= qp.constraints.transpose() * lambda;
  return r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
}

QpResult solve_qp(const QpProblem& qp, const QpOptions& opt) {
  const Eigen::Index n = qp.variables();
  const Eigen::Index m = qp.rows();
  if (qp.hessian.rows() != n || qp.hessian.cols() != n) throw StructuralError("QP Hessian shape mismatch");
  if (m > 0 && (qp.constraints.rows() != m || qp.constraints.cols() != n))
    throw StructuralError("QP constraint matrix shape mismatch");

  QpResult res;
  res.multipliers = Eigen::VectorXd::Zero(m);
  Eigen::LLT<Eigen::MatrixXd> chol(qp.hessian);
  if (chol.info() != Eigen::Success) {
    res.status = QpStatus::NotConvex;
    res.x = Eigen::VectorXd::Zero(n);
    return res;
  }
  const Eigen::MatrixXd ginv = chol.solve(Eigen::MatrixXd::Identity(n, n));

  // Rows scaled to unit norm so one tolerance fits every constraint.
  Eigen::VectorXd row_norm(m);
  Eigen::MatrixXd c(m, n);
  Eigen::VectorXd d(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    row_norm(i) = qp.constraints.row(i).norm();
    if (row_norm(i) == 0.0) {
      if (qp.lower(i) > opt.feasibility_tol) {
        res.status = QpStatus::Infeasible;
        res.x = -chol.solve(qp.gradient);
        return res;
      }
      row_norm(i) = 1.0;
    }
    c.row(i) = qp.constraints.row(i) / row_norm(i);
    d(i) = qp.lower(i) / row_norm(i);
  }

  Eigen::VectorXd x = -chol.solve(qp.gradient);
  std::vector<int> act;
  Eigen::VectorXd u(0);
  std::vector<char> in_set(static_cast<std::size_t>(m), 0);
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations : static_cast<int>(10 * (n + m) + 50);
  const double inf = std::numeric_limits<double>::infinity();

  auto finish = [&](QpStatus st) {
    res.status = st;
    res.x = x;
    res.active = act;
    for (std::size_t k = 0; k < act.size(); ++k)
      res.multipliers(act[k]) = u(static_cast<Eigen::Index>(k)) / row_norm(act[k]);
    res.objective = 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
    return res;
  };

  int iter = 0;
  for (;;) {
    // Most violated constraint outside the active set.
    int p = -1;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (in_set[static_cast<std::size_t>(i)]) continue;
      double s = c.row(i).dot(x) - d(i);
      if (s < -opt.feasibility_tol * (1.0 + std::abs(d(i))) && s < worst) {
        worst = s;
        p = static_cast<int>(i);
      }
    }
    if (p < 0) return finish(QpStatus::Optimal);

    Eigen::VectorXd u_plus(static_cast<Eigen::Index>(act.size()) + 1);
    u_plus << u, 0.0;
    const Eigen::VectorXd np = c.row(p).transpose();

    for (;;) {
      if (++iter > max_iter) {
        res.iterations = iter;
        return finish(QpStatus::MaxIterations);
      }
      const auto q = static_cast<Eigen::Index>(act.size());
      Eigen::VectorXd r(q), z;
      const Eigen::VectorXd ginv_np = ginv * np;
      if (q > 0) {
        Eigen::MatrixXd nmat(n, q);
        for (Eigen::Index k = 0; k < q; ++k) nmat.col(k) = c.row(act[static_cast<std::size_t>(k)]).transpose();
        const Eigen::MatrixXd ginv_n = ginv * nmat;
        const Eigen::MatrixXd mmat = nmat.transpose() * ginv_n;
        r = mmat.ldlt().solve(nmat.transpose() * ginv_np);
        z = ginv_np - ginv_n * r;
      } else {
        z = ginv_np;
      }

      // Dual step limit from the active multipliers.
      double t1 = inf;
      Eigen::Index drop = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r(k) > 1e-12) {
          double ratio = u_plus(k) / r(k);
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      const double zn = z.dot(np);
      const double scale = np.dot(ginv_np);
      const double t2 = zn > 1e-12 * scale ? -(np.dot(x) - d(p)) / zn : inf;

      if (t1 == inf && t2 == inf) {
        res.iterations = iter;
        return finish(QpStatus::Infeasible);
      }
      const double t = std::min(t1, t2);
      if (t2 < inf) x += t * z;
      if (q > 0) u_plus.head(q) -= t * r;
      u_plus(q) += t;

      if (t2 <= t1) {
        act.push_back(p);
        in_set[static_cast<std::size_t>(p)] = 1;
        u = u_plus;
        break;
      }
      // Drop the blocking constraint and retry the same p.
      in_set[static_cast<std::size_t>(act[static_cast<std::size_t>(drop)])] = 0;
      act.erase(act.begin() + drop);
      Eigen::VectorXd shrunk(q);
      shrunk << u_plus.head(drop), u_plus.segment(drop + 1, q - drop);
      u_plus = shrunk;
    }
    res.iterations = iter;
  }
}

}  // namespace dempc
