#include "dempc/empc.hpp"

#include "dempc/errors.hpp"
#include "dempc/qp.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>

namespace dempc {

void OcpConfig::validate() const {
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (!(alpha > 0 && beta > 0 && gamma > 0 && zeta > 0) || !(eta >= 0))
    throw DomainError("OCP weights alpha, beta, gamma, zeta must be > 0 and eta >= 0");
  Eigen::LLT<Eigen::Matrix3d> llt(0.5 * (R + R.transpose()));
  if (llt.info() != Eigen::Success || !R.isApprox(R.transpose())) throw DomainError("R must be symmetric positive definite");
  if (!(fuel_lower_frac > 0 && fuel_lower_frac <= 1)) throw DomainError("fuel_lower_frac must lie in (0, 1]");
  if (!(p_band >= 0 && chi_band >= 0)) throw DomainError("target bands must be >= 0");
  if (!(p_rate > 0 && chi_rate > 0)) throw DomainError("rate limits must be > 0");
  if (!(p_min < p_max && chi_min < chi_max && chi_min >= 0 && chi_max <= 1)) throw DomainError("invalid input envelope");
  if (!(step_scale.minCoeff() > 0)) throw DomainError("step scales must be > 0");
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");
  if (!(slack_reg > 0)) throw DomainError("slack_reg must be > 0");
}

const char* to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::Converged: return "converged";
    case SolverStatus::MaxIter: return "max_iter";
    case SolverStatus::InfeasibleRestored: return "infeasible_restored";
  }
  return "infeasible_restored";
}

double OcpSolution::max_slack() const {
  double m = 0;
  for (double e : slack) m = std::max(m, e);
  return m;
}

InputBounds ocp_bounds(const OcpProblem& prob, const OcpConfig& cfg) {
  const int n = cfg.horizon;
  InputBounds b;
  b.w_hi = prob.targets.w_inj;
  b.w_lo = cfg.fuel_lower_frac * prob.targets.w_inj;
  auto box = [](double trg, double band, double lo_env, double hi_env) {
    double lo = std::max(lo_env, trg - band), hi = std::min(hi_env, trg + band);
    if (lo > hi) lo = hi = std::clamp(trg, lo_env, hi_env);
    return std::pair{lo, hi};
  };
  auto [p_lo, p_hi] = box(prob.targets.p_im, cfg.p_band, cfg.p_min, cfg.p_max);
  auto [c_lo, c_hi] = box(prob.targets.chi_egr, cfg.chi_band, cfg.chi_min, cfg.chi_max);
  for (int j = 0; j < n; ++j) {
    const double reach = j + 1;
    b.p_lo.push_back(std::min(p_lo, prob.u_prev.p_im + reach * cfg.p_rate));
    b.p_hi.push_back(std::max(p_hi, prob.u_prev.p_im - reach * cfg.p_rate));
    b.chi_lo.push_back(std::min(c_lo, prob.u_prev.chi_egr + reach * cfg.chi_rate));
    b.chi_hi.push_back(std::max(c_hi, prob.u_prev.chi_egr - reach * cfg.chi_rate));
  }
  return b;
}

ExtendedState extended_dynamics(const NnParams& rnn, const ExtendedState& xe, const ControlInput& du, double n_e) {
  const EmissionsState x = xe.absolute();
  const ControlInput u{xe.u_prev.p_im + du.p_im, xe.u_prev.chi_egr + du.chi_egr, xe.u_prev.w_inj + du.w_inj};
  const EmissionsState next = rnn_step(rnn, x, {u.p_im, u.chi_egr, n_e, u.w_inj});
  if (!std::isfinite(next.nox) || !std::isfinite(next.soot)) throw NumericError("non-finite extended state");
  return {{next.nox - x.nox, next.soot - x.soot}, x, u};
}

double stage_cost(const ControlInput& du, double eps, const ExtendedState& xe_next, const StageTargets& trg,
                  const OcpConfig& cfg) {
  const ControlInput& u = xe_next.u_prev;
  const Eigen::Vector3d d = du.to_vector();
  const double dp = trg.p_im - u.p_im, dc = trg.chi_egr - u.chi_egr;
  return cfg.alpha * dp * dp + cfg.beta * dc * dc + cfg.gamma * (trg.w_inj - u.w_inj) +
         cfg.eta * xe_next.absolute().nox + cfg.zeta * eps + d.dot(cfg.R * d);
}

double ocp_objective(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg,
                     const std::vector<ControlInput>& du, const std::vector<double>& eps) {
  const auto n = static_cast<std::size_t>(cfg.horizon);
  if (du.size() != n || eps.size() != n) throw StructuralError("increment and slack sequences must have N entries");
  ExtendedState xe{{prob.x_meas.nox - prob.x_prev_meas.nox, prob.x_meas.soot - prob.x_prev_meas.soot},
                   prob.x_prev_meas,
                   prob.u_prev};
  double j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    xe = extended_dynamics(rnn, xe, du[k], prob.n_e);
    j += stage_cost(du[k], eps[k], xe, prob.targets, cfg);
  }
  xe = extended_dynamics(rnn, xe, {}, prob.n_e);
  return j + stage_cost({}, 0.0, xe, prob.targets, cfg);
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<ControlInput> absolute_inputs(const ControlInput& u_prev, const std::vector<ControlInput>& du) {
  std::vector<ControlInput> u;
  u.reserve(du.size() + 1);
  ControlInput cur = u_prev;
  for (const auto& d : du) {
    cur = {cur.p_im + d.p_im, cur.chi_egr + d.chi_egr, cur.w_inj + d.w_inj};
    u.push_back(cur);
  }
  u.push_back(cur);
  return u;
}

std::vector<RnnInput> rnn_inputs(const std::vector<ControlInput>& u, double n_e) {
  std::vector<RnnInput> out;
  out.reserve(u.size());
  for (const auto& v : u) out.push_back({v.p_im, v.chi_egr, n_e, v.w_inj});
  return out;
}

struct Rollout {
  std::vector<ControlInput> u;     // u_0..u_N
  std::vector<EmissionsState> x;   // x_1..x_{N+1}
  double merit = 0;
};

Rollout roll(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg, const std::vector<ControlInput>& du) {
  Rollout r;
  r.u = absolute_inputs(prob.u_prev, du);
  EmissionsState x = prob.x_meas;
  const StageTargets& t = prob.targets;
  for (std::size_t j = 0; j < r.u.size(); ++j) {
    const ControlInput& u = r.u[j];
    x = rnn_step(rnn, x, {u.p_im, u.chi_egr, prob.n_e, u.w_inj});
    if (!std::isfinite(x.nox) || !std::isfinite(x.soot))
      throw NumericError("non-finite prediction at horizon step " + std::to_string(j), static_cast<std::ptrdiff_t>(j));
    r.x.push_back(x);
    const double dp = t.p_im - u.p_im, dc = t.chi_egr - u.chi_egr;
    r.merit += cfg.alpha * dp * dp + cfg.beta * dc * dc + cfg.gamma * (t.w_inj - u.w_inj) + cfg.eta * x.nox;
    if (j < du.size()) {
      const Eigen::Vector3d d = du[j].to_vector();
      r.merit += d.dot(cfg.R * d);
      if (cfg.soot_limit_active) r.merit += cfg.zeta * std::max(0.0, x.soot - cfg.soot_lim);
    }
  }
  return r;
}

// Sequential projection of an increment sequence onto the box, rate and
// fuel constraints.
void project(std::vector<ControlInput>& du, const ControlInput& u_prev, const InputBounds& b, const OcpConfig& cfg) {
  ControlInput cur = u_prev;
  for (std::size_t j = 0; j < du.size(); ++j) {
    auto clamp_move = [](double from, double step, double rate, double lo, double hi) {
      double a = std::max(lo, from - rate), z = std::min(hi, from + rate);
      return std::clamp(from + step, a, std::max(a, z));
    };
    ControlInput next;
    next.p_im = clamp_move(cur.p_im, du[j].p_im, cfg.p_rate, b.p_lo[j], b.p_hi[j]);
    next.chi_egr = clamp_move(cur.chi_egr, du[j].chi_egr, cfg.chi_rate, b.chi_lo[j], b.chi_hi[j]);
    next.w_inj = std::clamp(cur.w_inj + du[j].w_inj, b.w_lo, b.w_hi);
    du[j] = {next.p_im - cur.p_im, next.chi_egr - cur.chi_egr, next.w_inj - cur.w_inj};
    cur = next;
  }
}

}  // namespace

double ocp_merit(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg,
                 const std::vector<ControlInput>& du) {
  if (du.size() != static_cast<std::size_t>(cfg.horizon)) throw StructuralError("increment sequence must have N entries");
  return roll(rnn, prob, cfg, du).merit;
}

constexpr double kMinDamping = 0.1;

OcpSolution solve_ocp(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg, const OcpSolution* warm,
                      bool shift_warm) {
  cfg.validate();
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  const int n = cfg.horizon;
  const auto nz = static_cast<std::size_t>(n);
  const Eigen::Index nu = 3 * n;
  const bool limit = cfg.soot_limit_active;
  const Eigen::Index ne = limit ? n : 0;
  const InputBounds b = ocp_bounds(prob, cfg);
  const Eigen::Vector3d s = cfg.step_scale;
  const StageTargets& trg = prob.targets;

  std::vector<ControlInput> du(nz);
  if (warm && warm->delta_u.size() == nz) {
    for (std::size_t i = 0; i < nz; ++i) du[i] = warm->delta_u[shift_warm ? std::min(i + 1, nz - 1) : i];
  }
  project(du, prob.u_prev, b, cfg);

  OcpSolution sol;
  auto restore = [&] {
    OcpSolution f;
    f.delta_u.assign(nz, ControlInput{});
    f.slack.assign(nz, 0.0);
    f.status = SolverStatus::InfeasibleRestored;
    f.iterations = sol.iterations;
    f.merit_history = sol.merit_history;
    try {
      Rollout r = roll(rnn, prob, cfg, f.delta_u);
      f.predicted = r.x;
      f.objective = r.merit;
    } catch (const NumericError&) {
      f.objective = std::numeric_limits<double>::infinity();
    }
    f.solve_time = elapsed();
    return f;
  };

  Rollout cur;
  try {
    cur = roll(rnn, prob, cfg, du);
  } catch (const NumericError&) {
    return restore();
  }
  sol.merit_history.push_back(cur.merit);

  bool converged = false;
  double last_iter_time = 0;
  double damping = 0;  // Levenberg term on the scaled step
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const double t_iter = elapsed();
    if (cfg.time_budget > 0 && t_iter + last_iter_time > cfg.time_budget) {
      sol.budget_exhausted = true;
      break;
    }
    sol.iterations = iter + 1;

    HorizonSensitivity hs;
    try {
      hs = rnn_horizon_jacobians(rnn, prob.x_meas, rnn_inputs(cur.u, prob.n_e));
    } catch (const NumericError&) {
      return restore();
    }

    // dx_{j+1} / d(du_i) for i <= min(j, N-1), physical units, 2 x 3.
    std::vector<std::vector<Eigen::Matrix<double, 2, 3>>> sens(nz + 1);
    for (std::size_t j = 0; j <= nz; ++j) {
      sens[j].assign(nz, Eigen::Matrix<double, 2, 3>::Zero());
      Eigen::Matrix<double, 2, 3> acc = Eigen::Matrix<double, 2, 3>::Zero();
      for (std::size_t l = j + 1; l-- > 0;) {
        const auto& blk = hs.d_input[j][l];
        acc.col(0) += blk.col(0);
        acc.col(1) += blk.col(1);
        acc.col(2) += blk.col(3);
        if (l < nz) sens[j][l] = acc;
      }
    }

    // Quadratic model in the scaled step.
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nu, nu);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(nu);
    const Eigen::Vector3d w(2 * cfg.alpha, 2 * cfg.beta, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < n; ++l) {
        const double count = n + 1 - std::max(i, l);
        for (int c = 0; c < 3; ++c) h(3 * i + c, 3 * l + c) += w(c) * count * s(c) * s(c);
      }
      h.block<3, 3>(3 * i, 3 * i) += 2.0 * s.asDiagonal() * cfg.R * s.asDiagonal();
      h.block<3, 3>(3 * i, 3 * i).diagonal().array() += damping;
      Eigen::Vector3d gi = 2.0 * cfg.R * du[static_cast<std::size_t>(i)].to_vector();
      for (std::size_t j = static_cast<std::size_t>(i); j <= nz; ++j) {
        const ControlInput& u = cur.u[j];
        gi += Eigen::Vector3d(2 * cfg.alpha * (u.p_im - trg.p_im), 2 * cfg.beta * (u.chi_egr - trg.chi_egr), -cfg.gamma);
        gi += cfg.eta * sens[j][static_cast<std::size_t>(i)].row(0).transpose();
      }
      g.segment<3>(3 * i) = gi.cwiseProduct(s);
    }

    // Constraint rows: C v >= d with v = [scaled step; slacks].
    const Eigen::Index nv = nu + ne;
    const Eigen::Index rows = 10 * n + 2 * ne;
    QpProblem qp;
    qp.hessian = Eigen::MatrixXd::Zero(nv, nv);
    qp.hessian.topLeftCorner(nu, nu) = h;
    qp.gradient = Eigen::VectorXd::Zero(nv);
    qp.gradient.head(nu) = g;
    for (Eigen::Index e = 0; e < ne; ++e) {
      qp.hessian(nu + e, nu + e) = cfg.slack_reg;
      qp.gradient(nu + e) = cfg.zeta;
    }
    qp.constraints = Eigen::MatrixXd::Zero(rows, nv);
    qp.lower = Eigen::VectorXd::Zero(rows);
    Eigen::Index r = 0;
    auto two_sided = [&](Eigen::Index rr, double value, double lo, double hi) {
      qp.lower(rr) = lo - value;
      qp.constraints.row(rr + 1) = -qp.constraints.row(rr);
      qp.lower(rr + 1) = value - hi;
    };
    Eigen::VectorXd soot_lin0(ne);
    std::vector<Eigen::RowVectorXd> soot_rows;
    for (int j = 0; j < n; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const ControlInput& u = cur.u[jj];
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i <= j; ++i) qp.constraints(r, 3 * i + c) = s(c);
        const double value = c == 0 ? u.p_im : c == 1 ? u.chi_egr : u.w_inj;
        const double lo = c == 0 ? b.p_lo[jj] : c == 1 ? b.chi_lo[jj] : b.w_lo;
        const double hi = c == 0 ? b.p_hi[jj] : c == 1 ? b.chi_hi[jj] : b.w_hi;
        two_sided(r, value, lo, hi);
        r += 2;
      }
      for (int c = 0; c < 2; ++c) {
        qp.constraints(r, 3 * j + c) = s(c);
        const double rate = c == 0 ? cfg.p_rate : cfg.chi_rate;
        two_sided(r, du[jj].to_vector()(c), -rate, rate);
        r += 2;
      }
      if (limit) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
        for (int i = 0; i <= j; ++i)
          row.segment<3>(3 * i) = sens[jj][static_cast<std::size_t>(i)].row(1).cwiseProduct(s.transpose());
        soot_rows.push_back(row.head(nu));
        soot_lin0(j) = cur.x[jj].soot;
        row = -row;
        row(nu + j) = 1.0;
        qp.constraints.row(r) = row;
        qp.lower(r) = cur.x[jj].soot - cfg.soot_lim;
        qp.constraints(r + 1, nu + j) = 1.0;
        r += 2;
      }
    }

    const QpResult q = solve_qp(qp);
    if (q.status != QpStatus::Optimal) return restore();

    const Eigen::VectorXd p = q.x.head(nu);
    double model_change = g.dot(p) + 0.5 * p.dot(h * p);
    if (limit) {
      for (Eigen::Index j = 0; j < ne; ++j) {
        const double lin = soot_lin0(j) + soot_rows[static_cast<std::size_t>(j)].dot(p);
        model_change += cfg.zeta * (std::max(0.0, lin - cfg.soot_lim) - std::max(0.0, soot_lin0(j) - cfg.soot_lim));
      }
    }
    const double predicted = -model_change;
    sol.kkt_residual = (g - qp.constraints.leftCols(nu).transpose() * q.multipliers).cwiseAbs().maxCoeff();

    if (predicted <= cfg.decrease_tol * (1.0 + std::abs(cur.merit)) || p.cwiseAbs().maxCoeff() <= cfg.step_tol) {
      converged = true;
      break;
    }

    bool accepted = false;
    Rollout trial;
    std::vector<ControlInput> du_trial(nz);
    for (double t = 1.0; t >= 1.0 / 1024.0; t *= 0.5) {
      for (std::size_t i = 0; i < nz; ++i)
        du_trial[i] = ControlInput::from_vector(du[i].to_vector() + t * p.segment<3>(3 * static_cast<Eigen::Index>(i)).cwiseProduct(s));
      try {
        trial = roll(rnn, prob, cfg, du_trial);
      } catch (const NumericError&) {
        continue;
      }
      if (trial.merit <= cur.merit - 1e-4 * t * predicted) {
        accepted = true;
        break;
      }
    }
    // Full steps that beat the model are stretched while the merit keeps
    // falling, up to the largest multiple the linear rows allow.
    if (accepted && cur.merit - trial.merit >= predicted) {
      const Eigen::Index lin_rows = 10 * n;
      const Eigen::VectorXd cp = qp.constraints.topLeftCorner(lin_rows, nu) * p;
      double t_max = 8.0;
      for (Eigen::Index i = 0; i < lin_rows; ++i)
        if (cp(i) < 0) t_max = std::min(t_max, qp.lower(i) / cp(i));
      std::vector<ControlInput> du_long(nz);
      for (double t = 2.0; t <= t_max; t *= 2.0) {
        for (std::size_t i = 0; i < nz; ++i)
          du_long[i] = ControlInput::from_vector(du[i].to_vector() + t * p.segment<3>(3 * static_cast<Eigen::Index>(i)).cwiseProduct(s));
        Rollout longer;
        try {
          longer = roll(rnn, prob, cfg, du_long);
        } catch (const NumericError&) {
          break;
        }
        if (!(longer.merit < trial.merit)) break;
        du_trial = du_long;
        trial = std::move(longer);
      }
    }
    if (!accepted) {
      converged = sol.kkt_residual <= cfg.kkt_tol;
      break;
    }
    const double ratio = (cur.merit - trial.merit) / predicted;
    if (ratio < 0.25)
      damping = std::min(1e4, std::max(kMinDamping, 4.0 * damping));
    else if (ratio > 0.75)
      damping = damping / 4.0 < kMinDamping ? 0.0 : damping / 4.0;
    du = du_trial;
    cur = std::move(trial);
    sol.merit_history.push_back(cur.merit);
    last_iter_time = elapsed() - t_iter;
  }

  sol.delta_u = du;
  sol.predicted = cur.x;
  sol.objective = cur.merit;
  sol.slack.assign(nz, 0.0);
  if (limit)
    for (std::size_t j = 0; j < nz; ++j) sol.slack[j] = std::max(0.0, cur.x[j].soot - cfg.soot_lim);
  sol.status = converged ? SolverStatus::Converged : SolverStatus::MaxIter;
  sol.solve_time = elapsed();
  return sol;
}

// ---------------------------------------------------------------------------

ControlInput apply_first_move(const ControlInput& u_prev, const ControlInput& du, const StageTargets& trg,
                              const OcpConfig& cfg) {
  ControlInput u{u_prev.p_im + du.p_im, u_prev.chi_egr + du.chi_egr, u_prev.w_inj + du.w_inj};
  u.p_im = std::clamp(u.p_im, cfg.p_min, cfg.p_max);
  u.chi_egr = std::clamp(u.chi_egr, cfg.chi_min, cfg.chi_max);
  u.w_inj = std::clamp(u.w_inj, cfg.fuel_lower_frac * trg.w_inj, trg.w_inj);
  return u;
}

EmpcController::EmpcController(NnParams rnn, OcpConfig cfg) : rnn_(std::move(rnn)), cfg_(std::move(cfg)) {
  rnn_.validate();
  if (rnn_.input_dim() != kRnnInputDim || rnn_.output_dim() != kStateDim)
    throw StructuralError("EMPC needs the 6-input, 2-output recurrent model");
  cfg_.validate();
}

void EmpcController::reset(const ControlInput& u0, const EmissionsState& x0) {
  u_prev_ = u0;
  x_prev_ = x0;
  warm_.reset();
}

EmpcStep EmpcController::step(const EmissionsState& x_meas, double n_e, const StageTargets& targets) {
  OcpProblem prob{x_meas, x_prev_, u_prev_, n_e, targets};
  EmpcStep out;
  out.solution = solve_ocp(rnn_, prob, cfg_, warm_ ? &*warm_ : nullptr, true);
  out.u = apply_first_move(u_prev_, out.solution.delta_u.front(), targets, cfg_);
  u_prev_ = out.u;
  x_prev_ = x_meas;
  if (out.solution.status == SolverStatus::InfeasibleRestored)
    warm_.reset();
  else
    warm_ = out.solution;
  return out;
}

}  // namespace dempc
