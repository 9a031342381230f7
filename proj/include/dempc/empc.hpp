#pragma once

#include "dempc/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dempc {

/// u = [p_im_adj, chi_egr_adj, w_inj_adj]
struct ControlInput {
  double p_im = 0;     // kPa
  double chi_egr = 0;  // fraction
  double w_inj = 0;    // mg/stroke

  Eigen::Vector3d to_vector() const { return {p_im, chi_egr, w_inj}; }
  static ControlInput from_vector(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
  bool operator==(const ControlInput&) const = default;
};

/// [dx; x_prev; u_prev]
struct ExtendedState {
  EmissionsState delta_x;
  EmissionsState x_prev;
  ControlInput u_prev;

  EmissionsState absolute() const { return {x_prev.nox + delta_x.nox, x_prev.soot + delta_x.soot}; }
};

struct OcpConfig {
  int horizon = 8;
  double alpha = 0.02;    // per kPa^2 of boost target deviation
  double beta = 2.0e3;    // per unit^2 of EGR-rate target deviation
  double gamma = 4.0;     // per mg/stroke of fuel shortfall
  double eta = 0.01;      // per ppm NOx
  double zeta = 40.0;     // per % Soot slack
  Eigen::Matrix3d R = Eigen::Vector3d(0.05, 200.0, 0.02).asDiagonal();
  bool soot_limit_active = false;
  double soot_lim = 100.0;       // %
  double fuel_lower_frac = 0.9;
  double p_band = 20.0;          // kPa around the boost target
  double chi_band = 0.08;        // around the EGR-rate target
  double p_rate = 8.0;           // kPa per control step
  double chi_rate = 0.03;        // per control step
  double p_min = 95.0;
  double p_max = 300.0;
  double chi_min = 0.0;
  double chi_max = 0.5;
  Eigen::Vector3d step_scale{10.0, 0.05, 10.0};
  double step_tol = 1e-4;        // on the scaled step
  double decrease_tol = 1e-4;    // relative predicted merit decrease
  double kkt_tol = 1e-3;
  int max_iter = 40;
  double time_budget = 0.2;      // s, 0 disables
  double slack_reg = 1e-2;

  /// Throws DomainError when a weight or bound is out of range.
  void validate() const;
};

struct StageTargets {
  double p_im = 0;
  double chi_egr = 0;
  double w_inj = 0;
};

enum class SolverStatus { Converged, MaxIter, InfeasibleRestored };
const char* to_string(SolverStatus s);

struct OcpSolution {
  std::vector<ControlInput> delta_u;  // N increments
  std::vector<double> slack;          // eps_1..eps_N
  std::vector<EmissionsState> predicted;  // x_1..x_{N+1}
  double objective = 0;
  SolverStatus status = SolverStatus::InfeasibleRestored;
  int iterations = 0;
  double kkt_residual = 0;
  double solve_time = 0;  // s
  bool budget_exhausted = false;
  std::vector<double> merit_history;  // merit at each accepted iterate

  double max_slack() const;
};

struct OcpProblem {
  EmissionsState x_meas;
  EmissionsState x_prev_meas;
  ControlInput u_prev;
  double n_e = 0;
  StageTargets targets;
};

/// Per-step bounds on the absolute inputs over the horizon.
struct InputBounds {
  std::vector<double> p_lo, p_hi, chi_lo, chi_hi;
  double w_lo = 0, w_hi = 0;
};

/// Target-relative boxes widened where needed so the rate limits can reach
/// them from u_prev.
InputBounds ocp_bounds(const OcpProblem& prob, const OcpConfig& cfg);

ExtendedState extended_dynamics(const NnParams& rnn, const ExtendedState& xe, const ControlInput& du, double n_e);

double stage_cost(const ControlInput& du, double eps, const ExtendedState& xe_next, const StageTargets& trg,
                  const OcpConfig& cfg);

/// Sum of stage costs for j = 0..N, the terminal stage holding the last input.
double ocp_objective(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg,
                     const std::vector<ControlInput>& du, const std::vector<double>& eps);

/// Objective with each slack at its smallest feasible value.
double ocp_merit(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg,
                 const std::vector<ControlInput>& du);

/// SQP over the increments and slacks. With `shift_warm` the warm start is
/// advanced one step (the last increment repeated).
OcpSolution solve_ocp(const NnParams& rnn, const OcpProblem& prob, const OcpConfig& cfg,
                      const OcpSolution* warm = nullptr, bool shift_warm = true);

struct EmpcStep {
  ControlInput u;
  OcpSolution solution;
};

/// Holds u_{k-1}, the previous measurement and the warm start between steps.
class EmpcController {
 public:
  EmpcController(NnParams rnn, OcpConfig cfg);

  void reset(const ControlInput& u0, const EmissionsState& x0);
  EmpcStep step(const EmissionsState& x_meas, double n_e, const StageTargets& targets);

  const OcpConfig& config() const { return cfg_; }
  const NnParams& model() const { return rnn_; }
  const ControlInput& last_input() const { return u_prev_; }

 private:
  NnParams rnn_;
  OcpConfig cfg_;
  ControlInput u_prev_;
  EmissionsState x_prev_;
  std::optional<OcpSolution> warm_;
};

/// u_prev + du, clamped into the fuel box and the envelope.
ControlInput apply_first_move(const ControlInput& u_prev, const ControlInput& du, const StageTargets& trg,
                              const OcpConfig& cfg);

}  // namespace dempc
