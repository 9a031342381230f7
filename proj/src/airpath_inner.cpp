#include "dempc/airpath_inner.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace dempc {

namespace {

std::atomic<long> g_instances{0};

// One PI axis with conditional integration: the integrator only moves when
// the unsaturated command is inside the actuator range or the error drives
// it back toward the range.
double pi_axis(double ff, double err, double kp, double ki, double dt, double limit, double& integral) {
  double candidate = std::clamp(integral + ki * err * dt, -limit, limit);
  double raw = ff + kp * err + candidate;
  bool high = raw > 100.0 && err > 0.0;
  bool low = raw < 0.0 && err < 0.0;
  if (!high && !low) integral = candidate;
  return std::clamp(ff + kp * err + integral, 0.0, 100.0);
}

}  // namespace

std::pair<InnerLoopState, ActuatorCommand> inner_loop_step(const InnerLoopConfig& cfg, const LookupTable2D& egr_ff,
                                                           const LookupTable2D& vgt_ff, const InnerLoopState& st,
                                                           const AirpathTargets& targets,
                                                           const AirpathMeasurement& meas, const OperatingPoint& op) {
  InnerLoopState next = st;
  const double g = cfg.bandwidth;
  double vgt = pi_axis(lut_query(vgt_ff, op.n_e, op.w_inj), targets.p_im_trg - meas.p_im, g * cfg.vgt_kp,
                       g * cfg.vgt_ki, cfg.period, cfg.integrator_limit, next.vgt_integral);
  double egr = pi_axis(lut_query(egr_ff, op.n_e, op.w_inj), targets.chi_egr_trg - meas.chi_egr, g * cfg.egr_kp,
                       g * cfg.egr_ki, cfg.period, cfg.integrator_limit, next.egr_integral);
  next.last = {egr, vgt};
  return {next, next.last};
}

InnerLoop::InnerLoop(InnerLoopConfig cfg, LookupTable2D egr_ff, LookupTable2D vgt_ff)
    : cfg_(cfg), egr_ff_(std::move(egr_ff)), vgt_ff_(std::move(vgt_ff)) {
  egr_ff_.validate();
  vgt_ff_.validate();
  ++g_instances;
}

ActuatorCommand InnerLoop::step(const AirpathTargets& targets, const AirpathMeasurement& meas,
                                const OperatingPoint& op) {
  auto [next, cmd] = inner_loop_step(cfg_, egr_ff_, vgt_ff_, st_, targets, meas, op);
  st_ = next;
  return cmd;
}

int inner_steps_per_control(const InnerLoopConfig& inner, const PlantConfig& plant) {
  auto multiple = [](double a, double b) {
    double r = a / b;
    return r >= 1.0 - 1e-9 && std::abs(r - std::round(r)) < 1e-9;
  };
  if (!(inner.period > 0) || !multiple(plant.control_period, inner.period) || !multiple(inner.period, plant.plant_dt))
    throw DomainError("inner-loop period must divide the control period and be a multiple of the plant step");
  return static_cast<int>(std::lround(plant.control_period / inner.period));
}

long InnerLoop::instances_created() { return g_instances.load(); }

}  // namespace dempc
