#pragma once

#include "dempc/lookup.hpp"
#include "dempc/plant.hpp"

namespace dempc {

struct AirpathTargets {
  double p_im_trg = 0;     // kPa
  double chi_egr_trg = 0;  // fraction
};

struct AirpathMeasurement {
  double p_im = 0;
  double chi_egr = 0;
};

/// PI gains per axis: VGT acts on the boost error, EGR on the EGR-rate error.
struct InnerLoopConfig {
  double vgt_kp = 1.0;     // %/kPa
  double vgt_ki = 0.7;     // %/(kPa s)
  double egr_kp = 100.0;   // %/unit chi
  double egr_ki = 300.0;   // %/(unit chi s)
  double integrator_limit = 60.0;  // % of actuator travel
  double bandwidth = 1.0;          // multiplies every gain
  double period = 0.05;            // s
};

struct InnerLoopState {
  double vgt_integral = 0;  // % of actuator travel
  double egr_integral = 0;
  ActuatorCommand last;
};

/// Feedforward actuator maps plus decoupled PI with anti-windup.
class InnerLoop {
 public:
  InnerLoop(InnerLoopConfig cfg, LookupTable2D egr_ff, LookupTable2D vgt_ff);

  const InnerLoopConfig& config() const { return cfg_; }
  const InnerLoopState& state() const { return st_; }
  void reset(const InnerLoopState& s = {}) { st_ = s; }

  ActuatorCommand step(const AirpathTargets& targets, const AirpathMeasurement& meas, const OperatingPoint& op);

  /// Number of controller objects created in this process.
  static long instances_created();

 private:
  InnerLoopConfig cfg_;
  LookupTable2D egr_ff_;
  LookupTable2D vgt_ff_;
  InnerLoopState st_;
};

/// Inner-loop updates per control period. Throws DomainError unless the
/// period divides the control period and is a multiple of the plant step.
int inner_steps_per_control(const InnerLoopConfig& inner, const PlantConfig& plant);

/// Pure form of InnerLoop::step.
std::pair<InnerLoopState, ActuatorCommand> inner_loop_step(const InnerLoopConfig& cfg, const LookupTable2D& egr_ff,
                                                           const LookupTable2D& vgt_ff, const InnerLoopState& st,
                                                           const AirpathTargets& targets,
                                                           const AirpathMeasurement& meas, const OperatingPoint& op);

}  // namespace dempc
