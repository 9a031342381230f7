#pragma once

#include "dempc/lookup.hpp"
#include "dempc/nn.hpp"
#include "dempc/training.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace dempc {

struct AirpathState {
  double p_im = 101.325;      // kPa
  double p_ex = 101.325;      // kPa
  double turbo_speed = 0.0;   // krpm
  double w_egr = 0.0;         // kg/h
  double w_c = 0.0;           // kg/h

  Eigen::Matrix<double, 5, 1> to_vector() const { return {p_im, p_ex, turbo_speed, w_egr, w_c}; }
  static AirpathState from_vector(const Eigen::Matrix<double, 5, 1>& v) {
    return {v(0), v(1), v(2), v(3), v(4)};
  }
};

struct ActuatorCommand {
  double egr_pos = 0.0;  // % open
  double vgt_pos = 0.0;  // % closed

  ActuatorCommand clamped() const;
};

struct OperatingPoint {
  double n_e = 0.0;    // rpm
  double w_inj = 0.0;  // mg/stroke
};

/// Coefficients of the surrogate mean-value airpath model.
struct AirpathConfig {
  double p_amb = 101.325;          // kPa
  double t_im = 320.0;             // K
  double gas_constant = 287.0;     // J/(kg K)
  double v_im = 0.03;              // m^3
  double v_ex = 0.03;              // m^3
  double displacement = 6.7e-3;    // m^3
  int cylinders = 6;
  double volumetric_efficiency = 0.88;
  double exhaust_heating = 11500.0;  // K per unit fuel mass fraction
  double egr_flow_coeff = 5.0;
  double turbine_flow_coeff = 7.0;
  double turbo_gain = 26.0;
  double turbo_half_flow = 300.0;    // kg/h, turbine efficiency knee
  double turbo_flow_floor = 20.0;    // kg/h
  double turbo_lag = 0.8;            // s
  double flow_lag = 0.1;             // s
  double compressor_flow_base = 900.0;
  double compressor_flow_slope = 6.0;
  double compressor_pr_coeff = 2.0e-4;  // max pressure ratio = 1 + c N^2
  double smoothing = 2.0;               // kPa, softplus width on pressure drops
};

/// Static maps for the FNN channels the controller does not manipulate.
struct EngineMapsConfig {
  double inj_pressure_base = 500.0;   // bar
  double inj_pressure_speed = 0.35;   // bar/rpm
  double inj_pressure_fuel = 6.0;     // bar/(mg/stroke)
  double timing_base = 2.0;           // deg
  double timing_speed = 0.004;        // deg/rpm
  double timing_fuel = 0.03;          // deg/(mg/stroke)
  double torque_per_fuel = 10.0;      // N m/(mg/stroke)
  double torque_friction = 40.0;      // N m
  double torque_friction_speed = 0.015;
};

/// Coefficients of the ground-truth emissions map.
struct EmissionsMapConfig {
  double nox_scale = 2500.0;       // ppm
  double nox_fuel_exponent = 0.9;
  double nox_dilution_rate = 5.0;
  double nox_egr_direct = 0.06;    // dilution added per unit egr opening
  double nox_timing_rate = 0.015;  // per deg
  double nox_timing_ref = 8.0;     // deg
  double nox_boost_exponent = 0.25;
  double nox_inj_pressure_rate = 0.3;  // per 1000 bar
  double soot_scale = 30.0;        // %
  double soot_afr_knee = 17.0;
  double soot_afr_width = 2.5;
  double soot_floor_rate = 0.3;    // % at full fuel
  double soot_inj_pressure_ref = 1200.0;
  double full_fuel = 130.0;        // mg/stroke
  double noise_std = 0.03;         // relative, used only when a noise source is passed
};

struct EnvelopeConfig {
  double n_min = 600.0;
  double n_max = 2400.0;
  double w_min = 0.0;
  double w_max = 130.0;
  double p_im_min = 90.0;
  double p_im_max = 300.0;
  double chi_max = 0.5;
};

struct PlantConfig {
  AirpathConfig airpath;
  EngineMapsConfig maps;
  EmissionsMapConfig emissions;
  EnvelopeConfig envelope;
  double plant_dt = 0.05;      // s
  double control_period = 0.2; // s
  LookupTable2D egr_table;     // feedforward actuator maps over (n_e, w_inj)
  LookupTable2D vgt_table;

  int substeps_per_control() const;
};

PlantConfig default_plant_config();

// ---------------------------------------------------------------------------

/// chi = w_egr / (w_egr + w_c). Zero total flow returns 0 and sets *zero_flow.
double egr_rate(double w_egr, double w_c, bool* zero_flow = nullptr);

double engine_flow(const AirpathConfig& cfg, double p_im, double n_e);   // kg/h
double fuel_flow(const AirpathConfig& cfg, double w_inj, double n_e);    // kg/h
/// Exhaust flow used for cumulative NOx: compressor flow plus fuel flow.
double exhaust_flow(const AirpathConfig& cfg, const AirpathState& s, const OperatingPoint& op);

using AirpathVector = Eigen::Matrix<double, 5, 1>;

AirpathVector airpath_derivative(const AirpathConfig& cfg, const AirpathState& s,
                                 const ActuatorCommand& cmd, const OperatingPoint& op);

struct StepEvents {
  int clamps = 0;
};

/// One explicit RK4 step; dt must lie in (0, 0.1] s. States leaving the
/// physical range are clamped and counted in `events`.
AirpathState airpath_step(const AirpathConfig& cfg, const AirpathState& s,
                          const ActuatorCommand& cmd, const OperatingPoint& op, double dt,
                          StepEvents* events = nullptr);

/// Integrate at fixed inputs until every derivative is below `tol` or
/// `max_time` elapses.
AirpathState settle(const AirpathConfig& cfg, const ActuatorCommand& cmd, const OperatingPoint& op,
                    double dt = 0.05, double max_time = 120.0, double tol = 1e-9,
                    std::optional<AirpathState> start = std::nullopt);

// ---------------------------------------------------------------------------

struct EngineExtras {
  double injection_pressure = 0;
  double injection_timing = 0;
  double torque = 0;
};

EngineExtras static_extras(const EngineMapsConfig& maps, const OperatingPoint& op);

FnnInput assemble_fnn_input(const AirpathState& s, const ActuatorCommand& cmd,
                            const OperatingPoint& op, const EngineExtras& extras);

/// Synthetic stand-in for dynamometer truth. With `noise` set, each output is
/// multiplied by (1 + noise_std * N(0,1)).
EmissionsState ground_truth_emissions(const PlantConfig& cfg, const FnnInput& in,
                                      std::mt19937_64* noise = nullptr);

struct PlantEmissions {
  EmissionsState value;
  bool nox_clamped = false;
  bool soot_clamped = false;
};

/// FNN head on the airpath outputs, NOx clamped to >= 0 and Soot to [0, 100].
PlantEmissions plant_emissions(const NnParams& fnn, const AirpathState& s, const ActuatorCommand& cmd,
                               const OperatingPoint& op, const EngineExtras& extras);

// ---------------------------------------------------------------------------

/// Target maps p_im_trg(n_e, w_inj) and chi_egr_trg(n_e, w_inj): steady-state
/// plant response to the feedforward actuator maps at each breakpoint.
struct TargetMaps {
  LookupTable2D p_im;
  LookupTable2D chi_egr;
};

TargetMaps calibrate_targets(const PlantConfig& cfg);

/// Sizes and excitation of the synthetic FNN datasets.
struct EmissionsDataConfig {
  int steady_points = 300;
  int transient_points = 3000;
  double egr_spread = 15.0;  // % around the feedforward position
  double vgt_spread = 15.0;
  double hold_min = 0.6;     // s, transient excitation hold
  double hold_max = 3.0;
  bool noise = true;
};

struct EmissionsDatasets {
  Dataset steady;     // settled points, tagged steady_state
  Dataset transient;  // 0.2 s samples of a random open-loop run, tagged transient
};

/// Ground-truth-labelled records sharing the FNN channel schema.
EmissionsDatasets generate_emissions_datasets(const PlantConfig& cfg, const EmissionsDataConfig& data,
                                              std::uint64_t seed);

/// Owns one airpath state; advances it over a control period.
class Plant {
 public:
  explicit Plant(PlantConfig cfg);

  const PlantConfig& config() const { return cfg_; }
  const AirpathState& state() const { return state_; }
  void reset(const AirpathState& s) { state_ = s; }
  /// Start at the feedforward equilibrium of `op`.
  void reset_to_equilibrium(const OperatingPoint& op);

  void advance(const ActuatorCommand& cmd, const OperatingPoint& op, double duration);

  double p_im() const { return state_.p_im; }
  double chi_egr() const { return egr_rate(state_.w_egr, state_.w_c); }
  int clamp_events() const { return clamp_events_; }

 private:
  PlantConfig cfg_;
  AirpathState state_;
  int clamp_events_ = 0;
};

}  // namespace dempc
