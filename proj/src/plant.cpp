#include "dempc/plant.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dempc {

namespace {

double softplus(double x, double width) {
  double t = x / width;
  // log1p(exp(t)) without overflow
  return width * (t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)));
}

constexpr double kMinPressureFrac = 0.5;
constexpr double kMaxPressureFrac = 10.0;
constexpr double kMaxTurboSpeed = 300.0;
constexpr double kMaxFlow = 1.0e4;

LookupTable2D make_table(std::vector<double> speed, std::vector<double> fuel, std::vector<double> values) {
  LookupTable2D t{std::move(speed), std::move(fuel), std::move(values)};
  t.validate();
  return t;
}

}  // namespace

ActuatorCommand ActuatorCommand::clamped() const {
  return {std::clamp(egr_pos, 0.0, 100.0), std::clamp(vgt_pos, 0.0, 100.0)};
}

int PlantConfig::substeps_per_control() const {
  if (!(plant_dt > 0) || !(control_period > 0)) throw DomainError("plant and control periods must be positive");
  double ratio = control_period / plant_dt;
  int k = static_cast<int>(std::lround(ratio));
  if (k < 1 || std::abs(ratio - k) > 1e-9 * ratio)
    throw DomainError("control period must be an integer multiple of the plant step");
  return k;
}

PlantConfig default_plant_config() {
  PlantConfig cfg;
  std::vector<double> speed{600, 900, 1200, 1500, 1800, 2100, 2400};
  std::vector<double> fuel{0, 15, 30, 50, 70, 90, 110, 130};
  cfg.egr_table = make_table(speed, fuel,
                             {25.3, 23.5, 22.2, 21.2, 21.2, 23.0, 26.0, 28.0,   //
                              25.4, 24.4, 23.9, 24.1, 25.5, 28.1, 31.0, 30.3,   //
                              26.7, 26.2, 26.0, 26.3, 26.4, 25.1, 22.0, 17.8,   //
                              28.1, 27.8, 27.6, 27.1, 25.5, 22.6, 18.9, 15.1,   //
                              29.4, 29.0, 28.6, 27.2, 24.7, 21.3, 17.6, 14.0,   //
                              30.4, 29.9, 29.1, 27.1, 24.1, 20.6, 16.9, 13.5,   //
                              31.2, 30.6, 29.5, 27.0, 23.7, 20.1, 16.5, 13.1});
  std::vector<double> vgt;
  for (double n : speed)
    for (double w : fuel) vgt.push_back(std::clamp(80.0 - 0.012 * (n - 600.0) + 0.05 * w, 30.0, 90.0));
  cfg.vgt_table = make_table(speed, fuel, std::move(vgt));
  return cfg;
}

// ---------------------------------------------------------------------------

double egr_rate(double w_egr, double w_c, bool* zero_flow) {
  double total = w_egr + w_c;
  if (zero_flow) *zero_flow = !(total > 0);
  if (!(total > 0)) return 0.0;
  return std::clamp(w_egr / total, 0.0, 1.0);
}

double engine_flow(const AirpathConfig& cfg, double p_im, double n_e) {
  return cfg.volumetric_efficiency * p_im * 1e3 * cfg.displacement * n_e / 120.0 /
         (cfg.gas_constant * cfg.t_im) * 3600.0;
}

double fuel_flow(const AirpathConfig& cfg, double w_inj, double n_e) {
  return w_inj * 1e-6 * cfg.cylinders * n_e / 120.0 * 3600.0;
}

double exhaust_flow(const AirpathConfig& cfg, const AirpathState& s, const OperatingPoint& op) {
  return s.w_c + fuel_flow(cfg, op.w_inj, op.n_e);
}

AirpathVector airpath_derivative(const AirpathConfig& cfg, const AirpathState& s,
                                 const ActuatorCommand& cmd_in, const OperatingPoint& op) {
  ActuatorCommand cmd = cmd_in.clamped();
  double p_im = std::max(s.p_im, 1e-3);
  double p_ex = std::max(s.p_ex, 1e-3);
  double turbo = std::max(s.turbo_speed, 0.0);
  double w_c = std::max(s.w_c, 0.0);
  double w_egr = std::max(s.w_egr, 0.0);

  double w_eng = engine_flow(cfg, p_im, op.n_e);
  double w_f = fuel_flow(cfg, op.w_inj, op.n_e);
  double t_ex = cfg.t_im + (w_eng + w_f > 0 ? cfg.exhaust_heating * w_f / (w_eng + w_f) : 0.0);

  double egr_open = cmd.egr_pos / 100.0;
  double vgt_closed = cmd.vgt_pos / 100.0;
  double w_egr_ss = cfg.egr_flow_coeff * egr_open * std::sqrt(softplus(p_ex - p_im, cfg.smoothing) * p_ex);
  double w_t = cfg.turbine_flow_coeff * (1.0 - 0.85 * vgt_closed) *
               std::sqrt(softplus(p_ex - cfg.p_amb, cfg.smoothing) * p_ex);
  double expansion = softplus(1.0 - std::pow(cfg.p_amb / p_ex, 0.286), 0.005);
  double efficiency = w_t / (w_t + cfg.turbo_half_flow);
  double turbo_ss = cfg.turbo_gain * (0.6 + 0.4 * vgt_closed) *
                    std::sqrt(efficiency * w_t * t_ex / 1000.0 * expansion / (w_c + cfg.turbo_flow_floor)) * 10.0;
  double pr_max = 1.0 + cfg.compressor_pr_coeff * turbo * turbo;
  double w_c_ss = (cfg.compressor_flow_base + cfg.compressor_flow_slope * turbo) *
                  std::sqrt(softplus(pr_max - p_im / cfg.p_amb, 0.02));

  double k_im = cfg.gas_constant * cfg.t_im / cfg.v_im / 3.6e6;
  double k_ex = cfg.gas_constant * t_ex / cfg.v_ex / 3.6e6;

  AirpathVector d;
  d << k_im * (w_c + w_egr - w_eng),
      k_ex * (w_eng + w_f - w_egr - w_t),
      (turbo_ss - s.turbo_speed) / cfg.turbo_lag,
      (w_egr_ss - s.w_egr) / cfg.flow_lag,
      (w_c_ss - s.w_c) / cfg.flow_lag;
  return d;
}

AirpathState airpath_step(const AirpathConfig& cfg, const AirpathState& s, const ActuatorCommand& cmd,
                          const OperatingPoint& op, double dt, StepEvents* events) {
  if (!(dt > 0.0) || dt > 0.1) throw DomainError("airpath step dt must lie in (0, 0.1] s");
  AirpathVector x = s.to_vector();
  auto f = [&](const AirpathVector& v) {
    return airpath_derivative(cfg, AirpathState::from_vector(v), cmd, op);
  };
  AirpathVector k1 = f(x);
  AirpathVector k2 = f(x + 0.5 * dt * k1);
  AirpathVector k3 = f(x + 0.5 * dt * k2);
  AirpathVector k4 = f(x + dt * k3);
  AirpathVector next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw NumericError("airpath state became non-finite");

  const double p_lo = kMinPressureFrac * cfg.p_amb, p_hi = kMaxPressureFrac * cfg.p_amb;
  const double lo[5] = {p_lo, p_lo, 0.0, 0.0, 0.0};
  const double hi[5] = {p_hi, p_hi, kMaxTurboSpeed, kMaxFlow, kMaxFlow};
  int clamps = 0;
  for (int i = 0; i < 5; ++i) {
    double c = std::clamp(next(i), lo[i], hi[i]);
    if (c != next(i)) {
      next(i) = c;
      ++clamps;
    }
  }
  if (events) events->clamps += clamps;
  return AirpathState::from_vector(next);
}

AirpathState settle(const AirpathConfig& cfg, const ActuatorCommand& cmd, const OperatingPoint& op, double dt,
                    double max_time, double tol, std::optional<AirpathState> start) {
  AirpathState s;
  if (start) {
    s = *start;
  } else {
    s.p_im = cfg.p_amb;
    s.p_ex = cfg.p_amb * 1.05;
    s.turbo_speed = 30.0;
    s.w_c = engine_flow(cfg, cfg.p_amb, op.n_e);
  }
  int steps = static_cast<int>(std::ceil(max_time / dt));
  for (int k = 0; k < steps; ++k) {
    s = airpath_step(cfg, s, cmd, op, dt);
    if (k % 20 == 19 && airpath_derivative(cfg, s, cmd, op).cwiseAbs().maxCoeff() < tol) break;
  }
  return s;
}

// ---------------------------------------------------------------------------

EngineExtras static_extras(const EngineMapsConfig& m, const OperatingPoint& op) {
  EngineExtras e;
  e.injection_pressure = m.inj_pressure_base + m.inj_pressure_speed * op.n_e + m.inj_pressure_fuel * op.w_inj;
  e.injection_timing = m.timing_base + m.timing_speed * (op.n_e - 600.0) + m.timing_fuel * op.w_inj;
  e.torque = std::max(0.0, m.torque_per_fuel * op.w_inj - m.torque_friction -
                               m.torque_friction_speed * (op.n_e - 600.0));
  return e;
}

FnnInput assemble_fnn_input(const AirpathState& s, const ActuatorCommand& cmd, const OperatingPoint& op,
                            const EngineExtras& extras) {
  FnnInput in;
  in.injection_pressure = extras.injection_pressure;
  in.main_injection_timing = extras.injection_timing;
  in.main_injection_fuel_rate = op.w_inj;
  in.engine_torque = extras.torque;
  in.engine_speed = op.n_e;
  in.intake_manifold_pressure = s.p_im;
  in.exhaust_manifold_pressure = s.p_ex;
  in.mass_air_flow = s.w_c;
  in.egr_position = cmd.egr_pos;
  in.vgt_position = cmd.vgt_pos;
  return in;
}

EmissionsState ground_truth_emissions(const PlantConfig& cfg, const FnnInput& in, std::mt19937_64* noise) {
  const EmissionsMapConfig& e = cfg.emissions;
  double w_inj = std::max(in.main_injection_fuel_rate, 0.0);
  if (w_inj <= 0.0 || in.engine_speed <= 0.0) return {0.0, 0.0};

  double load = w_inj / e.full_fuel;
  double w_eng = engine_flow(cfg.airpath, std::max(in.intake_manifold_pressure, 1e-3), in.engine_speed);
  double chi_est = std::clamp(1.0 - in.mass_air_flow / w_eng, 0.0, 0.8);
  double dilution = chi_est + e.nox_egr_direct * in.egr_position / 100.0;
  double timing = 1.0 + e.nox_timing_rate * (in.main_injection_timing - e.nox_timing_ref);
  double boost = std::pow(std::max(in.intake_manifold_pressure, 1e-3) / 150.0, e.nox_boost_exponent);
  double rail = 1.0 + e.nox_inj_pressure_rate * (in.injection_pressure - 1200.0) / 1000.0;
  double nox = e.nox_scale * std::pow(load, e.nox_fuel_exponent) * std::exp(-e.nox_dilution_rate * dilution) *
               std::max(timing, 0.0) * boost * std::max(rail, 0.0);

  double afr = std::max(in.mass_air_flow, 0.0) / fuel_flow(cfg.airpath, w_inj, in.engine_speed);
  double smoke = 1.0 / (1.0 + std::exp(-(e.soot_afr_knee - afr) / e.soot_afr_width));
  double atomization = std::sqrt(e.soot_inj_pressure_ref / std::max(in.injection_pressure, 1.0));
  double soot = e.soot_scale * std::sqrt(load) * smoke * atomization + e.soot_floor_rate * load;

  if (noise && e.noise_std > 0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    nox *= std::max(0.0, 1.0 + e.noise_std * gauss(*noise));
    soot *= std::max(0.0, 1.0 + e.noise_std * gauss(*noise));
  }
  return {std::max(nox, 0.0), std::clamp(soot, 0.0, 100.0)};
}

PlantEmissions plant_emissions(const NnParams& fnn, const AirpathState& s, const ActuatorCommand& cmd,
                               const OperatingPoint& op, const EngineExtras& extras) {
  EmissionsState raw = fnn_forward(fnn, assemble_fnn_input(s, cmd, op, extras));
  PlantEmissions out;
  out.value.nox = std::max(raw.nox, 0.0);
  out.value.soot = std::clamp(raw.soot, 0.0, 100.0);
  out.nox_clamped = out.value.nox != raw.nox;
  out.soot_clamped = out.value.soot != raw.soot;
  return out;
}

// ---------------------------------------------------------------------------

TargetMaps calibrate_targets(const PlantConfig& cfg) {
  const LookupTable2D& egr = cfg.egr_table;
  const LookupTable2D& vgt = cfg.vgt_table;
  egr.validate();
  vgt.validate();
  if (egr.speed_axis != vgt.speed_axis || egr.fuel_axis != vgt.fuel_axis)
    throw StructuralError("feedforward EGR and VGT tables must share their axes");

  TargetMaps maps{egr, egr};
  for (std::size_t i = 0; i < egr.speed_axis.size(); ++i) {
    std::optional<AirpathState> start;
    for (std::size_t j = 0; j < egr.fuel_axis.size(); ++j) {
      OperatingPoint op{egr.speed_axis[i], egr.fuel_axis[j]};
      ActuatorCommand cmd{egr.at(i, j), vgt.at(i, j)};
      AirpathState s = settle(cfg.airpath, cmd, op, cfg.plant_dt, 200.0, 1e-10, start);
      start = s;
      maps.p_im.at(i, j) = s.p_im;
      maps.chi_egr.at(i, j) = egr_rate(s.w_egr, s.w_c);
    }
  }
  return maps;
}

namespace {

void push_record(Dataset& d, Eigen::Index k, const FnnInput& in, const EmissionsState& y, Provenance prov) {
  d.inputs.col(k) = in.to_vector();
  d.targets.col(k) = y.to_vector();
  d.provenance[static_cast<std::size_t>(k)] = prov;
}

Dataset allocate(int n) {
  Dataset d;
  d.inputs.resize(kFnnInputDim, n);
  d.targets.resize(kStateDim, n);
  d.provenance.assign(static_cast<std::size_t>(n), Provenance::Synthetic);
  d.split.assign(static_cast<std::size_t>(n), Split::Train);
  return d;
}

}  // namespace

EmissionsDatasets generate_emissions_datasets(const PlantConfig& cfg, const EmissionsDataConfig& data,
                                              std::uint64_t seed) {
  if (data.steady_points < 0 || data.transient_points < 0) throw DomainError("dataset sizes must be >= 0");
  if (!(data.hold_min > 0) || data.hold_max < data.hold_min) throw DomainError("invalid excitation hold range");
  const EnvelopeConfig& env = cfg.envelope;
  std::mt19937_64 rng(seed);
  std::mt19937_64 noise(seed + 1);
  std::mt19937_64* noise_src = data.noise ? &noise : nullptr;
  auto uniform = [&rng](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  EmissionsDatasets out;
  out.steady = allocate(data.steady_points);
  for (int k = 0; k < data.steady_points; ++k) {
    OperatingPoint op{uniform(env.n_min, env.n_max), uniform(env.w_max * 0.04, env.w_max)};
    ActuatorCommand cmd{lut_query(cfg.egr_table, op.n_e, op.w_inj) + uniform(-data.egr_spread, data.egr_spread),
                        lut_query(cfg.vgt_table, op.n_e, op.w_inj) + uniform(-data.vgt_spread, data.vgt_spread)};
    cmd = cmd.clamped();
    AirpathState s = settle(cfg.airpath, cmd, op, cfg.plant_dt, 60.0, 1e-8);
    FnnInput in = assemble_fnn_input(s, cmd, op, static_extras(cfg.maps, op));
    push_record(out.steady, k, in, ground_truth_emissions(cfg, in, noise_src), Provenance::SteadyState);
  }

  out.transient = allocate(data.transient_points);
  const int sub = cfg.substeps_per_control();
  OperatingPoint op{0.5 * (env.n_min + env.n_max), 0.4 * env.w_max};
  OperatingPoint from = op, to = op;
  double seg_t = 0, seg_len = 0, ramp = 0;
  double hold_t = 0, hold_len = 0, egr_off = 0, vgt_off = 0;
  ActuatorCommand cmd{lut_query(cfg.egr_table, op.n_e, op.w_inj), lut_query(cfg.vgt_table, op.n_e, op.w_inj)};
  AirpathState s = settle(cfg.airpath, cmd, op, cfg.plant_dt, 60.0, 1e-8);
  for (int k = 0; k < data.transient_points; ++k) {
    if (seg_t >= seg_len) {
      from = op;
      to = {uniform(env.n_min + 50.0, env.n_max - 50.0), uniform(0.0, env.w_max * 0.96)};
      seg_len = uniform(2.0, 8.0);
      ramp = uniform(0.0, 1.0) < 0.5 ? 0.0 : uniform(1.0, std::min(4.0, seg_len));
      seg_t = 0;
    }
    if (hold_t >= hold_len) {
      egr_off = uniform(-data.egr_spread, data.egr_spread);
      vgt_off = uniform(-data.vgt_spread, data.vgt_spread);
      hold_len = uniform(data.hold_min, data.hold_max);
      hold_t = 0;
    }
    double a = ramp > 0 ? std::min(1.0, seg_t / ramp) : 1.0;
    op = {from.n_e + a * (to.n_e - from.n_e), from.w_inj + a * (to.w_inj - from.w_inj)};
    cmd = ActuatorCommand{lut_query(cfg.egr_table, op.n_e, op.w_inj) + egr_off,
                          lut_query(cfg.vgt_table, op.n_e, op.w_inj) + vgt_off}
              .clamped();
    for (int j = 0; j < sub; ++j) s = airpath_step(cfg.airpath, s, cmd, op, cfg.plant_dt);
    FnnInput in = assemble_fnn_input(s, cmd, op, static_extras(cfg.maps, op));
    push_record(out.transient, k, in, ground_truth_emissions(cfg, in, noise_src), Provenance::Transient);
    seg_t += cfg.control_period;
    hold_t += cfg.control_period;
  }
  return out;
}

Plant::Plant(PlantConfig cfg) : cfg_(std::move(cfg)) { cfg_.substeps_per_control(); }

void Plant::reset_to_equilibrium(const OperatingPoint& op) {
  ActuatorCommand cmd{lut_query(cfg_.egr_table, op.n_e, op.w_inj), lut_query(cfg_.vgt_table, op.n_e, op.w_inj)};
  state_ = settle(cfg_.airpath, cmd, op, cfg_.plant_dt, 200.0, 1e-10);
}

void Plant::advance(const ActuatorCommand& cmd, const OperatingPoint& op, double duration) {
  int steps = static_cast<int>(std::lround(duration / cfg_.plant_dt));
  if (steps < 1 || std::abs(steps * cfg_.plant_dt - duration) > 1e-9)
    throw DomainError("advance duration must be a positive multiple of the plant step");
  StepEvents ev;
  for (int k = 0; k < steps; ++k) state_ = airpath_step(cfg_.airpath, state_, cmd, op, cfg_.plant_dt, &ev);
  clamp_events_ += ev.clamps;
}

}  // namespace dempc
