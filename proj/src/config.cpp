#include "dempc/config.hpp"

#include "dempc/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dempc {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LookupTable2D, speed_axis, fuel_axis, values)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AirpathConfig, p_amb, t_im, gas_constant, v_im, v_ex, displacement, cylinders,
                                   volumetric_efficiency, exhaust_heating, egr_flow_coeff, turbine_flow_coeff,
                                   turbo_gain, turbo_half_flow, turbo_flow_floor, turbo_lag, flow_lag,
                                   compressor_flow_base, compressor_flow_slope, compressor_pr_coeff, smoothing)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EngineMapsConfig, inj_pressure_base, inj_pressure_speed, inj_pressure_fuel,
                                   timing_base, timing_speed, timing_fuel, torque_per_fuel, torque_friction,
                                   torque_friction_speed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EmissionsMapConfig, nox_scale, nox_fuel_exponent, nox_dilution_rate,
                                   nox_egr_direct, nox_timing_rate, nox_timing_ref, nox_boost_exponent,
                                   nox_inj_pressure_rate, soot_scale, soot_afr_knee, soot_afr_width,
                                   soot_floor_rate, soot_inj_pressure_ref, full_fuel, noise_std)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EnvelopeConfig, n_min, n_max, w_min, w_max, p_im_min, p_im_max, chi_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlantConfig, airpath, maps, emissions, envelope, plant_dt, control_period,
                                   egr_table, vgt_table)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EmissionsDataConfig, steady_points, transient_points, egr_spread, vgt_spread,
                                   hold_min, hold_max, noise)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(HyperParams, learning_rate, momentum, decay_factor, decay_period, epochs,
                                   batch_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeedConfig, data, split, fnn_init, ident, rnn_init)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FnnStageConfig, hp, split, soot_cutoff)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TuningConfig, enabled, momenta, learning_rates, epochs_per_cell)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RnnStageConfig, hp, split)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExcitationConfig, p_amplitude, chi_amplitude, hold_min, hold_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IdentStageConfig, excitation, cycles, passes)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(InnerLoopConfig, vgt_kp, vgt_ki, egr_kp, egr_ki, integrator_limit, bandwidth,
                                   period)

void to_json(json& j, const OcpConfig& c) {
  j = json{{"horizon", c.horizon},
           {"alpha", c.alpha},
           {"beta", c.beta},
           {"gamma", c.gamma},
           {"eta", c.eta},
           {"zeta", c.zeta},
           {"R", {c.R(0, 0), c.R(1, 1), c.R(2, 2)}},
           {"soot_limit_active", c.soot_limit_active},
           {"soot_lim", c.soot_lim},
           {"fuel_lower_frac", c.fuel_lower_frac},
           {"p_band", c.p_band},
           {"chi_band", c.chi_band},
           {"p_rate", c.p_rate},
           {"chi_rate", c.chi_rate},
           {"p_min", c.p_min},
           {"p_max", c.p_max},
           {"chi_min", c.chi_min},
           {"chi_max", c.chi_max},
           {"step_scale", {c.step_scale(0), c.step_scale(1), c.step_scale(2)}},
           {"step_tol", c.step_tol},
           {"decrease_tol", c.decrease_tol},
           {"kkt_tol", c.kkt_tol},
           {"max_iter", c.max_iter},
           {"time_budget", c.time_budget},
           {"slack_reg", c.slack_reg}};
}

void from_json(const json& j, OcpConfig& c) {
  j.at("horizon").get_to(c.horizon);
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("gamma").get_to(c.gamma);
  j.at("eta").get_to(c.eta);
  j.at("zeta").get_to(c.zeta);
  auto r = j.at("R").get<std::array<double, 3>>();
  c.R = Eigen::Vector3d(r[0], r[1], r[2]).asDiagonal();
  j.at("soot_limit_active").get_to(c.soot_limit_active);
  j.at("soot_lim").get_to(c.soot_lim);
  j.at("fuel_lower_frac").get_to(c.fuel_lower_frac);
  j.at("p_band").get_to(c.p_band);
  j.at("chi_band").get_to(c.chi_band);
  j.at("p_rate").get_to(c.p_rate);
  j.at("chi_rate").get_to(c.chi_rate);
  j.at("p_min").get_to(c.p_min);
  j.at("p_max").get_to(c.p_max);
  j.at("chi_min").get_to(c.chi_min);
  j.at("chi_max").get_to(c.chi_max);
  auto sc = j.at("step_scale").get<std::array<double, 3>>();
  c.step_scale = Eigen::Vector3d(sc[0], sc[1], sc[2]);
  j.at("step_tol").get_to(c.step_tol);
  j.at("decrease_tol").get_to(c.decrease_tol);
  j.at("kkt_tol").get_to(c.kkt_tol);
  j.at("max_iter").get_to(c.max_iter);
  j.at("time_budget").get_to(c.time_budget);
  j.at("slack_reg").get_to(c.slack_reg);
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScenarioPresets, base, eta_low, eta_ratio, soot_lim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ScenarioSuiteConfig, presets, soot_percentile, soot_reference_cycles, cycles, tags)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ProjectConfig, seeds, plant, data, fnn, tuning, ident, rnn, inner, scenarios,
                                   threads)

namespace {

void check_known_keys(const json& user, const json& reference, const std::string& path) {
  if (!user.is_object()) return;
  if (!reference.is_object()) throw DomainError("config: '" + path + "' must not be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw DomainError("config: unknown key '" + here + "'");
    check_known_keys(value, reference.at(key), here);
  }
}

ProjectConfig from_merged(const json& user) {
  json merged = json(default_project_config());
  check_known_keys(user, merged, "");
  merged.merge_patch(user);
  ProjectConfig cfg;
  try {
    cfg = merged.get<ProjectConfig>();
  } catch (const json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void ProjectConfig::validate() const {
  plant.egr_table.validate();
  plant.vgt_table.validate();
  if (!(plant.plant_dt > 0 && plant.plant_dt <= 0.1)) throw DomainError("plant.plant_dt must lie in (0, 0.1]");
  if (plant.substeps_per_control() < 1) throw DomainError("plant.control_period must be a multiple of plant_dt");
  inner_steps_per_control(inner, plant);
  fnn.hp.validate();
  rnn.hp.validate();
  for (const auto* f : {&fnn.split, &rnn.split}) {
    double sum = (*f)[0] + (*f)[1] + (*f)[2];
    if (std::abs(sum - 1.0) > 1e-9 || (*f)[0] <= 0 || (*f)[1] < 0 || (*f)[2] < 0)
      throw DomainError("split fractions must be non-negative and sum to 1");
  }
  if (tuning.enabled && (tuning.momenta.empty() || tuning.learning_rates.empty() || tuning.epochs_per_cell < 1))
    throw DomainError("tuning grid must be non-empty with epochs_per_cell >= 1");
  if (ident.passes < 1 || ident.cycles.empty()) throw DomainError("ident needs at least one cycle and pass");
  for (const auto& c : ident.cycles) builtin_cycle(c);
  scenarios.presets.base.validate();
  if (scenarios.soot_percentile > 100) throw DomainError("scenarios.soot_percentile must be <= 100");
  for (const auto& c : scenarios.cycles) named_cycle(c);
  for (const auto& c : scenarios.soot_reference_cycles) named_cycle(c);
  for (const auto& t : scenarios.tags) scenario_tag_from_string(t);
  if (data.steady_points < 1 || data.transient_points < 1) throw DomainError("data point counts must be >= 1");
}

ProjectConfig default_project_config() { return ProjectConfig{}; }

ProjectConfig parse_project_config(const std::string& json_text) {
  json user;
  try {
    user = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  if (!user.is_object()) throw DomainError("config: top level must be an object");
  return from_merged(user);
}

ProjectConfig load_project_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_project_config(ss.str());
}

std::string to_json(const ProjectConfig& cfg) { return json(cfg).dump(2); }

std::string config_section_json(const ProjectConfig& cfg, const std::string& dotted_path) {
  json j = json(cfg);
  const json* node = &j;
  std::stringstream ss(dotted_path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!node->is_object() || !node->contains(key)) throw DomainError("config: no section '" + dotted_path + "'");
    node = &node->at(key);
  }
  return node->dump();
}

void apply_override(ProjectConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw DomainError("override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json{{*it, patch}};
  json current = json(cfg);
  check_known_keys(patch, current, "");
  current.merge_patch(patch);
  ProjectConfig next;
  try {
    next = current.get<ProjectConfig>();
  } catch (const json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  next.validate();
  cfg = next;
}

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t config_hash(const ProjectConfig& cfg) { return fnv1a64(json(cfg).dump()); }

}  // namespace dempc
