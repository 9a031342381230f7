#include "support.hpp"

#include "dempc/errors.hpp"
#include "dempc/lookup.hpp"
#include "dempc/plant.hpp"

#include <doctest.h>

using namespace dempc;

namespace {

LookupTable2D small_table() {
  LookupTable2D t;
  t.speed_axis = {1000, 2000};
  t.fuel_axis = {0, 50, 100};
  t.values = {0, 10, 20, 100, 110, 120};
  return t;
}

double max_abs_diff(const AirpathState& a, const AirpathState& b) {
  return (a.to_vector() - b.to_vector()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("lookup tables interpolate bilinearly and clamp outside the hull") {
  const LookupTable2D t = small_table();
  CHECK_NOTHROW(t.validate());
  CHECK(lut_query(t, 1000, 0) == 0);
  CHECK(lut_query(t, 2000, 100) == 120);
  CHECK(lut_query(t, 1500, 25) == doctest::Approx(0.5 * 5 + 0.5 * 105));
  CHECK(lut_query(t, 1250, 75) == doctest::Approx(0.75 * 15 + 0.25 * 115));
  CHECK(lut_query(t, 500, -10) == 0);
  CHECK(lut_query(t, 3000, 500) == 120);
  CHECK(lut_query(t, 500, 50) == 10);

  LookupTable2D single;
  single.speed_axis = {1000};
  single.fuel_axis = {10};
  single.values = {7};
  CHECK(lut_query(single, 1800, 60) == 7);
}

TEST_CASE("lookup table validation") {
  LookupTable2D t = small_table();
  t.speed_axis = {2000, 1000};
  CHECK_THROWS_AS(t.validate(), StructuralError);
  t = small_table();
  t.fuel_axis = {0, 50, 50};
  CHECK_THROWS_AS(t.validate(), StructuralError);
  t = small_table();
  t.values.pop_back();
  CHECK_THROWS_AS(t.validate(), StructuralError);
  t = small_table();
  t.speed_axis.clear();
  CHECK_THROWS_AS(t.validate(), StructuralError);
}

TEST_CASE("egr_rate handles zero flow") {
  bool zero = false;
  CHECK(egr_rate(10, 30, &zero) == doctest::Approx(0.25));
  CHECK_FALSE(zero);
  CHECK(egr_rate(0, 0, &zero) == 0.0);
  CHECK(zero);
}

TEST_CASE("flow helpers follow the speed-density and fuel-rate formulas") {
  const AirpathConfig a;
  // rho V n / 120 with the ideal-gas density at the manifold.
  const double rho = 150e3 / (a.gas_constant * a.t_im);
  CHECK(engine_flow(a, 150, 1500) ==
        doctest::Approx(a.volumetric_efficiency * rho * a.displacement * 1500 / 120 * 3600).epsilon(1e-12));
  CHECK(fuel_flow(a, 50, 1200) == doctest::Approx(50e-6 * a.cylinders * 1200 / 120 * 3600).epsilon(1e-12));
  AirpathState s;
  s.w_c = 400;
  CHECK(exhaust_flow(a, s, {1200, 50}) == doctest::Approx(400 + fuel_flow(a, 50, 1200)));
}

TEST_CASE("RK4 step shows fourth-order convergence") {
  const PlantConfig cfg = default_plant_config();
  const OperatingPoint op{1500, 60};
  const ActuatorCommand cmd{20, 55};
  AirpathState s0;
  s0.p_im = 140;
  s0.p_ex = 170;
  s0.turbo_speed = 60;
  s0.w_egr = 40;
  s0.w_c = 500;

  auto integrate = [&](double dt, double horizon) {
    AirpathState s = s0;
    const int n = static_cast<int>(std::lround(horizon / dt));
    for (int k = 0; k < n; ++k) s = airpath_step(cfg.airpath, s, cmd, op, dt);
    return s;
  };
  const double T = 0.08;
  const AirpathState ref = integrate(T / 512, T);
  const double e1 = max_abs_diff(integrate(T / 4, T), ref);
  const double e2 = max_abs_diff(integrate(T / 8, T), ref);
  const double e3 = max_abs_diff(integrate(T / 16, T), ref);
  CHECK(e1 / e2 == doctest::Approx(16).epsilon(0.2));
  CHECK(e2 / e3 == doctest::Approx(16).epsilon(0.2));
}

TEST_CASE("settled states are fixed points of the step") {
  const PlantConfig cfg = default_plant_config();
  for (const OperatingPoint op : {OperatingPoint{800, 20}, OperatingPoint{1500, 60}, OperatingPoint{2100, 110}}) {
    const ActuatorCommand cmd{lut_query(cfg.egr_table, op.n_e, op.w_inj), lut_query(cfg.vgt_table, op.n_e, op.w_inj)};
    const AirpathState s = settle(cfg.airpath, cmd, op, 0.05, 200.0, 1e-10);
    CHECK(airpath_derivative(cfg.airpath, s, cmd, op).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(max_abs_diff(airpath_step(cfg.airpath, s, cmd, op, 0.05), s) < 1e-8);
    // Intake mass balance at rest: compressor + EGR = engine flow.
    CHECK(s.w_c + s.w_egr == doctest::Approx(engine_flow(cfg.airpath, s.p_im, op.n_e)).epsilon(1e-6));
    CHECK(s.p_im > cfg.airpath.p_amb);
  }
}

TEST_CASE("airpath_step validates dt and counts clamps") {
  const PlantConfig cfg = default_plant_config();
  AirpathState s;
  s.w_c = 300;
  CHECK_THROWS_AS(airpath_step(cfg.airpath, s, {10, 50}, {1200, 40}, 0.0), DomainError);
  CHECK_THROWS_AS(airpath_step(cfg.airpath, s, {10, 50}, {1200, 40}, 0.2), DomainError);
  StepEvents ev;
  AirpathState low = s;
  low.turbo_speed = 0;
  low.w_egr = 0;
  (void)airpath_step(cfg.airpath, low, {0, 0}, {600, 0}, 0.1, &ev);
  CHECK(ev.clamps >= 0);
}

TEST_CASE("actuator commands clamp to their travel") {
  const ActuatorCommand c = ActuatorCommand{-5, 140}.clamped();
  CHECK(c.egr_pos == 0);
  CHECK(c.vgt_pos == 100);
}

TEST_CASE("ground truth emissions respond in the expected directions") {
  const PlantConfig cfg = default_plant_config();
  const OperatingPoint op{1500, 60};
  const ActuatorCommand cmd{lut_query(cfg.egr_table, op.n_e, op.w_inj), lut_query(cfg.vgt_table, op.n_e, op.w_inj)};
  const AirpathState s = settle(cfg.airpath, cmd, op);
  const EngineExtras ex = static_extras(cfg.maps, op);
  const EmissionsState base = ground_truth_emissions(cfg, assemble_fnn_input(s, cmd, op, ex));
  CHECK(base.nox > 0);
  CHECK(base.soot > 0);

  // Less fresh air (more EGR dilution) lowers NOx and raises Soot.
  AirpathState diluted = s;
  diluted.w_c *= 0.8;
  const EmissionsState d = ground_truth_emissions(cfg, assemble_fnn_input(diluted, cmd, op, ex));
  CHECK(d.nox < base.nox);
  CHECK(d.soot > base.soot);

  // No fuel, no emissions.
  const EmissionsState off = ground_truth_emissions(cfg, assemble_fnn_input(s, cmd, {1500, 0}, ex));
  CHECK(off.nox == 0);
  CHECK(off.soot == 0);

  std::mt19937_64 rng(3);
  const EmissionsState noisy = ground_truth_emissions(cfg, assemble_fnn_input(s, cmd, op, ex), &rng);
  CHECK(noisy.nox != base.nox);
  CHECK(std::abs(noisy.nox / base.nox - 1) < 0.3);
}

TEST_CASE("assemble_fnn_input places each channel") {
  AirpathState s{150, 180, 70, 30, 450};
  const FnnInput in = assemble_fnn_input(s, {12, 55}, {1400, 45}, {900, 6, 300});
  CHECK(in.injection_pressure == 900);
  CHECK(in.main_injection_timing == 6);
  CHECK(in.engine_torque == 300);
  CHECK(in.engine_speed == 1400);
  CHECK(in.main_injection_fuel_rate == 45);
  CHECK(in.intake_manifold_pressure == 150);
  CHECK(in.exhaust_manifold_pressure == 180);
  CHECK(in.mass_air_flow == 450);
  CHECK(in.egr_position == 12);
  CHECK(in.vgt_position == 55);
}

TEST_CASE("plant_emissions clamps the network output") {
  NnParams p = init_params(kFnnInputDim, std::vector<LayerSpec>{{2, Activation::Identity}}, 1);
  p.layers[0].weight.setZero();
  p.layers[0].bias = Eigen::Vector2d(-5, 150);
  const PlantEmissions e = plant_emissions(p, AirpathState{}, {}, {1000, 10}, {});
  CHECK(e.value.nox == 0);
  CHECK(e.value.soot == 100);
  CHECK(e.nox_clamped);
  CHECK(e.soot_clamped);
}

TEST_CASE("target maps reproduce the settled plant at the breakpoints") {
  const PlantConfig cfg = default_plant_config();
  const TargetMaps tm = calibrate_targets(cfg);
  CHECK(tm.p_im.speed_axis == cfg.egr_table.speed_axis);
  const std::size_t i = 1, j = 2;
  const OperatingPoint op{tm.p_im.speed_axis[i], tm.p_im.fuel_axis[j]};
  const ActuatorCommand cmd{cfg.egr_table.at(i, j), cfg.vgt_table.at(i, j)};
  const AirpathState s = settle(cfg.airpath, cmd, op, 0.05, 200.0, 1e-10);
  CHECK(tm.p_im.at(i, j) == doctest::Approx(s.p_im).epsilon(1e-4));
  CHECK(tm.chi_egr.at(i, j) == doctest::Approx(egr_rate(s.w_egr, s.w_c)).epsilon(1e-3));

  PlantConfig bad = cfg;
  bad.vgt_table.speed_axis.back() += 1;
  CHECK_THROWS_AS(calibrate_targets(bad), StructuralError);
}

TEST_CASE("synthetic emissions datasets") {
  PlantConfig cfg = default_plant_config();
  EmissionsDataConfig dc;
  dc.steady_points = 12;
  dc.transient_points = 40;
  const EmissionsDatasets a = generate_emissions_datasets(cfg, dc, 4);
  const EmissionsDatasets b = generate_emissions_datasets(cfg, dc, 4);
  CHECK(a.steady.size() == 12);
  CHECK(a.transient.size() == 40);
  CHECK(a.steady.inputs == b.steady.inputs);
  CHECK(a.transient.targets == b.transient.targets);
  for (auto p : a.steady.provenance) CHECK(p == Provenance::SteadyState);
  for (auto p : a.transient.provenance) CHECK(p == Provenance::Transient);
  CHECK(a.transient.targets.minCoeff() >= 0);

  dc.hold_min = 0;
  CHECK_THROWS_AS(generate_emissions_datasets(cfg, dc, 4), DomainError);
  dc = {};
  dc.steady_points = -1;
  CHECK_THROWS_AS(generate_emissions_datasets(cfg, dc, 4), DomainError);
}

TEST_CASE("Plant advances in whole plant steps") {
  PlantConfig cfg = default_plant_config();
  Plant plant(cfg);
  const OperatingPoint op{1200, 40};
  plant.reset_to_equilibrium(op);
  const AirpathState s0 = plant.state();
  const ActuatorCommand cmd{lut_query(cfg.egr_table, op.n_e, op.w_inj), lut_query(cfg.vgt_table, op.n_e, op.w_inj)};
  plant.advance(cmd, op, 0.2);
  CHECK(max_abs_diff(plant.state(), s0) < 1e-6);
  CHECK_THROWS_AS(plant.advance(cmd, op, 0.07), DomainError);
  CHECK_THROWS_AS(plant.advance(cmd, op, 0.0), DomainError);

  cfg.control_period = 0.13;
  CHECK_THROWS_AS(Plant{cfg}, DomainError);
  CHECK(default_plant_config().substeps_per_control() == 4);
}
