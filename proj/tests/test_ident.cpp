#include "support.hpp"

#include "dempc/errors.hpp"
#include "dempc/ident.hpp"

#include <doctest.h>

using namespace dempc;

namespace {

// Identity-ish FNN stand-in: NOx follows fuel, Soot follows boost.
NnParams toy_fnn() {
  NnParams p = init_params(kFnnInputDim, std::vector<LayerSpec>{{2, Activation::Identity}}, 1);
  p.layers[0].weight.setZero();
  p.layers[0].weight(0, 2) = 10.0;  // fuel -> NOx
  p.layers[0].weight(1, 5) = 0.01;  // p_im -> Soot
  p.layers[0].bias.setZero();
  return p;
}

DriveCycle short_cycle() {
  DriveCycle c{"short", 0.2, {}, {}};
  for (int k = 0; k <= 50; ++k) {
    c.n_e.push_back(1200 + 4 * k);
    c.w_inj_trg.push_back(k < 25 ? 30 : 60);
  }
  return c;
}

}  // namespace

TEST_CASE("drive cycle interpolation and validation") {
  DriveCycle c{"c", 0.5, {1000, 2000, 2000}, {10, 20, 40}};
  CHECK(c.duration() == 1.0);
  CHECK(c.at(0.25).n_e == 1500);
  CHECK(c.at(0.75).w_inj == 30);
  CHECK(c.at(-1).n_e == 1000);
  CHECK(c.at(9).w_inj == 40);
  const EnvelopeConfig env;
  CHECK_NOTHROW(c.validate(env));
  c.n_e[1] = 3000;
  CHECK_THROWS_AS(c.validate(env), DomainError);
  c.n_e.pop_back();
  CHECK_THROWS_AS(c.validate(env), DomainError);
  DriveCycle empty{"e", 0.2, {}, {}};
  CHECK_THROWS_AS(empty.validate(env), DomainError);
  CHECK_THROWS_AS(empty.at(0), DomainError);
  DriveCycle bad_dt{"d", 0.0, {1000}, {10}};
  CHECK_THROWS_AS(bad_dt.validate(env), DomainError);
}

TEST_CASE("bundled cycles are 300 s, reproducible and inside the envelope") {
  const EnvelopeConfig env;
  for (const auto& name : builtin_cycle_names()) {
    const DriveCycle a = builtin_cycle(name);
    const DriveCycle b = builtin_cycle(name);
    CHECK(a.name == name);
    CHECK(a.duration() == doctest::Approx(300.0));
    CHECK(a.n_e == b.n_e);
    CHECK(a.w_inj_trg == b.w_inj_trg);
    CHECK_NOTHROW(a.validate(env));
  }
  CHECK_THROWS_AS(builtin_cycle("ftp"), DomainError);
}

TEST_CASE("identification runs log one input per transition") {
  const PlantConfig cfg = default_plant_config();
  const TargetMaps tm = calibrate_targets(cfg);
  const IdentResult r = generate_ident_data(cfg, {}, tm, toy_fnn(), {short_cycle(), short_cycle()}, {}, 5, 1);
  REQUIRE(r.data.episodes.size() == 2);
  CHECK(r.warnings.empty());
  const Episode& ep = r.data.episodes[0];
  CHECK(ep.dt == cfg.control_period);
  CHECK(ep.states.size() == 50);
  CHECK(ep.inputs.size() == 50);
  CHECK(ep.inputs[0].n_e == 1200);
  CHECK(ep.inputs[30].w_inj == 60);
  // Realized p_im stays physical.
  for (const auto& in : ep.inputs) {
    CHECK(in.p_im > 90);
    CHECK(in.chi_egr >= 0);
    CHECK(in.chi_egr <= 1);
  }
  // Measured NOx uses the previous interval's fuel: 10 * 30 at the first step.
  CHECK(ep.states[0].nox == doctest::Approx(300.0));
  CHECK(ep.states[26].nox == doctest::Approx(600.0));

  // Per-cycle seeds differ, so identical cycles get different excitation.
  CHECK(r.data.episodes[1].inputs[10].p_im != ep.inputs[10].p_im);

  const IdentResult again = generate_ident_data(cfg, {}, tm, toy_fnn(), {short_cycle(), short_cycle()}, {}, 5, 2);
  CHECK(again.data.episodes[1].inputs[10].p_im == r.data.episodes[1].inputs[10].p_im);
}

TEST_CASE("excitation widens the boost spread") {
  const PlantConfig cfg = default_plant_config();
  const TargetMaps tm = calibrate_targets(cfg);
  DriveCycle flat{"flat", 0.2, std::vector<double>(101, 1500), std::vector<double>(101, 60)};
  ExcitationConfig none;
  none.p_amplitude = 0;
  none.chi_amplitude = 0;
  auto spread = [&](const ExcitationConfig& ex) {
    const Episode ep = generate_ident_data(cfg, {}, tm, toy_fnn(), {flat}, ex, 3, 1).data.episodes[0];
    double lo = 1e9, hi = -1e9;
    for (std::size_t k = 25; k < ep.inputs.size(); ++k) {
      lo = std::min(lo, ep.inputs[k].p_im);
      hi = std::max(hi, ep.inputs[k].p_im);
    }
    return hi - lo;
  };
  CHECK(spread(none) < 0.5);
  CHECK(spread({}) > 3.0);
}

TEST_CASE("identification rejects bad excitation and cycles") {
  const PlantConfig cfg = default_plant_config();
  const TargetMaps tm = calibrate_targets(cfg);
  ExcitationConfig ex;
  ex.hold_max = 0.5;
  CHECK_THROWS_AS(generate_ident_data(cfg, {}, tm, toy_fnn(), {short_cycle()}, ex, 1), DomainError);
  ex = {};
  ex.p_amplitude = -1;
  CHECK_THROWS_AS(generate_ident_data(cfg, {}, tm, toy_fnn(), {short_cycle()}, ex, 1), DomainError);
  DriveCycle wild = short_cycle();
  wild.w_inj_trg[3] = 500;
  CHECK_THROWS_AS(generate_ident_data(cfg, {}, tm, toy_fnn(), {wild}, {}, 1), DomainError);
}

TEST_CASE("RNN validation runs a closed recursion over each range") {
  TrajectoryDataset d;
  Episode ep;
  ep.states = {{1, 1}, {2, 2}, {4, 4}};
  ep.inputs = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  d.episodes = {ep};
  // Constant-output network.
  NnParams p = init_params(kRnnInputDim, std::vector<LayerSpec>{{2, Activation::Identity}}, 1);
  p.layers[0].weight.setZero();
  p.layers[0].bias = Eigen::Vector2d(1, 1);
  const RnnValidation v = validate_rnn_against_plant(p, d, {{0, 0, 3}});
  CHECK(v.steps == 2);
  // predictions 1, 1 against 2, 4
  CHECK(v.nox_mae == doctest::Approx(2.0));
  CHECK(v.soot_mae == doctest::Approx(2.0));
  CHECK_THROWS_AS(validate_rnn_against_plant(p, d, {{0, 1, 2}}), DomainError);
}
