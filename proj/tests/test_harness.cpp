#include "support.hpp"

#include "dempc/errors.hpp"
#include "dempc/harness.hpp"

#include <doctest.h>

#include <cmath>

using namespace dempc;

namespace {

NnParams toy_fnn() {
  NnParams p = init_params(kFnnInputDim, std::vector<LayerSpec>{{2, Activation::Identity}}, 1);
  p.layers[0].weight.setZero();
  p.layers[0].weight(0, 2) = 10.0;
  p.layers[0].weight(1, 5) = 0.01;
  p.layers[0].bias.setZero();
  return p;
}

NnParams toy_rnn() {
  NnParams p = init_params(kRnnInputDim, rnn_architecture(), 21);
  p.input_norm.offset = (Eigen::VectorXd(6) << 500, 1.5, 150, 0.2, 1400, 50).finished();
  p.input_norm.scale = (Eigen::VectorXd(6) << 300, 1, 40, 0.1, 400, 30).finished();
  p.output_norm.offset = p.input_norm.offset.head(2);
  p.output_norm.scale = p.input_norm.scale.head(2);
  return p;
}

SimulationSetup toy_setup() {
  SimulationSetup s;
  s.plant = default_plant_config();
  s.fnn = toy_fnn();
  s.rnn = toy_rnn();
  s.targets = calibrate_targets(s.plant);
  return s;
}

DriveCycle tip_in() {
  DriveCycle c{"tip_in", 0.2, {}, {}};
  for (int k = 0; k <= 30; ++k) {
    c.n_e.push_back(1300);
    c.w_inj_trg.push_back(k < 10 ? 40 : 70);
  }
  return c;
}

Trajectory flat(std::vector<double> nox, std::vector<double> soot) {
  Trajectory t;
  t.dt = 0.5;
  for (std::size_t i = 0; i < nox.size(); ++i) {
    StepLog s;
    s.nox = nox[i];
    s.soot = soot[i];
    s.w_ext = 2.0;
    s.n_e = 1200;
    s.w_inj_adj = 10;
    t.steps.push_back(s);
  }
  return t;
}

}  // namespace

TEST_CASE("cumulative NOx is the trapezoid of flow times concentration") {
  CHECK(cumulative_nox({1, 1, 1}, {2, 2, 2}, 0.5) == doctest::Approx(2.0));
  // (1*0 + 2*10)/2*0.2 + (2*10 + 3*20)/2*0.2 = 2 + 8
  CHECK(cumulative_nox({1, 2, 3}, {0, 10, 20}, 0.2) == doctest::Approx(10.0));
  CHECK(cumulative_nox({4}, {5}, 0.2) == 0.0);
  CHECK_THROWS_AS(cumulative_nox({}, {}, 0.2), DomainError);
  CHECK_THROWS_AS(cumulative_nox({1, 2}, {1}, 0.2), DomainError);
  CHECK_THROWS_AS(cumulative_nox({1, 2}, {1, 2}, 0.0), DomainError);
}

TEST_CASE("violation ratio counts samples strictly above the limit") {
  CHECK(violation_ratio({1, 2, 3, 4}, 2.0) == 50.0);
  CHECK(violation_ratio({2, 2}, 2.0) == 0.0);
  CHECK(violation_ratio({}, 2.0) == 0.0);
  CHECK(violation_ratio({5, 6, 7}, -1.0) == 100.0);
}

TEST_CASE("percentile interpolates between order statistics") {
  CHECK(percentile({3, 1, 2}, 50) == 2.0);
  CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
  CHECK(percentile({1, 2, 3, 4, 5}, 85) == doctest::Approx(4.4));
  CHECK(percentile({7}, 85) == 7.0);
  CHECK(percentile({1, 9}, 100) == 9.0);
  CHECK(percentile({1, 9}, 0) == 1.0);
  CHECK_THROWS_AS(percentile({}, 50), DomainError);
  CHECK_THROWS_AS(percentile({1}, 101), DomainError);
}

TEST_CASE("compute_metrics") {
  const PlantConfig pc = default_plant_config();
  const Trajectory t = flat({100, 300, 200}, {1, 5, 3});
  const Metrics m = compute_metrics(t, pc, 2.0);
  CHECK(m.cumulative_nox == doctest::Approx(0.5 * 0.5 * (200 + 600) + 0.5 * 0.5 * (600 + 400)));
  CHECK(m.peak_nox == 300);
  CHECK(m.average_nox == doctest::Approx(200));
  CHECK(m.average_soot == doctest::Approx(3));
  CHECK(m.peak_soot == 5);
  CHECK(m.violation_ratio == doctest::Approx(200.0 / 3.0));
  CHECK(m.total_fuel == doctest::Approx(3 * 10 * pc.airpath.cylinders * 1200 / 120.0 * 0.5));
  CHECK_THROWS_AS(compute_metrics(Trajectory{}, pc, 2.0), DomainError);
}

TEST_CASE("case study trace") {
  const DriveCycle c = case_study_trace();
  CHECK(c.name == "case_study");
  REQUIRE(c.size() == 251);
  CHECK(c.duration() == doctest::Approx(50.0));
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double t = 0.2 * static_cast<double>(k);
    const bool tip = t >= 5.0 - 1e-9 && t < 20.0 - 1e-9;
    CHECK(c.w_inj_trg[k] == (tip ? 110.0 : 50.0));
    if (t <= 30.0) CHECK(c.n_e[k] == 1200.0);
    if (t >= 40.0 - 1e-9) CHECK(c.n_e[k] == doctest::Approx(1800.0));
  }
  CHECK(c.at(35.0).n_e == doctest::Approx(1500.0));
  CHECK_NOTHROW(c.validate(EnvelopeConfig{}));
  CHECK(named_cycle("case_study").size() == 251);
  CHECK(named_cycle("urban").name == "urban");
  CHECK_THROWS_AS(named_cycle("moon"), DomainError);
}

TEST_CASE("scenario tags and presets") {
  for (auto t : {ScenarioTag::Baseline, ScenarioTag::A, ScenarioTag::B, ScenarioTag::C, ScenarioTag::D,
                 ScenarioTag::Custom})
    CHECK(scenario_tag_from_string(to_string(t)) == t);
  CHECK(scenario_tag_from_string("EMPC-d") == ScenarioTag::D);
  CHECK_THROWS_AS(scenario_tag_from_string("E"), DomainError);

  ScenarioPresets p;
  p.eta_low = 0.02;
  p.eta_ratio = 10;
  p.soot_lim = 7;
  const OcpConfig a = p.for_tag(ScenarioTag::A), b = p.for_tag(ScenarioTag::B), c = p.for_tag(ScenarioTag::C),
                  d = p.for_tag(ScenarioTag::D);
  CHECK(a.eta == 0.02);
  CHECK(c.eta == 0.02);
  CHECK(b.eta == doctest::Approx(0.2));
  CHECK(d.eta == doctest::Approx(0.2));
  CHECK_FALSE(a.soot_limit_active);
  CHECK_FALSE(b.soot_limit_active);
  CHECK(c.soot_limit_active);
  CHECK(d.soot_limit_active);
  CHECK(c.soot_lim == 7);
  CHECK(a.alpha == p.base.alpha);
  p.eta_ratio = 1;
  CHECK_THROWS_AS(p.for_tag(ScenarioTag::B), DomainError);
}

TEST_CASE("comparison table") {
  auto run = [](std::string name, double nox, double soot, std::string cycle = "c") {
    ScenarioResult r;
    r.scenario = std::move(name);
    r.cycle = std::move(cycle);
    r.metrics.cumulative_nox = nox;
    r.metrics.peak_soot = soot;
    r.metrics.peak_nox = 1;
    r.metrics.average_soot = 1;
    r.metrics.total_fuel = 1;
    return r;
  };
  const std::vector<ScenarioResult> runs{run("baseline", 200, 4), run("A", 150, 5)};
  const ComparisonTable t = compare_scenarios(runs, "baseline");
  CHECK(t.cycle == "c");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].delta_percent.at("cumulative_nox") == 0.0);
  CHECK(t.rows[1].delta_percent.at("cumulative_nox") == doctest::Approx(-25.0));
  CHECK(t.rows[1].delta_percent.at("peak_soot") == doctest::Approx(25.0));
  // Both zero: no change. Zero reference, nonzero value: undefined.
  CHECK(t.rows[1].delta_percent.at("violation_ratio") == 0.0);
  auto bad = runs;
  bad[1].metrics.violation_ratio = 3;
  CHECK(std::isnan(compare_scenarios(bad, "baseline").rows[1].delta_percent.at("violation_ratio")));

  const std::string text = format_comparison(t);
  CHECK(text.find("reference: baseline") != std::string::npos);
  CHECK(text.find("(reference)") != std::string::npos);
  CHECK(text.find("25.000%") != std::string::npos);
  CHECK(format_comparison(compare_scenarios(bad, "baseline")).find("n/a") != std::string::npos);

  CHECK_THROWS_AS(compare_scenarios({}, "baseline"), DomainError);
  CHECK_THROWS_AS(compare_scenarios(runs, "Z"), DomainError);
  CHECK_THROWS_AS(compare_scenarios({run("baseline", 1, 1), run("A", 1, 1, "other")}, "baseline"), DomainError);
  CHECK(comparison_metrics().size() == 6);
}

TEST_CASE("closed-loop runs") {
  const SimulationSetup setup = toy_setup();
  ScenarioConfig base{"", ScenarioTag::Baseline, {}, tip_in()};
  ScenarioPresets presets;
  presets.base.time_budget = 0;
  ScenarioConfig a{"", ScenarioTag::A, presets.for_tag(ScenarioTag::A), tip_in()};

  const ScenarioResult rb = run_scenario(base, setup, 5.0);
  CHECK(rb.scenario == "baseline");
  CHECK(rb.cycle == "tip_in");
  REQUIRE(rb.trajectory.steps.size() == 31);
  CHECK(rb.solves == 0);
  for (const auto& s : rb.trajectory.steps) {
    CHECK(s.p_im_adj == s.p_im_trg);
    CHECK(s.chi_egr_adj == s.chi_egr_trg);
    CHECK(s.w_inj_adj == s.w_inj_trg);
    CHECK(s.status.empty());
  }
  // The toy FNN makes NOx ten times the fuel applied over the previous step.
  CHECK(rb.trajectory.steps[10].nox == doctest::Approx(400.0));
  CHECK(rb.trajectory.steps[11].nox == doctest::Approx(700.0));
  CHECK(rb.metrics.cumulative_nox == doctest::Approx(cumulative_nox(rb.trajectory)));

  const ScenarioResult ra = run_scenario(a, setup, 5.0);
  CHECK(ra.solves == 31);
  CHECK(ra.converged <= ra.solves);
  for (std::size_t k = 0; k < ra.trajectory.steps.size(); ++k) {
    const StepLog& s = ra.trajectory.steps[k];
    CHECK(s.w_inj_adj <= s.w_inj_trg + 1e-12);
    CHECK(s.w_inj_adj >= 0.9 * s.w_inj_trg - 1e-12);
    CHECK_FALSE(s.status.empty());
    if (k > 0) CHECK(std::abs(s.p_im_adj - ra.trajectory.steps[k - 1].p_im_adj) <= presets.base.p_rate + 1e-6);
  }

  const auto both = run_scenarios({a, base}, setup, 5.0, 2);
  REQUIRE(both.size() == 2);
  CHECK(both[0].scenario == "A");
  CHECK(both[1].scenario == "baseline");
  CHECK(both[0].metrics.cumulative_nox == ra.metrics.cumulative_nox);

  ScenarioConfig broken = base;
  broken.cycle.n_e[3] = 99999;
  CHECK_THROWS_AS(run_scenarios({base, broken}, setup, 5.0, 2), DomainError);
}
