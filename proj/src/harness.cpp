#include "dempc/harness.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

namespace dempc {

std::string to_string(ScenarioTag t) {
  switch (t) {
    case ScenarioTag::Baseline: return "baseline";
    case ScenarioTag::A: return "A";
    case ScenarioTag::B: return "B";
    case ScenarioTag::C: return "C";
    case ScenarioTag::D: return "D";
    case ScenarioTag::Custom: return "custom";
  }
  return "custom";
}

ScenarioTag scenario_tag_from_string(const std::string& s) {
  std::string k = s;
  std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (k.rfind("empc-", 0) == 0) k = k.substr(5);
  if (k == "baseline") return ScenarioTag::Baseline;
  if (k == "a") return ScenarioTag::A;
  if (k == "b") return ScenarioTag::B;
  if (k == "c") return ScenarioTag::C;
  if (k == "d") return ScenarioTag::D;
  if (k == "custom") return ScenarioTag::Custom;
  throw DomainError("unknown scenario tag '" + s + "'");
}

OcpConfig ScenarioPresets::for_tag(ScenarioTag tag) const {
  if (!(eta_low > 0) || !(eta_ratio > 1)) throw DomainError("scenario presets need eta_low > 0 and eta_ratio > 1");
  OcpConfig c = base;
  switch (tag) {
    case ScenarioTag::A: c.eta = eta_low; c.soot_limit_active = false; break;
    case ScenarioTag::B: c.eta = eta_low * eta_ratio; c.soot_limit_active = false; break;
    case ScenarioTag::C: c.eta = eta_low; c.soot_limit_active = true; break;
    case ScenarioTag::D: c.eta = eta_low * eta_ratio; c.soot_limit_active = true; break;
    case ScenarioTag::Baseline:
    case ScenarioTag::Custom: break;
  }
  if (tag == ScenarioTag::C || tag == ScenarioTag::D) c.soot_lim = soot_lim;
  return c;
}

// ---------------------------------------------------------------------------

double cumulative_nox(const std::vector<double>& w_ext, const std::vector<double>& nox_ppm, double dt) {
  if (w_ext.empty() || w_ext.size() != nox_ppm.size()) throw DomainError("cumulative_nox needs matching non-empty channels");
  if (!(dt > 0)) throw DomainError("cumulative_nox needs a positive sample period");
  double sum = 0;
  for (std::size_t k = 0; k + 1 < w_ext.size(); ++k)
    sum += 0.5 * dt * (w_ext[k] * nox_ppm[k] + w_ext[k + 1] * nox_ppm[k + 1]);
  return sum;
}

double cumulative_nox(const Trajectory& traj) {
  std::vector<double> w, x;
  w.reserve(traj.steps.size());
  x.reserve(traj.steps.size());
  for (const auto& s : traj.steps) {
    w.push_back(s.w_ext);
    x.push_back(s.nox);
  }
  return cumulative_nox(w, x, traj.dt);
}

double violation_ratio(const std::vector<double>& soot, double soot_lim) {
  if (soot.empty()) return 0.0;
  auto above = std::count_if(soot.begin(), soot.end(), [soot_lim](double s) { return s > soot_lim; });
  return 100.0 * static_cast<double>(above) / static_cast<double>(soot.size());
}

Metrics compute_metrics(const Trajectory& traj, const PlantConfig& plant, double soot_lim) {
  if (traj.steps.empty()) throw DomainError("compute_metrics on an empty trajectory");
  Metrics m;
  m.cumulative_nox = cumulative_nox(traj);
  std::vector<double> soot;
  soot.reserve(traj.steps.size());
  m.peak_nox = -std::numeric_limits<double>::infinity();
  m.peak_soot = -std::numeric_limits<double>::infinity();
  for (const auto& s : traj.steps) {
    m.peak_nox = std::max(m.peak_nox, s.nox);
    m.peak_soot = std::max(m.peak_soot, s.soot);
    m.average_nox += s.nox;
    m.average_soot += s.soot;
    soot.push_back(s.soot);
    const double strokes_per_s = plant.airpath.cylinders * s.n_e / 120.0;
    m.total_fuel += s.w_inj_adj * strokes_per_s * traj.dt;
  }
  const auto n = static_cast<double>(traj.steps.size());
  m.average_nox /= n;
  m.average_soot /= n;
  m.violation_ratio = violation_ratio(soot, soot_lim);
  return m;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty sample");
  if (!(q >= 0 && q <= 100)) throw DomainError("percentile rank must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= values.size()) return values.back();
  double a = pos - static_cast<double>(i);
  return values[i] + a * (values[i + 1] - values[i]);
}

// ---------------------------------------------------------------------------

DriveCycle case_study_trace() {
  DriveCycle c;
  c.name = "case_study";
  c.dt = 0.2;
  const int samples = 251;  // 50 s
  for (int k = 0; k < samples; ++k) {
    double t = k * c.dt;
    double n = 1200.0;
    if (t > 30.0) n = 1200.0 + 600.0 * std::min(1.0, (t - 30.0) / 10.0);
    double w = (t >= 5.0 - 1e-9 && t < 20.0 - 1e-9) ? 110.0 : 50.0;
    c.n_e.push_back(n);
    c.w_inj_trg.push_back(w);
  }
  return c;
}

DriveCycle named_cycle(const std::string& name) {
  if (name == "case_study") return case_study_trace();
  return builtin_cycle(name);
}

// ---------------------------------------------------------------------------

ScenarioResult run_scenario(const ScenarioConfig& sc, const SimulationSetup& setup, double soot_lim) {
  const PlantConfig& pc = setup.plant;
  sc.cycle.validate(pc.envelope);
  const bool use_empc = sc.tag != ScenarioTag::Baseline;

  ScenarioResult res;
  res.scenario = sc.name.empty() ? to_string(sc.tag) : sc.name;
  res.tag = sc.tag;
  res.cycle = sc.cycle.name;
  res.trajectory.scenario = res.scenario;
  res.trajectory.cycle = sc.cycle.name;
  res.trajectory.dt = pc.control_period;

  Plant plant(pc);
  OperatingPoint op0 = sc.cycle.at(0.0);
  plant.reset_to_equilibrium(op0);
  InnerLoop inner(setup.inner, pc.egr_table, pc.vgt_table);
  inner.reset({0, 0, ActuatorCommand{lut_query(pc.egr_table, op0.n_e, op0.w_inj),
                                     lut_query(pc.vgt_table, op0.n_e, op0.w_inj)}.clamped()});
  std::optional<EmpcController> empc;
  if (use_empc) empc.emplace(setup.rnn, sc.ocp);

  ActuatorCommand cmd = inner.state().last;
  const int inner_steps = inner_steps_per_control(setup.inner, pc);
  double w_applied = op0.w_inj;
  const auto steps = static_cast<std::size_t>(std::floor(sc.cycle.duration() / pc.control_period + 1e-9)) + 1;
  res.trajectory.steps.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * pc.control_period;
    const OperatingPoint op = sc.cycle.at(t);
    const StageTargets trg{lut_query(setup.targets.p_im, op.n_e, op.w_inj),
                           lut_query(setup.targets.chi_egr, op.n_e, op.w_inj), op.w_inj};
    const OperatingPoint meas_op{op.n_e, w_applied};
    const EmissionsState x =
        plant_emissions(setup.fnn, plant.state(), cmd, meas_op, static_extras(pc.maps, meas_op)).value;

    StepLog log;
    log.t = t;
    log.n_e = op.n_e;
    log.w_inj_trg = op.w_inj;
    log.p_im_trg = trg.p_im;
    log.chi_egr_trg = trg.chi_egr;
    log.p_im = plant.p_im();
    log.chi_egr = plant.chi_egr();
    log.nox = x.nox;
    log.soot = x.soot;
    log.w_ext = exhaust_flow(pc.airpath, plant.state(), meas_op);

    ControlInput u{trg.p_im, trg.chi_egr, trg.w_inj};
    if (empc) {
      if (k == 0) empc->reset(u, x);
      EmpcStep st = empc->step(x, op.n_e, trg);
      u = st.u;
      const OcpSolution& s = st.solution;
      log.status = to_string(s.status);
      log.iterations = s.iterations;
      log.objective = s.objective;
      log.max_slack = s.max_slack();
      if (!s.predicted.empty()) {
        log.predicted_nox = s.predicted.front().nox;
        log.predicted_soot = s.predicted.front().soot;
      }
      log.kkt_residual = s.kkt_residual;
      log.solve_time = s.solve_time;
      log.budget_exhausted = s.budget_exhausted;
      res.solves += 1;
      if (s.status == SolverStatus::Converged) res.converged += 1;
    }
    log.p_im_adj = u.p_im;
    log.chi_egr_adj = u.chi_egr;
    log.w_inj_adj = u.w_inj;

    const OperatingPoint applied{op.n_e, u.w_inj};
    for (int j = 0; j < inner_steps; ++j) {
      cmd = inner.step({u.p_im, u.chi_egr}, {plant.p_im(), plant.chi_egr()}, applied);
      if (j == 0) {
        log.egr_pos = cmd.egr_pos;
        log.vgt_pos = cmd.vgt_pos;
      }
      if (k + 1 < steps) plant.advance(cmd, applied, setup.inner.period);
    }
    res.trajectory.steps.push_back(std::move(log));
    w_applied = u.w_inj;
  }
  res.plant_clamp_events = plant.clamp_events();
  res.metrics = compute_metrics(res.trajectory, pc, soot_lim);
  return res;
}

std::vector<ScenarioResult> run_scenarios(const std::vector<ScenarioConfig>& scs, const SimulationSetup& setup,
                                          double soot_lim, unsigned threads) {
  std::vector<ScenarioResult> out(scs.size());
  std::vector<std::exception_ptr> errors(scs.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, scs.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < scs.size(); i = next++) {
      try {
        out[i] = run_scenario(scs[i], setup, soot_lim);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& comparison_metrics() {
  static const std::vector<std::string> names{"cumulative_nox", "peak_nox",        "average_soot",
                                              "peak_soot",      "violation_ratio", "total_fuel"};
  return names;
}

namespace {

double metric_value(const Metrics& m, const std::string& name) {
  if (name == "cumulative_nox") return m.cumulative_nox;
  if (name == "peak_nox") return m.peak_nox;
  if (name == "average_nox") return m.average_nox;
  if (name == "average_soot") return m.average_soot;
  if (name == "peak_soot") return m.peak_soot;
  if (name == "violation_ratio") return m.violation_ratio;
  if (name == "total_fuel") return m.total_fuel;
  throw DomainError("unknown metric '" + name + "'");
}

std::string arrow_percent(double d) {
  if (std::isnan(d)) return "n/a";
  char buf[64];
  if (d == 0.0) {
    std::snprintf(buf, sizeof buf, "0.000%%");
  } else {
    std::snprintf(buf, sizeof buf, "%s%.3f%%", d < 0 ? "↓" : "↑", std::abs(d));
  }
  return buf;
}

}  // namespace

ComparisonTable compare_scenarios(const std::vector<ScenarioResult>& runs, const std::string& reference) {
  if (runs.empty()) throw DomainError("compare_scenarios needs at least one run");
  const std::string& cycle = runs.front().cycle;
  for (const auto& r : runs)
    if (r.cycle != cycle)
      throw DomainError("compare_scenarios: run '" + r.scenario + "' uses cycle '" + r.cycle + "', expected '" + cycle + "'");
  auto ref = std::find_if(runs.begin(), runs.end(), [&](const ScenarioResult& r) { return r.scenario == reference; });
  if (ref == runs.end()) throw DomainError("compare_scenarios: reference run '" + reference + "' not found");

  ComparisonTable t;
  t.cycle = cycle;
  t.reference = reference;
  for (const auto& r : runs) {
    ComparisonRow row;
    row.scenario = r.scenario;
    row.metrics = r.metrics;
    for (const auto& name : comparison_metrics()) {
      double base = metric_value(ref->metrics, name);
      double v = metric_value(r.metrics, name);
      double d;
      if (base != 0.0)
        d = 100.0 * (v - base) / std::abs(base);
      else
        d = v == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
      row.delta_percent[name] = d;
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string format_comparison(const ComparisonTable& table) {
  std::ostringstream os;
  os << "cycle: " << table.cycle << "  reference: " << table.reference << '\n';
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-12s", "scenario");
  os << buf;
  for (const auto& name : comparison_metrics()) {
    std::snprintf(buf, sizeof buf, " %28s", name.c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof buf, "%-12s", row.scenario.c_str());
    os << buf;
    for (const auto& name : comparison_metrics()) {
      std::string cell;
      char v[48];
      std::snprintf(v, sizeof v, "%.4g", metric_value(row.metrics, name));
      cell = v;
      if (row.scenario == table.reference)
        cell += " (reference)";
      else
        cell += " (" + arrow_percent(row.delta_percent.at(name)) + ")";
      // UTF-8 arrows take three bytes but one column
      int pad = 28 - static_cast<int>(cell.size());
      if (cell.find("↓") != std::string::npos || cell.find("↑") != std::string::npos) pad += 2;
      os << ' ' << std::string(static_cast<std::size_t>(std::max(0, pad)), ' ') << cell;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dempc
