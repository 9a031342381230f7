#pragma once

#include "dempc/airpath_inner.hpp"
#include "dempc/empc.hpp"
#include "dempc/ident.hpp"
#include "dempc/plant.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dempc {

enum class ScenarioTag { Baseline, A, B, C, D, Custom };

std::string to_string(ScenarioTag t);
ScenarioTag scenario_tag_from_string(const std::string& s);

/// The four weight presets: A low eta, B high eta, C low eta with the Soot
/// limit, D high eta with the Soot limit.
struct ScenarioPresets {
  OcpConfig base;
  double eta_low = 0.01;
  double eta_ratio = 10.0;  // eta_high / eta_low
  double soot_lim = 100.0;  // %

  OcpConfig for_tag(ScenarioTag tag) const;
};

struct ScenarioConfig {
  std::string name;
  ScenarioTag tag = ScenarioTag::Baseline;
  OcpConfig ocp;  // unused for the baseline
  DriveCycle cycle;
};

/// Everything a closed-loop run needs besides the scenario itself.
struct SimulationSetup {
  PlantConfig plant;
  InnerLoopConfig inner;
  NnParams fnn;
  NnParams rnn;
  TargetMaps targets;
};

struct StepLog {
  double t = 0;
  double n_e = 0;
  double w_inj_trg = 0;
  double p_im_trg = 0;
  double chi_egr_trg = 0;
  double p_im_adj = 0;
  double chi_egr_adj = 0;
  double w_inj_adj = 0;
  double p_im = 0;
  double chi_egr = 0;
  double egr_pos = 0;
  double vgt_pos = 0;
  double nox = 0;    // ppm
  double soot = 0;   // %
  double w_ext = 0;  // kg/h
  // solver diagnostics, empty for the baseline
  std::string status;
  int iterations = 0;
  double objective = 0;
  double max_slack = 0;
  double predicted_nox = 0;   // one step ahead
  double predicted_soot = 0;
  double kkt_residual = 0;
  double solve_time = 0;
  bool budget_exhausted = false;
};

struct Trajectory {
  std::string scenario;
  std::string cycle;
  double dt = 0.2;
  std::vector<StepLog> steps;
};

struct Metrics {
  double cumulative_nox = 0;  // kg/h * ppm * s
  double peak_nox = 0;        // ppm
  double average_nox = 0;
  double average_soot = 0;    // %
  double peak_soot = 0;
  double violation_ratio = 0; // %
  double total_fuel = 0;      // mg
  std::vector<std::string> log_paths;
};

struct ScenarioResult {
  std::string scenario;
  ScenarioTag tag = ScenarioTag::Baseline;
  std::string cycle;
  Metrics metrics;
  Trajectory trajectory;
  int plant_clamp_events = 0;
  int converged = 0;
  int solves = 0;
};

/// Trapezoidal integral of w_ext * NOx over the samples spaced dt apart.
double cumulative_nox(const std::vector<double>& w_ext, const std::vector<double>& nox_ppm, double dt);
double cumulative_nox(const Trajectory& traj);

/// Percentage of samples with Soot strictly above the limit.
double violation_ratio(const std::vector<double>& soot, double soot_lim);

Metrics compute_metrics(const Trajectory& traj, const PlantConfig& plant, double soot_lim);

/// Constant speed, fuel tip-in, tip-out, then a speed ramp at constant fuel.
DriveCycle case_study_trace();

/// "case_study", "urban" or "highway".
DriveCycle named_cycle(const std::string& name);

/// Closed loop: plant -> FNN emissions -> (EMPC or lookup targets) -> inner
/// loop -> plant, at the control period.
ScenarioResult run_scenario(const ScenarioConfig& sc, const SimulationSetup& setup, double soot_lim);

/// Runs each scenario on its own thread; results keep the input order.
std::vector<ScenarioResult> run_scenarios(const std::vector<ScenarioConfig>& scs, const SimulationSetup& setup,
                                          double soot_lim, unsigned threads = 0);

/// q-th percentile (0..100) with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

struct ComparisonRow {
  std::string scenario;
  Metrics metrics;
  std::map<std::string, double> delta_percent;  // metric name -> relative change vs the reference
};

struct ComparisonTable {
  std::string cycle;
  std::string reference;
  std::vector<ComparisonRow> rows;
};

/// Relative change of every metric against the reference run. All runs must
/// share one cycle.
ComparisonTable compare_scenarios(const std::vector<ScenarioResult>& runs, const std::string& reference);

/// The compared metric names, in column order.
const std::vector<std::string>& comparison_metrics();

/// Aligned text with arrows, e.g. "-6.116% (down)".
std::string format_comparison(const ComparisonTable& table);

}  // namespace dempc
