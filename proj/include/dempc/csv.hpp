#pragma once

#include "dempc/harness.hpp"
#include "dempc/ident.hpp"
#include "dempc/training.hpp"

#include <string>
#include <vector>

namespace dempc {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// A parsed CSV file: header plus rows of raw cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws IoError if missing.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);
double parse_double(const std::string& cell);

/// FNN records: the 10 input channels, nox, soot, provenance, split.
void write_dataset_csv(const std::string& path, const Dataset& data);
Dataset read_dataset_csv(const std::string& path);

/// One row per sample: episode, dt, k, nox, soot, p_im, chi_egr, n_e, w_inj.
void write_trajectories_csv(const std::string& path, const TrajectoryDataset& data);
TrajectoryDataset read_trajectories_csv(const std::string& path);

void write_curve_csv(const std::string& path, const std::vector<EpochLog>& curve);
void write_grid_csv(const std::string& path, const GridSearchReport& report);
void write_eval_csv(const std::string& path, const EvalReport& report);

/// Columns t, n_e, w_inj_trg at a uniform step.
DriveCycle read_cycle_csv(const std::string& path, const std::string& name);
void write_cycle_csv(const std::string& path, const DriveCycle& cycle);

/// Per-step closed-loop log including the solver diagnostics.
void write_trajectory_log_csv(const std::string& path, const Trajectory& traj);
void write_metrics_csv(const std::string& path, const std::vector<ScenarioResult>& runs);
/// Reads rows written by write_metrics_csv; trajectories stay empty.
std::vector<ScenarioResult> read_metrics_csv(const std::string& path);
void write_comparison_csv(const std::string& path, const ComparisonTable& table);

}  // namespace dempc
