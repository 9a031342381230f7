#pragma once

#include "dempc/config.hpp"
#include "dempc/harness.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dempc {

inline constexpr const char* kVersion = "0.1.0";

struct StageRecord {
  std::string name;
  std::string key;  // content hash of the stage inputs
  bool cached = false;
};

/// Stage runner over one output directory. Each stage stores its inputs' hash
/// next to its outputs and is skipped when the hash and files are present.
class Workspace {
 public:
  Workspace(ProjectConfig cfg, std::string out_dir, bool use_cache = true);

  const ProjectConfig& config() const { return cfg_; }
  const std::string& out_dir() const { return dir_; }
  const std::vector<StageRecord>& stages() const { return stages_; }

  /// Steady + transient records, merged and split for training.
  Dataset data();
  GridSearchReport tune();
  /// `tuned` picks the best grid cell's momentum and learning rate.
  NnParams train_fnn(bool tuned);
  TargetMaps targets();
  TrajectoryDataset ident();
  NnParams train_rnn();
  /// Percentile of baseline Soot over the reference cycles, or the preset value
  /// when the percentile is disabled.
  double soot_limit();

  SimulationSetup setup();
  ScenarioConfig scenario(const std::string& tag, const DriveCycle& cycle);
  ScenarioResult simulate(const std::string& tag, const DriveCycle& cycle);
  /// Every configured tag on every configured cycle.
  std::vector<ScenarioResult> scenarios();
  std::vector<ComparisonTable> compare(const std::vector<ScenarioResult>& runs);

  /// data -> tune -> FNN -> targets -> ident -> RNN -> scenarios -> tables.
  std::vector<ComparisonTable> pipeline();

  void write_manifest() const;

  std::string path(const std::string& relative) const;

 private:
  std::string stage_key(const std::string& name, const std::string& inputs) const;
  bool fresh(const std::string& stage, const std::string& key, const std::vector<std::string>& files) const;
  void mark(const std::string& stage, const std::string& key);
  void record(const std::string& stage, const std::string& key, bool cached);

  ProjectConfig cfg_;
  std::string dir_;
  bool use_cache_;
  std::vector<StageRecord> stages_;
  std::optional<Dataset> data_;
  std::optional<GridSearchReport> tune_;
  std::optional<NnParams> fnn_;
  std::optional<TargetMaps> targets_;
  std::optional<TrajectoryDataset> ident_;
  std::optional<NnParams> rnn_;
  std::optional<double> soot_lim_;
  std::string data_key_, tune_key_, fnn_key_, ident_key_, rnn_key_;
  std::vector<std::string> ident_warnings_;
};

/// Resolves "case_study", a builtin name or a CSV file path.
DriveCycle resolve_cycle(const std::string& name_or_path);

}  // namespace dempc
