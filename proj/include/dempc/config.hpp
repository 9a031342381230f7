#pragma once

#include "dempc/airpath_inner.hpp"
#include "dempc/empc.hpp"
#include "dempc/harness.hpp"
#include "dempc/ident.hpp"
#include "dempc/plant.hpp"
#include "dempc/training.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dempc {

struct SeedConfig {
  std::uint64_t data = 11;      // synthetic emissions records and label noise
  std::uint64_t split = 12;     // FNN train/validation/test shuffle
  std::uint64_t fnn_init = 13;  // FNN weights and batch order, also the grid cells
  std::uint64_t ident = 14;     // identification excitation
  std::uint64_t rnn_init = 15;  // RNN weights and window order
};

struct FnnStageConfig {
  HyperParams hp{1e-3, 0.9, 0.5, 100, 400, 40};
  std::array<double, 3> split{0.7, 0.15, 0.15};
  double soot_cutoff = 60.0;  // %, steady-state records above are dropped
};

struct TuningConfig {
  bool enabled = true;
  std::vector<double> momenta{0.8, 0.9, 0.95};
  std::vector<double> learning_rates{3e-4, 1e-3, 3e-3};
  int epochs_per_cell = 60;
};

struct RnnStageConfig {
  HyperParams hp{3e-3, 0.9, 0.5, 100, 300, 20};
  std::array<double, 3> split{0.7, 0.15, 0.15};
};

struct IdentStageConfig {
  ExcitationConfig excitation;
  std::vector<std::string> cycles{"urban", "highway"};
  int passes = 3;  // each pass reruns every cycle with fresh excitation
};

struct ScenarioSuiteConfig {
  ScenarioPresets presets;
  double soot_percentile = 85.0;
  std::vector<std::string> soot_reference_cycles{"urban", "highway"};
  std::vector<std::string> cycles{"case_study", "urban", "highway"};
  std::vector<std::string> tags{"baseline", "A", "B", "C", "D"};
};

struct ProjectConfig {
  SeedConfig seeds;
  PlantConfig plant = default_plant_config();
  EmissionsDataConfig data;
  FnnStageConfig fnn;
  TuningConfig tuning;
  IdentStageConfig ident;
  RnnStageConfig rnn;
  InnerLoopConfig inner;
  ScenarioSuiteConfig scenarios;
  unsigned threads = 0;  // 0 = hardware concurrency

  /// Throws DomainError on any out-of-range field.
  void validate() const;
};

ProjectConfig default_project_config();

/// Unknown keys are rejected; missing keys keep their defaults.
ProjectConfig parse_project_config(const std::string& json_text);
ProjectConfig load_project_config(const std::string& path);

/// Canonical JSON (sorted keys, shortest round-trip numbers).
std::string to_json(const ProjectConfig& cfg);

/// Subtree of the canonical JSON, e.g. "fnn" or "scenarios.presets".
std::string config_section_json(const ProjectConfig& cfg, const std::string& dotted_path);

/// Applies "a.b.c=value" overrides, value parsed as JSON (bare words as strings).
void apply_override(ProjectConfig& cfg, const std::string& assignment);

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t config_hash(const ProjectConfig& cfg);

}  // namespace dempc
