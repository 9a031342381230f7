#pragma once

#include "dempc/airpath_inner.hpp"
#include "dempc/lookup.hpp"
#include "dempc/plant.hpp"
#include "dempc/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dempc {

/// Speed and fuel-target trace at a uniform sample period.
struct DriveCycle {
  std::string name;
  double dt = 0.2;                // s
  std::vector<double> n_e;        // rpm
  std::vector<double> w_inj_trg;  // mg/stroke

  std::size_t size() const { return n_e.size(); }
  double duration() const { return size() > 1 ? dt * static_cast<double>(size() - 1) : 0.0; }
  /// Linear interpolation in time, held at the ends.
  OperatingPoint at(double t) const;
  /// Throws DomainError on empty or mismatched samples, a non-positive period
  /// or values outside `env`.
  void validate(const EnvelopeConfig& env) const;
};

DriveCycle urban_cycle();
DriveCycle highway_cycle();
/// "urban" or "highway"; throws DomainError otherwise.
DriveCycle builtin_cycle(const std::string& name);
std::vector<std::string> builtin_cycle_names();

/// Piecewise-constant offsets added to the target maps so that the boost and
/// EGR-rate set-points vary independently of (n_e, w_inj).
struct ExcitationConfig {
  double p_amplitude = 15.0;    // kPa
  double chi_amplitude = 0.05;
  double hold_min = 1.0;        // s
  double hold_max = 4.0;        // s
};

struct IdentResult {
  TrajectoryDataset data;
  std::vector<std::string> warnings;
};

/// Closed-loop plant runs over each cycle: the inner loop tracks the target
/// maps plus seeded excitation, logged at the control period. Inputs carry the
/// realized p_im and chi_egr averaged over each interval; states are the
/// plant-side FNN emissions at the interval start.
IdentResult generate_ident_data(const PlantConfig& plant, const InnerLoopConfig& inner, const TargetMaps& targets,
                                const NnParams& fnn, const std::vector<DriveCycle>& cycles,
                                const ExcitationConfig& excitation, std::uint64_t seed, unsigned threads = 0);

struct RnnValidation {
  double nox_mae = 0;   // ppm
  double soot_mae = 0;  // %
  std::size_t steps = 0;
};

/// Closed recursion from the first state of each range, driven by the logged
/// inputs, against the logged plant emissions.
RnnValidation validate_rnn_against_plant(const NnParams& rnn, const TrajectoryDataset& data,
                                         const std::vector<EpisodeRange>& ranges);

}  // namespace dempc
