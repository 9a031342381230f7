#pragma once

#include "dempc/nn.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dempc {

struct HyperParams {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double decay_factor = 0.5;
  int decay_period = 100;  // epochs
  int epochs = 1000;
  int batch_size = 40;

  /// Throws DomainError when a field is out of range.
  void validate() const;
};

enum class Provenance { SteadyState, Transient, Synthetic };
enum class Split { Train, Validation, Test };

std::string to_string(Provenance p);
std::string to_string(Split s);
Provenance provenance_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Static regression records, one column per record.
struct Dataset {
  Eigen::MatrixXd inputs;   // input_dim x n
  Eigen::MatrixXd targets;  // output_dim x n
  std::vector<Provenance> provenance;
  std::vector<Split> split;

  Eigen::Index size() const { return inputs.cols(); }
  Eigen::Index input_dim() const { return inputs.rows(); }
  Eigen::Index output_dim() const { return targets.rows(); }
  bool empty() const { return size() == 0; }

  void validate() const;
  Dataset subset(Split s) const;
  Dataset select(const std::vector<Eigen::Index>& columns) const;
  std::size_t count(Split s) const;
};

/// Per-episode record at a fixed sample period: inputs[k] is applied while the
/// state moves from states[k] to states[k + 1].
struct Episode {
  std::string name;
  double dt = 0.2;
  std::vector<RnnInput> inputs;
  std::vector<EmissionsState> states;

  std::size_t size() const { return states.size(); }
};

struct TrajectoryDataset {
  std::vector<Episode> episodes;
  void validate() const;
};

/// Contiguous slice [begin, end) of one episode.
struct EpisodeRange {
  std::size_t episode = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct TrajectorySplit {
  std::vector<EpisodeRange> train;
  std::vector<EpisodeRange> validation;
  std::vector<EpisodeRange> test;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double learning_rate = 0;
};

struct TrainResult {
  NnParams params;
  std::vector<EpochLog> curve;  // entry 0 holds the initial losses
  bool diverged = false;
  int skipped_episodes = 0;
};

// ---------------------------------------------------------------------------

/// (1/|D|) sum ||f(x) - y||^2 with inputs and targets on the normalized scale.
double mse_loss(const NnParams& params, const Dataset& data);

/// velocity <- grad + momentum * velocity; params <- params - lr * velocity.
void sgd_momentum_step(NnParams& params, const Gradient& grad, Gradient& velocity, double learning_rate,
                       double momentum);
void sgd_momentum_step(NnParams& params, const Gradient& grad, Gradient& velocity, const HyperParams& hp);

/// lr * decay_factor^floor(epoch / decay_period)
double apply_lr_decay(const HyperParams& hp, int epoch);

/// Per-channel mean/std of the training inputs; outputs are scaled by their
/// std only, so non-negative targets stay non-negative under a ReLU head.
void fit_fnn_normalization(NnParams& params, const Dataset& train);

TrainResult train_fnn(const Dataset& data, const HyperParams& hp, std::uint64_t seed);

struct GridCell {
  double momentum = 0;
  double learning_rate = 0;
  double val_loss = 0;  // +inf if the cell diverged
};

struct GridSearchReport {
  std::vector<GridCell> cells;  // in input order
  std::size_t best = 0;

  const GridCell& best_cell() const { return cells.at(best); }
};

/// Trains a fresh FNN per (momentum, learning_rate) pair from the same seed and
/// records the validation MSE. Ties go to the smaller learning rate, then the
/// smaller momentum. `threads` = 0 picks the hardware concurrency.
GridSearchReport grid_search(const std::vector<std::pair<double, double>>& grid, const Dataset& data,
                             HyperParams base, int epochs_per_cell, std::uint64_t seed, unsigned threads = 0);

/// Transient records plus the steady-state records whose Soot target is at or
/// below `soot_cutoff` (percent).
Dataset merge_emissions_datasets(const Dataset& steady, const Dataset& transient, double soot_cutoff);

/// Seeded shuffle into train/validation/test with counts round(f0 n),
/// round(f1 n) and the remainder.
Dataset split_dataset(const Dataset& data, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Contiguous per-episode split: train first, validation next, test last.
TrajectorySplit split_trajectories(const TrajectoryDataset& data, const std::array<double, 3>& fractions);

/// Record counts for a split of n items.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions);

// ---------------------------------------------------------------------------

/// One multi-step training window: roll from x0 under inputs, compare with targets.
struct Window {
  EmissionsState x0;
  std::vector<RnnInput> inputs;
  std::vector<EmissionsState> targets;
};

std::vector<Window> make_windows(const TrajectoryDataset& data, const std::vector<EpisodeRange>& ranges,
                                 int horizon, int* skipped = nullptr);

/// Mean over windows of (1/N) sum_j ||x_hat_j - x_j||^2 on the normalized
/// state scale, with its exact gradient (back-propagation through time).
double rnn_window_loss_and_grad(const NnParams& params, const std::vector<Window>& windows, Gradient* grad);

/// Input normalization from the training ranges; the output record reuses the
/// state channels so the recursion stays on one scale.
void fit_rnn_normalization(NnParams& params, const TrajectoryDataset& data,
                           const std::vector<EpisodeRange>& ranges);

TrainResult train_rnn_horizon(const TrajectoryDataset& data, const TrajectorySplit& split, int horizon,
                              const HyperParams& hp, std::uint64_t seed);

struct ChannelErrors {
  double nox_mae = 0;
  double soot_mae = 0;
  double mse = 0;
  std::size_t count = 0;
};

struct EvalReport {
  ChannelErrors overall;
  std::map<Provenance, ChannelErrors> by_provenance;
};

/// Physical-unit MAE and normalized MSE on the test split.
EvalReport evaluate_model(const NnParams& params, const Dataset& data);

}  // namespace dempc
