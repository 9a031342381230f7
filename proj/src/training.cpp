#include "dempc/training.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <exception>
#include <random>
#include <thread>

namespace dempc {

void HyperParams::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw DomainError("decay_factor must lie in (0, 1]");
  if (decay_period < 1) throw DomainError("decay_period must be >= 1");
  if (epochs < 0) throw DomainError("epochs must be >= 0");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::SteadyState: return "steady_state";
    case Provenance::Transient: return "transient";
    case Provenance::Synthetic: return "synthetic";
  }
  return "synthetic";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "steady_state") return Provenance::SteadyState;
  if (s == "transient") return Provenance::Transient;
  if (s == "synthetic") return Provenance::Synthetic;
  throw IoError("unknown provenance '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw IoError("unknown split '" + s + "'");
}

void Dataset::validate() const {
  if (targets.cols() != inputs.cols()) throw StructuralError("dataset inputs and targets differ in length");
  if (provenance.size() != static_cast<std::size_t>(size()) || split.size() != static_cast<std::size_t>(size()))
    throw StructuralError("dataset tag columns differ in length from the records");
}

Dataset Dataset::select(const std::vector<Eigen::Index>& cols) const {
  Dataset out;
  out.inputs.resize(input_dim(), static_cast<Eigen::Index>(cols.size()));
  out.targets.resize(output_dim(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(cols[k]);
    out.targets.col(static_cast<Eigen::Index>(k)) = targets.col(cols[k]);
    out.provenance.push_back(provenance[static_cast<std::size_t>(cols[k])]);
    out.split.push_back(split[static_cast<std::size_t>(cols[k])]);
  }
  return out;
}

Dataset Dataset::subset(Split s) const {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index k = 0; k < size(); ++k)
    if (split[static_cast<std::size_t>(k)] == s) cols.push_back(k);
  return select(cols);
}

std::size_t Dataset::count(Split s) const { return static_cast<std::size_t>(std::count(split.begin(), split.end(), s)); }

void TrajectoryDataset::validate() const {
  for (const auto& e : episodes) {
    if (e.inputs.size() != e.states.size())
      throw StructuralError("episode '" + e.name + "' has mismatched input and state lengths");
    if (!(e.dt > 0)) throw DomainError("episode '" + e.name + "' has a non-positive sample period");
  }
}

// ---------------------------------------------------------------------------
// Batched network arithmetic: one column per sample.

namespace {

struct BatchTrace {
  std::vector<Eigen::MatrixXd> act;  // [0] = input
  std::vector<Eigen::MatrixXd> pre;
};

void batch_forward(const NnParams& p, const Eigen::MatrixXd& x, BatchTrace& t) {
  t.act.resize(p.layers.size() + 1);
  t.pre.resize(p.layers.size());
  t.act[0] = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const Layer& l = p.layers[i];
    t.pre[i].noalias() = l.weight * t.act[i];
    t.pre[i].colwise() += l.bias;
    switch (l.activation) {
      case Activation::Relu: t.act[i + 1] = t.pre[i].cwiseMax(0.0); break;
      case Activation::Tanh: t.act[i + 1] = t.pre[i].array().tanh().matrix(); break;
      case Activation::Identity: t.act[i + 1] = t.pre[i]; break;
    }
  }
}

// Accumulates parameter partials of sum_b <y_b, dy_b>; returns d/dx.
Eigen::MatrixXd batch_backward(const NnParams& p, const BatchTrace& t, const Eigen::MatrixXd& dy, Gradient& g) {
  Eigen::MatrixXd up = dy;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const Layer& l = p.layers[k];
    switch (l.activation) {
      case Activation::Relu: up = (t.pre[k].array() > 0.0).select(up, 0.0); break;
      case Activation::Tanh: up = up.cwiseProduct((1.0 - t.act[k + 1].array().square()).matrix()); break;
      case Activation::Identity: break;
    }
    g.layers[k].weight.noalias() += up * t.act[k].transpose();
    g.layers[k].bias += up.rowwise().sum();
    up = l.weight.transpose() * up;
  }
  return up;
}

Eigen::MatrixXd normalize_cols(const Normalization& n, const Eigen::MatrixXd& x) {
  return (x.colwise() - n.offset).array().colwise() / n.scale.array();
}

bool params_finite(const NnParams& p) {
  for (const auto& l : p.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

void check_dims(const NnParams& params, const Dataset& data) {
  data.validate();
  if (params.input_dim() != data.input_dim() || params.output_dim() != data.output_dim())
    throw StructuralError("network dimensions do not match the dataset records");
}

}  // namespace

double mse_loss(const NnParams& params, const Dataset& data) {
  if (data.empty()) throw DomainError("mse_loss on an empty dataset");
  check_dims(params, data);
  BatchTrace t;
  batch_forward(params, normalize_cols(params.input_norm, data.inputs), t);
  Eigen::MatrixXd err = t.act.back() - normalize_cols(params.output_norm, data.targets);
  return err.squaredNorm() / static_cast<double>(data.size());
}

void sgd_momentum_step(NnParams& params, const Gradient& grad, Gradient& velocity, double lr, double momentum) {
  if (grad.layers.size() != params.layers.size() || velocity.layers.size() != params.layers.size())
    throw StructuralError("gradient, velocity and parameters are not congruent");
  if (!grad.all_finite()) throw NumericError("non-finite gradient in sgd_momentum_step");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& v = velocity.layers[i];
    const auto& g = grad.layers[i];
    if (g.weight.rows() != params.layers[i].weight.rows() || g.weight.cols() != params.layers[i].weight.cols() ||
        v.weight.rows() != g.weight.rows() || v.weight.cols() != g.weight.cols())
      throw StructuralError("gradient shape differs from layer " + std::to_string(i));
    v.weight = g.weight + momentum * v.weight;
    v.bias = g.bias + momentum * v.bias;
    params.layers[i].weight -= lr * v.weight;
    params.layers[i].bias -= lr * v.bias;
  }
}

void sgd_momentum_step(NnParams& params, const Gradient& grad, Gradient& velocity, const HyperParams& hp) {
  sgd_momentum_step(params, grad, velocity, hp.learning_rate, hp.momentum);
}

double apply_lr_decay(const HyperParams& hp, int epoch) {
  if (epoch < 0) throw DomainError("epoch must be >= 0");
  return hp.learning_rate * std::pow(hp.decay_factor, epoch / hp.decay_period);
}

void fit_fnn_normalization(NnParams& params, const Dataset& train) {
  if (train.empty()) throw DomainError("cannot fit a normalization on an empty training split");
  const double n = static_cast<double>(train.size());
  auto fit = [n](const Eigen::MatrixXd& x, bool centered) {
    Normalization norm;
    Eigen::VectorXd mean = x.rowwise().sum() / n;
    Eigen::VectorXd var = ((x.colwise() - mean).array().square().rowwise().sum() / n).matrix();
    norm.offset = centered ? mean : Eigen::VectorXd::Zero(x.rows());
    norm.scale = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });
    return norm;
  };
  params.input_norm = fit(train.inputs, true);
  params.output_norm = fit(train.targets, false);
}

// ---------------------------------------------------------------------------

TrainResult train_fnn(const Dataset& data, const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  data.validate();
  Dataset train = data.subset(Split::Train);
  Dataset val = data.subset(Split::Validation);
  if (train.empty()) throw DomainError("train_fnn needs a non-empty training split");
  if (val.empty()) throw DomainError("train_fnn needs a non-empty validation split");
  if (data.input_dim() != kFnnInputDim || data.output_dim() != kStateDim)
    throw StructuralError("FNN dataset must have 10 inputs and 2 targets");

  TrainResult r;
  auto arch = fnn_architecture();
  r.params = init_params(kFnnInputDim, arch, seed);
  fit_fnn_normalization(r.params, train);

  const Eigen::MatrixXd x = normalize_cols(r.params.input_norm, train.inputs);
  const Eigen::MatrixXd y = normalize_cols(r.params.output_norm, train.targets);
  const Eigen::Index n = train.size();
  // Output ReLUs start in their active region.
  r.params.layers.back().bias = y.rowwise().mean();

  r.curve.push_back({0, mse_loss(r.params, train), mse_loss(r.params, val), apply_lr_decay(hp, 0)});

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Gradient velocity = Gradient::zeros_like(r.params);
  Gradient grad = Gradient::zeros_like(r.params);
  BatchTrace trace;
  Eigen::MatrixXd xb, yb;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const NnParams checkpoint = r.params;
    const double lr = apply_lr_decay(hp, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    bool bad = false;
    for (Eigen::Index start = 0; start < n && !bad; start += hp.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(hp.batch_size, n - start);
      xb.resize(x.rows(), b);
      yb.resize(y.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) {
        xb.col(k) = x.col(order[static_cast<std::size_t>(start + k)]);
        yb.col(k) = y.col(order[static_cast<std::size_t>(start + k)]);
      }
      batch_forward(r.params, xb, trace);
      Eigen::MatrixXd dy = (2.0 / static_cast<double>(b)) * (trace.act.back() - yb);
      grad.set_zero();
      batch_backward(r.params, trace, dy, grad);
      if (!grad.all_finite()) {
        bad = true;
        break;
      }
      sgd_momentum_step(r.params, grad, velocity, lr, hp.momentum);
      bad = !params_finite(r.params);
    }
    double train_loss = bad ? std::numeric_limits<double>::infinity() : mse_loss(r.params, train);
    if (bad || !std::isfinite(train_loss)) {
      r.params = checkpoint;
      r.diverged = true;
      break;
    }
    r.curve.push_back({epoch + 1, train_loss, mse_loss(r.params, val), lr});
  }
  return r;
}

GridSearchReport grid_search(const std::vector<std::pair<double, double>>& grid, const Dataset& data,
                             HyperParams base, int epochs_per_cell, std::uint64_t seed, unsigned threads) {
  if (grid.empty()) throw DomainError("grid_search needs at least one cell");
  if (epochs_per_cell < 1) throw DomainError("epochs_per_cell must be >= 1");
  GridSearchReport report;
  report.cells.resize(grid.size());
  const Dataset val = data.subset(Split::Validation);

  auto run_cell = [&](std::size_t i) {
    GridCell cell{grid[i].first, grid[i].second, std::numeric_limits<double>::infinity()};
    try {
      HyperParams hp = base;
      hp.momentum = cell.momentum;
      hp.learning_rate = cell.learning_rate;
      hp.epochs = epochs_per_cell;
      TrainResult tr = train_fnn(data, hp, seed);
      if (!tr.diverged) {
        double loss = mse_loss(tr.params, val);
        if (std::isfinite(loss)) cell.val_loss = loss;
      }
    } catch (const NumericError&) {
    }
    report.cells[i] = cell;
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, grid.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_cell(i);
  } else {
    std::mutex m;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(m);
            if (next >= grid.size() || failure) return;
            i = next++;
          }
          try {
            run_cell(i);
          } catch (...) {
            std::lock_guard lock(m);
            failure = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  auto better = [](const GridCell& a, const GridCell& b) {
    if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    if (a.learning_rate != b.learning_rate) return a.learning_rate < b.learning_rate;
    return a.momentum < b.momentum;
  };
  for (std::size_t i = 1; i < report.cells.size(); ++i)
    if (better(report.cells[i], report.cells[report.best])) report.best = i;
  return report;
}

// ---------------------------------------------------------------------------

Dataset merge_emissions_datasets(const Dataset& steady, const Dataset& transient, double soot_cutoff) {
  steady.validate();
  transient.validate();
  if (steady.input_dim() != transient.input_dim() || steady.output_dim() != transient.output_dim())
    throw StructuralError("steady-state and transient datasets have different schemas");
  if (steady.input_dim() != kFnnInputDim || steady.output_dim() != kStateDim)
    throw StructuralError("emissions datasets must have 10 inputs and 2 targets");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < steady.size(); ++k)
    if (steady.targets(1, k) <= soot_cutoff) keep.push_back(k);
  Dataset kept = steady.select(keep);
  Dataset out;
  out.inputs.resize(transient.input_dim(), transient.size() + kept.size());
  out.targets.resize(transient.output_dim(), transient.size() + kept.size());
  out.inputs << transient.inputs, kept.inputs;
  out.targets << transient.targets, kept.targets;
  out.provenance = transient.provenance;
  out.provenance.insert(out.provenance.end(), kept.provenance.begin(), kept.provenance.end());
  out.split = transient.split;
  out.split.insert(out.split.end(), kept.split.begin(), kept.split.end());
  return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& f) {
  for (double v : f)
    if (!(v >= 0.0)) throw DomainError("split fractions must be non-negative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw DomainError("split fractions must sum to 1");
  auto train = static_cast<std::size_t>(std::llround(f[0] * static_cast<double>(n)));
  auto val = static_cast<std::size_t>(std::llround(f[1] * static_cast<double>(n)));
  train = std::min(train, n);
  val = std::min(val, n - train);
  return {train, val, n - train - val};
}

Dataset split_dataset(const Dataset& data, const std::array<double, 3>& fractions, std::uint64_t seed) {
  data.validate();
  auto counts = split_counts(static_cast<std::size_t>(data.size()), fractions);
  std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out = data;
  for (std::size_t k = 0; k < order.size(); ++k)
    out.split[order[k]] = k < counts[0] ? Split::Train : k < counts[0] + counts[1] ? Split::Validation : Split::Test;
  return out;
}

TrajectorySplit split_trajectories(const TrajectoryDataset& data, const std::array<double, 3>& fractions) {
  data.validate();
  TrajectorySplit out;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    auto c = split_counts(data.episodes[e].size(), fractions);
    std::size_t a = c[0], b = c[0] + c[1], n = data.episodes[e].size();
    if (a > 0) out.train.push_back({e, 0, a});
    if (b > a) out.validation.push_back({e, a, b});
    if (n > b) out.test.push_back({e, b, n});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Window> make_windows(const TrajectoryDataset& data, const std::vector<EpisodeRange>& ranges,
                                 int horizon, int* skipped) {
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  std::vector<Window> out;
  int skip = 0;
  const auto h = static_cast<std::size_t>(horizon);
  for (const auto& r : ranges) {
    const Episode& ep = data.episodes.at(r.episode);
    if (r.end > ep.size() || r.begin > r.end) throw DomainError("episode range out of bounds");
    if (r.end - r.begin < h + 1) {
      ++skip;
      continue;
    }
    for (std::size_t t = r.begin; t + h < r.end; ++t) {
      Window w;
      w.x0 = ep.states[t];
      w.inputs.assign(ep.inputs.begin() + static_cast<std::ptrdiff_t>(t),
                      ep.inputs.begin() + static_cast<std::ptrdiff_t>(t + h));
      w.targets.assign(ep.states.begin() + static_cast<std::ptrdiff_t>(t + 1),
                       ep.states.begin() + static_cast<std::ptrdiff_t>(t + h + 1));
      out.push_back(std::move(w));
    }
  }
  if (skipped) *skipped = skip;
  return out;
}

namespace {

// Windows packed into normalized matrices for batched unrolling.
struct PackedWindows {
  Eigen::MatrixXd x0;                    // 2 x B
  std::vector<Eigen::MatrixXd> inputs;   // N of 4 x B
  std::vector<Eigen::MatrixXd> targets;  // N of 2 x B
};

PackedWindows pack(const NnParams& p, const std::vector<Window>& windows, std::size_t begin, std::size_t end) {
  const auto b = static_cast<Eigen::Index>(end - begin);
  const std::size_t h = windows[begin].inputs.size();
  PackedWindows pw;
  pw.x0.resize(2, b);
  pw.inputs.assign(h, Eigen::MatrixXd(4, b));
  pw.targets.assign(h, Eigen::MatrixXd(2, b));
  const Eigen::Vector2d xo = p.input_norm.offset.head<2>(), xs = p.input_norm.scale.head<2>();
  const Eigen::Vector4d uo = p.input_norm.offset.tail<4>(), us = p.input_norm.scale.tail<4>();
  for (Eigen::Index c = 0; c < b; ++c) {
    const Window& w = windows[begin + static_cast<std::size_t>(c)];
    if (w.inputs.size() != h || w.targets.size() != h) throw StructuralError("windows differ in horizon");
    pw.x0.col(c) = (w.x0.to_vector() - xo).cwiseQuotient(xs);
    for (std::size_t j = 0; j < h; ++j) {
      pw.inputs[j].col(c) = (w.inputs[j].to_vector() - uo).cwiseQuotient(us);
      pw.targets[j].col(c) = (w.targets[j].to_vector() - xo).cwiseQuotient(xs);
    }
  }
  return pw;
}

// Sum over windows of (1/N) sum_j ||x_hat_j - x_j||^2; accumulates the
// gradient of that sum scaled by `gscale`.
double unroll(const NnParams& p, const PackedWindows& pw, Gradient* grad, double gscale) {
  const std::size_t h = pw.inputs.size();
  const Eigen::Index b = pw.x0.cols();
  std::vector<BatchTrace> traces(h);
  Eigen::MatrixXd state = pw.x0;
  Eigen::MatrixXd in(kRnnInputDim, b);
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> err(h);
  for (std::size_t j = 0; j < h; ++j) {
    in.topRows<2>() = state;
    in.bottomRows<4>() = pw.inputs[j];
    batch_forward(p, in, traces[j]);
    state = traces[j].act.back();
    err[j] = state - pw.targets[j];
    loss += err[j].squaredNorm();
  }
  loss /= static_cast<double>(h);
  if (grad) {
    const double c = 2.0 * gscale / static_cast<double>(h);
    Eigen::MatrixXd carry = Eigen::MatrixXd::Zero(2, b);
    for (std::size_t j = h; j-- > 0;) {
      Eigen::MatrixXd dy = c * err[j] + carry;
      Eigen::MatrixXd dx = batch_backward(p, traces[j], dy, *grad);
      carry = dx.topRows<2>();
    }
  }
  return loss;
}

void check_rnn_dims(const NnParams& p) {
  if (p.input_dim() != kRnnInputDim || p.output_dim() != kStateDim)
    throw StructuralError("RNN must map 6 inputs to 2 states");
}

}  // namespace

double rnn_window_loss_and_grad(const NnParams& params, const std::vector<Window>& windows, Gradient* grad) {
  check_rnn_dims(params);
  if (windows.empty()) throw DomainError("no training windows");
  const double inv = 1.0 / static_cast<double>(windows.size());
  if (grad) *grad = Gradient::zeros_like(params);
  double total = unroll(params, pack(params, windows, 0, windows.size()), grad, inv);
  return total * inv;
}

void fit_rnn_normalization(NnParams& params, const TrajectoryDataset& data,
                           const std::vector<EpisodeRange>& ranges) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kRnnInputDim), sq = Eigen::VectorXd::Zero(kRnnInputDim);
  double n = 0;
  for (const auto& r : ranges) {
    const Episode& ep = data.episodes.at(r.episode);
    for (std::size_t t = r.begin; t < r.end; ++t) {
      Eigen::VectorXd v(kRnnInputDim);
      v << ep.states[t].to_vector(), ep.inputs[t].to_vector();
      sum += v;
      sq += v.cwiseProduct(v);
      n += 1;
    }
  }
  if (n == 0) throw DomainError("cannot fit a normalization on an empty training slice");
  Eigen::VectorXd mean = sum / n;
  Eigen::VectorXd var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
  params.input_norm.offset = mean;
  params.input_norm.scale = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });
  params.output_norm.offset = params.input_norm.offset.head<2>();
  params.output_norm.scale = params.input_norm.scale.head<2>();
}

TrainResult train_rnn_horizon(const TrajectoryDataset& data, const TrajectorySplit& split, int horizon,
                              const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  data.validate();
  TrainResult r;
  auto arch = rnn_architecture();
  r.params = init_params(kRnnInputDim, arch, seed);
  fit_rnn_normalization(r.params, data, split.train);

  int skipped_train = 0, skipped_val = 0;
  std::vector<Window> train = make_windows(data, split.train, horizon, &skipped_train);
  std::vector<Window> val = make_windows(data, split.validation, horizon, &skipped_val);
  r.skipped_episodes = skipped_train + skipped_val;
  if (train.empty()) throw DomainError("no training windows: every episode is shorter than N + 1");

  auto val_loss = [&](const NnParams& p) {
    return val.empty() ? std::numeric_limits<double>::quiet_NaN() : rnn_window_loss_and_grad(p, val, nullptr);
  };
  r.curve.push_back({0, rnn_window_loss_and_grad(r.params, train, nullptr), val_loss(r.params), apply_lr_decay(hp, 0)});

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Window> shuffled(train.size());
  Gradient velocity = Gradient::zeros_like(r.params);
  Gradient grad = Gradient::zeros_like(r.params);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const NnParams checkpoint = r.params;
    const double lr = apply_lr_decay(hp, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) shuffled[k] = train[order[k]];
    bool bad = false;
    for (std::size_t start = 0; start < shuffled.size() && !bad; start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end = std::min(shuffled.size(), start + static_cast<std::size_t>(hp.batch_size));
      grad.set_zero();
      unroll(r.params, pack(r.params, shuffled, start, end), &grad, 1.0 / static_cast<double>(end - start));
      if (!grad.all_finite()) {
        bad = true;
        break;
      }
      sgd_momentum_step(r.params, grad, velocity, lr, hp.momentum);
      bad = !params_finite(r.params);
    }
    double loss = bad ? std::numeric_limits<double>::infinity() : rnn_window_loss_and_grad(r.params, train, nullptr);
    if (!std::isfinite(loss)) {
      r.params = checkpoint;
      r.diverged = true;
      break;
    }
    r.curve.push_back({epoch + 1, loss, val_loss(r.params), lr});
  }
  return r;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_model(const NnParams& params, const Dataset& data) {
  Dataset test = data.subset(Split::Test);
  if (test.empty()) throw DomainError("evaluate_model needs a non-empty test split");
  check_dims(params, test);
  BatchTrace t;
  batch_forward(params, normalize_cols(params.input_norm, test.inputs), t);
  const Eigen::MatrixXd& yn = t.act.back();
  Eigen::MatrixXd phys = (yn.array().colwise() * params.output_norm.scale.array()).matrix().colwise() +
                         params.output_norm.offset;
  Eigen::MatrixXd tn = normalize_cols(params.output_norm, test.targets);

  EvalReport rep;
  auto add = [](ChannelErrors& c, double dn, double ds, double sq) {
    c.nox_mae += std::abs(dn);
    c.soot_mae += std::abs(ds);
    c.mse += sq;
    c.count += 1;
  };
  for (Eigen::Index k = 0; k < test.size(); ++k) {
    double dn = phys(0, k) - test.targets(0, k);
    double ds = phys(1, k) - test.targets(1, k);
    double sq = (yn.col(k) - tn.col(k)).squaredNorm();
    add(rep.overall, dn, ds, sq);
    add(rep.by_provenance[test.provenance[static_cast<std::size_t>(k)]], dn, ds, sq);
  }
  auto finish = [](ChannelErrors& c) {
    c.nox_mae /= static_cast<double>(c.count);
    c.soot_mae /= static_cast<double>(c.count);
    c.mse /= static_cast<double>(c.count);
  };
  finish(rep.overall);
  for (auto& [p, c] : rep.by_provenance) finish(c);
  return rep;
}

}  // namespace dempc
