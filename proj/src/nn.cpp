#include "dempc/nn.hpp"

#include "dempc/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace dempc {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw IoError("unknown activation tag '" + s + "'");
}

Normalization Normalization::identity(Eigen::Index dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Eigen::VectorXd Normalization::normalize(const Eigen::VectorXd& physical) const {
  return (physical - offset).cwiseQuotient(scale);
}

Eigen::VectorXd Normalization::denormalize(const Eigen::VectorXd& normalized) const {
  return normalized.cwiseProduct(scale) + offset;
}

Eigen::Index NnParams::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
Eigen::Index NnParams::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

std::size_t NnParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void NnParams::validate() const {
  if (layers.empty()) throw StructuralError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.out_dim())
      throw StructuralError("layer " + std::to_string(i) + ": bias size does not match weight rows");
    if (i + 1 < layers.size() && layers[i + 1].in_dim() != l.out_dim())
      throw StructuralError("layer " + std::to_string(i) + " output does not chain into layer " +
                            std::to_string(i + 1));
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw NumericError("layer " + std::to_string(i) + " has non-finite parameters",
                         static_cast<std::ptrdiff_t>(i));
  }
  if (input_norm.offset.size() != input_dim() || input_norm.scale.size() != input_dim())
    throw StructuralError("input normalization does not match input dimension");
  if (output_norm.offset.size() != output_dim() || output_norm.scale.size() != output_dim())
    throw StructuralError("output normalization does not match output dimension");
  if ((input_norm.scale.array() == 0.0).any() || (output_norm.scale.array() == 0.0).any())
    throw StructuralError("normalization scale must be nonzero");
}

NnParams init_params(Eigen::Index input_dim, std::span<const LayerSpec> specs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NnParams p;
  Eigen::Index fan_in = input_dim;
  for (const auto& spec : specs) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer l;
    l.weight.resize(spec.out_dim, fan_in);
    l.bias.resize(spec.out_dim);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = dist(rng);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = dist(rng);
    l.activation = spec.activation;
    p.layers.push_back(std::move(l));
    fan_in = spec.out_dim;
  }
  p.input_norm = Normalization::identity(input_dim);
  p.output_norm = Normalization::identity(fan_in);
  return p;
}

std::vector<LayerSpec> fnn_architecture() {
  return {{32, Activation::Relu}, {32, Activation::Relu}, {16, Activation::Relu}, {2, Activation::Relu}};
}

std::vector<LayerSpec> rnn_architecture() {
  return {{15, Activation::Tanh}, {5, Activation::Tanh}, {2, Activation::Identity}};
}

// ---------------------------------------------------------------------------

Eigen::VectorXd FnnInput::to_vector() const {
  Eigen::VectorXd v(kFnnInputDim);
  v << injection_pressure, main_injection_timing, main_injection_fuel_rate, engine_torque,
      engine_speed, intake_manifold_pressure, exhaust_manifold_pressure, mass_air_flow,
      egr_position, vgt_position;
  return v;
}

FnnInput FnnInput::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != kFnnInputDim) throw StructuralError("FnnInput needs 10 channels");
  return {v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8), v(9)};
}

const std::vector<std::string>& FnnInput::channel_names() {
  static const std::vector<std::string> names = {
      "injection_pressure_bar", "main_injection_timing_deg", "main_injection_fuel_mg",
      "engine_torque_nm",       "engine_speed_rpm",          "p_im_kpa",
      "p_ex_kpa",               "mass_air_flow_kgh",         "egr_position_pct",
      "vgt_position_pct"};
  return names;
}

// ---------------------------------------------------------------------------

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    case Activation::Identity: return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z and activation y.
double activate_prime(Activation a, double z, double y) {
  switch (a) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

}  // namespace

ForwardTrace forward_trace(const NnParams& params, const Eigen::VectorXd& input) {
  if (params.layers.empty()) throw StructuralError("network has no layers");
  if (input.size() != params.input_dim())
    throw StructuralError("input has " + std::to_string(input.size()) + " entries, network expects " +
                          std::to_string(params.input_dim()));
  if (!input.allFinite()) throw NumericError("non-finite network input", 0);
  ForwardTrace t;
  t.activations.reserve(params.layers.size() + 1);
  t.pre_activations.reserve(params.layers.size());
  t.activations.push_back(input);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (l.in_dim() != t.activations.back().size())
      throw StructuralError("layer " + std::to_string(i) + " does not chain");
    Eigen::VectorXd z = l.weight * t.activations.back() + l.bias;
    Eigen::VectorXd y = z.unaryExpr([&](double v) { return activate(l.activation, v); });
    if (!y.allFinite())
      throw NumericError("non-finite activation in layer " + std::to_string(i),
                         static_cast<std::ptrdiff_t>(i));
    t.pre_activations.push_back(std::move(z));
    t.activations.push_back(std::move(y));
  }
  return t;
}

Eigen::VectorXd forward(const NnParams& params, const Eigen::VectorXd& input) {
  return forward_trace(params, input).output();
}

Gradient Gradient::zeros_like(const NnParams& params) {
  Gradient g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  g.input = Eigen::VectorXd::Zero(params.input_dim());
  return g;
}

void Gradient::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  input.setZero();
}

void Gradient::axpy(double alpha, const Gradient& other) {
  if (other.layers.size() != layers.size()) throw StructuralError("gradient shapes differ");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols())
      throw StructuralError("gradient shapes differ at layer " + std::to_string(i));
    layers[i].weight += alpha * other.layers[i].weight;
    layers[i].bias += alpha * other.layers[i].bias;
  }
  if (input.size() == other.input.size()) input += alpha * other.input;
}

void Gradient::scale(double alpha) {
  for (auto& l : layers) {
    l.weight *= alpha;
    l.bias *= alpha;
  }
  input *= alpha;
}

bool Gradient::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return input.allFinite();
}

double Gradient::max_abs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    if (l.weight.size()) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
    if (l.bias.size()) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

Eigen::VectorXd backprop_accumulate(const NnParams& params, const ForwardTrace& trace,
                                    const Eigen::VectorXd& output_grad, Gradient& grad,
                                    double weight) {
  if (output_grad.size() != params.output_dim())
    throw StructuralError("output_grad has " + std::to_string(output_grad.size()) +
                          " entries, network has " + std::to_string(params.output_dim()) + " outputs");
  if (grad.layers.size() != params.layers.size())
    throw StructuralError("gradient is not shaped like the network");
  Eigen::VectorXd upstream = output_grad;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& l = params.layers[k];
    const auto& z = trace.pre_activations[k];
    const auto& y = trace.activations[k + 1];
    Eigen::VectorXd delta(z.size());
    for (Eigen::Index r = 0; r < z.size(); ++r)
      delta(r) = upstream(r) * activate_prime(l.activation, z(r), y(r));
    grad.layers[k].weight.noalias() += weight * delta * trace.activations[k].transpose();
    grad.layers[k].bias += weight * delta;
    upstream = l.weight.transpose() * delta;
  }
  if (grad.input.size() == upstream.size()) grad.input += weight * upstream;
  return upstream;
}

Gradient backprop(const NnParams& params, const Eigen::VectorXd& input,
                  const Eigen::VectorXd& output_grad) {
  const auto trace = forward_trace(params, input);
  Gradient g = Gradient::zeros_like(params);
  backprop_accumulate(params, trace, output_grad, g);
  return g;
}

Eigen::MatrixXd input_jacobian(const NnParams& params, const Eigen::VectorXd& input) {
  const auto trace = forward_trace(params, input);
  // Forward-mode product of the layer Jacobians.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(input.size(), input.size());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    Eigen::MatrixXd next = l.weight * jac;
    for (Eigen::Index r = 0; r < next.rows(); ++r)
      next.row(r) *= activate_prime(l.activation, trace.pre_activations[k](r),
                                    trace.activations[k + 1](r));
    jac = std::move(next);
  }
  return jac;
}

// ---------------------------------------------------------------------------

EmissionsState fnn_forward(const NnParams& params, const FnnInput& input) {
  if (params.input_dim() != kFnnInputDim || params.output_dim() != kStateDim)
    throw StructuralError("fnn_forward needs a 10-input, 2-output network");
  const Eigen::VectorXd y = forward(params, params.input_norm.normalize(input.to_vector()));
  return EmissionsState::from_vector(params.output_norm.denormalize(y));
}

namespace {

Eigen::VectorXd rnn_physical_input(const EmissionsState& x, const RnnInput& u) {
  Eigen::VectorXd v(kRnnInputDim);
  v << x.nox, x.soot, u.p_im, u.chi_egr, u.n_e, u.w_inj;
  return v;
}

void check_rnn(const NnParams& params) {
  if (params.input_dim() != kRnnInputDim || params.output_dim() != kStateDim)
    throw StructuralError("rnn_step needs a 6-input, 2-output network");
}

}  // namespace

EmissionsState rnn_step(const NnParams& params, const EmissionsState& x, const RnnInput& u) {
  check_rnn(params);
  const Eigen::VectorXd y = forward(params, params.input_norm.normalize(rnn_physical_input(x, u)));
  return EmissionsState::from_vector(params.output_norm.denormalize(y));
}

StepJacobian rnn_step_jacobian(const NnParams& params, const EmissionsState& x, const RnnInput& u) {
  check_rnn(params);
  const Eigen::VectorXd z = params.input_norm.normalize(rnn_physical_input(x, u));
  const auto trace = forward_trace(params, z);
  StepJacobian out;
  out.next = EmissionsState::from_vector(params.output_norm.denormalize(trace.output()));
  // One reverse pass per output channel; chain rule through both normalizations.
  Gradient scratch = Gradient::zeros_like(params);
  Eigen::Matrix<double, 2, 6> phys;
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd seed = Eigen::VectorXd::Zero(2);
    seed(c) = params.output_norm.scale(c);
    const Eigen::VectorXd dz = backprop_accumulate(params, trace, seed, scratch, 0.0);
    phys.row(c) = dz.cwiseQuotient(params.input_norm.scale).transpose();
  }
  out.d_state = phys.leftCols<2>();
  out.d_input = phys.rightCols<4>();
  return out;
}

HorizonSensitivity rnn_horizon_jacobians(const NnParams& params, const EmissionsState& x0,
                                         std::span<const RnnInput> inputs) {
  if (inputs.empty()) throw DomainError("rnn_horizon_jacobians needs N >= 1");
  const std::size_t n = inputs.size();
  HorizonSensitivity s;
  s.states.reserve(n);
  s.d_input.resize(n);
  s.d_initial.reserve(n);
  EmissionsState x = x0;
  Eigen::Matrix2d to_initial = Eigen::Matrix2d::Identity();
  for (std::size_t j = 0; j < n; ++j) {
    StepJacobian step;
    try {
      step = rnn_step_jacobian(params, x, inputs[j]);
    } catch (const NumericError& e) {
      throw NumericError("non-finite propagation at horizon step " + std::to_string(j) + ": " +
                             e.what(),
                         static_cast<std::ptrdiff_t>(j));
    }
    if (!std::isfinite(step.next.nox) || !std::isfinite(step.next.soot))
      throw NumericError("non-finite state at horizon step " + std::to_string(j),
                         static_cast<std::ptrdiff_t>(j));
    auto& row = s.d_input[j];
    row.reserve(j + 1);
    for (std::size_t i = 0; i < j; ++i) row.push_back(step.d_state * s.d_input[j - 1][i]);
    row.push_back(step.d_input);
    to_initial = step.d_state * to_initial;
    s.d_initial.push_back(to_initial);
    s.states.push_back(step.next);
    x = step.next;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Text persistence. Doubles use the shortest round-trip representation so that
// save -> load reproduces every bit.

namespace {

void write_double(std::ostream& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

void write_vector(std::ostream& out, const char* tag, const Eigen::VectorXd& v) {
  out << tag;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out << ' ';
    write_double(out, v(i));
  }
  out << '\n';
}

double read_double(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw IoError("weights file truncated");
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw IoError("bad number '" + tok + "' in weights file");
  return v;
}

void expect(std::istream& in, const std::string& tag) {
  std::string tok;
  if (!(in >> tok) || tok != tag) throw IoError("weights file: expected '" + tag + "', got '" + tok + "'");
}

Eigen::VectorXd read_vector(std::istream& in, const std::string& tag, Eigen::Index n) {
  expect(in, tag);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = read_double(in);
  return v;
}

}  // namespace

void save_params(const NnParams& params, std::ostream& out) {
  params.validate();
  out << "dempc-nn " << kWeightsFormatVersion << '\n';
  out << "input_dim " << params.input_dim() << '\n';
  out << "output_dim " << params.output_dim() << '\n';
  out << "layers " << params.layers.size() << '\n';
  for (const auto& l : params.layers) {
    out << "layer " << l.out_dim() << ' ' << l.in_dim() << ' ' << to_string(l.activation) << '\n';
    out << "W";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        out << ' ';
        write_double(out, l.weight(r, c));
      }
    out << '\n';
    write_vector(out, "b", l.bias);
  }
  write_vector(out, "input_offset", params.input_norm.offset);
  write_vector(out, "input_scale", params.input_norm.scale);
  write_vector(out, "output_offset", params.output_norm.offset);
  write_vector(out, "output_scale", params.output_norm.scale);
  out << "end\n";
}

NnParams load_params(std::istream& in) {
  expect(in, "dempc-nn");
  int version = 0;
  if (!(in >> version) || version != kWeightsFormatVersion)
    throw IoError("unsupported weights format version " + std::to_string(version));
  Eigen::Index in_dim = 0, out_dim = 0;
  std::size_t n_layers = 0;
  expect(in, "input_dim");
  in >> in_dim;
  expect(in, "output_dim");
  in >> out_dim;
  expect(in, "layers");
  in >> n_layers;
  if (!in || n_layers == 0 || n_layers > 64) throw IoError("weights file: bad header");
  NnParams p;
  for (std::size_t k = 0; k < n_layers; ++k) {
    expect(in, "layer");
    Eigen::Index rows = 0, cols = 0;
    std::string act;
    in >> rows >> cols >> act;
    if (!in || rows <= 0 || cols <= 0) throw IoError("weights file: bad layer header");
    Layer l;
    l.activation = activation_from_string(act);
    expect(in, "W");
    l.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = read_double(in);
    l.bias = read_vector(in, "b", rows);
    p.layers.push_back(std::move(l));
  }
  p.input_norm.offset = read_vector(in, "input_offset", in_dim);
  p.input_norm.scale = read_vector(in, "input_scale", in_dim);
  p.output_norm.offset = read_vector(in, "output_offset", out_dim);
  p.output_norm.scale = read_vector(in, "output_scale", out_dim);
  expect(in, "end");
  p.validate();
  if (p.input_dim() != in_dim || p.output_dim() != out_dim)
    throw IoError("weights file: header dims disagree with layers");
  return p;
}

void save_params(const NnParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  save_params(params, out);
}

NnParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return load_params(in);
}

}  // namespace dempc
