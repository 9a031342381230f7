#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dempc {

enum class Activation { Relu, Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::Identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Per-channel affine map: normalized = (physical - offset) / scale.
struct Normalization {
  Eigen::VectorXd offset;
  Eigen::VectorXd scale;

  static Normalization identity(Eigen::Index dim);
  Eigen::VectorXd normalize(const Eigen::VectorXd& physical) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& normalized) const;
  Eigen::Index dim() const { return offset.size(); }
};

/// Dense feed-forward stack plus the normalization record it was trained with.
/// The layers map normalized inputs to normalized outputs.
struct NnParams {
  std::vector<Layer> layers;
  Normalization input_norm;
  Normalization output_norm;

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::size_t parameter_count() const;

  /// Throws StructuralError if layers do not chain or normalization sizes
  /// disagree, NumericError if any entry is non-finite.
  void validate() const;
};

struct LayerSpec {
  Eigen::Index out_dim;
  Activation activation;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases from `seed`.
/// Normalizations start as identity.
NnParams init_params(Eigen::Index input_dim, std::span<const LayerSpec> layers, std::uint64_t seed);

// 10 -> 32 -> 32 -> 16 -> 2, ReLU on all four layers.
std::vector<LayerSpec> fnn_architecture();
// 6 -> 15 -> 5 -> 2, tanh on the hidden layers, identity output.
std::vector<LayerSpec> rnn_architecture();

inline constexpr Eigen::Index kFnnInputDim = 10;
inline constexpr Eigen::Index kRnnInputDim = 6;
inline constexpr Eigen::Index kStateDim = 2;

// ---------------------------------------------------------------------------
// Physical-unit records

struct FnnInput {
  double injection_pressure = 0;        // bar
  double main_injection_timing = 0;     // deg CA before TDC
  double main_injection_fuel_rate = 0;  // mg/stroke
  double engine_torque = 0;             // N m
  double engine_speed = 0;              // rpm
  double intake_manifold_pressure = 0;  // kPa
  double exhaust_manifold_pressure = 0; // kPa
  double mass_air_flow = 0;             // kg/h
  double egr_position = 0;              // % open
  double vgt_position = 0;              // % closed

  Eigen::VectorXd to_vector() const;
  static FnnInput from_vector(const Eigen::VectorXd& v);
  static const std::vector<std::string>& channel_names();
};

struct EmissionsState {
  double nox = 0;   // ppm
  double soot = 0;  // %

  Eigen::Vector2d to_vector() const { return {nox, soot}; }
  static EmissionsState from_vector(const Eigen::VectorXd& v) { return {v(0), v(1)}; }
  bool operator==(const EmissionsState&) const = default;
};

struct RnnInput {
  double p_im = 0;     // kPa
  double chi_egr = 0;  // fraction
  double n_e = 0;      // rpm
  double w_inj = 0;    // mg/stroke

  Eigen::Vector4d to_vector() const { return {p_im, chi_egr, n_e, w_inj}; }
  static RnnInput from_vector(const Eigen::VectorXd& v) { return {v(0), v(1), v(2), v(3)}; }
};

// ---------------------------------------------------------------------------
// Raw network arithmetic (normalized space)

/// Pre-activations and activations of every layer for one input.
struct ForwardTrace {
  std::vector<Eigen::VectorXd> activations;     // [0] = input, [i+1] = output of layer i
  std::vector<Eigen::VectorXd> pre_activations; // [i] = W_i a_i + b_i
  const Eigen::VectorXd& output() const { return activations.back(); }
};

ForwardTrace forward_trace(const NnParams& params, const Eigen::VectorXd& input);
Eigen::VectorXd forward(const NnParams& params, const Eigen::VectorXd& input);

struct LayerGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// Partials of a scalar function of the network output, shaped like NnParams.
struct Gradient {
  std::vector<LayerGradient> layers;
  Eigen::VectorXd input;

  static Gradient zeros_like(const NnParams& params);
  void set_zero();
  /// this += alpha * other
  void axpy(double alpha, const Gradient& other);
  void scale(double alpha);
  bool all_finite() const;
  double max_abs() const;
};

/// Reverse-mode partials of <output(input), output_grad> with respect to every
/// weight, bias and input entry. ReLU'(0) is taken as 0.
Gradient backprop(const NnParams& params, const Eigen::VectorXd& input,
                  const Eigen::VectorXd& output_grad);

/// Same as backprop but accumulates into `grad` (scaled by `weight`) using an
/// existing forward trace. Returns the input partials.
Eigen::VectorXd backprop_accumulate(const NnParams& params, const ForwardTrace& trace,
                                    const Eigen::VectorXd& output_grad, Gradient& grad,
                                    double weight = 1.0);

/// d output / d input (normalized space), output_dim x input_dim.
Eigen::MatrixXd input_jacobian(const NnParams& params, const Eigen::VectorXd& input);

// ---------------------------------------------------------------------------
// Physical-unit model evaluations

EmissionsState fnn_forward(const NnParams& params, const FnnInput& input);

/// x_{k+1} = f(x_k, u_k). Input order is [nox, soot, p_im, chi_egr, n_e, w_inj].
EmissionsState rnn_step(const NnParams& params, const EmissionsState& x, const RnnInput& u);

struct StepJacobian {
  EmissionsState next;
  Eigen::Matrix2d d_state;               // d x_{k+1} / d x_k
  Eigen::Matrix<double, 2, 4> d_input;   // d x_{k+1} / d u_k
};

StepJacobian rnn_step_jacobian(const NnParams& params, const EmissionsState& x, const RnnInput& u);

struct HorizonSensitivity {
  /// states[j] = x_{j+1}, j = 0..N-1
  std::vector<EmissionsState> states;
  /// d_input[j][i] = d x_{j+1} / d u_i for i <= j (zero blocks are not stored).
  std::vector<std::vector<Eigen::Matrix<double, 2, 4>>> d_input;
  /// d_initial[j] = d x_{j+1} / d x_0
  std::vector<Eigen::Matrix2d> d_initial;
};

/// Rolls the model N = inputs.size() steps from x0 and returns the trajectory
/// plus every lower-triangular sensitivity block.
HorizonSensitivity rnn_horizon_jacobians(const NnParams& params, const EmissionsState& x0,
                                         std::span<const RnnInput> inputs);

// ---------------------------------------------------------------------------
// Persistence (see docs/weights-format.md)

inline constexpr int kWeightsFormatVersion = 1;

void save_params(const NnParams& params, std::ostream& out);
NnParams load_params(std::istream& in);
void save_params(const NnParams& params, const std::string& path);
NnParams load_params(const std::string& path);

}  // namespace dempc
