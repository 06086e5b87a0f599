#pragma once

#include "fillup/common.hpp"
#include "fillup/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fillup::learn {

enum class Activation { identity, relu, silu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Values cached by a forward pass for the matching backward pass.
struct MlpTape {
  std::vector<Matrix> inputs;    // input to each layer
  std::vector<Matrix> preacts;   // W x + b of each layer
};

/// Fully connected network. Samples are columns. All weights and biases live
/// in one flat vector; layer l stores W_l (out x in, column-major) then b_l.
class Mlp {
 public:
  Mlp() = default;
  /// `widths` has one more entry than `activations`.
  Mlp(std::vector<int> widths, std::vector<Activation> activations);

  /// Weights ~ N(0, gain^2 / fan_in), biases zero.
  void init(Rng& rng, double gain = 1.0);

  Matrix forward(const Matrix& input) const;
  Matrix forward(const Matrix& input, MlpTape& tape) const;

  /// Accumulates d(loss)/d(params) into `param_grad` and returns
  /// d(loss)/d(input). `upstream` is d(loss)/d(output).
  Matrix backward(const MlpTape& tape, const Matrix& upstream, Eigen::Ref<Vector> param_grad) const;

  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  std::size_t layer_count() const { return activations_.size(); }
  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& p);

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<Vector> bias(std::size_t layer);

 private:
  std::vector<int> widths_;
  std::vector<Activation> activations_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  long step = 0;
  Vector m;  // momentum buffer (sgd) or first moment (adam)
  Vector v;  // second moment (adam only)
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState sgd(std::size_t n, double momentum = 0.9, double weight_decay = 0.0);
  static OptimizerState adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

/// v = momentum * v + (g + wd * p);  p -= lr * v
void sgd_step(OptimizerState& state, Vector& params, const Vector& grads, double lr);
/// Bias-corrected Adam.
void adam_step(OptimizerState& state, Vector& params, const Vector& grads, double lr);
void optimizer_step(OptimizerState& state, Vector& params, const Vector& grads, double lr);

enum class ScheduleKind { constant, step_decay };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double initial = 0.1;
  double factor = 0.1;
  int period = 30;
  int warmup = 0;

  void validate() const;
};

/// During warmup lr ramps as initial*(epoch+1)/warmup; afterwards step decay
/// gives initial * factor^floor(epoch/period).
double lr_at(const LrSchedule& schedule, int epoch);

/// Loss evaluated at a parameter vector; fills `grad` when non-null.
using LossFn = std::function<double(const Vector& params, Vector* grad)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::vector<std::size_t> failing;
  std::size_t checked = 0;
};

/// Relative error used by grad_check: |a-n| / (max(|a|,|n|) + 1e-6).
double gradient_rel_error(double analytic, double numeric);

/// Compares the analytic gradient with central differences on up to
/// `max_coords` randomly chosen coordinates (all when 0).
GradCheckReport grad_check(const LossFn& loss, const Vector& params, double h, double tol, Rng& rng,
                           std::size_t max_coords = 0);

}  // namespace fillup::learn
