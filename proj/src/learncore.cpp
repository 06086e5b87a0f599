#include "fillup/learncore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fillup::learn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw FormatError("unknown activation " + s);
}

namespace {

void apply(Activation a, const Matrix& pre, Matrix& out) {
  switch (a) {
    case Activation::identity: out = pre; break;
    case Activation::relu: out = pre.cwiseMax(0.0); break;
    case Activation::silu: out = pre.array() / (1.0 + (-pre.array()).exp()); break;
  }
}

// upstream * act'(pre), in place
void apply_derivative(Activation a, const Matrix& pre, Matrix& delta) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: delta = (pre.array() > 0.0).select(delta, 0.0); break;
    case Activation::silu: {
      Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
      delta.array() *= s * (1.0 + pre.array() * (1.0 - s));
      break;
    }
  }
}

}  // namespace

Mlp::Mlp(std::vector<int> widths, std::vector<Activation> activations)
    : widths_(std::move(widths)), activations_(std::move(activations)) {
  require(widths_.size() >= 2, "Mlp: need at least input and output widths");
  require(activations_.size() + 1 == widths_.size(), "Mlp: one activation per layer");
  for (int w : widths_) require(w > 0, "Mlp: widths must be positive");
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(off));
}

void Mlp::init(Rng& rng, double gain) {
  for (std::size_t l = 0; l < layer_count(); ++l) {
    auto w = weight(l);
    double scale = gain / std::sqrt(static_cast<double>(widths_[l]));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
    bias(l).setZero();
  }
}

Eigen::Map<const Matrix> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}
Eigen::Map<const Vector> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]};
}
Eigen::Map<Matrix> Mlp::weight(std::size_t l) {
  return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}
Eigen::Map<Vector> Mlp::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]};
}

void Mlp::set_parameters(const Vector& p) {
  require(p.size() == params_.size(), "Mlp::set_parameters: size mismatch");
  params_ = p;
}

Matrix Mlp::forward(const Matrix& input) const {
  if (input.rows() != input_width()) throw ConfigError("Mlp::forward: input width mismatch");
  Matrix h = input;
  Matrix pre;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    pre = weight(l) * h;
    pre.colwise() += bias(l);
    apply(activations_[l], pre, h);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& input, MlpTape& tape) const {
  if (input.rows() != input_width()) throw ConfigError("Mlp::forward: input width mismatch");
  tape.inputs.resize(layer_count());
  tape.preacts.resize(layer_count());
  Matrix h = input;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    tape.inputs[l] = h;
    Matrix& pre = tape.preacts[l];
    pre = weight(l) * h;
    pre.colwise() += bias(l);
    apply(activations_[l], pre, h);
  }
  return h;
}

Matrix Mlp::backward(const MlpTape& tape, const Matrix& upstream, Eigen::Ref<Vector> param_grad) const {
  if (tape.inputs.size() != layer_count()) throw ConfigError("Mlp::backward: tape does not match network");
  if (upstream.rows() != output_width() || upstream.cols() != tape.inputs.front().cols())
    throw ConfigError("Mlp::backward: upstream gradient shape mismatch");
  if (param_grad.size() != params_.size()) throw ConfigError("Mlp::backward: gradient size mismatch");
  Matrix delta = upstream;
  for (std::size_t l = layer_count(); l-- > 0;) {
    apply_derivative(activations_[l], tape.preacts[l], delta);
    const int in = widths_[l], out = widths_[l + 1];
    Eigen::Map<Matrix> gw(param_grad.data() + offsets_[l], out, in);
    Eigen::Map<Vector> gb(param_grad.data() + offsets_[l] + static_cast<std::size_t>(in) * out, out);
    gw.noalias() += delta * tape.inputs[l].transpose();
    gb += delta.rowwise().sum();
    Matrix next = weight(l).transpose() * delta;
    delta.swap(next);
  }
  return delta;
}

OptimizerState OptimizerState::sgd(std::size_t n, double momentum, double weight_decay) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd_momentum;
  s.m = Vector::Zero(static_cast<Eigen::Index>(n));
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  return s;
}

OptimizerState OptimizerState::adam(std::size_t n, double beta1, double beta2, double eps) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.m = Vector::Zero(static_cast<Eigen::Index>(n));
  s.v = Vector::Zero(static_cast<Eigen::Index>(n));
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void sgd_step(OptimizerState& s, Vector& params, const Vector& grads, double lr) {
  if (params.size() != grads.size() || s.m.size() != params.size())
    throw ConfigError("sgd_step: shape mismatch");
  if (s.weight_decay != 0.0) s.m = s.momentum * s.m + grads + s.weight_decay * params;
  else s.m = s.momentum * s.m + grads;
  params -= lr * s.m;
  ++s.step;
}

void adam_step(OptimizerState& s, Vector& params, const Vector& grads, double lr) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw ConfigError("adam_step: shape mismatch");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.array().square().matrix();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

void optimizer_step(OptimizerState& s, Vector& params, const Vector& grads, double lr) {
  if (s.kind == OptimizerKind::adam) adam_step(s, params, grads, lr);
  else sgd_step(s, params, grads, lr);
}

void LrSchedule::validate() const {
  require(initial > 0.0, "lr schedule: initial learning rate must be positive");
  require(warmup >= 0, "lr schedule: warmup must be >= 0");
  if (kind == ScheduleKind::step_decay) {
    require(factor > 0.0, "lr schedule: decay factor must be positive");
    require(period >= 1, "lr schedule: decay period must be >= 1");
  }
}

double lr_at(const LrSchedule& s, int epoch) {
  require(epoch >= 0, "lr_at: negative epoch");
  if (epoch < s.warmup) return s.initial * (epoch + 1) / s.warmup;
  if (s.kind == ScheduleKind::constant) return s.initial;
  return s.initial * std::pow(s.factor, epoch / s.period);
}

double gradient_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-6);
}

GradCheckReport grad_check(const LossFn& loss, const Vector& params, double h, double tol, Rng& rng,
                           std::size_t max_coords) {
  Vector analytic = Vector::Zero(params.size());
  loss(params, &analytic);
  std::vector<std::size_t> coords(static_cast<std::size_t>(params.size()));
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords > 0 && max_coords < coords.size()) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }
  GradCheckReport report;
  Vector p = params;
  for (std::size_t c : coords) {
    const auto i = static_cast<Eigen::Index>(c);
    const double orig = p[i];
    p[i] = orig + h;
    const double up = loss(p, nullptr);
    p[i] = orig - h;
    const double down = loss(p, nullptr);
    p[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = gradient_rel_error(analytic[i], numeric);
    report.max_rel_err = std::max(report.max_rel_err, err);
    if (!(err < tol)) report.failing.push_back(c);
  }
  report.checked = coords.size();
  report.pass = report.failing.empty();
  return report;
}

}  // namespace fillup::learn
