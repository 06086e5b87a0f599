#include "fillup/diffusion.hpp"

#include "fillup/checkpoint.hpp"
#include "fillup/checksum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace fillup::diffusion {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  require(T >= 1, "make_schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_end < 1.0, "make_schedule: betas must lie in (0, 1)");
  require(beta_start <= beta_end, "make_schedule: beta_start must not exceed beta_end");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
    s.sigma.push_back(std::sqrt(b));
  }
  require(s.alpha_bar.back() < 0.05, "make_schedule: terminal alpha_bar must be below 0.05");
  return s;
}

Vector diffuse(const NoiseSchedule& s, const Vector& x0, int t, const Vector& eps) {
  require(t >= 1 && t <= s.T, "diffuse: timestep out of range");
  require(x0.size() == eps.size(), "diffuse: dimension mismatch");
  const double ab = s.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

namespace {

learn::Mlp build_net(const DenoiserConfig& c) {
  std::vector<int> widths{c.d_x + 2 * c.n_freq + c.d_c};
  std::vector<learn::Activation> acts;
  for (int i = 0; i < c.depth; ++i) {
    widths.push_back(c.hidden);
    acts.push_back(learn::Activation::silu);
  }
  widths.push_back(c.d_x);
  acts.push_back(learn::Activation::identity);
  return learn::Mlp(widths, acts);
}

void validate_config(const DenoiserConfig& c) {
  require(c.d_x >= 1 && c.K >= 1 && c.d_c >= 1, "denoiser: dimensions must be positive");
  require(c.n_freq >= 1 && c.hidden >= 1 && c.depth >= 1, "denoiser: architecture sizes must be positive");
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& config, std::uint64_t seed)
    : config_(config), schedule_(make_schedule(config.T, config.beta_start, config.beta_end)) {
  validate_config(config);
  net_ = build_net(config);
  Rng rng(seed);
  Rng net_rng = rng.substream("net");
  net_.init(net_rng);
  // small output layer keeps the initial prediction near zero
  auto last = net_.layer_count() - 1;
  net_.weight(last) *= 0.1;
  Rng tok_rng = rng.substream("tokens");
  tokens_.resize(config.d_c, config.K + 1);
  for (Eigen::Index j = 0; j < tokens_.cols(); ++j)
    for (Eigen::Index i = 0; i < tokens_.rows(); ++i) tokens_(i, j) = tok_rng.normal();
}

Matrix DenoiserModel::time_embedding(std::span<const int> t) const {
  Matrix e(2 * config_.n_freq, static_cast<Eigen::Index>(t.size()));
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double tau = static_cast<double>(t[j]) / schedule_.T;
    for (int k = 0; k < config_.n_freq; ++k) {
      const double w = std::numbers::pi * std::ldexp(1.0, k);
      e(k, static_cast<Eigen::Index>(j)) = std::sin(w * tau);
      e(config_.n_freq + k, static_cast<Eigen::Index>(j)) = std::cos(w * tau);
    }
  }
  return e;
}

namespace {

Matrix assemble_input(const DenoiserModel& m, const Matrix& x_t, std::span<const int> t, const Matrix& cond) {
  const auto& c = m.config();
  if (x_t.rows() != c.d_x || cond.rows() != c.d_c || cond.cols() != x_t.cols() ||
      static_cast<Eigen::Index>(t.size()) != x_t.cols())
    throw ConfigError("denoiser: input shape mismatch");
  Matrix in(c.d_x + 2 * c.n_freq + c.d_c, x_t.cols());
  in.topRows(c.d_x) = x_t;
  in.middleRows(c.d_x, 2 * c.n_freq) = m.time_embedding(t);
  in.bottomRows(c.d_c) = cond;
  return in;
}

}  // namespace

Matrix DenoiserModel::predict(const Matrix& x_t, std::span<const int> t, const Matrix& cond) const {
  return net_.forward(assemble_input(*this, x_t, t, cond));
}

Matrix DenoiserModel::predict(const Matrix& x_t, std::span<const int> t, const Matrix& cond,
                              learn::MlpTape& tape) const {
  return net_.forward(assemble_input(*this, x_t, t, cond), tape);
}

std::size_t DenoiserModel::parameter_count() const {
  return net_.parameter_count() + static_cast<std::size_t>(tokens_.size());
}

Vector DenoiserModel::flat_parameters() const {
  Vector p(static_cast<Eigen::Index>(parameter_count()));
  const auto n = static_cast<Eigen::Index>(net_.parameter_count());
  p.head(n) = net_.parameters();
  p.tail(tokens_.size()) = Eigen::Map<const Vector>(tokens_.data(), tokens_.size());
  return p;
}

void DenoiserModel::set_flat_parameters(const Vector& p) {
  require(p.size() == static_cast<Eigen::Index>(parameter_count()), "denoiser: parameter size mismatch");
  const auto n = static_cast<Eigen::Index>(net_.parameter_count());
  net_.set_parameters(p.head(n));
  Eigen::Map<Vector>(tokens_.data(), tokens_.size()) = p.tail(tokens_.size());
}

std::uint64_t DenoiserModel::checksum() const {
  Vector p = flat_parameters();
  return fnv1a64(std::as_bytes(std::span(p.data(), static_cast<std::size_t>(p.size()))));
}

void DenoiserModel::save(const std::filesystem::path& path, std::uint64_t seed) const {
  nlohmann::json h;
  h["kind"] = "denoiser";
  h["seed"] = seed;
  h["architecture"] = {{"d_x", config_.d_x},       {"K", config_.K},         {"d_c", config_.d_c},
                       {"n_freq", config_.n_freq}, {"hidden", config_.hidden}, {"depth", config_.depth},
                       {"widths", net_.widths()}};
  std::vector<std::string> acts;
  for (auto a : net_.activations()) acts.push_back(learn::to_string(a));
  h["architecture"]["activations"] = acts;
  h["shapes"] = {{"net", net_.parameter_count()}, {"token_table", {config_.d_c, config_.K + 1}}};
  h["schedule"] = {{"T", schedule_.T}, {"beta_start", schedule_.beta_start}, {"beta_end", schedule_.beta_end}};
  Vector p = flat_parameters();
  write_checkpoint(path, h, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  const auto& h = ck.header;
  if (h.value("kind", std::string{}) != "denoiser") throw FormatError("not a denoiser checkpoint: " + path.string());
  try {
    DenoiserConfig c;
    const auto& a = h.at("architecture");
    c.d_x = a.at("d_x").get<int>();
    c.K = a.at("K").get<int>();
    c.d_c = a.at("d_c").get<int>();
    c.n_freq = a.at("n_freq").get<int>();
    c.hidden = a.at("hidden").get<int>();
    c.depth = a.at("depth").get<int>();
    const auto& s = h.at("schedule");
    c.T = s.at("T").get<int>();
    c.beta_start = s.at("beta_start").get<double>();
    c.beta_end = s.at("beta_end").get<double>();
    DenoiserModel m(c, 0);
    auto values = ck.as_doubles();
    if (values.size() != m.parameter_count()) throw FormatError("denoiser checkpoint: parameter count mismatch");
    m.set_flat_parameters(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("denoiser checkpoint: ") + e.what());
  }
}

NoiseDraws draw_noise(int n, int d_x, int T, double p_uncond, Rng& rng) {
  require(p_uncond >= 0.0 && p_uncond < 1.0, "draw_noise: p_uncond must lie in [0, 1)");
  NoiseDraws d;
  d.t.resize(static_cast<std::size_t>(n));
  d.eps.resize(d_x, n);
  d.dropped.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    d.t[static_cast<std::size_t>(j)] = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(T)));
    for (int i = 0; i < d_x; ++i) d.eps(i, j) = rng.normal();
    d.dropped[static_cast<std::size_t>(j)] = p_uncond > 0.0 && rng.uniform() < p_uncond;
  }
  return d;
}

namespace {

Matrix noised_inputs(const NoiseSchedule& s, const Matrix& x0, const NoiseDraws& d) {
  if (x0.cols() != d.eps.cols() || x0.rows() != d.eps.rows()) throw ConfigError("loss: draw shape mismatch");
  Matrix x_t(x0.rows(), x0.cols());
  for (Eigen::Index j = 0; j < x0.cols(); ++j) {
    const int t = d.t[static_cast<std::size_t>(j)];
    require(t >= 1 && t <= s.T, "loss: timestep out of range");
    const double ab = s.alpha_bar_at(t);
    x_t.col(j) = std::sqrt(ab) * x0.col(j) + std::sqrt(1.0 - ab) * d.eps.col(j);
  }
  return x_t;
}

}  // namespace

double denoising_loss(const NoisePredictor& model, const Matrix& x0, const Matrix& cond, const NoiseDraws& draws) {
  require(x0.cols() > 0, "denoising_loss: empty batch");
  Matrix x_t = noised_inputs(model.schedule(), x0, draws);
  Matrix resid = model.predict(x_t, draws.t, cond) - draws.eps;
  return resid.squaredNorm() / static_cast<double>(x0.cols());
}

LossAndGrad simple_loss(const DenoiserModel& model, const Matrix& x0, std::span<const int> labels,
                        const NoiseDraws& draws) {
  require(x0.cols() > 0, "simple_loss: empty batch");
  require(static_cast<Eigen::Index>(labels.size()) == x0.cols(), "simple_loss: label count mismatch");
  const auto n = x0.cols();
  const int d_c = model.cond_dim();
  Matrix cond(d_c, n);
  std::vector<Eigen::Index> column(labels.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    require(y >= 0 && y < model.classes(), "simple_loss: label out of range");
    column[static_cast<std::size_t>(j)] = draws.dropped[static_cast<std::size_t>(j)] ? 0 : y + 1;
    cond.col(j) = model.token_table().col(column[static_cast<std::size_t>(j)]);
  }
  Matrix x_t = noised_inputs(model.schedule(), x0, draws);
  learn::MlpTape tape;
  Matrix resid = model.predict(x_t, draws.t, cond, tape) - draws.eps;
  LossAndGrad out;
  out.loss = resid.squaredNorm() / static_cast<double>(n);
  out.grad = Vector::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  const auto n_net = static_cast<Eigen::Index>(model.net().parameter_count());
  Matrix upstream = (2.0 / static_cast<double>(n)) * resid;
  Matrix d_in = model.net().backward(tape, upstream, out.grad.head(n_net));
  Eigen::Map<Matrix> d_tokens(out.grad.data() + n_net, d_c, model.classes() + 1);
  const auto cond_row = d_in.rows() - d_c;
  for (Eigen::Index j = 0; j < n; ++j)
    d_tokens.col(column[static_cast<std::size_t>(j)]) += d_in.col(j).segment(cond_row, d_c);
  return out;
}

LossAndGrad simple_loss(const DenoiserModel& model, const Matrix& x0, std::span<const int> labels, Rng& rng,
                        double p_uncond) {
  auto draws = draw_noise(static_cast<int>(x0.cols()), model.data_dim(), model.schedule().T, p_uncond, rng);
  return simple_loss(model, x0, labels, draws);
}

LossAndGrad token_loss(const DenoiserModel& model, const Matrix& x0, const Vector& token, const NoiseDraws& draws) {
  require(x0.cols() > 0, "token_loss: empty batch");
  require(token.size() == model.cond_dim(), "token_loss: token dimension mismatch");
  const auto n = x0.cols();
  Matrix cond = token.replicate(1, n);
  Matrix x_t = noised_inputs(model.schedule(), x0, draws);
  learn::MlpTape tape;
  Matrix resid = model.predict(x_t, draws.t, cond, tape) - draws.eps;
  LossAndGrad out;
  out.loss = resid.squaredNorm() / static_cast<double>(n);
  Vector scratch = Vector::Zero(static_cast<Eigen::Index>(model.net().parameter_count()));
  Matrix d_in = model.net().backward(tape, (2.0 / static_cast<double>(n)) * resid, scratch);
  out.grad = d_in.bottomRows(model.cond_dim()).rowwise().sum();
  return out;
}

DiffusionTrainResult train_diffusion(const DenoiserModel& initial, const Matrix& x0, std::span<const int> labels,
                                     const DiffusionTrainConfig& config, std::uint64_t seed) {
  require(config.epochs >= 0 && config.batch_size >= 1, "train_diffusion: bad epochs or batch size");
  require(config.lr > 0.0, "train_diffusion: learning rate must be positive");
  require(static_cast<Eigen::Index>(labels.size()) == x0.cols() && x0.cols() > 0,
          "train_diffusion: need a non-empty labeled dataset");
  std::vector<int> seen(static_cast<std::size_t>(initial.classes()), 0);
  for (int y : labels) ++seen.at(static_cast<std::size_t>(y));
  for (int c : seen) require(c >= 1, "train_diffusion: every class needs at least one sample");

  DiffusionTrainResult result{initial, {}};
  DenoiserModel& model = result.model;
  Vector params = model.flat_parameters();
  auto opt = learn::OptimizerState::adam(static_cast<std::size_t>(params.size()));
  Rng rng(seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(x0.cols()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix batch;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    std::size_t seen_samples = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.resize(x0.rows(), static_cast<Eigen::Index>(end - start));
      batch_labels.resize(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.col(static_cast<Eigen::Index>(i - start)) = x0.col(static_cast<Eigen::Index>(order[i]));
        batch_labels[i - start] = labels[order[i]];
      }
      auto lg = simple_loss(model, batch, batch_labels, rng, config.p_uncond);
      if (!std::isfinite(lg.loss)) throw StageError("train_diffusion: non-finite loss at epoch " + std::to_string(epoch));
      learn::adam_step(opt, params, lg.grad, config.lr);
      model.set_flat_parameters(params);
      total += lg.loss * static_cast<double>(end - start);
      seen_samples += end - start;
    }
    result.loss_curve.push_back(total / static_cast<double>(seen_samples));
  }
  return result;
}

Matrix guided_combination(const Matrix& uncond, const Matrix& cond, double w) {
  return uncond + w * (cond - uncond);
}

Matrix cfg_noise(const NoisePredictor& model, const Matrix& x_t, int t, const Vector& token, double w) {
  require(w >= 0.0, "cfg_noise: guidance scale must be >= 0");
  require(t >= 1 && t <= model.schedule().T, "cfg_noise: timestep out of range");
  const std::vector<int> ts(static_cast<std::size_t>(x_t.cols()), t);
  if (w == 1.0) return model.predict(x_t, ts, token.replicate(1, x_t.cols()));
  Matrix uncond = model.predict(x_t, ts, model.null_token().replicate(1, x_t.cols()));
  if (w == 0.0) return uncond;
  return guided_combination(uncond, model.predict(x_t, ts, token.replicate(1, x_t.cols())), w);
}

Matrix ancestral_sample(const NoisePredictor& model, const Vector& token, double w, int n_samples, Rng& rng) {
  require(n_samples >= 0, "ancestral_sample: negative sample count");
  const auto& s = model.schedule();
  const int d = model.data_dim();
  Matrix x(d, n_samples);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < d; ++i) x(i, j) = rng.normal();
  if (n_samples == 0) return x;
  for (int t = s.T; t >= 1; --t) {
    Matrix eps = cfg_noise(model, x, t, token, w);
    const double a = s.alpha_at(t);
    const double coef = (1.0 - a) / std::sqrt(1.0 - s.alpha_bar_at(t));
    x = (x - coef * eps) / std::sqrt(a);
    if (t > 1) {
      const double sigma = s.sigma_at(t);
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < d; ++i) x(i, j) += sigma * rng.normal();
    }
    if (!x.allFinite()) throw StageError("ancestral_sample: non-finite state at t=" + std::to_string(t));
  }
  return x;
}

}  // namespace fillup::diffusion
