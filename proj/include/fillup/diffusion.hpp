#pragma once

#include "fillup/common.hpp"
#include "fillup/learncore.hpp"
#include "fillup/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fillup::diffusion {

/// Linear-beta DDPM schedule. Timesteps are 1-based: t in [1, T].
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product of alpha
  std::vector<double> sigma;      // sqrt(beta)

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
};

/// Rejects betas outside (0, 1), beta_start > beta_end, and schedules whose
/// terminal alpha_bar is not below 0.05.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Vector diffuse(const NoiseSchedule& schedule, const Vector& x0, int t, const Vector& eps);

/// Anything that predicts noise from (x_t, t, conditioning). The trained
/// denoiser implements it; tests substitute exact or constant stubs.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual const NoiseSchedule& schedule() const = 0;
  virtual int data_dim() const = 0;
  virtual int cond_dim() const = 0;
  virtual Vector null_token() const = 0;
  /// Columns of x_t and cond are samples; t holds one timestep per column.
  virtual Matrix predict(const Matrix& x_t, std::span<const int> t, const Matrix& cond) const = 0;
};

struct DenoiserConfig {
  int d_x = 2;
  int K = 10;
  int d_c = 16;
  int n_freq = 6;
  int hidden = 128;
  int depth = 3;  // hidden layers
  int T = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
};

/// MLP noise predictor on concat(x_t, time features, token) plus a table of
/// K+1 conditioning tokens; column 0 is the null token, column k+1 is class k.
class DenoiserModel final : public NoisePredictor {
 public:
  DenoiserModel() = default;
  DenoiserModel(const DenoiserConfig& config, std::uint64_t seed);

  const NoiseSchedule& schedule() const override { return schedule_; }
  int data_dim() const override { return config_.d_x; }
  int cond_dim() const override { return config_.d_c; }
  Vector null_token() const override { return tokens_.col(0); }
  Matrix predict(const Matrix& x_t, std::span<const int> t, const Matrix& cond) const override;

  /// Forward pass that keeps the tape for backpropagation.
  Matrix predict(const Matrix& x_t, std::span<const int> t, const Matrix& cond, learn::MlpTape& tape) const;

  const DenoiserConfig& config() const { return config_; }
  int classes() const { return config_.K; }
  Vector class_token(int class_id) const { return tokens_.col(class_id + 1); }
  const Matrix& token_table() const { return tokens_; }
  const learn::Mlp& net() const { return net_; }

  /// Sinusoidal features of t/T, rows [sin(w_k t/T); cos(w_k t/T)].
  Matrix time_embedding(std::span<const int> t) const;

  /// Net parameters followed by the token table (column-major).
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& p);
  std::size_t parameter_count() const;
  /// FNV-1a over the bytes of the flat parameters.
  std::uint64_t checksum() const;

  void save(const std::filesystem::path& path, std::uint64_t seed) const;
  static DenoiserModel load(const std::filesystem::path& path);

 private:
  DenoiserConfig config_;
  NoiseSchedule schedule_;
  learn::Mlp net_;
  Matrix tokens_;
};

/// Per-sample randomness of one denoising-loss evaluation.
struct NoiseDraws {
  std::vector<int> t;
  Matrix eps;                 // d_x x n
  std::vector<bool> dropped;  // conditioning replaced by the null token
};

NoiseDraws draw_noise(int n, int d_x, int T, double p_uncond, Rng& rng);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Mean over columns of ||eps - eps_theta(diffuse(x0, t, eps), t, cond)||^2.
double denoising_loss(const NoisePredictor& model, const Matrix& x0, const Matrix& cond, const NoiseDraws& draws);

/// Simple loss with class-token conditioning; gradient over flat_parameters().
LossAndGrad simple_loss(const DenoiserModel& model, const Matrix& x0, std::span<const int> labels,
                        const NoiseDraws& draws);
LossAndGrad simple_loss(const DenoiserModel& model, const Matrix& x0, std::span<const int> labels, Rng& rng,
                        double p_uncond);

/// Simple loss with a free conditioning vector (no dropout); gradient over
/// the token only.
LossAndGrad token_loss(const DenoiserModel& model, const Matrix& x0, const Vector& token, const NoiseDraws& draws);

struct DiffusionTrainConfig {
  int epochs = 300;
  int batch_size = 64;
  double lr = 2e-3;
  double p_uncond = 0.1;
};

struct DiffusionTrainResult {
  DenoiserModel model;
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Adam on the simple loss. Throws StageError on a non-finite loss.
DiffusionTrainResult train_diffusion(const DenoiserModel& initial, const Matrix& x0, std::span<const int> labels,
                                     const DiffusionTrainConfig& config, std::uint64_t seed);

/// u + w (c - u).
Matrix guided_combination(const Matrix& uncond, const Matrix& cond, double w);

/// Guided noise estimate. At w == 1 only the conditional branch runs and at
/// w == 0 only the null branch.
Matrix cfg_noise(const NoisePredictor& model, const Matrix& x_t, int t, const Vector& token, double w);

/// DDPM ancestral sampling from x_T ~ N(0, I); returns d_x x n_samples.
Matrix ancestral_sample(const NoisePredictor& model, const Vector& token, double w, int n_samples, Rng& rng);

}  // namespace fillup::diffusion
