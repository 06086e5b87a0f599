#pragma once

#include "fillup/diffusion.hpp"
#include "fillup/rng.hpp"

#include <cmath>

namespace fillup::test {

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

/// Predictor whose output is a fixed function of the conditioning: `uncond`
/// for the null token, `cond` plus 0.1 x_t otherwise. Counts calls per branch.
class BranchStub final : public diffusion::NoisePredictor {
 public:
  BranchStub(int d_x, int d_c, Vector uncond, Vector cond, int T = 10)
      : d_x_(d_x), d_c_(d_c), uncond_(std::move(uncond)), cond_(std::move(cond)),
        schedule_(diffusion::make_schedule(T, 0.05, 0.5)) {}

  const diffusion::NoiseSchedule& schedule() const override { return schedule_; }
  int data_dim() const override { return d_x_; }
  int cond_dim() const override { return d_c_; }
  Vector null_token() const override { return Vector::Zero(d_c_); }
  Matrix predict(const Matrix& x_t, std::span<const int>, const Matrix& cond) const override {
    Matrix out(d_x_, x_t.cols());
    for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
      if (cond.col(j).isZero(0.0)) {
        ++null_calls;
        out.col(j) = uncond_ - 0.2 * x_t.col(j);
      } else {
        ++cond_calls;
        out.col(j) = cond_ + 0.1 * x_t.col(j) + Vector::Constant(d_x_, cond.col(j).sum());
      }
    }
    return out;
  }
  mutable long null_calls = 0;
  mutable long cond_calls = 0;

 private:
  int d_x_, d_c_;
  Vector uncond_, cond_;
  diffusion::NoiseSchedule schedule_;
};

// Predicts the noise that would have produced x_t from a known x0.
class OracleStub final : public diffusion::NoisePredictor {
 public:
  OracleStub(const diffusion::NoiseSchedule& s, Vector x0) : s_(s), x0_(std::move(x0)) {}
  const diffusion::NoiseSchedule& schedule() const override { return s_; }
  int data_dim() const override { return static_cast<int>(x0_.size()); }
  int cond_dim() const override { return 1; }
  Vector null_token() const override { return Vector::Zero(1); }
  Matrix predict(const Matrix& x_t, std::span<const int> t, const Matrix&) const override {
    Matrix out(x_t.rows(), x_t.cols());
    for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
      const double ab = s_.alpha_bar_at(t[static_cast<std::size_t>(j)]);
      out.col(j) = (x_t.col(j) - std::sqrt(ab) * x0_) / std::sqrt(1.0 - ab);
    }
    return out;
  }

 private:
  diffusion::NoiseSchedule s_;
  Vector x0_;
};

}  // namespace fillup::test
