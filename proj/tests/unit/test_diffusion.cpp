#include "fillup/diffusion.hpp"
#include "fillup/metrics.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace fillup;
using namespace fillup::diffusion;

namespace {

// Returns a fixed noise matrix regardless of input.
class FixedStub final : public NoisePredictor {
 public:
  FixedStub(const NoiseSchedule& s, Matrix out) : s_(s), out_(std::move(out)) {}
  const NoiseSchedule& schedule() const override { return s_; }
  int data_dim() const override { return static_cast<int>(out_.rows()); }
  int cond_dim() const override { return 1; }
  Vector null_token() const override { return Vector::Zero(1); }
  Matrix predict(const Matrix& x_t, std::span<const int>, const Matrix&) const override {
    return out_.cols() == x_t.cols() ? out_ : Matrix::Zero(out_.rows(), x_t.cols());
  }

 private:
  NoiseSchedule s_;
  Matrix out_;
};


DenoiserConfig small_config() {
  DenoiserConfig c;
  c.K = 3;
  c.d_c = 4;
  c.n_freq = 3;
  c.hidden = 12;
  c.depth = 2;
  c.T = 20;
  c.beta_end = 0.4;
  return c;
}

}  // namespace

TEST_CASE("schedule tables") {
  auto s = make_schedule(100, 1e-3, 0.2);
  CHECK(s.alpha_bar_at(100) < 0.05);
  for (int t = 2; t <= 100; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  CHECK(s.alpha_bar_at(1) == 1.0 - s.beta_at(1));
  CHECK(s.beta_at(1) == doctest::Approx(1e-3));
  CHECK(s.beta_at(100) == doctest::Approx(0.2));
  CHECK(s.sigma_at(50) == doctest::Approx(std::sqrt(s.beta_at(50))));
  double prod = 1.0;
  for (int t = 1; t <= 100; ++t) prod *= 1.0 - s.beta_at(t);
  CHECK(s.alpha_bar_at(100) == doctest::Approx(prod).epsilon(1e-12));
  CHECK_THROWS_AS(make_schedule(100, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1e-3), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), ConfigError);
}

TEST_CASE("diffuse endpoints") {
  NoiseSchedule s;
  s.T = 2;
  s.alpha_bar = {1.0, 0.0};
  Vector x0(2), eps(2);
  x0 << 1.5, -2.0;
  eps << 0.3, 0.7;
  CHECK(diffuse(s, x0, 1, eps) == x0);
  CHECK(diffuse(s, x0, 2, eps) == eps);
  CHECK_THROWS_AS(diffuse(s, x0, 3, eps), ConfigError);
}

TEST_CASE("diffuse marginals match the closed form within 4 Monte-Carlo sigma") {
  auto s = make_schedule(100, 1e-3, 0.2);
  Vector x0(2);
  x0 << 1.2, -0.8;
  const int n = 100000;
  for (int t : {1, 50, 100}) {
    Rng rng(static_cast<std::uint64_t>(t));
    Matrix xs(2, n);
    for (int j = 0; j < n; ++j) {
      Vector eps(2);
      eps << rng.normal(), rng.normal();
      xs.col(j) = diffuse(s, x0, t, eps);
    }
    const double ab = s.alpha_bar_at(t);
    const double var = 1.0 - ab;
    Vector mean = xs.rowwise().mean();
    Matrix c = xs.colwise() - mean;
    Matrix cov = c * c.transpose() / (n - 1);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(mean[i] - std::sqrt(ab) * x0[i]) <= 4.0 * std::sqrt(var / n));
      CHECK(std::abs(cov(i, i) - var) <= 4.0 * var * std::sqrt(2.0 / n));
    }
    CHECK(std::abs(cov(0, 1)) <= 4.0 * var / std::sqrt(n));
  }
}

TEST_CASE("denoising loss of stub predictors") {
  auto s = make_schedule(100, 1e-3, 0.2);
  Rng rng(3);
  const int n = 10000;
  Matrix x0 = test::random_matrix(2, n, rng);
  auto draws = draw_noise(n, 2, s.T, 0.0, rng);
  FixedStub exact(s, draws.eps);
  CHECK(denoising_loss(exact, x0, Matrix::Zero(1, n), draws) == 0.0);
  FixedStub zero(s, Matrix::Zero(2, n));
  // E||eps||^2 = d_x; ||eps||^2 ~ chi-square(2) has variance 4.
  CHECK(std::abs(denoising_loss(zero, x0, Matrix::Zero(1, n), draws) - 2.0) <= 4.0 * 2.0 / std::sqrt(n));
}

TEST_CASE("draw_noise drops conditioning at about p_uncond") {
  Rng rng(4);
  auto d = draw_noise(20000, 2, 100, 0.1, rng);
  const double frac = std::count(d.dropped.begin(), d.dropped.end(), true) / 20000.0;
  CHECK(std::abs(frac - 0.1) <= 4.0 * std::sqrt(0.09 / 20000));
  for (int t : d.t) CHECK((t >= 1 && t <= 100));
  auto none = draw_noise(100, 2, 100, 0.0, rng);
  CHECK(std::count(none.dropped.begin(), none.dropped.end(), true) == 0);
  CHECK_THROWS_AS(draw_noise(5, 2, 100, 1.0, rng), ConfigError);
}

TEST_CASE("simple loss gradient passes grad_check at 3 random points") {
  Rng rng(5);
  for (int point = 0; point < 3; ++point) {
    DenoiserModel model(small_config(), 100 + static_cast<std::uint64_t>(point));
    Vector p = model.flat_parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 1e-3 * rng.normal();
    Matrix x0 = test::random_matrix(2, 8, rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2, 1, 0};
    auto draws = draw_noise(8, 2, model.schedule().T, 0.3, rng);
    learn::LossFn f = [&](const Vector& q, Vector* g) {
      DenoiserModel m = model;
      m.set_flat_parameters(q);
      auto lg = simple_loss(m, x0, labels, draws);
      if (g) *g = lg.grad;
      return lg.loss;
    };
    auto r = learn::grad_check(f, p, 1e-4, 1e-4, rng);
    CHECK_MESSAGE(r.pass, "max rel err ", r.max_rel_err);
  }
}

TEST_CASE("token loss gradient passes grad_check at 3 random points") {
  Rng rng(6);
  for (int point = 0; point < 3; ++point) {
    DenoiserModel model(small_config(), 200 + static_cast<std::uint64_t>(point));
    Vector token = test::random_matrix(4, 1, rng).col(0);
    Matrix x0 = test::random_matrix(2, 8, rng);
    auto draws = draw_noise(8, 2, model.schedule().T, 0.0, rng);
    learn::LossFn f = [&](const Vector& v, Vector* g) {
      auto lg = token_loss(model, x0, v, draws);
      if (g) *g = lg.grad;
      return lg.loss;
    };
    auto r = learn::grad_check(f, token, 1e-4, 1e-4, rng);
    CHECK_MESSAGE(r.pass, "max rel err ", r.max_rel_err);
  }
}

TEST_CASE("simple loss gradient reaches only the tokens that were used") {
  DenoiserModel model(small_config(), 7);
  Rng rng(7);
  Matrix x0 = test::random_matrix(2, 4, rng);
  std::vector<int> labels{1, 1, 1, 1};
  auto draws = draw_noise(4, 2, model.schedule().T, 0.0, rng);
  auto lg = simple_loss(model, x0, labels, draws);
  const auto n_net = static_cast<Eigen::Index>(model.net().parameter_count());
  Eigen::Map<const Matrix> g_tok(lg.grad.data() + n_net, 4, 4);
  CHECK(g_tok.col(0).isZero(0.0));
  CHECK(g_tok.col(1).isZero(0.0));
  CHECK_FALSE(g_tok.col(2).isZero(0.0));
  CHECK(g_tok.col(3).isZero(0.0));
}

TEST_CASE("denoiser layout") {
  DenoiserModel model(small_config(), 8);
  CHECK(model.token_table().cols() == 4);
  CHECK(model.null_token() == model.token_table().col(0));
  CHECK(model.class_token(2) == model.token_table().col(3));
  std::vector<int> t{1, 10, 20};
  CHECK(model.time_embedding(t).rows() == 6);
  Matrix out = model.predict(Matrix::Zero(2, 3), t, Matrix::Zero(4, 3));
  CHECK(out.rows() == 2);
  CHECK(out.allFinite());
}

TEST_CASE("cfg_noise closed form on stub branches") {
  Vector u(2), c(2);
  u << 0.3, -1.0;
  c << -0.4, 2.0;
  Rng rng(9);
  Matrix x = test::random_matrix(2, 5, rng);
  Vector token = Vector::Constant(3, 0.25);
  test::BranchStub stub(2, 3, u, c);
  const std::vector<int> ts(5, 4);
  Matrix uu = stub.predict(x, ts, Matrix::Zero(3, 5));
  Matrix cc = stub.predict(x, ts, token.replicate(1, 5));
  for (double w : {0.0, 0.5, 2.0, 7.5}) {
    Matrix got = cfg_noise(stub, x, 4, token, w);
    CHECK(got == guided_combination(uu, cc, w));
    Matrix manual = uu + w * (cc - uu);
    CHECK(got == manual);
    // Affine in w.
    CHECK((got - ((1 - w) * uu + w * cc)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cfg_noise at w=1 evaluates only the conditional branch") {
  Vector u = Vector::Constant(2, 1.0), c = Vector::Constant(2, -1.0);
  test::BranchStub stub(2, 3, u, c);
  Vector token = Vector::Constant(3, 0.5);
  Matrix x = Matrix::Ones(2, 4);
  const std::vector<int> ts(4, 2);
  Matrix cond_only = stub.predict(x, ts, token.replicate(1, 4));
  stub.null_calls = stub.cond_calls = 0;
  Matrix got = cfg_noise(stub, x, 2, token, 1.0);
  CHECK(got == cond_only);
  CHECK(stub.null_calls == 0);
  stub.null_calls = stub.cond_calls = 0;
  Matrix unc = cfg_noise(stub, x, 2, token, 0.0);
  CHECK(stub.cond_calls == 0);
  CHECK(unc == stub.predict(x, ts, Matrix::Zero(3, 4)));
  CHECK_THROWS_AS(cfg_noise(stub, x, 2, token, -1.0), ConfigError);
}

TEST_CASE("one-step sampling with oracle noise recovers x0") {
  auto s = make_schedule(1, 0.99, 0.99);
  Vector x0(3);
  x0 << 0.7, -1.1, 2.5;
  test::OracleStub oracle(s, x0);
  Rng rng(10);
  Matrix out = ancestral_sample(oracle, Vector::Zero(1), 1.0, 6, rng);
  for (Eigen::Index j = 0; j < out.cols(); ++j) CHECK((out.col(j) - x0).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("diffuse then one denoising step with oracle noise is the identity") {
  auto s = make_schedule(1, 0.97, 0.97);
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Vector x0 = test::random_matrix(2, 1, rng).col(0);
    Vector eps = test::random_matrix(2, 1, rng).col(0);
    Vector xt = diffuse(s, x0, 1, eps);
    const double a = s.alpha_at(1);
    Vector back = (xt - (1 - a) / std::sqrt(1 - s.alpha_bar_at(1)) * eps) / std::sqrt(a);
    CHECK((back - x0).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("training reduces the loss and is deterministic") {
  const auto& toy = test::toy_model();
  REQUIRE(toy.loss_curve.size() == 300);
  CHECK(toy.loss_curve.back() < 0.5 * toy.loss_curve.front());

  auto dir = test::scratch_dir("diffusion");
  DenoiserModel init(small_config(), 12);
  Matrix x;
  std::vector<int> y;
  dataset::GeneratorConfig gc;
  gc.K = 3;
  auto data = dataset::draw_dataset(dataset::make_generators(gc, 1), std::vector<int>{20, 10, 5}, 0, 2);
  data.select(dataset::Split::train, x, y);
  DiffusionTrainConfig tc;
  tc.epochs = 5;
  auto a = train_diffusion(init, x, y, tc, 3);
  auto b = train_diffusion(init, x, y, tc, 3);
  a.model.save(dir / "a.ckpt", 12);
  b.model.save(dir / "b.ckpt", 12);
  CHECK(test::slurp(dir / "a.ckpt") == test::slurp(dir / "b.ckpt"));
  CHECK(a.loss_curve == b.loss_curve);

  tc.epochs = 0;
  auto none = train_diffusion(init, x, y, tc, 3);
  CHECK(none.model.flat_parameters() == init.flat_parameters());
  CHECK(none.loss_curve.empty());
}

TEST_CASE("checkpoint load reproduces the saved float32 parameters") {
  auto dir = test::scratch_dir("diffusion_ckpt");
  DenoiserModel model(small_config(), 13);
  model.save(dir / "m.ckpt", 13);
  auto loaded = DenoiserModel::load(dir / "m.ckpt");
  CHECK(loaded.config().d_c == 4);
  CHECK(loaded.schedule().T == 20);
  Vector a = model.flat_parameters(), b = loaded.flat_parameters();
  REQUIRE(a.size() == b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
  loaded.save(dir / "n.ckpt", 13);
  CHECK(test::slurp(dir / "m.ckpt") == test::slurp(dir / "n.ckpt"));
  CHECK(DenoiserModel::load(dir / "n.ckpt").checksum() == loaded.checksum());
}

TEST_CASE("sampling is reproducible per seed") {
  const auto& toy = test::toy_model();
  Rng a(20), b(20), c(21);
  Matrix sa = ancestral_sample(toy.model, toy.model.class_token(0), 2.0, 50, a);
  Matrix sb = ancestral_sample(toy.model, toy.model.class_token(0), 2.0, 50, b);
  Matrix sc = ancestral_sample(toy.model, toy.model.class_token(0), 2.0, 50, c);
  CHECK(sa == sb);
  CHECK(sa != sc);
  CHECK(sa.allFinite());
}

TEST_CASE("guided samples of class 0 sit nearest class 0") {
  const auto& toy = test::toy_model();
  Rng rng(22);
  Matrix s = ancestral_sample(toy.model, toy.model.class_token(0), 2.0, 500, rng);
  CHECK(test::nearest_mean_fraction(s, toy.generators, 0) >= 0.9);
}

TEST_CASE("unconditional samples are closer to the real data than to a shifted copy") {
  const auto& toy = test::toy_model();
  Rng rng(23);
  Matrix s = ancestral_sample(toy.model, toy.model.null_token(), 0.0, 500, rng);
  Matrix real;
  std::vector<int> y;
  toy.data.select(dataset::Split::test, real, y);
  Matrix shifted = real.array() + 3.0;
  CHECK(metrics::frechet_distance(real, s) < metrics::frechet_distance(shifted, s));
}
