#include "fillup/inversion.hpp"
#include "fillup/metrics.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace fillup;
using namespace fillup::inversion;

namespace {

Matrix class_test_samples(const dataset::LongTailedDataset& d, int k) {
  Matrix x;
  std::vector<int> y;
  d.select(dataset::Split::test, x, y);
  Matrix out(x.rows(), std::count(y.begin(), y.end(), k));
  Eigen::Index c = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] == k) out.col(c++) = x.col(static_cast<Eigen::Index>(i));
  return out;
}

InversionConfig default_config(int n) {
  InversionConfig c;
  c.steps = step_heuristic(n, 10, 200, 1000);
  return c;
}

}  // namespace

TEST_CASE("step heuristic") {
  CHECK(step_heuristic(5, 100, 2000, 10000) == 2000);
  CHECK(step_heuristic(100, 100, 2000, 10000) == 10000);
  CHECK(step_heuristic(50, 100, 2000, 10000) == 5000);
  CHECK(step_heuristic(2, 10, 200, 1000) == 200);
  CHECK_THROWS_AS(step_heuristic(0, 10, 200, 1000), ConfigError);
  CHECK_THROWS_AS(step_heuristic(5, 10, 300, 200), ConfigError);
}

TEST_CASE("zero steps keeps the initialization as the single snapshot") {
  const auto& toy = test::toy_model();
  InversionConfig c;
  c.steps = 0;
  auto t = invert_token(toy.model, 1, toy.data.class_samples(1), c, 1);
  REQUIRE(t.snapshots.size() == 1);
  CHECK(t.snapshots[0].step == 0);
  Vector mean = toy.model.token_table().rightCols(2).rowwise().mean();
  CHECK(t.embedding == mean);
  CHECK(t.snapshots[0].embedding == mean);
  c.init = TokenInit::zero;
  CHECK(invert_token(toy.model, 1, toy.data.class_samples(1), c, 1).embedding.isZero(0.0));
}

TEST_CASE("inversion leaves the denoiser untouched and is deterministic") {
  const auto& toy = test::toy_model();
  const auto before = toy.model.checksum();
  const Vector params = toy.model.flat_parameters();
  InversionConfig c;
  c.steps = 120;
  auto a = invert_token(toy.model, 0, toy.data.class_samples(0), c, 5);
  auto b = invert_token(toy.model, 0, toy.data.class_samples(0), c, 5);
  CHECK(toy.model.checksum() == before);
  CHECK(toy.model.flat_parameters() == params);
  CHECK(a.model_checksum == before);
  CHECK(a.embedding == b.embedding);
  CHECK(a.loss_curve == b.loss_curve);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) CHECK(a.snapshots[i].embedding == b.snapshots[i].embedding);
}

TEST_CASE("snapshots every interval plus the final step") {
  const auto& toy = test::toy_model();
  InversionConfig c;
  c.steps = 120;
  c.snapshot_every = 50;
  auto t = invert_token(toy.model, 0, toy.data.class_samples(0), c, 6);
  REQUIRE(t.snapshots.size() == 3);
  CHECK(t.snapshots[0].step == 50);
  CHECK(t.snapshots[1].step == 100);
  CHECK(t.snapshots[2].step == 120);
  CHECK(t.snapshots.back().embedding == t.embedding);
  CHECK(t.steps() == 120);
  CHECK(t.loss_curve.size() == 120);
  CHECK(t.embedding.allFinite());
  c.steps = 100;
  CHECK(invert_token(toy.model, 0, toy.data.class_samples(0), c, 6).snapshots.size() == 2);
}

TEST_CASE("late inversion loss is below early loss") {
  const auto& toy = test::toy_model();
  for (int k = 0; k < 2; ++k) {
    InversionConfig c = default_config(static_cast<int>(toy.data.class_samples(k).cols()));
    c.init = TokenInit::random;
    auto t = invert_token(toy.model, k, toy.data.class_samples(k), c, 7);
    const std::size_t m = t.loss_curve.size() / 10;
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      first += t.loss_curve[i];
      last += t.loss_curve[t.loss_curve.size() - 1 - i];
    }
    CHECK(last < first);
  }
}

TEST_CASE("inverted token generates closer to its class than a random token") {
  const auto& toy = test::toy_model();
  Matrix ten = toy.data.class_samples(1).leftCols(10);
  auto inverted = invert_token(toy.model, 1, ten, default_config(10), 8);
  Rng init(80);
  Vector rnd(toy.model.cond_dim());
  for (Eigen::Index i = 0; i < rnd.size(); ++i) rnd[i] = init.normal();
  Rng ra(81), rb(81);
  Matrix from_token = generate_from_snapshots(toy.model, inverted, 2.0, 500, ra);
  Matrix from_random = generate_from_snapshots(toy.model, fixed_token(1, rnd), 2.0, 500, rb);
  Matrix real = class_test_samples(toy.data, 1);
  CHECK(metrics::frechet_distance(real, from_token) < metrics::frechet_distance(real, from_random));
}

TEST_CASE("even split of samples over snapshots") {
  CHECK(snapshot_split(10, 1) == std::vector<int>{10});
  CHECK(snapshot_split(10, 4) == std::vector<int>{2, 2, 3, 3});
  CHECK(snapshot_split(3, 4) == std::vector<int>{0, 1, 1, 1});
  CHECK(snapshot_split(8, 4) == std::vector<int>{2, 2, 2, 2});
}

TEST_CASE("generate_from_snapshots draws each slice from its snapshot") {
  Vector u = Vector::Zero(2), c = Vector::Zero(2);
  test::BranchStub stub(2, 1, u, c);
  ClassToken t = fixed_token(0, Vector::Constant(1, 1.0));
  Rng r1(9);
  CHECK(generate_from_snapshots(stub, t, 1.0, 10, r1).cols() == 10);

  t.snapshots = {{1, Vector::Constant(1, 1.0)}, {2, Vector::Constant(1, 2.0)},
                 {3, Vector::Constant(1, 3.0)}, {4, Vector::Constant(1, 4.0)}};
  Rng r2(10);
  Matrix all = generate_from_snapshots(stub, t, 1.0, 10, r2);
  // Same stream consumed slice by slice.
  Rng r3(10);
  const int sizes[] = {2, 2, 3, 3};
  Eigen::Index col = 0;
  for (int i = 0; i < 4; ++i) {
    Matrix part = diffusion::ancestral_sample(stub, t.snapshots[static_cast<std::size_t>(i)].embedding, 1.0, sizes[i], r3);
    CHECK(all.middleCols(col, sizes[i]) == part);
    col += sizes[i];
  }
}

TEST_CASE("snapshot ensemble recall is at least the final-snapshot recall") {
  const auto& toy = test::toy_model();
  auto token = invert_token(toy.model, 1, toy.data.class_samples(1).leftCols(10), default_config(10), 11);
  REQUIRE(token.snapshots.size() >= 2);
  Rng a(12), b(12);
  Matrix ens = generate_from_snapshots(toy.model, token, 1.0, 500, a);
  Matrix fin = generate_from_snapshots(toy.model, final_only(token), 1.0, 500, b);
  Matrix real = class_test_samples(toy.data, 1);
  auto pe = metrics::precision_recall(real, ens, 3);
  auto pf = metrics::precision_recall(real, fin, 3);
  CHECK_MESSAGE(pe.recall >= pf.recall, "ensemble ", pe.recall, " final ", pf.recall);
}

TEST_CASE("token file round trip") {
  auto dir = test::scratch_dir("token");
  const auto& toy = test::toy_model();
  InversionConfig c;
  c.steps = 60;
  c.snapshot_every = 25;
  auto t = invert_token(toy.model, 1, toy.data.class_samples(1), c, 13);
  write_token(dir / "t.tok", t);
  auto back = read_token(dir / "t.tok");
  CHECK(back.class_id == 1);
  CHECK(back.seed == 13);
  CHECK(back.model_checksum == toy.model.checksum());
  REQUIRE(back.snapshots.size() == 3);
  CHECK(back.snapshots[2].step == 60);
  for (std::size_t i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < t.embedding.size(); ++j)
      CHECK(back.snapshots[i].embedding[j] == static_cast<double>(static_cast<float>(t.snapshots[i].embedding[j])));
  CHECK(back.embedding == back.snapshots.back().embedding);
  write_token(dir / "u.tok", back);
  CHECK(test::slurp(dir / "t.tok") == test::slurp(dir / "u.tok"));
}
