#include "fillup/dataset.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace fillup;
using namespace fillup::dataset;

TEST_CASE("longtailed counts") {
  auto big = longtailed_counts(100, 1000, 200);
  CHECK(big.front() == 1000);
  CHECK(big.back() == 5);
  auto flat = longtailed_counts(10, 100, 1);
  CHECK(std::all_of(flat.begin(), flat.end(), [](int n) { return n == 100; }));
  auto lt = longtailed_counts(10, 100, 100);
  CHECK(lt.front() == 100);
  CHECK(lt.back() == 1);
  CHECK_THROWS_AS(longtailed_counts(10, 100, 0.5), ConfigError);
  CHECK_THROWS_AS(longtailed_counts(10, 50, 100), ConfigError);
  CHECK_THROWS_AS(longtailed_counts(1, 50, 2), ConfigError);
}

TEST_CASE("longtailed counts are non-increasing with max/min near IF") {
  for (int K : {2, 5, 10, 37}) {
    for (double IF : {1.0, 10.0, 100.0, 200.0}) {
      const int n_max = 1000;
      auto c = longtailed_counts(K, n_max, IF);
      CHECK(std::is_sorted(c.rbegin(), c.rend()));
      const double ratio = static_cast<double>(c.front()) / c.back();
      // Only the tail count is rounded, by at most half a sample.
      const double tail = n_max / IF;
      CHECK(ratio <= n_max / (tail - 0.5) + 1e-12);
      CHECK(ratio >= n_max / (tail + 0.5) - 1e-12);
    }
  }
}

TEST_CASE("shot groups") {
  std::vector<int> counts{150, 100, 20, 19, 5, 101};
  auto g = assign_shot_groups(counts, 1.0);
  CHECK(g.group_of_class[0] == ShotGroup::many);
  CHECK(g.group_of_class[1] == ShotGroup::medium);
  CHECK(g.group_of_class[2] == ShotGroup::medium);
  CHECK(g.group_of_class[3] == ShotGroup::few);
  CHECK(g.group_of_class[4] == ShotGroup::few);
  CHECK(g.group_of_class[5] == ShotGroup::many);
  auto scaled = assign_shot_groups(counts, 0.5);
  CHECK(scaled.group_of_class[1] == ShotGroup::many);
  CHECK(scaled.group_of_class[2] == ShotGroup::medium);
  CHECK(scaled.group_of_class[4] == ShotGroup::few);
  CHECK(scaled.many_above == 50.0);
  CHECK(scaled.few_below == 10.0);
}

TEST_CASE("shot groups partition the class set") {
  auto counts = longtailed_counts(10, 200, 100);
  auto g = assign_shot_groups(counts, auto_shot_scale(200));
  std::set<int> all;
  std::size_t total = 0;
  for (auto s : {ShotGroup::many, ShotGroup::medium, ShotGroup::few}) {
    auto c = g.classes_in(s);
    CHECK_FALSE(c.empty());
    total += c.size();
    all.insert(c.begin(), c.end());
  }
  CHECK(total == 10);
  CHECK(all.size() == 10);
}

TEST_CASE("generators are deterministic and well formed") {
  GeneratorConfig cfg;
  cfg.K = 2;
  auto a = make_generators(cfg, 0);
  auto b = make_generators(cfg, 0);
  CHECK(generators_to_json(a) == generators_to_json(b));
  cfg.K = 10;
  auto ten = make_generators(cfg, 1);
  REQUIRE(ten.size() == 10);
  for (const auto& g : ten) {
    CHECK(g.components.size() == 3);
    CHECK_NOTHROW(g.validate());
  }
}

TEST_CASE("balanced draw is separable by nearest mean") {
  GeneratorConfig cfg;
  auto gens = make_generators(cfg, 3);
  // Independent brute-force nearest-mean classifier.
  Rng rng(99);
  long correct = 0, total = 0;
  for (const auto& g : gens) {
    for (int i = 0; i < 1000; ++i) {
      Vector x = g.sample(rng);
      int best = -1;
      double bd = 0.0;
      for (const auto& h : gens) {
        Vector m = Vector::Zero(x.size());
        for (const auto& c : h.components) m += c.weight * c.mean;
        double d = (x - m).squaredNorm();
        if (best < 0 || d < bd) {
          best = h.class_id;
          bd = d;
        }
      }
      correct += best == g.class_id;
      ++total;
    }
  }
  CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("interleaved ring alternates head and tail classes") {
  GeneratorConfig cfg;
  std::vector<int> slots;
  for (int k = 0; k < cfg.K; ++k) slots.push_back(ring_slot(cfg, k));
  CHECK(slots == std::vector<int>{0, 2, 4, 6, 8, 1, 3, 5, 7, 9});
  cfg.interleave = false;
  CHECK(ring_slot(cfg, 7) == 7);
}

TEST_CASE("generator validation") {
  ClassGenerator g;
  g.d_x = 2;
  g.components = {{Vector::Zero(2), Vector::Ones(2), 0.5}, {Vector::Ones(2), Vector::Ones(2), 0.5}};
  CHECK_NOTHROW(g.validate());
  g.components[1].weight = 0.4;
  CHECK_THROWS_AS(g.validate(), FormatError);
  g.components[1].weight = 0.5;
  g.components[0].variance[1] = 0.0;
  CHECK_THROWS_AS(g.validate(), FormatError);
  g.components.pop_back();
  CHECK_THROWS_AS(g.validate(), FormatError);
}

TEST_CASE("draw_dataset cardinality and balance") {
  GeneratorConfig cfg;
  cfg.K = 2;
  auto gens = make_generators(cfg, 4);
  std::vector<int> counts{3, 1};
  auto d = draw_dataset(gens, counts, 2, 5);
  CHECK(d.size(Split::train) == 4);
  CHECK(d.size(Split::test) == 4);
  CHECK(d.counts_real == counts);
  CHECK(d.count_source(Split::train, Source::synthetic) == 0);
  CHECK_NOTHROW(d.validate());
  Matrix x;
  std::vector<int> y;
  d.select(Split::test, x, y);
  CHECK(std::count(y.begin(), y.end(), 0) == 2);
  CHECK(std::count(y.begin(), y.end(), 1) == 2);
  CHECK(d.class_samples(0).cols() == 3);
}

TEST_CASE("test split is balanced regardless of train imbalance") {
  GeneratorConfig cfg;
  auto gens = make_generators(cfg, 6);
  auto d = draw_dataset(gens, longtailed_counts(10, 200, 100), 37, 7);
  Matrix x;
  std::vector<int> y;
  d.select(Split::test, x, y);
  for (int k = 0; k < 10; ++k) CHECK(std::count(y.begin(), y.end(), k) == 37);
}

TEST_CASE("same seed gives a byte-identical dataset file") {
  auto dir = test::scratch_dir("dataset");
  GeneratorConfig cfg;
  auto gens = make_generators(cfg, 8);
  auto counts = longtailed_counts(10, 200, 100);
  write_csv(dir / "a.csv", draw_dataset(gens, counts, 20, 9));
  write_csv(dir / "b.csv", draw_dataset(gens, counts, 20, 9));
  CHECK(test::slurp(dir / "a.csv") == test::slurp(dir / "b.csv"));
  write_csv(dir / "c.csv", draw_dataset(gens, counts, 20, 10));
  CHECK(test::slurp(dir / "a.csv") != test::slurp(dir / "c.csv"));
}

TEST_CASE("dataset CSV round trips byte-identically") {
  GeneratorConfig cfg;
  auto gens = make_generators(cfg, 8);
  auto d = draw_dataset(gens, longtailed_counts(10, 200, 100), 20, 9);
  const std::string text = to_csv(d);
  CHECK(text.rfind("split,source,label,x0,x1\n", 0) == 0);
  auto back = from_csv(text, 10);
  CHECK(to_csv(back) == text);
  CHECK(back.counts_real == d.counts_real);
  CHECK_THROWS_AS(from_csv("split,source,label,x0,x1\ntrain,real,12,0,0\n", 10), FormatError);
}

TEST_CASE("component frequencies follow the mixture weights") {
  ClassGenerator g;
  g.d_x = 2;
  g.components = {{Vector::Zero(2), Vector::Ones(2), 0.2},
                  {Vector::Ones(2), Vector::Ones(2), 0.3},
                  {-Vector::Ones(2), Vector::Ones(2), 0.5}};
  Rng rng(12);
  const int n = 10000;
  std::vector<int> hits(3, 0);
  for (int i = 0; i < n; ++i) {
    int c = -1;
    g.sample(rng, &c);
    ++hits[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double w = g.components[c].weight;
    CHECK(std::abs(hits[c] / static_cast<double>(n) - w) <= 3.0 * std::sqrt(w * (1 - w) / n));
  }
}

TEST_CASE("generator JSON round trip") {
  GeneratorConfig cfg;
  auto gens = make_generators(cfg, 13);
  auto back = generators_from_json(generators_to_json(gens));
  REQUIRE(back.size() == gens.size());
  for (std::size_t k = 0; k < gens.size(); ++k)
    for (std::size_t c = 0; c < gens[k].components.size(); ++c) {
      CHECK(back[k].components[c].mean == gens[k].components[c].mean);
      CHECK(back[k].components[c].weight == gens[k].components[c].weight);
    }
}
