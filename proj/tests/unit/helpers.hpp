#pragma once

#include "fillup/classifier.hpp"
#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/rng.hpp"

#include "stubs.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fillup::test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fillup_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}



/// Small trained two-class denoiser shared by the diffusion, inversion and
/// fill-up tests. Built once per process.
struct ToyModel {
  std::vector<dataset::ClassGenerator> generators;
  dataset::LongTailedDataset data;
  diffusion::DenoiserModel model;
  std::vector<double> loss_curve;
};

inline const ToyModel& toy_model() {
  static const ToyModel toy = [] {
    ToyModel t;
    dataset::GeneratorConfig gc;
    gc.K = 2;
    t.generators = dataset::make_generators(gc, 11);
    std::vector<int> counts{100, 100};
    t.data = dataset::draw_dataset(t.generators, counts, 200, 12);
    diffusion::DenoiserConfig dc;
    dc.K = 2;
    dc.hidden = 64;
    diffusion::DenoiserModel init(dc, 13);
    Matrix x;
    std::vector<int> y;
    t.data.select(dataset::Split::train, dataset::Source::real, x, y);
    diffusion::DiffusionTrainConfig tc;
    tc.epochs = 300;
    tc.batch_size = 32;
    auto r = diffusion::train_diffusion(init, x, y, tc, 14);
    t.model = r.model;
    t.loss_curve = r.loss_curve;
    return t;
  }();
  return toy;
}

/// Fraction of columns of `samples` whose nearest analytic class mean is `k`.
inline double nearest_mean_fraction(const Matrix& samples, const std::vector<dataset::ClassGenerator>& gens, int k) {
  int hit = 0;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    int best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < gens.size(); ++c) {
      double d = (samples.col(j) - gens[c].mean()).squaredNorm();
      if (d < bd) {
        bd = d;
        best = static_cast<int>(c);
      }
    }
    hit += best == k;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.cols());
}

}  // namespace fillup::test
