#include "fillup/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

namespace fillup::metrics {

GaussianSummary GaussianSummary::fit(const Matrix& samples) {
  require(samples.cols() >= 2, "GaussianSummary: need at least two samples");
  GaussianSummary g;
  g.mean = samples.rowwise().mean();
  Matrix centered = samples.colwise() - g.mean;
  g.cov = centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

namespace {

constexpr double kPsdTolerance = 1e-8;

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw StageError("frechet_distance: eigensolver failed");
  Vector ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -kPsdTolerance)
    throw StageError("frechet_distance: covariance is not positive semi-definite");
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  require(a.mean.size() == b.mean.size(), "frechet_distance: dimension mismatch");
  Matrix s1 = psd_sqrt(a.cov);
  psd_sqrt(b.cov);  // PSD check only
  Matrix inner = s1 * b.cov * s1;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw StageError("frechet_distance: eigensolver failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fd = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, fd);
}

double frechet_distance(const Matrix& real, const Matrix& fake) {
  require(real.rows() == fake.rows(), "frechet_distance: dimension mismatch");
  require(real.cols() >= real.rows() + 1 && fake.cols() >= fake.rows() + 1,
          "frechet_distance: need at least d+1 samples per set");
  return frechet_distance(GaussianSummary::fit(real), GaussianSummary::fit(fake));
}

namespace {

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double d = a(r, i) - b(r, j);
    s += d * d;
  }
  return s;
}

// fraction of `query` columns inside at least one ball of `support`
double coverage(const Matrix& query, const Matrix& support, const std::vector<double>& radii2) {
  std::size_t inside = 0;
  for (Eigen::Index q = 0; q < query.cols(); ++q) {
    for (Eigen::Index s = 0; s < support.cols(); ++s) {
      if (sq_dist(query, q, support, s) <= radii2[static_cast<std::size_t>(s)]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(query.cols());
}

}  // namespace

std::vector<double> knn_radii_squared(const Matrix& set, int k) {
  require(k >= 1 && k < set.cols(), "knn_radii: k must lie in [1, n)");
  std::vector<double> radii(static_cast<std::size_t>(set.cols()));
  std::vector<double> row(static_cast<std::size_t>(set.cols() - 1));
  for (Eigen::Index i = 0; i < set.cols(); ++i) {
    std::size_t n = 0;
    for (Eigen::Index j = 0; j < set.cols(); ++j)
      if (j != i) row[n++] = sq_dist(set, i, set, j);
    std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
    radii[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(k - 1)];
  }
  return radii;
}

PrReport precision_recall(const Matrix& real, const Matrix& fake, int k) {
  require(real.rows() == fake.rows(), "precision_recall: dimension mismatch");
  require(k >= 1 && real.cols() > k && fake.cols() > k, "precision_recall: k out of range");
  PrReport r;
  r.k = k;
  r.n_real = static_cast<int>(real.cols());
  r.n_fake = static_cast<int>(fake.cols());
  r.precision = coverage(fake, real, knn_radii_squared(real, k));
  r.recall = coverage(real, fake, knn_radii_squared(fake, k));
  return r;
}

GroupAccuracy group_accuracy(std::span<const int> predictions, std::span<const int> labels,
                             const dataset::ShotGroups& groups) {
  require(predictions.size() == labels.size() && !labels.empty(), "group_accuracy: size mismatch");
  const int K = static_cast<int>(groups.group_of_class.size());
  std::vector<long> hits(static_cast<std::size_t>(K), 0), totals(static_cast<std::size_t>(K), 0);
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < K, "group_accuracy: label outside shot groups");
    ++totals[static_cast<std::size_t>(labels[i])];
    if (predictions[i] == labels[i]) {
      ++hits[static_cast<std::size_t>(labels[i])];
      ++correct;
    }
  }
  GroupAccuracy out;
  out.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  out.per_class.resize(static_cast<std::size_t>(K), 0.0);
  for (int c = 0; c < K; ++c)
    if (totals[static_cast<std::size_t>(c)] > 0)
      out.per_class[static_cast<std::size_t>(c)] =
          static_cast<double>(hits[static_cast<std::size_t>(c)]) / static_cast<double>(totals[static_cast<std::size_t>(c)]);
  auto group_mean = [&](dataset::ShotGroup g) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (int c : groups.classes_in(g)) {
      if (totals[static_cast<std::size_t>(c)] == 0) continue;
      sum += out.per_class[static_cast<std::size_t>(c)];
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  };
  out.many = group_mean(dataset::ShotGroup::many);
  out.medium = group_mean(dataset::ShotGroup::medium);
  out.few = group_mean(dataset::ShotGroup::few);
  return out;
}

void sweep_pool(const diffusion::NoisePredictor& model, std::span<const inversion::ClassToken> tokens, double w,
                int n_per_class, std::uint64_t seed, Matrix& x, std::vector<int>& labels) {
  Rng root(derive_seed(seed, "sweep", std::bit_cast<std::uint64_t>(w)));
  x.resize(model.data_dim(), static_cast<Eigen::Index>(tokens.size()) * n_per_class);
  labels.clear();
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    Rng rng = root.substream("class", static_cast<std::uint64_t>(tokens[k].class_id));
    Matrix part = w == 0.0 ? diffusion::ancestral_sample(model, model.null_token(), 0.0, n_per_class, rng)
                           : inversion::generate_from_snapshots(model, tokens[k], w, n_per_class, rng);
    x.middleCols(static_cast<Eigen::Index>(k) * n_per_class, n_per_class) = part;
    labels.insert(labels.end(), static_cast<std::size_t>(n_per_class), tokens[k].class_id);
  }
}

std::vector<SweepRow> guidance_sweep(const diffusion::NoisePredictor& model,
                                     std::span<const inversion::ClassToken> tokens, const Matrix& real_reference,
                                     const classifier::EvalSet& test, const SweepConfig& config,
                                     const classifier::ClassifierModel* feature_extractor) {
  require(!tokens.empty(), "guidance_sweep: no tokens");
  require(config.n_per_class >= 1, "guidance_sweep: n_per_class must be >= 1");
  auto features = [&](const Matrix& m) { return feature_extractor ? feature_extractor->features(m) : m; };
  const Matrix real_features = features(real_reference);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < config.scales.size(); ++i) {
    const double w = config.scales[i];
    Matrix x;
    std::vector<int> labels;
    sweep_pool(model, tokens, w, config.n_per_class, config.seed, x, labels);
    SweepRow row;
    row.w = w;
    const Matrix fake_features = features(x);
    row.frechet = frechet_distance(real_features, fake_features);
    auto pr = precision_recall(real_features, fake_features, config.k);
    row.precision = pr.precision;
    row.recall = pr.recall;
    classifier::TrainRecipe recipe = config.recipe;
    recipe.stage = classifier::Stage::stage1;
    recipe.loss = classifier::LossKind::ce;
    classifier::ClassifierModel clf(config.classifier, derive_seed(config.seed, "sweep-classifier"));
    classifier::train_classifier(clf, x, labels, recipe, derive_seed(config.seed, "sweep-train", std::bit_cast<std::uint64_t>(w)));
    row.top1 = classifier::accuracy(clf, test);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string out = "scale,top1,frechet,precision,recall\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f,%.4f,%.6f,%.4f,%.4f\n", r.w, r.top1, r.frechet, r.precision, r.recall);
    out += buf;
  }
  return out;
}

}  // namespace fillup::metrics
