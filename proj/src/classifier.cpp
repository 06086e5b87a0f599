#include "fillup/classifier.hpp"

#include "fillup/checkpoint.hpp"
#include "fillup/checksum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace fillup::classifier {

namespace {

learn::Mlp build_backbone(const ClassifierConfig& c) {
  std::vector<int> widths{c.d_x};
  for (int h : c.hidden) widths.push_back(h);
  widths.push_back(c.feature_width);
  return learn::Mlp(widths, std::vector<learn::Activation>(widths.size() - 1, learn::Activation::relu));
}

std::uint64_t hash_vector(const Vector& p) {
  return fnv1a64(std::as_bytes(std::span(p.data(), static_cast<std::size_t>(p.size()))));
}

}  // namespace

ClassifierModel::ClassifierModel(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  require(config.d_x >= 1 && config.K >= 2 && config.feature_width >= 1, "classifier: bad dimensions");
  backbone_ = build_backbone(config);
  head_ = learn::Mlp({config.feature_width, config.K}, {learn::Activation::identity});
  Rng rng(seed);
  Rng brng = rng.substream("backbone");
  backbone_.init(brng, std::sqrt(2.0));
  Rng hrng = rng.substream("head");
  head_.init(hrng);
}

Vector ClassifierModel::flat_parameters() const {
  Vector p(static_cast<Eigen::Index>(parameter_count()));
  p.head(static_cast<Eigen::Index>(backbone_.parameter_count())) = backbone_.parameters();
  p.tail(static_cast<Eigen::Index>(head_.parameter_count())) = head_.parameters();
  return p;
}

void ClassifierModel::set_flat_parameters(const Vector& p) {
  require(p.size() == static_cast<Eigen::Index>(parameter_count()), "classifier: parameter size mismatch");
  backbone_.set_parameters(p.head(static_cast<Eigen::Index>(backbone_.parameter_count())));
  head_.set_parameters(p.tail(static_cast<Eigen::Index>(head_.parameter_count())));
}

std::uint64_t ClassifierModel::backbone_checksum() const { return hash_vector(backbone_.parameters()); }
std::uint64_t ClassifierModel::checksum() const { return hash_vector(flat_parameters()); }

void ClassifierModel::save(const std::filesystem::path& path, std::uint64_t seed) const {
  nlohmann::json h;
  h["kind"] = "classifier";
  h["seed"] = seed;
  h["architecture"] = {{"d_x", config_.d_x},
                       {"K", config_.K},
                       {"hidden", config_.hidden},
                       {"feature_width", config_.feature_width},
                       {"backbone_widths", backbone_.widths()},
                       {"head_widths", head_.widths()}};
  h["shapes"] = {{"backbone", backbone_.parameter_count()}, {"head", head_.parameter_count()}};
  h["param_ranges"] = {{"backbone", {0, backbone_.parameter_count()}},
                       {"head", {backbone_.parameter_count(), parameter_count()}}};
  Vector p = flat_parameters();
  write_checkpoint(path, h, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  const auto& h = ck.header;
  if (h.value("kind", std::string{}) != "classifier") throw FormatError("not a classifier checkpoint: " + path.string());
  try {
    ClassifierConfig c;
    const auto& a = h.at("architecture");
    c.d_x = a.at("d_x").get<int>();
    c.K = a.at("K").get<int>();
    c.hidden = a.at("hidden").get<std::vector<int>>();
    c.feature_width = a.at("feature_width").get<int>();
    ClassifierModel m(c, 0);
    auto values = ck.as_doubles();
    if (values.size() != m.parameter_count()) throw FormatError("classifier checkpoint: parameter count mismatch");
    auto split = h.at("param_ranges").at("backbone").get<std::vector<std::size_t>>();
    if (split.size() != 2 || split[1] != m.backbone_parameter_count())
      throw FormatError("classifier checkpoint: backbone range mismatch");
    m.set_flat_parameters(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("classifier checkpoint: ") + e.what());
  }
}

Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Vector balanced_softmax(const Vector& logits, std::span<const double> counts) {
  require(static_cast<Eigen::Index>(counts.size()) == logits.size(), "balanced_softmax: counts length mismatch");
  for (double n : counts) require(n > 0.0, "balanced_softmax: counts must be positive");
  Vector adjusted = logits;
  for (Eigen::Index j = 0; j < logits.size(); ++j) adjusted[j] += std::log(counts[static_cast<std::size_t>(j)]);
  return softmax(adjusted);
}

namespace {

struct ForwardCache {
  learn::MlpTape backbone;
  learn::MlpTape head;
};

LossAndGrad prior_adjusted_loss(const ClassifierModel& model, const Matrix& x, std::span<const int> labels,
                                std::span<const double> counts) {
  require(x.cols() > 0 && static_cast<Eigen::Index>(labels.size()) == x.cols(), "loss: bad batch");
  const int K = model.classes();
  Vector log_prior = Vector::Zero(K);
  if (!counts.empty()) {
    require(static_cast<int>(counts.size()) == K, "loss: counts length mismatch");
    for (int j = 0; j < K; ++j) {
      require(counts[static_cast<std::size_t>(j)] > 0.0, "loss: counts must be positive");
      log_prior[j] = std::log(counts[static_cast<std::size_t>(j)]);
    }
  }
  ForwardCache cache;
  Matrix feats = model.backbone().forward(x, cache.backbone);
  Matrix logits = model.head().forward(feats, cache.head);
  logits.colwise() += log_prior;
  const auto n = static_cast<double>(x.cols());
  Matrix upstream(K, x.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    require(y >= 0 && y < K, "loss: label out of range");
    const double m = logits.col(j).maxCoeff();
    Eigen::ArrayXd e = (logits.col(j).array() - m).exp();
    const double z = e.sum();
    total += std::log(z) + m - logits(y, j);
    upstream.col(j) = e.matrix() / z;
    upstream(y, j) -= 1.0;
  }
  upstream /= n;
  LossAndGrad out;
  out.loss = total / n;
  out.grad = Vector::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  const auto nb = static_cast<Eigen::Index>(model.backbone_parameter_count());
  Matrix d_feat = model.head().backward(cache.head, upstream, out.grad.tail(out.grad.size() - nb));
  model.backbone().backward(cache.backbone, d_feat, out.grad.head(nb));
  return out;
}

}  // namespace

LossAndGrad bs_loss(const ClassifierModel& model, const Matrix& x, std::span<const int> labels,
                    std::span<const double> counts) {
  return prior_adjusted_loss(model, x, labels, counts);
}

LossAndGrad ce_loss(const ClassifierModel& model, const Matrix& x, std::span<const int> labels) {
  return prior_adjusted_loss(model, x, labels, {});
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::stage1: return "stage1";
    case Stage::stage2_full: return "stage2_full";
    case Stage::stage2_crt: return "stage2_crt";
    case Stage::stage2_naive: return "stage2_naive";
  }
  return "?";
}
std::string to_string(LossKind l) { return l == LossKind::ce ? "ce" : "balanced_softmax"; }
std::string to_string(SamplerKind s) { return s == SamplerKind::instance ? "instance" : "class_balanced"; }

LossKind loss_from_string(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "balanced_softmax" || s == "bs") return LossKind::balanced_softmax;
  throw ConfigError("unknown loss " + s);
}

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "instance") return SamplerKind::instance;
  if (s == "class_balanced") return SamplerKind::class_balanced;
  throw ConfigError("unknown sampler " + s);
}

void TrainRecipe::validate(int K) const {
  require(epochs >= 0 && batch_size >= 1, "recipe: bad epochs or batch size");
  require(jitter >= 0.0, "recipe: jitter must be >= 0");
  schedule.validate();
  if (loss == LossKind::balanced_softmax) {
    require(static_cast<int>(bs_counts.size()) == K, "recipe: balanced softmax needs one count per class");
    for (int n : bs_counts) require(n > 0, "recipe: balanced softmax counts must be positive");
  }
  if (stage == Stage::stage2_naive)
    require(loss == LossKind::ce && sampler == SamplerKind::instance,
            "recipe: naive fine-tuning uses cross-entropy with instance sampling");
}

int argmax(const Vector& logits) {
  int best = 0;
  for (Eigen::Index j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[best]) best = static_cast<int>(j);
  return best;
}

int predict(const ClassifierModel& model, const Vector& x) { return argmax(model.logits(x)); }

std::vector<int> predict(const ClassifierModel& model, const Matrix& x) {
  Matrix logits = model.logits(x);
  std::vector<int> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax(logits.col(j));
  return out;
}

double accuracy(const ClassifierModel& model, const EvalSet& eval) {
  if (eval.labels.empty()) return 0.0;
  auto pred = predict(model, eval.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == eval.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

ClassBalancedSampler::ClassBalancedSampler(std::span<const int> labels, int K) : by_class_(static_cast<std::size_t>(K)) {
  for (std::size_t i = 0; i < labels.size(); ++i) by_class_.at(static_cast<std::size_t>(labels[i])).push_back(i);
  for (int k = 0; k < K; ++k)
    if (!by_class_[static_cast<std::size_t>(k)].empty()) nonempty_.push_back(k);
  require(!nonempty_.empty(), "class-balanced sampler: no samples");
}

std::vector<std::size_t> ClassBalancedSampler::next(int batch_size, Rng& rng) const {
  std::vector<std::size_t> batch(static_cast<std::size_t>(batch_size));
  for (auto& idx : batch) {
    const auto& members = by_class_[static_cast<std::size_t>(nonempty_[rng.index(nonempty_.size())])];
    idx = members[rng.index(members.size())];
  }
  return batch;
}

std::vector<std::vector<std::size_t>> class_balanced_batches(std::span<const int> labels, int K, int batch_size,
                                                             int n_batches, Rng& rng) {
  ClassBalancedSampler sampler(labels, K);
  std::vector<std::vector<std::size_t>> out;
  for (int b = 0; b < n_batches; ++b) out.push_back(sampler.next(batch_size, rng));
  return out;
}

TrainHistory train_classifier(ClassifierModel& model, const Matrix& x, std::span<const int> labels,
                              const TrainRecipe& recipe, std::uint64_t seed, const EvalSet* eval) {
  recipe.validate(model.classes());
  require(static_cast<Eigen::Index>(labels.size()) == x.cols() && x.cols() > 0, "train: need a non-empty dataset");
  require(x.rows() == model.config().d_x, "train: input dimension mismatch");
  std::vector<double> counts;
  if (recipe.loss == LossKind::balanced_softmax) counts.assign(recipe.bs_counts.begin(), recipe.bs_counts.end());
  const bool head_only = recipe.stage == Stage::stage2_crt;
  const auto nb = static_cast<Eigen::Index>(model.backbone_parameter_count());

  Vector params = model.flat_parameters();
  Vector trainable = head_only ? Vector(params.tail(params.size() - nb)) : params;
  auto opt = learn::OptimizerState::sgd(static_cast<std::size_t>(trainable.size()), recipe.momentum,
                                        recipe.weight_decay);
  Rng rng(seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int batches_per_epoch = static_cast<int>((order.size() + static_cast<std::size_t>(recipe.batch_size) - 1) /
                                                 static_cast<std::size_t>(recipe.batch_size));
  std::optional<ClassBalancedSampler> sampler;
  if (recipe.sampler == SamplerKind::class_balanced) sampler.emplace(labels, model.classes());

  TrainHistory history;
  Matrix batch;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    const double lr = learn::lr_at(recipe.schedule, epoch);
    if (!sampler) std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    std::size_t seen = 0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<std::size_t> idx;
      if (sampler) {
        idx = sampler->next(recipe.batch_size, rng);
      } else {
        const std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(recipe.batch_size);
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(recipe.batch_size));
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      }
      batch.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
      batch_labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        batch.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(idx[i]));
        batch_labels[i] = labels[idx[i]];
      }
      if (recipe.jitter > 0.0)
        for (Eigen::Index j = 0; j < batch.cols(); ++j)
          for (Eigen::Index i = 0; i < batch.rows(); ++i) batch(i, j) += recipe.jitter * rng.normal();
      auto lg = prior_adjusted_loss(model, batch, batch_labels, counts);
      if (!std::isfinite(lg.loss)) throw StageError("train: non-finite loss at epoch " + std::to_string(epoch));
      if (head_only) {
        Vector g = lg.grad.tail(lg.grad.size() - nb);
        learn::sgd_step(opt, trainable, g, lr);
        params.tail(params.size() - nb) = trainable;
      } else {
        learn::sgd_step(opt, trainable, lg.grad, lr);
        params = trainable;
      }
      model.set_flat_parameters(params);
      total += lg.loss * static_cast<double>(idx.size());
      seen += idx.size();
    }
    history.loss.push_back(total / static_cast<double>(seen));
    if (eval) history.test_accuracy.push_back(accuracy(model, *eval));
  }
  return history;
}

TrainHistory train_stage1(ClassifierModel& model, const dataset::LongTailedDataset& filled, const TrainRecipe& recipe,
                          std::uint64_t seed, const EvalSet* eval) {
  require(recipe.stage == Stage::stage1, "train_stage1: recipe is not a stage-1 recipe");
  if (recipe.loss == LossKind::balanced_softmax && recipe.bs_counts != filled.counts_real)
    throw StageError("train_stage1: balanced softmax prior must be the real per-class counts");
  Matrix x;
  std::vector<int> labels;
  filled.select(dataset::Split::train, x, labels);
  return train_classifier(model, x, labels, recipe, seed, eval);
}

TrainHistory train_stage2(ClassifierModel& model, const dataset::LongTailedDataset& real, const TrainRecipe& recipe,
                          std::uint64_t seed, const EvalSet* eval) {
  require(recipe.stage == Stage::stage2_full || recipe.stage == Stage::stage2_crt || recipe.stage == Stage::stage2_naive,
          "train_stage2: recipe is not a stage-2 recipe");
  if (real.count_source(dataset::Split::train, dataset::Source::synthetic) != 0)
    throw StageError("train_stage2: synthetic samples are not allowed in stage II");
  if (recipe.loss == LossKind::balanced_softmax && recipe.bs_counts != real.counts_real)
    throw StageError("train_stage2: balanced softmax prior must be the real per-class counts");
  Matrix x;
  std::vector<int> labels;
  real.select(dataset::Split::train, dataset::Source::real, x, labels);
  const std::uint64_t backbone_before = model.backbone_checksum();
  auto history = train_classifier(model, x, labels, recipe, seed, eval);
  if (recipe.stage == Stage::stage2_crt && model.backbone_checksum() != backbone_before)
    throw StageError("train_stage2: cRT modified backbone parameters");
  return history;
}

}  // namespace fillup::classifier
