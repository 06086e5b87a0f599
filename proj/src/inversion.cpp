#include "fillup/inversion.hpp"

#include "fillup/checkpoint.hpp"
#include "fillup/checksum.hpp"

#include <algorithm>
#include <cmath>

namespace fillup::inversion {

std::string to_string(TokenInit init) {
  switch (init) {
    case TokenInit::mean_of_learned: return "mean_of_learned";
    case TokenInit::zero: return "zero";
    case TokenInit::random: return "random";
  }
  return "?";
}

TokenInit token_init_from_string(const std::string& s) {
  if (s == "mean_of_learned") return TokenInit::mean_of_learned;
  if (s == "zero") return TokenInit::zero;
  if (s == "random") return TokenInit::random;
  throw ConfigError("unknown token init " + s);
}

int step_heuristic(int n_images, int multiplier, int lo, int hi) {
  require(n_images >= 1, "step_heuristic: need at least one image");
  require(lo <= hi, "step_heuristic: lo must not exceed hi");
  return std::min(std::max(n_images * multiplier, lo), hi);
}

namespace {

Vector initial_embedding(const diffusion::DenoiserModel& model, TokenInit init, Rng& rng) {
  const int d_c = model.cond_dim();
  switch (init) {
    case TokenInit::zero: return Vector::Zero(d_c);
    case TokenInit::random: {
      Vector v(d_c);
      for (int i = 0; i < d_c; ++i) v[i] = rng.normal();
      return v;
    }
    case TokenInit::mean_of_learned:
      return model.token_table().rightCols(model.classes()).rowwise().mean();
  }
  return Vector::Zero(d_c);
}

}  // namespace

ClassToken invert_token(const diffusion::DenoiserModel& model, int class_id, const Matrix& samples,
                        const InversionConfig& config, std::uint64_t seed) {
  require(samples.cols() >= 1, "invert_token: need at least one sample");
  require(samples.rows() == model.data_dim(), "invert_token: sample dimension mismatch");
  require(config.steps >= 0 && config.batch_size >= 1 && config.snapshot_every >= 1,
          "invert_token: bad steps, batch size or snapshot interval");
  require(config.lr > 0.0, "invert_token: learning rate must be positive");
  const std::uint64_t before = model.checksum();

  Rng rng(seed);
  Rng init_rng = rng.substream("init");
  ClassToken token;
  token.class_id = class_id;
  token.init = config.init;
  token.seed = seed;
  token.model_checksum = before;
  token.embedding = initial_embedding(model, config.init, init_rng);

  if (config.steps == 0) {
    token.snapshots.push_back({0, token.embedding});
    return token;
  }
  auto opt = learn::OptimizerState::adam(static_cast<std::size_t>(token.embedding.size()));
  Matrix batch(samples.rows(), config.batch_size);
  for (int step = 1; step <= config.steps; ++step) {
    for (int b = 0; b < config.batch_size; ++b)
      batch.col(b) = samples.col(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(samples.cols()))));
    auto draws = diffusion::draw_noise(config.batch_size, model.data_dim(), model.schedule().T, 0.0, rng);
    auto lg = diffusion::token_loss(model, batch, token.embedding, draws);
    if (!std::isfinite(lg.loss))
      throw StageError("invert_token: non-finite loss for class " + std::to_string(class_id));
    token.loss_curve.push_back(lg.loss);
    learn::adam_step(opt, token.embedding, lg.grad, config.lr);
    if (step % config.snapshot_every == 0 || step == config.steps) token.snapshots.push_back({step, token.embedding});
  }
  if (model.checksum() != before) throw StageError("invert_token: denoiser parameters changed during inversion");
  return token;
}

std::vector<int> snapshot_split(int n, int k) {
  require(k >= 1 && n >= 0, "snapshot_split: need at least one snapshot");
  std::vector<int> sizes(static_cast<std::size_t>(k), n / k);
  const int rem = n % k;
  for (int i = 0; i < rem; ++i) ++sizes[static_cast<std::size_t>(k - 1 - i)];
  return sizes;
}

Matrix generate_from_snapshots(const diffusion::NoisePredictor& model, const ClassToken& token, double w,
                               int n_samples, Rng& rng) {
  require(!token.snapshots.empty(), "generate_from_snapshots: token has no snapshots");
  auto sizes = snapshot_split(n_samples, static_cast<int>(token.snapshots.size()));
  Matrix out(model.data_dim(), n_samples);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) continue;
    Matrix part = diffusion::ancestral_sample(model, token.snapshots[i].embedding, w, sizes[i], rng);
    out.middleCols(col, part.cols()) = part;
    col += part.cols();
  }
  return out;
}

ClassToken final_only(const ClassToken& token) {
  require(!token.snapshots.empty(), "final_only: token has no snapshots");
  ClassToken t = token;
  t.snapshots = {token.snapshots.back()};
  return t;
}

ClassToken fixed_token(int class_id, const Vector& embedding) {
  ClassToken t;
  t.class_id = class_id;
  t.embedding = embedding;
  t.snapshots.push_back({0, embedding});
  return t;
}

void write_token(const std::filesystem::path& path, const ClassToken& token) {
  require(!token.snapshots.empty(), "write_token: token has no snapshots");
  nlohmann::json h;
  h["kind"] = "token";
  h["class_id"] = token.class_id;
  h["d_c"] = token.dim();
  h["steps"] = token.steps();
  std::vector<int> steps;
  for (const auto& s : token.snapshots) steps.push_back(s.step);
  h["snapshot_steps"] = steps;
  h["init"] = to_string(token.init);
  h["seed"] = token.seed;
  h["model_checksum"] = to_hex(token.model_checksum);
  std::vector<double> blob;
  for (const auto& s : token.snapshots) blob.insert(blob.end(), s.embedding.data(), s.embedding.data() + s.embedding.size());
  write_checkpoint(path, h, blob);
}

ClassToken read_token(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  const auto& h = ck.header;
  if (h.value("kind", std::string{}) != "token") throw FormatError("not a token file: " + path.string());
  try {
    ClassToken t;
    t.class_id = h.at("class_id").get<int>();
    const int d_c = h.at("d_c").get<int>();
    auto steps = h.at("snapshot_steps").get<std::vector<int>>();
    t.init = token_init_from_string(h.at("init").get<std::string>());
    t.seed = h.at("seed").get<std::uint64_t>();
    t.model_checksum = from_hex(h.at("model_checksum").get<std::string>());
    if (ck.blob.size() != steps.size() * static_cast<std::size_t>(d_c)) throw FormatError("token file: blob size mismatch");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      Vector e(d_c);
      for (int j = 0; j < d_c; ++j) e[j] = ck.blob[i * static_cast<std::size_t>(d_c) + static_cast<std::size_t>(j)];
      t.snapshots.push_back({steps[i], e});
    }
    if (t.snapshots.empty()) throw FormatError("token file: no snapshots");
    t.embedding = t.snapshots.back().embedding;
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("token file: ") + e.what());
  }
}

}  // namespace fillup::inversion
