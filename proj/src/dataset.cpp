#include "fillup/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace fillup::dataset {

Vector ClassGenerator::sample(Rng& rng, int* component) const {
  double u = rng.uniform();
  std::size_t pick = components.size() - 1;
  double acc = 0.0;
  for (std::size_t c = 0; c < components.size(); ++c) {
    acc += components[c].weight;
    if (u < acc) {
      pick = c;
      break;
    }
  }
  if (component) *component = static_cast<int>(pick);
  const auto& comp = components[pick];
  Vector x(d_x);
  for (int j = 0; j < d_x; ++j) x[j] = comp.mean[j] + std::sqrt(comp.variance[j]) * rng.normal();
  return x;
}

Vector ClassGenerator::mean() const {
  Vector m = Vector::Zero(d_x);
  for (const auto& c : components) m += c.weight * c.mean;
  return m;
}

void ClassGenerator::validate() const {
  if (components.size() < 2) throw FormatError("class generator needs at least 2 components");
  double total = 0.0;
  for (const auto& c : components) {
    if (c.mean.size() != d_x || c.variance.size() != d_x) throw FormatError("component dimension mismatch");
    if ((c.variance.array() <= 0.0).any()) throw FormatError("component variance must be positive");
    if (!(c.weight >= 0.0)) throw FormatError("component weight must be nonnegative");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw FormatError("component weights must sum to 1");
}

double nearest_mean_accuracy(std::span<const ClassGenerator> generators, int per_class, Rng& rng) {
  std::vector<Vector> means;
  for (const auto& g : generators) means.push_back(g.mean());
  long correct = 0;
  for (const auto& g : generators) {
    for (int i = 0; i < per_class; ++i) {
      Vector x = g.sample(rng);
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < means.size(); ++k) {
        double d = (x - means[k]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      if (best == g.class_id) ++correct;
    }
  }
  return static_cast<double>(correct) / (static_cast<double>(per_class) * generators.size());
}

int ring_slot(const GeneratorConfig& cfg, int k) {
  if (!cfg.interleave) return k;
  const int half = (cfg.K + 1) / 2;
  return k < half ? 2 * k : 2 * (k - half) + 1;
}

namespace {

std::vector<ClassGenerator> build_generators(const GeneratorConfig& cfg, Rng& rng) {
  std::vector<ClassGenerator> out;
  const double angle_step = 2.0 * std::numbers::pi / cfg.K;
  for (int k = 0; k < cfg.K; ++k) {
    ClassGenerator g;
    g.class_id = k;
    g.d_x = cfg.d_x;
    double angle = angle_step * ring_slot(cfg, k) + 0.1 * angle_step * (rng.uniform() - 0.5);
    Vector anchor = Vector::Zero(cfg.d_x);
    anchor[0] = cfg.ring_radius * std::cos(angle);
    anchor[1] = cfg.ring_radius * std::sin(angle);
    double weight_total = 0.0;
    for (int c = 0; c < cfg.components; ++c) {
      MixtureComponent comp;
      comp.mean = anchor;
      // uniform offset in a disc within the ring plane
      double r = cfg.jitter * std::sqrt(rng.uniform());
      double phi = 2.0 * std::numbers::pi * rng.uniform();
      comp.mean[0] += r * std::cos(phi);
      comp.mean[1] += r * std::sin(phi);
      for (int j = 2; j < cfg.d_x; ++j) comp.mean[j] += cfg.jitter * (2.0 * rng.uniform() - 1.0);
      comp.variance.resize(cfg.d_x);
      for (int j = 0; j < cfg.d_x; ++j) {
        double s = cfg.component_std * (0.7 + 0.6 * rng.uniform());
        comp.variance[j] = s * s;
      }
      comp.weight = 0.5 + rng.uniform();
      weight_total += comp.weight;
      g.components.push_back(std::move(comp));
    }
    for (auto& comp : g.components) comp.weight /= weight_total;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

std::vector<ClassGenerator> make_generators(const GeneratorConfig& cfg, std::uint64_t seed) {
  require(cfg.K >= 2, "make_generators: K must be >= 2");
  require(cfg.d_x >= 2, "make_generators: d_x must be >= 2");
  require(cfg.components >= 2, "make_generators: need at least 2 components per class");
  require(cfg.ring_radius > 0.0 && cfg.component_std > 0.0 && cfg.jitter >= 0.0,
          "make_generators: radius and std must be positive");
  Rng root(seed);
  for (int attempt = 0; attempt < std::max(1, cfg.max_retries); ++attempt) {
    Rng rng = root.substream("generators", static_cast<std::uint64_t>(attempt));
    auto gens = build_generators(cfg, rng);
    Rng check = root.substream("calibration", static_cast<std::uint64_t>(attempt));
    if (nearest_mean_accuracy(gens, 1000, check) >= 0.95) return gens;
  }
  throw StageError("make_generators: class separation below 0.95 nearest-mean accuracy after retries");
}

std::vector<int> longtailed_counts(int K, int n_max, double imbalance_factor) {
  require(K >= 2, "longtailed_counts: K must be >= 2");
  require(imbalance_factor >= 1.0, "longtailed_counts: imbalance factor must be >= 1");
  require(n_max / imbalance_factor >= 1.0, "longtailed_counts: n_max / IF < 1 would empty the tail class");
  std::vector<int> counts(K);
  for (int i = 0; i < K; ++i) {
    double n = n_max * std::pow(imbalance_factor, -static_cast<double>(i) / (K - 1));
    counts[i] = std::max(1, static_cast<int>(std::round(n)));
  }
  return counts;
}

std::vector<int> ShotGroups::classes_in(ShotGroup g) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < group_of_class.size(); ++i)
    if (group_of_class[i] == g) out.push_back(static_cast<int>(i));
  return out;
}

ShotGroups assign_shot_groups(std::span<const int> counts, double scale) {
  require(scale > 0.0, "assign_shot_groups: scale must be positive");
  ShotGroups g;
  g.many_above = 100.0 * scale;
  g.few_below = 20.0 * scale;
  for (int n : counts) {
    if (n > g.many_above) g.group_of_class.push_back(ShotGroup::many);
    else if (n < g.few_below) g.group_of_class.push_back(ShotGroup::few);
    else g.group_of_class.push_back(ShotGroup::medium);
  }
  return g;
}

std::string to_string(ShotGroup g) {
  switch (g) {
    case ShotGroup::many: return "many";
    case ShotGroup::medium: return "medium";
    case ShotGroup::few: return "few";
  }
  return "?";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }
std::string to_string(Source s) { return s == Source::real ? "real" : "synthetic"; }

void LongTailedDataset::recount() {
  counts_real.assign(K, 0);
  for (const auto& s : samples)
    if (s.split == Split::train && s.source == Source::real) ++counts_real.at(s.label);
}

void LongTailedDataset::validate() const {
  if (static_cast<int>(counts_real.size()) != K) throw FormatError("counts_real length differs from K");
  std::vector<int> real(K, 0), test(K, 0);
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= K) throw FormatError("label out of range");
    if (s.x.size() != d_x) throw FormatError("sample dimension mismatch");
    if (s.split == Split::train && s.source == Source::real) ++real[s.label];
    if (s.split == Split::test) ++test[s.label];
  }
  if (real != counts_real) throw FormatError("counts_real does not match the real train samples");
  for (int c : counts_real)
    if (c < 1) throw FormatError("every class needs at least one real train sample");
  if (std::adjacent_find(test.begin(), test.end(), std::not_equal_to<>()) != test.end())
    throw FormatError("test split is not class-balanced");
}

std::vector<int> LongTailedDataset::train_totals() const {
  std::vector<int> t(K, 0);
  for (const auto& s : samples)
    if (s.split == Split::train) ++t[s.label];
  return t;
}

std::size_t LongTailedDataset::size(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.split == split; }));
}

std::size_t LongTailedDataset::count_source(Split split, Source source) const {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](const Sample& s) {
    return s.split == split && s.source == source;
  }));
}

void LongTailedDataset::select(Split split, Matrix& x, std::vector<int>& labels) const {
  std::vector<const Sample*> picked;
  for (const auto& s : samples)
    if (s.split == split) picked.push_back(&s);
  x.resize(d_x, static_cast<Eigen::Index>(picked.size()));
  labels.resize(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = picked[i]->x;
    labels[i] = picked[i]->label;
  }
}

void LongTailedDataset::select(Split split, Source source, Matrix& x, std::vector<int>& labels) const {
  std::vector<const Sample*> picked;
  for (const auto& s : samples)
    if (s.split == split && s.source == source) picked.push_back(&s);
  x.resize(d_x, static_cast<Eigen::Index>(picked.size()));
  labels.resize(picked.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = picked[i]->x;
    labels[i] = picked[i]->label;
  }
}

Matrix LongTailedDataset::class_samples(int label) const {
  std::vector<const Sample*> picked;
  for (const auto& s : samples)
    if (s.split == Split::train && s.source == Source::real && s.label == label) picked.push_back(&s);
  Matrix x(d_x, static_cast<Eigen::Index>(picked.size()));
  for (std::size_t i = 0; i < picked.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = picked[i]->x;
  return x;
}

LongTailedDataset draw_dataset(std::span<const ClassGenerator> generators, std::span<const int> counts,
                               int n_test_per_class, std::uint64_t seed) {
  require(counts.size() == generators.size(), "draw_dataset: counts length must equal K");
  require(n_test_per_class >= 0, "draw_dataset: negative test size");
  LongTailedDataset data;
  data.K = static_cast<int>(generators.size());
  data.d_x = generators.empty() ? 0 : generators.front().d_x;
  Rng root(seed);
  for (std::size_t k = 0; k < generators.size(); ++k) {
    Rng rng = root.substream("train", k);
    for (int i = 0; i < counts[k]; ++i)
      data.samples.push_back({generators[k].sample(rng), static_cast<int>(k), Source::real, Split::train});
  }
  for (std::size_t k = 0; k < generators.size(); ++k) {
    Rng rng = root.substream("test", k);
    for (int i = 0; i < n_test_per_class; ++i)
      data.samples.push_back({generators[k].sample(rng), static_cast<int>(k), Source::real, Split::test});
  }
  data.recount();
  return data;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string to_csv(const LongTailedDataset& data) {
  std::string out = "split,source,label";
  for (int j = 0; j < data.d_x; ++j) out += ",x" + std::to_string(j);
  out += '\n';
  for (const auto& s : data.samples) {
    out += to_string(s.split);
    out += ',';
    out += to_string(s.source);
    out += ',';
    out += std::to_string(s.label);
    for (int j = 0; j < data.d_x; ++j) {
      out += ',';
      out += format_real(s.x[j]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

LongTailedDataset from_csv(const std::string& text, int K) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset CSV: missing header");
  auto header = split_fields(line);
  if (header.size() < 4 || header[0] != "split" || header[1] != "source" || header[2] != "label")
    throw FormatError("dataset CSV: unexpected header");
  LongTailedDataset data;
  data.K = K;
  data.d_x = static_cast<int>(header.size()) - 3;
  for (int j = 0; j < data.d_x; ++j)
    if (header[3 + j] != "x" + std::to_string(j)) throw FormatError("dataset CSV: unexpected column " + header[3 + j]);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (static_cast<int>(f.size()) != data.d_x + 3) throw FormatError("dataset CSV: wrong field count");
    Sample s;
    if (f[0] == "train") s.split = Split::train;
    else if (f[0] == "test") s.split = Split::test;
    else throw FormatError("dataset CSV: bad split " + f[0]);
    if (f[1] == "real") s.source = Source::real;
    else if (f[1] == "synthetic") s.source = Source::synthetic;
    else throw FormatError("dataset CSV: bad source " + f[1]);
    try {
      s.label = std::stoi(f[2]);
      s.x.resize(data.d_x);
      for (int j = 0; j < data.d_x; ++j) s.x[j] = std::stod(f[3 + j]);
    } catch (const std::logic_error&) {
      throw FormatError("dataset CSV: unparsable number");
    }
    if (s.label < 0 || s.label >= K) throw FormatError("dataset CSV: label out of range");
    data.samples.push_back(std::move(s));
  }
  data.recount();
  return data;
}

void write_csv(const std::filesystem::path& path, const LongTailedDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_csv(data);
}

LongTailedDataset read_csv(const std::filesystem::path& path, int K) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str(), K);
}

nlohmann::json generators_to_json(std::span<const ClassGenerator> generators) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : generators) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : g.components)
      comps.push_back({{"mean", vec(c.mean)}, {"variance", vec(c.variance)}, {"weight", c.weight}});
    arr.push_back({{"class_id", g.class_id}, {"d_x", g.d_x}, {"components", comps}});
  }
  return arr;
}

std::vector<ClassGenerator> generators_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  std::vector<ClassGenerator> out;
  for (const auto& g : j) {
    ClassGenerator gen;
    gen.class_id = g.at("class_id").get<int>();
    gen.d_x = g.at("d_x").get<int>();
    for (const auto& c : g.at("components"))
      gen.components.push_back({vec(c.at("mean")), vec(c.at("variance")), c.at("weight").get<double>()});
    gen.validate();
    out.push_back(std::move(gen));
  }
  return out;
}

}  // namespace fillup::dataset
