#include "fillup/fillup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fillup::fill {

std::string to_string(FillStrategy s) {
  switch (s) {
    case FillStrategy::under: return "A";
    case FillStrategy::balance: return "B";
    case FillStrategy::over: return "C";
    case FillStrategy::addon: return "D";
  }
  return "?";
}

FillStrategy strategy_from_string(const std::string& s) {
  if (s == "A" || s == "under") return FillStrategy::under;
  if (s == "B" || s == "balance") return FillStrategy::balance;
  if (s == "C" || s == "over") return FillStrategy::over;
  if (s == "D" || s == "addon") return FillStrategy::addon;
  throw ConfigError("unknown fill strategy " + s);
}

int FillPlan::total() const { return std::accumulate(synth_counts.begin(), synth_counts.end(), 0); }

FillPlan plan_fill(std::span<const int> counts, FillStrategy strategy, std::optional<int> value) {
  require(!counts.empty(), "plan_fill: empty counts");
  for (int n : counts) require(n >= 1, "plan_fill: counts must be positive");
  const int max_n = *std::max_element(counts.begin(), counts.end());
  FillPlan plan;
  plan.strategy = strategy;
  if (strategy == FillStrategy::addon) {
    require(value.has_value(), "plan_fill: strategy D needs an addon count");
    require(*value >= 0, "plan_fill: addon must be >= 0");
    plan.addon = *value;
    plan.synth_counts.assign(counts.size(), plan.addon);
    return plan;
  }
  switch (strategy) {
    case FillStrategy::under:
      plan.target = value.value_or(static_cast<int>(std::lround(kUnderFraction * max_n)));
      require(plan.target < max_n, "plan_fill: strategy A target must be below the largest class");
      break;
    case FillStrategy::balance:
      plan.target = value.value_or(max_n);
      break;
    case FillStrategy::over:
      plan.target = value.value_or(static_cast<int>(std::lround(kOverFraction * max_n)));
      require(plan.target > max_n, "plan_fill: strategy C target must exceed the largest class");
      break;
    case FillStrategy::addon: break;
  }
  require(plan.target >= 1, "plan_fill: target must be >= 1");
  for (int n : counts) plan.synth_counts.push_back(std::max(0, plan.target - n));
  return plan;
}

nlohmann::json plan_to_json(const FillPlan& plan) {
  return {{"strategy", to_string(plan.strategy)},
          {"target", plan.target},
          {"addon", plan.addon},
          {"synth_counts", plan.synth_counts},
          {"total", plan.total()}};
}

FillPlan plan_from_json(const nlohmann::json& j) {
  try {
    FillPlan p;
    p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    p.target = j.at("target").get<int>();
    p.addon = j.at("addon").get<int>();
    p.synth_counts = j.at("synth_counts").get<std::vector<int>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fill plan: ") + e.what());
  }
}

std::vector<int> SamplePool::per_class(int K) const {
  std::vector<int> c(static_cast<std::size_t>(K), 0);
  for (const auto& s : samples) ++c.at(static_cast<std::size_t>(s.label));
  return c;
}

SamplePool realize_plan(const FillPlan& plan, std::span<const std::optional<inversion::ClassToken>> tokens,
                        const diffusion::NoisePredictor& model, double w, std::uint64_t seed,
                        const std::string& token_kind) {
  require(tokens.size() == plan.synth_counts.size(), "realize_plan: one token slot per class required");
  SamplePool pool;
  pool.d_x = model.data_dim();
  Rng root(seed);
  for (std::size_t k = 0; k < plan.synth_counts.size(); ++k) {
    const int quota = plan.synth_counts[k];
    if (quota == 0) continue;
    if (!tokens[k]) throw ConfigError("realize_plan: missing token for class " + std::to_string(k));
    Rng rng = root.substream("fill", k);
    Matrix x = inversion::generate_from_snapshots(model, *tokens[k], w, quota, rng);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      pool.samples.push_back({x.col(j), static_cast<int>(k), dataset::Source::synthetic, dataset::Split::train});
      pool.token_kind.push_back(token_kind);
      pool.w.push_back(w);
    }
  }
  return pool;
}

dataset::LongTailedDataset merge(const dataset::LongTailedDataset& real, const SamplePool& pool) {
  dataset::LongTailedDataset out = real;
  if (!pool.samples.empty() && pool.d_x != real.d_x) throw ConfigError("merge: dimension mismatch");
  // synthetic samples follow the real train block, ahead of the test split
  auto test_begin = std::stable_partition(out.samples.begin(), out.samples.end(),
                                          [](const dataset::Sample& s) { return s.split == dataset::Split::train; });
  std::vector<dataset::Sample> synth;
  for (const auto& s : pool.samples) {
    if (s.label < 0 || s.label >= real.K) throw ConfigError("merge: pool label outside the dataset label space");
    synth.push_back({s.x, s.label, dataset::Source::synthetic, dataset::Split::train});
  }
  out.samples.insert(test_begin, synth.begin(), synth.end());
  return out;
}

std::string pool_to_csv(const SamplePool& pool) {
  std::string out = "label,token_kind,w";
  for (int j = 0; j < pool.d_x; ++j) out += ",x" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < pool.samples.size(); ++i) {
    const auto& s = pool.samples[i];
    out += std::to_string(s.label) + ',' + pool.token_kind[i] + ',' + dataset::format_real(pool.w[i]);
    for (int j = 0; j < pool.d_x; ++j) out += ',' + dataset::format_real(s.x[j]);
    out += '\n';
  }
  return out;
}

SamplePool pool_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,token_kind,w", 0) != 0) throw FormatError("pool CSV: bad header");
  SamplePool pool;
  pool.d_x = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cur;
    while (std::getline(ls, cur, ',')) f.push_back(cur);
    if (static_cast<int>(f.size()) != pool.d_x + 3) throw FormatError("pool CSV: wrong field count");
    try {
      dataset::Sample s;
      s.label = std::stoi(f[0]);
      s.source = dataset::Source::synthetic;
      s.x.resize(pool.d_x);
      for (int j = 0; j < pool.d_x; ++j) s.x[j] = std::stod(f[3 + static_cast<std::size_t>(j)]);
      pool.token_kind.push_back(f[1]);
      pool.w.push_back(std::stod(f[2]));
      pool.samples.push_back(std::move(s));
    } catch (const std::logic_error&) {
      throw FormatError("pool CSV: unparsable number");
    }
  }
  return pool;
}

void write_pool(const std::filesystem::path& path, const SamplePool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << pool_to_csv(pool);
}

SamplePool read_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return pool_from_csv(ss.str());
}

}  // namespace fillup::fill
