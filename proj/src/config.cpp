#include "fillup/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fillup::config {

namespace pt = boost::property_tree;

std::string to_string(Stage2Variant v) {
  switch (v) {
    case Stage2Variant::full: return "full";
    case Stage2Variant::crt: return "crt";
    case Stage2Variant::naive: return "naive";
    case Stage2Variant::class_balanced: return "class_balanced";
  }
  return "?";
}

Stage2Variant stage2_variant_from_string(const std::string& s) {
  if (s == "full") return Stage2Variant::full;
  if (s == "crt") return Stage2Variant::crt;
  if (s == "naive") return Stage2Variant::naive;
  if (s == "class_balanced") return Stage2Variant::class_balanced;
  throw ConfigError("unknown stage2_variant '" + s + "'");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& s) {
  int v = 0;
  auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto t = trim(s);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  auto t = trim(s);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

// Key-value access over one section that records which keys were consumed.
class Reader {
 public:
  explicit Reader(const pt::ptree& root) : root_(root) {
    for (const auto& [name, section] : root) {
      if (!section.data().empty() && section.empty()) throw ConfigError("key '" + name + "' outside of a section");
      for (const auto& [key, value] : section) present_.insert(name + "." + key);
    }
  }

  template <class F>
  void get(const std::string& section, const std::string& key, F&& apply) {
    const std::string path = section + "." + key;
    auto sec = root_.get_child_optional(section);
    if (!sec) return;
    auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return;
    consumed_.insert(path);
    apply(path, *v);
  }

  void finish() const {
    for (const auto& k : present_)
      if (!consumed_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  const pt::ptree& root_;
  std::set<std::string> present_;
  std::set<std::string> consumed_;
};

}  // namespace

Config parse(const std::string& text) {
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> sections{"run", "dataset", "diffusion", "inversion", "fillup",
                                              "classifier", "metrics", "ablation"};
  for (const auto& [name, _] : root)
    if (!sections.count(name)) throw ConfigError("unknown config section '" + name + "'");

  Config c;
  Reader r(root);
  auto i = [&](const char* s, const char* k, int& dst) { r.get(s, k, [&](auto& p, auto& v) { dst = to_int(p, v); }); };
  auto d = [&](const char* s, const char* k, double& dst) { r.get(s, k, [&](auto& p, auto& v) { dst = to_double(p, v); }); };
  auto il = [&](const char* s, const char* k, std::vector<int>& dst) {
    r.get(s, k, [&](auto& p, auto& v) {
      dst.clear();
      for (const auto& item : split_list(v)) dst.push_back(to_int(p, item));
    });
  };

  r.get("run", "id", [&](auto&, auto& v) { c.run_id = trim(v); });
  r.get("run", "seed", [&](auto& p, auto& v) { c.seed = to_u64(p, v); });

  auto& ds = c.dataset;
  i("dataset", "K", ds.K);
  i("dataset", "d_x", ds.d_x);
  i("dataset", "n_max", ds.n_max);
  d("dataset", "imbalance_factor", ds.imbalance_factor);
  i("dataset", "n_test_per_class", ds.n_test_per_class);
  i("dataset", "components", ds.components);
  d("dataset", "ring_radius", ds.ring_radius);
  d("dataset", "jitter", ds.jitter);
  d("dataset", "component_std", ds.component_std);
  r.get("dataset", "interleave", [&](auto& p, auto& v) { ds.interleave = to_bool(p, v); });
  r.get("dataset", "shot_scale", [&](auto& p, auto& v) {
    if (trim(v) == "auto") ds.shot_scale.reset();
    else ds.shot_scale = to_double(p, v);
  });

  auto& df = c.diffusion;
  i("diffusion", "d_c", df.d_c);
  i("diffusion", "n_freq", df.n_freq);
  i("diffusion", "hidden", df.hidden);
  i("diffusion", "depth", df.depth);
  i("diffusion", "T", df.T);
  d("diffusion", "beta_start", df.beta_start);
  d("diffusion", "beta_end", df.beta_end);
  i("diffusion", "epochs", df.epochs);
  i("diffusion", "batch_size", df.batch_size);
  d("diffusion", "lr", df.lr);
  d("diffusion", "p_uncond", df.p_uncond);

  auto& inv = c.inversion;
  d("inversion", "lr", inv.lr);
  i("inversion", "batch_size", inv.batch_size);
  i("inversion", "multiplier", inv.multiplier);
  i("inversion", "lo", inv.lo);
  i("inversion", "hi", inv.hi);
  i("inversion", "snapshot_every", inv.snapshot_every);
  r.get("inversion", "init", [&](auto&, auto& v) {
    try {
      inv.init = inversion::token_init_from_string(trim(v));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("inversion.init: ") + e.what());
    }
  });

  auto& fu = c.fillup;
  r.get("fillup", "strategy", [&](auto&, auto& v) {
    try {
      fu.strategy = fill::strategy_from_string(trim(v));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("fillup.strategy: ") + e.what());
    }
  });
  r.get("fillup", "target", [&](auto& p, auto& v) {
    if (trim(v) == "default") fu.target.reset();
    else fu.target = to_int(p, v);
  });
  i("fillup", "addon", fu.addon);
  d("fillup", "guidance", fu.guidance);

  auto& cl = c.classifier;
  il("classifier", "hidden", cl.hidden);
  i("classifier", "feature_width", cl.feature_width);
  i("classifier", "batch_size", cl.batch_size);
  d("classifier", "momentum", cl.momentum);
  d("classifier", "weight_decay", cl.weight_decay);
  d("classifier", "jitter", cl.jitter);
  auto loss = [&](const char* k, classifier::LossKind& dst) {
    r.get("classifier", k, [&](auto& p, auto& v) {
      try {
        dst = classifier::loss_from_string(trim(v));
      } catch (const std::exception&) {
        throw ConfigError(p + ": expected ce or balanced_softmax, got '" + v + "'");
      }
    });
  };
  loss("stage1_loss", cl.stage1_loss);
  i("classifier", "stage1_epochs", cl.stage1_epochs);
  d("classifier", "stage1_lr", cl.stage1_lr);
  d("classifier", "stage1_decay", cl.stage1_decay);
  i("classifier", "stage1_period", cl.stage1_period);
  i("classifier", "stage1_warmup", cl.stage1_warmup);
  r.get("classifier", "stage2_variant", [&](auto&, auto& v) { cl.stage2_variant = stage2_variant_from_string(trim(v)); });
  loss("stage2_loss", cl.stage2_loss);
  i("classifier", "stage2_epochs", cl.stage2_epochs);
  d("classifier", "stage2_lr", cl.stage2_lr);
  d("classifier", "stage2_decay", cl.stage2_decay);
  i("classifier", "stage2_period", cl.stage2_period);
  i("classifier", "stage2_warmup", cl.stage2_warmup);

  auto& me = c.metrics;
  i("metrics", "k", me.k);
  i("metrics", "n_per_class", me.n_per_class);
  r.get("metrics", "scales", [&](auto& p, auto& v) {
    me.scales.clear();
    for (const auto& item : split_list(v)) me.scales.push_back(to_double(p, item));
  });
  r.get("metrics", "features", [&](auto& p, auto& v) {
    auto t = trim(v);
    if (t == "raw") me.features = FeatureSpace::raw;
    else if (t == "classifier") me.features = FeatureSpace::classifier;
    else throw ConfigError(p + ": expected raw or classifier, got '" + v + "'");
  });

  auto& ab = c.ablation;
  il("ablation", "capacity", ab.capacity);
  il("ablation", "steps", ab.steps);
  il("ablation", "quotas", ab.quotas);
  i("ablation", "quota", ab.quota);

  r.finish();
  c.validate();
  return c;
}

Config load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string serialize(const Config& c) {
  std::ostringstream o;
  auto kv = [&](const char* k, const std::string& v) { o << k << " = " << v << "\n"; };
  o << "[run]\n";
  kv("id", c.run_id);
  kv("seed", std::to_string(c.seed));

  const auto& ds = c.dataset;
  o << "\n[dataset]\n";
  kv("K", fmt(ds.K));
  kv("d_x", fmt(ds.d_x));
  kv("n_max", fmt(ds.n_max));
  kv("imbalance_factor", fmt(ds.imbalance_factor));
  kv("n_test_per_class", fmt(ds.n_test_per_class));
  kv("components", fmt(ds.components));
  kv("ring_radius", fmt(ds.ring_radius));
  kv("jitter", fmt(ds.jitter));
  kv("component_std", fmt(ds.component_std));
  kv("interleave", fmt(ds.interleave));
  kv("shot_scale", ds.shot_scale ? fmt(*ds.shot_scale) : "auto");

  const auto& df = c.diffusion;
  o << "\n[diffusion]\n";
  kv("d_c", fmt(df.d_c));
  kv("n_freq", fmt(df.n_freq));
  kv("hidden", fmt(df.hidden));
  kv("depth", fmt(df.depth));
  kv("T", fmt(df.T));
  kv("beta_start", fmt(df.beta_start));
  kv("beta_end", fmt(df.beta_end));
  kv("epochs", fmt(df.epochs));
  kv("batch_size", fmt(df.batch_size));
  kv("lr", fmt(df.lr));
  kv("p_uncond", fmt(df.p_uncond));

  const auto& inv = c.inversion;
  o << "\n[inversion]\n";
  kv("lr", fmt(inv.lr));
  kv("batch_size", fmt(inv.batch_size));
  kv("multiplier", fmt(inv.multiplier));
  kv("lo", fmt(inv.lo));
  kv("hi", fmt(inv.hi));
  kv("snapshot_every", fmt(inv.snapshot_every));
  kv("init", inversion::to_string(inv.init));

  const auto& fu = c.fillup;
  o << "\n[fillup]\n";
  kv("strategy", fill::to_string(fu.strategy));
  kv("target", fu.target ? fmt(*fu.target) : "default");
  kv("addon", fmt(fu.addon));
  kv("guidance", fmt(fu.guidance));

  const auto& cl = c.classifier;
  o << "\n[classifier]\n";
  kv("hidden", fmt_list(cl.hidden));
  kv("feature_width", fmt(cl.feature_width));
  kv("batch_size", fmt(cl.batch_size));
  kv("momentum", fmt(cl.momentum));
  kv("weight_decay", fmt(cl.weight_decay));
  kv("jitter", fmt(cl.jitter));
  kv("stage1_loss", classifier::to_string(cl.stage1_loss));
  kv("stage1_epochs", fmt(cl.stage1_epochs));
  kv("stage1_lr", fmt(cl.stage1_lr));
  kv("stage1_decay", fmt(cl.stage1_decay));
  kv("stage1_period", fmt(cl.stage1_period));
  kv("stage1_warmup", fmt(cl.stage1_warmup));
  kv("stage2_variant", to_string(cl.stage2_variant));
  kv("stage2_loss", classifier::to_string(cl.stage2_loss));
  kv("stage2_epochs", fmt(cl.stage2_epochs));
  kv("stage2_lr", fmt(cl.stage2_lr));
  kv("stage2_decay", fmt(cl.stage2_decay));
  kv("stage2_period", fmt(cl.stage2_period));
  kv("stage2_warmup", fmt(cl.stage2_warmup));

  const auto& me = c.metrics;
  o << "\n[metrics]\n";
  kv("k", fmt(me.k));
  kv("n_per_class", fmt(me.n_per_class));
  kv("scales", fmt_list(me.scales));
  kv("features", me.features == FeatureSpace::raw ? "raw" : "classifier");

  const auto& ab = c.ablation;
  o << "\n[ablation]\n";
  kv("capacity", fmt_list(ab.capacity));
  kv("steps", fmt_list(ab.steps));
  kv("quotas", fmt_list(ab.quotas));
  kv("quota", fmt(ab.quota));
  return o.str();
}

void Config::validate() const {
  require(!run_id.empty() && run_id.find_first_of("/\\") == std::string::npos && run_id[0] != '.',
          "run.id must be a non-empty name without path separators");
  const auto& ds = dataset;
  require(ds.K >= 2, "dataset.K must be >= 2");
  require(ds.d_x >= 2, "dataset.d_x must be >= 2");
  require(ds.n_max >= 1, "dataset.n_max must be >= 1");
  require(ds.imbalance_factor >= 1.0, "dataset.imbalance_factor must be >= 1");
  require(ds.n_max / ds.imbalance_factor >= 1.0, "dataset: n_max / imbalance_factor must be >= 1");
  require(ds.n_test_per_class >= 1, "dataset.n_test_per_class must be >= 1");
  require(ds.components >= 2, "dataset.components must be >= 2");
  require(ds.ring_radius > 0.0 && ds.component_std > 0.0 && ds.jitter >= 0.0, "dataset: bad generator geometry");
  require(!ds.shot_scale || *ds.shot_scale > 0.0, "dataset.shot_scale must be positive or auto");

  const auto& df = diffusion;
  require(df.d_c >= 1 && df.n_freq >= 1 && df.hidden >= 1 && df.depth >= 1, "diffusion: bad architecture");
  require(df.T >= 1, "diffusion.T must be >= 1");
  require(df.beta_start > 0.0 && df.beta_start <= df.beta_end && df.beta_end < 1.0,
          "diffusion: need 0 < beta_start <= beta_end < 1");
  require(df.epochs >= 0 && df.batch_size >= 1, "diffusion: bad epochs or batch_size");
  require(df.lr > 0.0, "diffusion.lr must be positive");
  require(df.p_uncond >= 0.0 && df.p_uncond < 1.0, "diffusion.p_uncond must lie in [0, 1)");

  const auto& inv = inversion;
  require(inv.lr > 0.0 && inv.batch_size >= 1, "inversion: bad lr or batch_size");
  require(inv.multiplier >= 1 && inv.lo >= 0 && inv.lo <= inv.hi, "inversion: need multiplier >= 1 and lo <= hi");
  require(inv.snapshot_every >= 1, "inversion.snapshot_every must be >= 1");

  require(fillup.addon >= 0, "fillup.addon must be >= 0");
  require(fillup.guidance >= 0.0, "fillup.guidance must be >= 0");
  require(!fillup.target || *fillup.target >= 0, "fillup.target must be >= 0");

  const auto& cl = classifier;
  require(!cl.hidden.empty(), "classifier.hidden needs at least one width");
  for (int h : cl.hidden) require(h >= 1, "classifier.hidden widths must be positive");
  require(cl.feature_width >= 1 && cl.batch_size >= 1, "classifier: bad feature_width or batch_size");
  require(cl.stage1_epochs >= 0 && cl.stage2_epochs >= 0, "classifier: epochs must be >= 0");
  require(cl.stage1_lr > 0.0 && cl.stage2_lr > 0.0, "classifier: learning rates must be positive");
  require(cl.stage1_decay > 0.0 && cl.stage2_decay > 0.0, "classifier: decay factors must be positive");
  require(cl.stage1_period >= 1 && cl.stage2_period >= 1, "classifier: decay periods must be >= 1");
  require(cl.stage1_warmup >= 0 && cl.stage2_warmup >= 0, "classifier: warmup must be >= 0");
  require(cl.jitter >= 0.0, "classifier.jitter must be >= 0");

  require(metrics.k >= 1, "metrics.k must be >= 1");
  require(metrics.n_per_class > metrics.k, "metrics.n_per_class must exceed k");
  for (double w : metrics.scales) require(w >= 0.0, "metrics.scales must be >= 0");

  for (int v : ablation.capacity) require(v >= 1, "ablation.capacity entries must be >= 1");
  for (int v : ablation.steps) require(v >= 0, "ablation.steps entries must be >= 0");
  for (int v : ablation.quotas) require(v >= 0, "ablation.quotas entries must be >= 0");
  require(ablation.quota >= 0, "ablation.quota must be >= 0");
}

dataset::GeneratorConfig generator_config(const Config& c) {
  dataset::GeneratorConfig g;
  g.K = c.dataset.K;
  g.d_x = c.dataset.d_x;
  g.components = c.dataset.components;
  g.ring_radius = c.dataset.ring_radius;
  g.jitter = c.dataset.jitter;
  g.component_std = c.dataset.component_std;
  g.interleave = c.dataset.interleave;
  return g;
}

double shot_scale(const Config& c) {
  return c.dataset.shot_scale ? *c.dataset.shot_scale : dataset::auto_shot_scale(c.dataset.n_max);
}

diffusion::DenoiserConfig denoiser_config(const Config& c) {
  diffusion::DenoiserConfig d;
  d.d_x = c.dataset.d_x;
  d.K = c.dataset.K;
  d.d_c = c.diffusion.d_c;
  d.n_freq = c.diffusion.n_freq;
  d.hidden = c.diffusion.hidden;
  d.depth = c.diffusion.depth;
  d.T = c.diffusion.T;
  d.beta_start = c.diffusion.beta_start;
  d.beta_end = c.diffusion.beta_end;
  return d;
}

diffusion::DiffusionTrainConfig diffusion_train_config(const Config& c) {
  diffusion::DiffusionTrainConfig t;
  t.epochs = c.diffusion.epochs;
  t.batch_size = c.diffusion.batch_size;
  t.lr = c.diffusion.lr;
  t.p_uncond = c.diffusion.p_uncond;
  return t;
}

inversion::InversionConfig inversion_config(const Config& c, int n_images) {
  inversion::InversionConfig ic;
  ic.lr = c.inversion.lr;
  ic.batch_size = c.inversion.batch_size;
  ic.snapshot_every = c.inversion.snapshot_every;
  ic.init = c.inversion.init;
  ic.steps = inversion::step_heuristic(n_images, c.inversion.multiplier, c.inversion.lo, c.inversion.hi);
  return ic;
}

classifier::ClassifierConfig classifier_config(const Config& c) {
  classifier::ClassifierConfig cc;
  cc.d_x = c.dataset.d_x;
  cc.K = c.dataset.K;
  cc.hidden = c.classifier.hidden;
  cc.feature_width = c.classifier.feature_width;
  return cc;
}

namespace {

classifier::TrainRecipe base_recipe(const Config& c, std::vector<int> real_counts) {
  classifier::TrainRecipe r;
  r.batch_size = c.classifier.batch_size;
  r.momentum = c.classifier.momentum;
  r.weight_decay = c.classifier.weight_decay;
  r.jitter = c.classifier.jitter;
  r.bs_counts = std::move(real_counts);
  return r;
}

}  // namespace

classifier::TrainRecipe stage1_recipe(const Config& c, std::vector<int> real_counts) {
  auto r = base_recipe(c, std::move(real_counts));
  const auto& cl = c.classifier;
  r.stage = classifier::Stage::stage1;
  r.loss = cl.stage1_loss;
  r.sampler = classifier::SamplerKind::instance;
  r.epochs = cl.stage1_epochs;
  r.schedule = {learn::ScheduleKind::step_decay, cl.stage1_lr, cl.stage1_decay, cl.stage1_period, cl.stage1_warmup};
  return r;
}

classifier::TrainRecipe stage2_recipe(const Config& c, std::vector<int> real_counts, Stage2Variant variant) {
  auto r = base_recipe(c, std::move(real_counts));
  const auto& cl = c.classifier;
  r.epochs = cl.stage2_epochs;
  r.schedule = {learn::ScheduleKind::step_decay, cl.stage2_lr, cl.stage2_decay, cl.stage2_period, cl.stage2_warmup};
  switch (variant) {
    case Stage2Variant::full:
      r.stage = classifier::Stage::stage2_full;
      r.loss = cl.stage2_loss;
      r.sampler = classifier::SamplerKind::instance;
      break;
    case Stage2Variant::class_balanced:
      r.stage = classifier::Stage::stage2_full;
      r.loss = classifier::LossKind::ce;
      r.sampler = classifier::SamplerKind::class_balanced;
      break;
    case Stage2Variant::crt:
      r.stage = classifier::Stage::stage2_crt;
      r.loss = classifier::LossKind::ce;
      r.sampler = classifier::SamplerKind::class_balanced;
      break;
    case Stage2Variant::naive:
      r.stage = classifier::Stage::stage2_naive;
      r.loss = classifier::LossKind::ce;
      r.sampler = classifier::SamplerKind::instance;
      break;
  }
  return r;
}

}  // namespace fillup::config
