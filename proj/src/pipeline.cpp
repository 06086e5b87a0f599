#include "fillup/pipeline.hpp"

#include "fillup/checksum.hpp"
#include "fillup/classifier.hpp"
#include "fillup/dataset.hpp"
#include "fillup/diffusion.hpp"
#include "fillup/fillup.hpp"
#include "fillup/inversion.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace fillup::pipeline {

namespace fs = std::filesystem;

std::string to_string(AblationTable t) {
  switch (t) {
    case AblationTable::fill_strategies: return "fill_strategies";
    case AblationTable::stage2_variants: return "stage2_variants";
    case AblationTable::guidance_sweep: return "guidance_sweep";
    case AblationTable::capacity_sweep: return "capacity_sweep";
    case AblationTable::steps_sweep: return "steps_sweep";
    case AblationTable::quota_sweep: return "quota_sweep";
  }
  return "?";
}

AblationTable ablation_from_string(const std::string& s) {
  for (auto t : {AblationTable::fill_strategies, AblationTable::stage2_variants, AblationTable::guidance_sweep,
                 AblationTable::capacity_sweep, AblationTable::steps_sweep, AblationTable::quota_sweep})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown ablation table '" + s + "'");
}

fs::path default_runs_root() {
  const char* env = std::getenv("FILLUP_RUNS_DIR");
  if (env && *env) return fs::path(env);
  return fs::path("runs");
}

namespace paths {
std::string token(int class_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tokens/class_%03d.tok", class_id);
  return buf;
}
std::string ablation(AblationTable table) { return "reports/ablation_" + to_string(table) + ".csv"; }
}  // namespace paths

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("cannot write " + path.string());
  out << text;
  if (!out) throw StageError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string opt_acc(const std::optional<double>& v) { return v ? fmt_acc(*v) : std::string(); }

// Text of one "[name]" block of a serialized config.
std::string section_text(const std::string& ini, const std::string& name) {
  const std::string header = "[" + name + "]\n";
  auto b = ini.find(header);
  if (b == std::string::npos) return {};
  auto e = ini.find("\n[", b + header.size());
  return ini.substr(b, e == std::string::npos ? std::string::npos : e - b);
}

struct Loaded {
  dataset::LongTailedDataset data;
  classifier::EvalSet test;
  dataset::ShotGroups groups;
};

Loaded load_data(const fs::path& dir, const config::Config& cfg) {
  Loaded l;
  l.data = dataset::read_csv(dir / paths::dataset_csv, cfg.dataset.K);
  l.data.select(dataset::Split::test, l.test.x, l.test.labels);
  l.groups = dataset::assign_shot_groups(l.data.counts_real, config::shot_scale(cfg));
  return l;
}

std::vector<inversion::ClassToken> load_tokens(const fs::path& dir, int K) {
  std::vector<inversion::ClassToken> out;
  for (int k = 0; k < K; ++k) out.push_back(inversion::read_token(dir / paths::token(k)));
  return out;
}

std::vector<std::optional<inversion::ClassToken>> as_optional(const std::vector<inversion::ClassToken>& tokens) {
  return {tokens.begin(), tokens.end()};
}

metrics::GroupAccuracy score(const classifier::ClassifierModel& model, const Loaded& l) {
  return metrics::group_accuracy(classifier::predict(model, l.test.x), l.test.labels, l.groups);
}

std::string history_csv(const classifier::TrainHistory& h) {
  std::string out = "epoch,loss,test_accuracy\n";
  for (std::size_t e = 0; e < h.loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + fmt_real(h.loss[e]) + ",";
    if (e < h.test_accuracy.size()) out += fmt_acc(h.test_accuracy[e]);
    out += "\n";
  }
  return out;
}

// Mean of the first and last max(1, n/10) entries.
std::pair<double, double> loss_ends(const std::vector<double>& curve) {
  const std::size_t n = curve.size();
  const std::size_t m = std::max<std::size_t>(1, n / 10);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    a += curve[i];
    b += curve[n - 1 - i];
  }
  return {a / m, b / m};
}

std::vector<inversion::ClassToken> invert_all(const diffusion::DenoiserModel& model, const dataset::LongTailedDataset& data,
                                              const config::Config& cfg, std::optional<int> fixed_steps) {
  std::vector<inversion::ClassToken> tokens;
  for (int k = 0; k < cfg.dataset.K; ++k) {
    Matrix samples = data.class_samples(k);
    auto ic = config::inversion_config(cfg, static_cast<int>(samples.cols()));
    if (fixed_steps) ic.steps = *fixed_steps;
    tokens.push_back(inversion::invert_token(model, k, samples, ic, derive_seed(cfg.seed, "invert", k)));
  }
  return tokens;
}

fill::SamplePool make_pool(const config::Config& cfg, const fill::FillPlan& plan, const diffusion::DenoiserModel& model,
                           const std::vector<inversion::ClassToken>& tokens) {
  auto opt = as_optional(tokens);
  return fill::realize_plan(plan, opt, model, cfg.fillup.guidance, derive_seed(cfg.seed, "generate"));
}

metrics::GroupAccuracy train_and_score(const config::Config& cfg, const Loaded& l, const dataset::LongTailedDataset& train,
                                       classifier::LossKind loss) {
  auto recipe = config::stage1_recipe(cfg, l.data.counts_real);
  recipe.loss = loss;
  classifier::ClassifierModel model(config::classifier_config(cfg), derive_seed(cfg.seed, "classifier-init"));
  classifier::train_stage1(model, train, recipe, derive_seed(cfg.seed, "stage1"));
  return score(model, l);
}

}  // namespace

std::string score_table_csv(const std::string& key, const std::vector<ScoreRow>& rows) {
  std::string out = key + ",overall,many,medium,few\n";
  for (const auto& r : rows)
    out += r.method + "," + fmt_acc(r.scores.overall) + "," + opt_acc(r.scores.many) + "," + opt_acc(r.scores.medium) +
           "," + opt_acc(r.scores.few) + "\n";
  return out;
}

std::unique_ptr<Run> Run::open(const OpenOptions& o, std::ostream& log) {
  std::unique_ptr<Run> r(new Run());
  r->log_ = &log;
  r->force_ = o.force;
  const fs::path root = o.runs_root.empty() ? default_runs_root() : o.runs_root;
  std::string id = o.run_id ? *o.run_id : (o.config ? o.config->run_id : std::string("default"));
  config::Config probe;
  probe.run_id = id;
  probe.validate();
  r->dir_ = root / id;
  const fs::path mpath = r->dir_ / "manifest.json";
  const bool exists = fs::exists(mpath);
  if (!exists && !o.create) throw ConfigError("unknown run id '" + id + "' under " + root.string());

  fs::create_directories(r->dir_);
  for (const char* sub : {"data", "diffusion", "tokens", "pools", "classifier", "reports"})
    fs::create_directories(r->dir_ / sub);
  r->lock_ = std::make_unique<run::RunLock>(r->dir_);
  if (exists) r->manifest_ = run::RunManifest::load(mpath);

  if (o.config) r->cfg_ = *o.config;
  else if (exists) r->cfg_ = config::parse(r->manifest_.config_text);
  if (o.seed) r->cfg_.seed = *o.seed;
  r->cfg_.run_id = id;
  r->cfg_.validate();
  if (!exists) r->persist();
  return r;
}

Run::~Run() = default;

void Run::persist() {
  manifest_.run_id = cfg_.run_id;
  manifest_.seed = cfg_.seed;
  manifest_.config_text = config::serialize(cfg_);
  manifest_.save(dir_ / "manifest.json");
  const fs::path snap = dir_ / "config.ini";
  if (!fs::exists(snap) || read_text(snap) != manifest_.config_text) write_text(snap, manifest_.config_text);
}

std::string Run::fingerprint(const std::string& stage, const std::vector<std::string>& sections,
                             const std::vector<std::string>& upstream) const {
  const std::string ini = config::serialize(cfg_);
  std::string text = stage + "\nseed=" + std::to_string(cfg_.seed) + "\n";
  for (const auto& s : sections) text += section_text(ini, s);
  for (const auto& u : upstream) text += "upstream=" + u + "\n";
  return to_hex(fnv1a64(text));
}

std::string Run::artifact_sum(const std::string& stage) const {
  const auto* r = manifest_.find(stage);
  if (!r || !r->done) throw StageError("stage " + stage + " has not completed");
  std::string text = stage;
  for (const auto& [p, h] : r->artifacts) text += "\n" + p + "=" + h;
  return to_hex(fnv1a64(text));
}

bool Run::run_stage(const std::string& name, const std::string& fp, const std::function<std::vector<std::string>()>& body) {
  if (const auto* rec = manifest_.find(name); rec && rec->done) {
    if (rec->fingerprint == fp) {
      try {
        run::verify_artifacts(dir_, *rec);
        *log_ << name << ": up to date\n";
        return false;
      } catch (const ArtifactConflict&) {
        if (!force_) throw;
      }
    } else if (!force_) {
      throw ArtifactConflict("stage " + name +
                             ": existing artifacts were built from different inputs (rerun with --force to replace)");
    }
  }
  *log_ << name << ": running\n";
  std::vector<std::string> produced;
  try {
    produced = body();
  } catch (const ConfigError&) {
    throw;
  } catch (const ArtifactConflict&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("stage " + name + " failed: " + e.what());
  }
  run::StageRecord rec;
  rec.done = true;
  rec.fingerprint = fp;
  for (const auto& p : produced) rec.artifacts[p] = to_hex(file_checksum(dir_ / p));
  manifest_.stages[name] = rec;
  // Later main stages consumed the replaced artifacts.
  const auto& names = run::stage_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end())
    for (++it; it != names.end(); ++it)
      if (auto s = manifest_.stages.find(*it); s != manifest_.stages.end()) s->second.done = false;
  persist();
  *log_ << name << ": done\n";
  return true;
}

void Run::ensure(const std::string& stage) {
  if (stage == "synth-data") synth_data();
  else if (stage == "train-diffusion") train_diffusion();
  else if (stage == "invert") invert();
  else if (stage == "generate") generate();
  else if (stage == "fill") fill();
  else if (stage == "train-stage1") train_stage1();
  else if (stage == "train-stage2") train_stage2();
  else if (stage == "evaluate") evaluate();
  else throw ConfigError("unknown stage " + stage);
}

void Run::synth_data() {
  const auto fp = fingerprint("synth-data", {"dataset"}, {});
  run_stage("synth-data", fp, [&] {
    const auto& ds = cfg_.dataset;
    auto gens = dataset::make_generators(config::generator_config(cfg_), derive_seed(cfg_.seed, "generators"));
    auto counts = dataset::longtailed_counts(ds.K, ds.n_max, ds.imbalance_factor);
    auto data = dataset::draw_dataset(gens, counts, ds.n_test_per_class, derive_seed(cfg_.seed, "draw"));
    dataset::write_csv(dir_ / paths::dataset_csv, data);
    auto groups = dataset::assign_shot_groups(counts, config::shot_scale(cfg_));
    nlohmann::json meta;
    meta["seed"] = cfg_.seed;
    meta["K"] = ds.K;
    meta["d_x"] = ds.d_x;
    meta["n_max"] = ds.n_max;
    meta["imbalance_factor"] = ds.imbalance_factor;
    meta["n_test_per_class"] = ds.n_test_per_class;
    meta["counts"] = counts;
    meta["shot_scale"] = config::shot_scale(cfg_);
    std::vector<std::string> g;
    for (auto s : groups.group_of_class) g.push_back(dataset::to_string(s));
    meta["shot_groups"] = g;
    meta["generators"] = dataset::generators_to_json(gens);
    write_text(dir_ / paths::dataset_json, meta.dump(2) + "\n");
    return std::vector<std::string>{paths::dataset_csv, paths::dataset_json};
  });
}

void Run::train_diffusion() {
  synth_data();
  const auto fp = fingerprint("train-diffusion", {"diffusion"}, {artifact_sum("synth-data")});
  run_stage("train-diffusion", fp, [&] {
    auto l = load_data(dir_, cfg_);
    Matrix x;
    std::vector<int> y;
    l.data.select(dataset::Split::train, dataset::Source::real, x, y);
    const std::uint64_t init_seed = derive_seed(cfg_.seed, "denoiser-init");
    diffusion::DenoiserModel init(config::denoiser_config(cfg_), init_seed);
    auto result = diffusion::train_diffusion(init, x, y, config::diffusion_train_config(cfg_),
                                             derive_seed(cfg_.seed, "diffusion-train"));
    fs::create_directories(dir_ / "diffusion");
    result.model.save(dir_ / paths::denoiser, init_seed);
    std::string curve = "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
      curve += std::to_string(e + 1) + "," + fmt_real(result.loss_curve[e]) + "\n";
    write_text(dir_ / paths::diffusion_loss, curve);
    return std::vector<std::string>{paths::denoiser, paths::diffusion_loss};
  });
}

void Run::invert() {
  train_diffusion();
  const auto fp = fingerprint("invert", {"inversion"}, {artifact_sum("synth-data"), artifact_sum("train-diffusion")});
  run_stage("invert", fp, [&] {
    auto l = load_data(dir_, cfg_);
    const fs::path ckpt = dir_ / paths::denoiser;
    const std::uint64_t file_before = file_checksum(ckpt);
    const auto model = diffusion::DenoiserModel::load(ckpt);
    const std::uint64_t params_before = model.checksum();
    auto tokens = invert_all(model, l.data, cfg_, std::nullopt);
    if (model.checksum() != params_before || file_checksum(ckpt) != file_before)
      throw StageError("denoiser changed during inversion");
    std::vector<std::string> produced;
    std::string summary = "class,n_images,steps,snapshots,loss_first,loss_last\n";
    fs::create_directories(dir_ / "tokens");
    for (const auto& t : tokens) {
      if (t.model_checksum != params_before) throw StageError("token records a different denoiser checksum");
      inversion::write_token(dir_ / paths::token(t.class_id), t);
      produced.push_back(paths::token(t.class_id));
      summary += std::to_string(t.class_id) + "," + std::to_string(l.data.counts_real[t.class_id]) + "," +
                 std::to_string(t.steps()) + "," + std::to_string(t.snapshots.size()) + ",";
      if (!t.loss_curve.empty()) {
        auto [a, b] = loss_ends(t.loss_curve);
        summary += fmt_real(a) + "," + fmt_real(b);
      } else {
        summary += ",";
      }
      summary += "\n";
    }
    write_text(dir_ / paths::token_summary, summary);
    produced.push_back(paths::token_summary);
    return produced;
  });
}

void Run::generate() {
  invert();
  const auto fp = fingerprint("generate", {"fillup"},
                              {artifact_sum("synth-data"), artifact_sum("train-diffusion"), artifact_sum("invert")});
  run_stage("generate", fp, [&] {
    auto l = load_data(dir_, cfg_);
    const auto model = diffusion::DenoiserModel::load(dir_ / paths::denoiser);
    auto tokens = load_tokens(dir_, cfg_.dataset.K);
    const auto& fu = cfg_.fillup;
    std::optional<int> arg = fu.strategy == fill::FillStrategy::addon ? std::optional<int>(fu.addon) : fu.target;
    auto plan = fill::plan_fill(l.data.counts_real, fu.strategy, arg);
    auto pool = make_pool(cfg_, plan, model, tokens);
    auto pj = fill::plan_to_json(plan);
    pj["guidance"] = fu.guidance;
    write_text(dir_ / paths::plan_json, pj.dump(2) + "\n");
    fill::write_pool(dir_ / paths::pool_csv, pool);
    return std::vector<std::string>{paths::plan_json, paths::pool_csv};
  });
}

void Run::fill() {
  generate();
  const auto fp = fingerprint("fill", {}, {artifact_sum("synth-data"), artifact_sum("generate")});
  run_stage("fill", fp, [&] {
    auto l = load_data(dir_, cfg_);
    auto pool = fill::read_pool(dir_ / paths::pool_csv);
    auto filled = fill::merge(l.data, pool);
    dataset::write_csv(dir_ / paths::filled_csv, filled);
    return std::vector<std::string>{paths::filled_csv};
  });
}

void Run::train_stage1() {
  fill();
  const auto fp = fingerprint("train-stage1", {"classifier"}, {artifact_sum("synth-data"), artifact_sum("fill")});
  run_stage("train-stage1", fp, [&] {
    auto l = load_data(dir_, cfg_);
    auto filled = dataset::read_csv(dir_ / paths::filled_csv, cfg_.dataset.K);
    auto recipe = config::stage1_recipe(cfg_, l.data.counts_real);
    const std::uint64_t init_seed = derive_seed(cfg_.seed, "classifier-init");
    classifier::ClassifierModel model(config::classifier_config(cfg_), init_seed);
    auto hist = classifier::train_stage1(model, filled, recipe, derive_seed(cfg_.seed, "stage1"), &l.test);
    fs::create_directories(dir_ / "classifier");
    model.save(dir_ / paths::stage1_ckpt, init_seed);
    write_text(dir_ / paths::stage1_history, history_csv(hist));
    return std::vector<std::string>{paths::stage1_ckpt, paths::stage1_history};
  });
}

void Run::train_stage2() {
  train_stage1();
  const auto fp =
      fingerprint("train-stage2", {"classifier"}, {artifact_sum("synth-data"), artifact_sum("train-stage1")});
  run_stage("train-stage2", fp, [&] {
    auto l = load_data(dir_, cfg_);
    auto model = classifier::ClassifierModel::load(dir_ / paths::stage1_ckpt);
    auto recipe = config::stage2_recipe(cfg_, l.data.counts_real, cfg_.classifier.stage2_variant);
    auto hist = classifier::train_stage2(model, l.data, recipe, derive_seed(cfg_.seed, "stage2"), &l.test);
    model.save(dir_ / paths::stage2_ckpt, derive_seed(cfg_.seed, "stage2"));
    write_text(dir_ / paths::stage2_history, history_csv(hist));
    return std::vector<std::string>{paths::stage2_ckpt, paths::stage2_history};
  });
}

void Run::evaluate() {
  train_stage2();
  const auto fp = fingerprint("evaluate", {},
                              {artifact_sum("synth-data"), artifact_sum("train-stage1"), artifact_sum("train-stage2")});
  run_stage("evaluate", fp, [&] {
    auto l = load_data(dir_, cfg_);
    auto s1 = classifier::ClassifierModel::load(dir_ / paths::stage1_ckpt);
    auto s2 = classifier::ClassifierModel::load(dir_ / paths::stage2_ckpt);
    auto g1 = score(s1, l);
    auto g2 = score(s2, l);
    write_text(dir_ / paths::evaluation_csv, score_table_csv("method", {{"stage1", g1}, {"stage2", g2}}));
    std::string pc = "class,count,group,stage1,stage2\n";
    for (int k = 0; k < cfg_.dataset.K; ++k)
      pc += std::to_string(k) + "," + std::to_string(l.data.counts_real[k]) + "," +
            dataset::to_string(l.groups.group_of_class[k]) + "," + fmt_acc(g1.per_class[k]) + "," +
            fmt_acc(g2.per_class[k]) + "\n";
    write_text(dir_ / paths::per_class_csv, pc);
    return std::vector<std::string>{paths::evaluation_csv, paths::per_class_csv};
  });
}

void Run::pipeline() {
  evaluate();
  *log_ << read_text(dir_ / paths::evaluation_csv);
}

fs::path Run::ablation(AblationTable table) {
  const std::string name = "ablation:" + to_string(table);
  std::vector<std::string> upstream;
  const bool needs_stage1 = table == AblationTable::stage2_variants ||
                            (table == AblationTable::guidance_sweep && cfg_.metrics.features == config::FeatureSpace::classifier);
  if (needs_stage1) {
    train_stage1();
    upstream.push_back(artifact_sum("train-stage1"));
  } else {
    invert();
  }
  for (const char* s : {"synth-data", "train-diffusion", "invert"}) upstream.push_back(artifact_sum(s));
  const auto fp = fingerprint(name, {"dataset", "diffusion", "inversion", "fillup", "classifier", "metrics", "ablation"}, upstream);
  const std::string out = paths::ablation(table);
  run_stage(name, fp, [&] {
    auto l = load_data(dir_, cfg_);
    const auto model = diffusion::DenoiserModel::load(dir_ / paths::denoiser);
    auto tokens = load_tokens(dir_, cfg_.dataset.K);
    const auto& counts = l.data.counts_real;
    std::string csv;
    auto sweep_score = [&](const diffusion::DenoiserModel& m, const std::vector<inversion::ClassToken>& toks, int quota) {
      auto plan = fill::plan_fill(counts, fill::FillStrategy::addon, quota);
      auto merged = fill::merge(l.data, make_pool(cfg_, plan, m, toks));
      return train_and_score(cfg_, l, merged, classifier::LossKind::ce);
    };
    switch (table) {
      case AblationTable::fill_strategies: {
        using classifier::LossKind;
        std::vector<ScoreRow> rows;
        rows.push_back({"baseline_lt", train_and_score(cfg_, l, l.data, LossKind::ce)});
        rows.push_back({"baseline_lt_bs", train_and_score(cfg_, l, l.data, LossKind::balanced_softmax)});
        {
          auto plan = fill::plan_fill(counts, fill::FillStrategy::addon, cfg_.dataset.n_max);
          auto pool = make_pool(cfg_, plan, model, tokens);
          Matrix x(cfg_.dataset.d_x, static_cast<Eigen::Index>(pool.samples.size()));
          std::vector<int> y;
          for (std::size_t i = 0; i < pool.samples.size(); ++i) {
            x.col(static_cast<Eigen::Index>(i)) = pool.samples[i].x;
            y.push_back(pool.samples[i].label);
          }
          auto recipe = config::stage1_recipe(cfg_, counts);
          recipe.loss = LossKind::ce;
          classifier::ClassifierModel m(config::classifier_config(cfg_), derive_seed(cfg_.seed, "classifier-init"));
          classifier::train_classifier(m, x, y, recipe, derive_seed(cfg_.seed, "stage1"));
          rows.push_back({"fake_only", score(m, l)});
        }
        dataset::LongTailedDataset filled_c;
        for (auto s : {fill::FillStrategy::under, fill::FillStrategy::balance, fill::FillStrategy::over,
                       fill::FillStrategy::addon}) {
          std::optional<int> arg;
          if (s == fill::FillStrategy::addon) arg = cfg_.fillup.addon;
          auto merged = fill::merge(l.data, make_pool(cfg_, fill::plan_fill(counts, s, arg), model, tokens));
          rows.push_back({fill::to_string(s), train_and_score(cfg_, l, merged, LossKind::ce)});
          if (s == fill::FillStrategy::over) filled_c = merged;
        }
        rows.insert(rows.end() - 1, ScoreRow{"C+BS", train_and_score(cfg_, l, filled_c, LossKind::balanced_softmax)});
        csv = score_table_csv("method", rows);
        break;
      }
      case AblationTable::stage2_variants: {
        const auto s1 = classifier::ClassifierModel::load(dir_ / paths::stage1_ckpt);
        std::vector<ScoreRow> rows{{"stage1", score(s1, l)}};
        const std::pair<const char*, config::Stage2Variant> variants[] = {
            {"naive", config::Stage2Variant::naive},
            {"class_balanced", config::Stage2Variant::class_balanced},
            {"crt", config::Stage2Variant::crt},
            {"bs", config::Stage2Variant::full}};
        for (const auto& [label, v] : variants) {
          auto m = s1;
          auto recipe = config::stage2_recipe(cfg_, counts, v);
          if (v == config::Stage2Variant::full) recipe.loss = classifier::LossKind::balanced_softmax;
          classifier::train_stage2(m, l.data, recipe, derive_seed(cfg_.seed, "stage2"));
          rows.push_back({label, score(m, l)});
        }
        csv = score_table_csv("method", rows);
        break;
      }
      case AblationTable::guidance_sweep: {
        metrics::SweepConfig sc;
        sc.scales = cfg_.metrics.scales;
        sc.n_per_class = cfg_.metrics.n_per_class;
        sc.k = cfg_.metrics.k;
        sc.seed = derive_seed(cfg_.seed, "guidance-sweep");
        sc.classifier = config::classifier_config(cfg_);
        sc.recipe = config::stage1_recipe(cfg_, counts);
        std::optional<classifier::ClassifierModel> features;
        if (cfg_.metrics.features == config::FeatureSpace::classifier)
          features = classifier::ClassifierModel::load(dir_ / paths::stage1_ckpt);
        auto rows = metrics::guidance_sweep(model, tokens, l.test.x, l.test, sc, features ? &*features : nullptr);
        csv = metrics::sweep_to_csv(rows);
        break;
      }
      case AblationTable::capacity_sweep: {
        std::vector<ScoreRow> rows;
        Matrix x;
        std::vector<int> y;
        l.data.select(dataset::Split::train, dataset::Source::real, x, y);
        for (int d_c : cfg_.ablation.capacity) {
          if (d_c == cfg_.diffusion.d_c) {
            rows.push_back({std::to_string(d_c), sweep_score(model, tokens, cfg_.ablation.quota)});
            continue;
          }
          auto dc = config::denoiser_config(cfg_);
          dc.d_c = d_c;
          diffusion::DenoiserModel init(dc, derive_seed(cfg_.seed, "denoiser-init"));
          auto trained = diffusion::train_diffusion(init, x, y, config::diffusion_train_config(cfg_),
                                                    derive_seed(cfg_.seed, "diffusion-train"));
          auto toks = invert_all(trained.model, l.data, cfg_, std::nullopt);
          rows.push_back({std::to_string(d_c), sweep_score(trained.model, toks, cfg_.ablation.quota)});
        }
        csv = score_table_csv("d_c", rows);
        break;
      }
      case AblationTable::steps_sweep: {
        std::vector<ScoreRow> rows;
        for (int steps : cfg_.ablation.steps) {
          auto toks = invert_all(model, l.data, cfg_, steps);
          rows.push_back({std::to_string(steps), sweep_score(model, toks, cfg_.ablation.quota)});
        }
        csv = score_table_csv("steps", rows);
        break;
      }
      case AblationTable::quota_sweep: {
        std::vector<ScoreRow> rows;
        for (int q : cfg_.ablation.quotas) rows.push_back({std::to_string(q), sweep_score(model, tokens, q)});
        csv = score_table_csv("quota", rows);
        break;
      }
    }
    write_text(dir_ / out, csv);
    return std::vector<std::string>{out};
  });
  return dir_ / out;
}

namespace {

// Rows of a CSV file without its header, split on commas.
std::vector<std::vector<std::string>> csv_rows(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      auto c = line.find(',', start);
      f.push_back(line.substr(start, c == std::string::npos ? std::string::npos : c - start));
      if (c == std::string::npos) break;
      start = c + 1;
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

std::string xy_series(const std::vector<std::vector<std::string>>& rows, std::size_t xcol, std::size_t ycol) {
  std::string out = "x,y\n";
  for (const auto& r : rows)
    if (r.size() > std::max(xcol, ycol) && !r[ycol].empty()) out += r[xcol] + "," + r[ycol] + "\n";
  return out;
}

}  // namespace

std::string Run::report() {
  std::ostringstream o;
  o << "run " << cfg_.run_id << " (seed " << cfg_.seed << ")\n";
  o << "stages:\n";
  auto status = [&](const std::string& s) { return manifest_.done(s) ? "done" : "pending"; };
  char buf[128];
  for (const auto& s : run::stage_names()) {
    std::snprintf(buf, sizeof buf, "  %-26s %s\n", s.c_str(), status(s));
    o << buf;
  }
  const std::vector<AblationTable> tables{AblationTable::fill_strategies, AblationTable::stage2_variants,
                                          AblationTable::guidance_sweep,  AblationTable::capacity_sweep,
                                          AblationTable::steps_sweep,     AblationTable::quota_sweep};
  for (auto t : tables) {
    std::snprintf(buf, sizeof buf, "  %-26s %s\n", ("ablation " + to_string(t)).c_str(),
                  status("ablation:" + to_string(t)));
    o << buf;
  }

  auto present = [&](const std::string& stage, const std::string& rel) {
    return manifest_.done(stage) && fs::exists(dir_ / rel);
  };
  if (present("evaluate", paths::evaluation_csv)) {
    o << "\naccuracy (balanced test split):\n";
    for (const auto& r : csv_rows(dir_ / paths::evaluation_csv)) {
      std::snprintf(buf, sizeof buf, "  %-8s overall %s  many %s  medium %s  few %s\n", r[0].c_str(), r[1].c_str(),
                    r[2].empty() ? "-" : r[2].c_str(), r[3].empty() ? "-" : r[3].c_str(),
                    r[4].empty() ? "-" : r[4].c_str());
      o << buf;
    }
  }
  for (auto t : tables) {
    const std::string rel = paths::ablation(t);
    if (!present("ablation:" + to_string(t), rel)) continue;
    o << "\n" << to_string(t) << ":\n";
    std::istringstream in(read_text(dir_ / rel));
    std::string line;
    while (std::getline(in, line)) o << "  " << line << "\n";
  }

  // Plot series.
  if (present("train-diffusion", paths::diffusion_loss))
    write_text(dir_ / "reports/plot_diffusion_loss.csv", xy_series(csv_rows(dir_ / paths::diffusion_loss), 0, 1));
  if (present("train-stage1", paths::stage1_history))
    write_text(dir_ / "reports/plot_stage1_accuracy.csv", xy_series(csv_rows(dir_ / paths::stage1_history), 0, 2));
  if (present("train-stage2", paths::stage2_history))
    write_text(dir_ / "reports/plot_stage2_accuracy.csv", xy_series(csv_rows(dir_ / paths::stage2_history), 0, 2));
  if (present("ablation:guidance_sweep", paths::ablation(AblationTable::guidance_sweep))) {
    auto rows = csv_rows(dir_ / paths::ablation(AblationTable::guidance_sweep));
    const char* cols[] = {"top1", "frechet", "precision", "recall"};
    for (std::size_t c = 0; c < 4; ++c)
      write_text(dir_ / ("reports/plot_guidance_" + std::string(cols[c]) + ".csv"), xy_series(rows, 0, c + 1));
  }
  for (auto t : {AblationTable::capacity_sweep, AblationTable::steps_sweep, AblationTable::quota_sweep}) {
    if (!present("ablation:" + to_string(t), paths::ablation(t))) continue;
    auto rows = csv_rows(dir_ / paths::ablation(t));
    std::string stem = to_string(t).substr(0, to_string(t).find('_'));
    write_text(dir_ / ("reports/plot_" + stem + "_overall.csv"), xy_series(rows, 0, 1));
    write_text(dir_ / ("reports/plot_" + stem + "_few.csv"), xy_series(rows, 0, 4));
  }
  return o.str();
}

bool Run::verify() {
  const fs::path root = dir_ / ".verify";
  fs::remove_all(root);
  bool ok = true;
  {
    OpenOptions o;
    o.runs_root = root;
    o.run_id = cfg_.run_id;
    o.config = cfg_;
    auto v = Run::open(o, *log_);
    v->pipeline();
    for (const auto& s : run::stage_names()) {
      const auto* mine = manifest_.find(s);
      if (!mine || !mine->done) {
        *log_ << "verify " << s << ": not recorded in this run, skipped\n";
        continue;
      }
      const auto* theirs = v->manifest().find(s);
      if (!theirs || theirs->artifacts != mine->artifacts || theirs->fingerprint != mine->fingerprint) {
        *log_ << "verify " << s << ": MISMATCH\n";
        ok = false;
      } else {
        *log_ << "verify " << s << ": ok\n";
      }
    }
  }
  fs::remove_all(root);
  return ok;
}

}  // namespace fillup::pipeline
