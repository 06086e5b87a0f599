#include "fillup/cli.hpp"

#include "fillup/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

namespace fillup::cli {

namespace {

struct Options {
  std::string config_path;
  std::string run_id;
  std::string runs_dir;
  std::uint64_t seed = 0;
  bool force = false;
  bool verify = false;
  std::string train_stage = "all";
  std::string table;
};

int dispatch(CLI::App& app, const Options& o, std::ostream& out) {
  CLI::App* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();

  pipeline::OpenOptions open;
  if (!o.runs_dir.empty()) open.runs_root = o.runs_dir;
  if (!o.run_id.empty()) open.run_id = o.run_id;
  if (!o.config_path.empty()) {
    open.config = config::load(o.config_path);
  }
  if (app.get_option("--seed")->count() > 0) open.seed = o.seed;
  open.force = o.force;
  open.create = cmd != "report";

  auto r = pipeline::Run::open(open, out);
  if (cmd == "synth-data") r->synth_data();
  else if (cmd == "train-diffusion") r->train_diffusion();
  else if (cmd == "invert") r->invert();
  else if (cmd == "generate") r->generate();
  else if (cmd == "fill") r->fill();
  else if (cmd == "train") {
    if (o.train_stage == "stage1") r->train_stage1();
    else r->train_stage2();
  } else if (cmd == "evaluate") r->evaluate();
  else if (cmd == "pipeline") r->pipeline();
  else if (cmd == "ablation") out << "wrote " << r->ablation(pipeline::ablation_from_string(o.table)).string() << "\n";
  else if (cmd == "report") out << r->report();

  if (o.verify && !r->verify()) throw StageError("verify: recomputed artifacts differ from the manifest");
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-tailed recognition with diffusion-based fill-up on synthetic feature data", "fillup"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "Run config file (INI)");
  app.add_option("--run-id", o.run_id, "Run id; artifacts live under <runs root>/<id>");
  app.add_option("--runs-dir", o.runs_dir, "Runs root (default: $FILLUP_RUNS_DIR or ./runs)");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_flag("--force", o.force, "Replace artifacts built from different inputs");
  app.add_flag("--verify", o.verify, "Afterwards rebuild the run in a scratch directory and compare checksums");

  app.add_subcommand("synth-data", "Draw the long-tailed dataset");
  app.add_subcommand("train-diffusion", "Train the class-conditional denoiser");
  app.add_subcommand("invert", "Learn one token per class against the frozen denoiser");
  app.add_subcommand("generate", "Plan quotas and sample the synthetic pool");
  app.add_subcommand("fill", "Merge the synthetic pool into the training set");
  auto* train = app.add_subcommand("train", "Train the classifier");
  train->add_option("--stage", o.train_stage, "stage1, stage2 or all")
      ->check(CLI::IsMember({"stage1", "stage2", "all"}));
  app.add_subcommand("evaluate", "Score both classifier stages on the balanced test split");
  app.add_subcommand("pipeline", "Run every stage and print the evaluation table");
  auto* abl = app.add_subcommand("ablation", "Write one ablation table");
  abl->add_option("--table", o.table,
                  "fill_strategies, stage2_variants, guidance_sweep, capacity_sweep, steps_sweep or quota_sweep")
      ->required();
  app.add_subcommand("report", "Print stage status and tables; write plot series");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return config_error;
  }

  try {
    return dispatch(app, o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const ArtifactConflict& e) {
    err << "artifact conflict: " << e.what() << "\n";
    return artifact_conflict;
  } catch (const std::exception& e) {
    err << "stage failure: " << e.what() << "\n";
    return stage_failure;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace fillup::cli
