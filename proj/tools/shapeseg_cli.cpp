// Command-line harness: phantom dataset generation, shape-model fitting,
// cross-validated training of the experimental setups, evaluation and report
// emission. Exit codes: 0 success, 2 configuration error, 3 runtime abort.

#include <CLI11.hpp>

#include <Eigen/Core>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "shapeseg/experiment.hpp"

namespace {

using namespace shapeseg;
namespace fs = std::filesystem;

std::vector<int> parse_fold_list(const std::string& spec) {
  std::vector<int> out;
  for (const std::string& tok : split(spec, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    try {
      out.push_back(std::stoi(t));
    } catch (const std::exception&) {
      throw ConfigError("invalid fold list entry: " + t);
    }
  }
  if (out.empty()) throw ConfigError("empty fold list");
  return out;
}

ExperimentConfig load_config_with_overrides(const std::string& config_path,
                                            const std::optional<std::string>& setup,
                                            const std::optional<std::uint64_t>& seed) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (setup) cfg.setup = parse_setup(*setup);
  if (seed) {
    cfg.seed = *seed;
    cfg.train.seed = *seed;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shapeseg: shape-model constrained cardiac segmentation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread count (0 = library default)");

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic phantom dataset");
  std::string gen_config;
  int gen_count = 250;
  int gen_folds = 5;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--config", gen_config, "phantom spec file (defaults apply if omitted)");
  gen->add_option("--count", gen_count, "number of samples")->required();
  gen->add_option("--folds", gen_folds, "number of cross-validation folds");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // fit-ssm
  auto* fit_cmd = app.add_subcommand("fit-ssm", "fit a shape model from dataset folds");
  std::string fit_dataset, fit_folds, fit_out;
  fit_cmd->add_option("--dataset", fit_dataset, "dataset directory")->required();
  fit_cmd->add_option("--folds", fit_folds, "comma-separated folds to use (default: all)");
  fit_cmd->add_option("--out", fit_out, "output model JSON file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train one setup on one fold");
  std::string tr_config, tr_dataset, tr_out, tr_setup;
  int tr_fold = 0;
  bool tr_resume = false;
  std::uint64_t tr_seed = 0;
  train_cmd->add_option("--config", tr_config, "experiment config file")->required();
  train_cmd->add_option("--dataset", tr_dataset, "dataset directory")->required();
  train_cmd->add_option("--fold", tr_fold, "validation fold")->required();
  train_cmd->add_option("--out", tr_out, "run output directory")->required();
  train_cmd->add_flag("--resume", tr_resume, "resume from last.ckpt in the output directory");
  auto* tr_setup_opt = train_cmd->add_option("--setup", tr_setup, "override the config setup");
  auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed, "override the config seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run on its fold");
  std::string ev_run, ev_dataset, ev_out;
  int ev_fold = 0;
  eval_cmd->add_option("--run", ev_run, "training run directory (with best.ckpt)")->required();
  eval_cmd->add_option("--dataset", ev_dataset, "dataset directory")->required();
  eval_cmd->add_option("--fold", ev_fold, "validation fold")->required();
  eval_cmd->add_option("--out", ev_out, "evaluation output directory")->required();

  // xval
  auto* xval_cmd = app.add_subcommand("xval", "train and evaluate all folds");
  std::string xv_config, xv_dataset, xv_out, xv_setup;
  std::uint64_t xv_seed = 0;
  xval_cmd->add_option("--config", xv_config, "experiment config file")->required();
  xval_cmd->add_option("--dataset", xv_dataset, "dataset directory")->required();
  xval_cmd->add_option("--out", xv_out, "output directory")->required();
  auto* xv_setup_opt = xval_cmd->add_option("--setup", xv_setup, "override the config setup");
  auto* xv_seed_opt = xval_cmd->add_option("--seed", xv_seed, "override the config seed");

  // report
  auto* report_cmd = app.add_subcommand("report", "summary tables and plots from runs");
  std::vector<std::string> rp_runs;
  std::string rp_out;
  report_cmd->add_option("runs", rp_runs, "run directories")->required();
  report_cmd->add_option("--out", rp_out, "report output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (threads > 0) {
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
    Eigen::setNbThreads(threads);
  }

  try {
    if (*gen) {
      std::optional<fs::path> spec;
      if (!gen_config.empty()) spec = gen_config;
      const PhantomDataset ds =
          harness::run_phantom_gen(spec, gen_count, gen_folds, gen_seed, gen_out);
      std::printf("wrote %zu samples to %s (hash %s)\n", ds.samples.size(), gen_out.c_str(),
                  dataset_hash(ds).c_str());
    } else if (*fit_cmd) {
      std::vector<int> folds;
      if (fit_folds.empty()) {
        const PhantomDataset ds = load_dataset(fit_dataset);
        for (int f = 0; f < ds.folds; ++f) folds.push_back(f);
      } else {
        folds = parse_fold_list(fit_folds);
      }
      const StatShapeModel model = harness::run_fit_ssm(fit_dataset, folds, fit_out);
      std::printf("fitted shape model: %d landmarks, %d modes, %d shapes -> %s\n",
                  model.n_landmarks, model.rank(), model.training_count, fit_out.c_str());
    } else if (*train_cmd) {
      const ExperimentConfig cfg = load_config_with_overrides(
          tr_config, tr_setup_opt->count() ? std::optional(tr_setup) : std::nullopt,
          tr_seed_opt->count() ? std::optional(tr_seed) : std::nullopt);
      const auto art = harness::run_train(cfg, tr_dataset, tr_fold, tr_out, tr_resume);
      std::printf("trained %s fold %d: best val %.5f at epoch %d -> %s\n",
                  setup_name(cfg.setup).c_str(), tr_fold, art.result.best_val,
                  art.result.best_epoch, tr_out.c_str());
    } else if (*eval_cmd) {
      const auto out = harness::run_eval(ev_run, ev_dataset, ev_fold, ev_out);
      std::printf("evaluated %zu rows -> %s\n", out.rows.size(), ev_out.c_str());
    } else if (*xval_cmd) {
      const ExperimentConfig cfg = load_config_with_overrides(
          xv_config, xv_setup_opt->count() ? std::optional(xv_setup) : std::nullopt,
          xv_seed_opt->count() ? std::optional(xv_seed) : std::nullopt);
      harness::run_xval(cfg, xv_dataset, xv_out);
      std::printf("cross-validation complete -> %s\n", xv_out.c_str());
    } else if (*report_cmd) {
      std::vector<fs::path> dirs(rp_runs.begin(), rp_runs.end());
      harness::run_report(dirs, rp_out);
      std::printf("report written -> %s\n", rp_out.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
