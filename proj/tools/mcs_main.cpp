#include <cstdio>
#include <exception>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcs/harness.hpp"

namespace {

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

struct CommonFlags {
  std::optional<std::string> config;
  mcs::CliOverrides cli;

  void attach(CLI::App* app) {
    app->add_option_function<std::string>(
        "--config", [this](const std::string& v) { config = v; },
        "JSON config file (CLI flags win)");
    app->add_option_function<std::string>(
        "--series", [this](const std::string& v) { cli.series = v; }, "task series: 233|344|mini");
    app->add_option_function<std::uint64_t>(
        "--seed", [this](std::uint64_t v) { cli.seed = v; }, "root random seed");
    app->add_option_function<double>(
        "--alpha-hat", [this](double v) { cli.alpha_hat = v; },
        "communication threshold in [0,1]");
    app->add_option_function<double>("--beta", [this](double v) { cli.beta = v; },
                                     "prediction loss coefficient");
    app->add_option_function<long>("--steps", [this](long v) { cli.steps = v; },
                                   "total environment steps per task");
    app->add_flag_function("--no-mask",
                           [this](std::int64_t) { cli.no_mask = true; },
                           "ablation: all-ones communication mask");
    app->add_flag_function("--no-predictor",
                           [this](std::int64_t) { cli.no_predictor = true; },
                           "ablation: drop the prediction loss");
    app->add_option_function<std::string>(
        "--out", [this](const std::string& v) { cli.out = v; }, "output directory");
    app->add_option_function<int>("--episodes", [this](int v) { cli.episodes = v; },
                                  "evaluation episodes per task");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task communication-skills trainer for AliceBob grid worlds"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "train a model on a task series");
  train_flags.attach(train);

  CommonFlags eval_flags;
  std::string eval_ckpt;
  std::string eval_trace;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--trace", eval_trace, "write a JSON-lines episode trace to this file");

  CommonFlags sweep_flags;
  std::string alpha_grid_csv = "0.5";
  std::string beta_grid_csv = "0.1";
  int sweep_jobs = 1;
  CLI::App* sweep = app.add_subcommand("sweep", "grid sweep over alpha-hat and beta");
  sweep_flags.attach(sweep);
  sweep->add_option("--alpha-grid", alpha_grid_csv, "comma-separated alpha-hat values");
  sweep->add_option("--beta-grid", beta_grid_csv, "comma-separated beta values");
  sweep->add_option("--jobs", sweep_jobs, "concurrent sweep cells");

  CommonFlags dump_flags;
  std::string dump_ckpt;
  std::string dump_out = "latents.jsonl";
  CLI::App* dump = app.add_subcommand("dump-latents", "dump per-step messages and mask rows");
  dump_flags.attach(dump);
  dump->add_option("--checkpoint", dump_ckpt, "checkpoint file")->required();
  dump->add_option("--latents-out", dump_out, "JSON-lines output file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      mcs::TrainConfig cfg = mcs::resolve_config(train_flags.config, train_flags.cli);
      mcs::TrainArtifacts art = mcs::cmd_train(cfg);
      std::printf("run dir:  %s\nmetrics:  %s\nmanifest: %s\n", art.run_dir.c_str(),
                  art.metrics_path.c_str(), art.manifest_path.c_str());
    } else if (eval->parsed()) {
      mcs::TrainConfig cfg = mcs::resolve_config(eval_flags.config, eval_flags.cli);
      const std::string out_dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
      mcs::cmd_eval(eval_ckpt, cfg, out_dir, eval_trace);
    } else if (sweep->parsed()) {
      mcs::TrainConfig cfg = mcs::resolve_config(sweep_flags.config, sweep_flags.cli);
      const std::string out_dir = cfg.out_dir.empty() ? "sweep_out" : cfg.out_dir;
      auto cells = mcs::cmd_sweep(cfg, parse_grid(alpha_grid_csv), parse_grid(beta_grid_csv),
                                  sweep_jobs, out_dir);
      std::printf("%10s %10s %12s %14s %10s\n", "alpha_hat", "beta", "avg_last10", "mask_density",
                  "steps");
      for (const auto& c : cells) {
        std::printf("%10.3g %10.3g %12.4f %14.4f %10ld\n", c.alpha_hat, c.beta, c.avg_last10,
                    c.mask_density_last10, c.steps);
      }
    } else if (dump->parsed()) {
      mcs::TrainConfig cfg = mcs::resolve_config(dump_flags.config, dump_flags.cli);
      const long n = mcs::cmd_dump_latents(dump_ckpt, cfg, cfg.eval_episodes, dump_out);
      std::printf("wrote %ld records to %s\n", n, dump_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
