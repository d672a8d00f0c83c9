#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcs/trainer.hpp"

namespace mcs {

// Command-line overrides; unset fields defer to the config file, then to the
// per-series presets, then to the built-in defaults.
struct CliOverrides {
  std::optional<std::string> series;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha_hat;
  std::optional<double> beta;
  std::optional<long> steps;
  std::optional<bool> no_mask;
  std::optional<bool> no_predictor;
  std::optional<std::string> out;
  std::optional<int> episodes;
};

// Precedence: CLI override > config file > series preset > defaults.
TrainConfig resolve_config(const std::optional<std::string>& config_path,
                           const CliOverrides& cli);

// Default output root: $MCS_OUT_ROOT or ./runs. A run directory is named
// <series>-seed<seed>-<utc stamp> unless cfg.out_dir is set explicitly.
std::string resolve_run_dir(const TrainConfig& cfg);

struct TrainArtifacts {
  std::string run_dir;
  std::string manifest_path;
  std::string metrics_path;
  std::vector<std::pair<long, std::string>> checkpoints;
};

// Runs trainer.run() and writes the run manifest (resolved config, seed,
// series, relative artifact paths, checkpoint content hashes).
TrainArtifacts cmd_train(const TrainConfig& cfg);

struct EvalArtifacts {
  EvalReport report;
  std::string report_path;
};

// Loads a checkpoint, evaluates it, prints one row per task plus the average
// and writes the same table to <out_dir>/eval_report.csv (K+1 data rows).
EvalArtifacts cmd_eval(const std::string& checkpoint, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& trace_path = "");

struct SweepCell {
  double alpha_hat = 0.0;
  double beta = 0.0;
  double avg_last10 = 0.0;
  double mask_density_last10 = 0.0;
  long steps = 0;
  std::string run_dir;
};

// Trains one run per (alpha_hat, beta) grid cell; each cell reports the mean
// averaged win rate and mask density over its last 10 evaluation rows.
// jobs > 1 runs cells concurrently (each cell stays single-threaded and
// bit-deterministic). Writes <out>/sweep.csv.
std::vector<SweepCell> cmd_sweep(const TrainConfig& base, const std::vector<double>& alpha_grid,
                                 const std::vector<double>& beta_grid, int jobs,
                                 const std::string& out_dir);

// Greedy evaluation episodes dumping one JSON line per (task, episode, step,
// agent): task_id, agent_id, episode, step, message[D_m], mask row.
long cmd_dump_latents(const std::string& checkpoint, const TrainConfig& cfg, int episodes,
                      const std::string& out_path);

// Mean of the avg_winrate column over the last `rows` data rows of a metrics
// CSV (all rows when fewer exist); column utilities shared by sweep/tests.
double metrics_tail_mean(const std::string& metrics_csv, const std::string& column, int rows);
// First step column value whose avg_winrate reaches the threshold; -1 if none.
long metrics_first_reach(const std::string& metrics_csv, double threshold);

}  // namespace mcs
