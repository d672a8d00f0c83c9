#include "mcs/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mcs {

namespace fs = std::filesystem;

namespace {

void apply_series_preset(TrainConfig& cfg, bool alpha_set, bool beta_set) {
  // Per-series gate/predictor weights; 233 and mini share the robust default.
  if (cfg.series == "344") {
    if (!alpha_set) cfg.alpha_hat = 0.7;
    if (!beta_set) cfg.beta = 1.0;
  }
}

void apply_file(TrainConfig& cfg, const nlohmann::json& j, bool& alpha_set, bool& beta_set) {
  if (j.contains("series")) cfg.series = j.at("series").get<std::string>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
  if (j.contains("critic_lr")) cfg.critic_lr = j.at("critic_lr").get<double>();
  if (j.contains("opt_eps")) cfg.opt_eps = j.at("opt_eps").get<double>();
  if (j.contains("ppo_epochs")) cfg.ppo_epochs = j.at("ppo_epochs").get<int>();
  if (j.contains("mini_batches")) cfg.mini_batches = j.at("mini_batches").get<int>();
  if (j.contains("clip")) cfg.clip = j.at("clip").get<double>();
  if (j.contains("entropy_coef")) cfg.entropy_coef = j.at("entropy_coef").get<double>();
  if (j.contains("max_grad_norm")) cfg.max_grad_norm = j.at("max_grad_norm").get<double>();
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("gae_lambda")) cfg.gae_lambda = j.at("gae_lambda").get<double>();
  if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<int>();
  if (j.contains("message_dim")) cfg.message_dim = j.at("message_dim").get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("total_steps")) cfg.total_steps = j.at("total_steps").get<long>();
  if (j.contains("eval_episodes")) cfg.eval_episodes = j.at("eval_episodes").get<int>();
  if (j.contains("eval_interval")) cfg.eval_interval = j.at("eval_interval").get<long>();
  if (j.contains("alpha_hat")) {
    cfg.alpha_hat = j.at("alpha_hat").get<double>();
    alpha_set = true;
  }
  if (j.contains("beta")) {
    cfg.beta = j.at("beta").get<double>();
    beta_set = true;
  }
  if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
  if (j.contains("encoder_blocks")) cfg.encoder_blocks = j.at("encoder_blocks").get<int>();
  if (j.contains("heads")) cfg.heads = j.at("heads").get<int>();
  if (j.contains("ffn_hidden")) cfg.ffn_hidden = j.at("ffn_hidden").get<int>();
  if (j.contains("predictor_blocks")) cfg.predictor_blocks = j.at("predictor_blocks").get<int>();
  if (j.contains("no_mask")) cfg.no_mask = j.at("no_mask").get<bool>();
  if (j.contains("no_predictor")) cfg.no_predictor = j.at("no_predictor").get<bool>();
  if (j.contains("checkpoint_interval")) {
    cfg.checkpoint_interval = j.at("checkpoint_interval").get<long>();
  }
  if (j.contains("horizon_override")) cfg.horizon_override = j.at("horizon_override").get<long>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("env")) {
    const auto& e = j.at("env");
    cfg.env.grid_width = e.value("grid_width", 0);
    cfg.env.grid_height = e.value("grid_height", 0);
    cfg.env.max_steps = e.value("max_steps", 0);
  }
}

nlohmann::json config_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["series"] = cfg.series;
  j["seed"] = cfg.seed;
  j["lr"] = cfg.lr;
  j["critic_lr"] = cfg.critic_lr;
  j["opt_eps"] = cfg.opt_eps;
  j["ppo_epochs"] = cfg.ppo_epochs;
  j["mini_batches"] = cfg.mini_batches;
  j["clip"] = cfg.clip;
  j["entropy_coef"] = cfg.entropy_coef;
  j["max_grad_norm"] = cfg.max_grad_norm;
  j["gamma"] = cfg.gamma;
  j["gae_lambda"] = cfg.gae_lambda;
  j["hidden"] = cfg.hidden;
  j["message_dim"] = cfg.message_dim;
  j["batch_size"] = cfg.batch_size;
  j["total_steps"] = cfg.total_steps;
  j["eval_episodes"] = cfg.eval_episodes;
  j["eval_interval"] = cfg.eval_interval;
  j["alpha_hat"] = cfg.alpha_hat;
  j["beta"] = cfg.beta;
  j["tau"] = cfg.tau;
  j["encoder_blocks"] = cfg.encoder_blocks;
  j["heads"] = cfg.heads;
  j["ffn_hidden"] = cfg.ffn_hidden;
  j["predictor_blocks"] = cfg.predictor_blocks;
  j["no_mask"] = cfg.no_mask;
  j["no_predictor"] = cfg.no_predictor;
  j["checkpoint_interval"] = cfg.checkpoint_interval;
  j["horizon_override"] = cfg.horizon_override;
  j["env"] = {{"grid_width", cfg.env.grid_width},
              {"grid_height", cfg.env.grid_height},
              {"max_steps", cfg.env.max_steps}};
  return j;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int csv_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  throw std::runtime_error("csv column not found: " + name);
}

}  // namespace

TrainConfig resolve_config(const std::optional<std::string>& config_path,
                           const CliOverrides& cli) {
  TrainConfig cfg;
  bool alpha_set = false, beta_set = false;

  nlohmann::json file_json;
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + *config_path);
    try {
      file_json = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("config file " + *config_path + ": " + e.what());
    }
  }

  // Resolve the series first so its preset applies under file/CLI values.
  if (file_json.contains("series")) cfg.series = file_json.at("series").get<std::string>();
  if (cli.series) cfg.series = *cli.series;
  apply_series_preset(cfg, false, false);

  if (!file_json.is_null()) apply_file(cfg, file_json, alpha_set, beta_set);
  if (cli.series) cfg.series = *cli.series;
  if (cli.seed) cfg.seed = *cli.seed;
  if (cli.alpha_hat) cfg.alpha_hat = *cli.alpha_hat;
  if (cli.beta) cfg.beta = *cli.beta;
  if (cli.steps) cfg.total_steps = *cli.steps;
  if (cli.no_mask) cfg.no_mask = *cli.no_mask;
  if (cli.no_predictor) cfg.no_predictor = *cli.no_predictor;
  if (cli.out) cfg.out_dir = *cli.out;
  if (cli.episodes) cfg.eval_episodes = *cli.episodes;

  if (cfg.alpha_hat < 0.0 || cfg.alpha_hat > 1.0) {
    throw std::runtime_error("config field alpha_hat must lie in [0,1]");
  }
  if (cfg.beta < 0.0) throw std::runtime_error("config field beta must be non-negative");
  if (cfg.tau <= 0.0) throw std::runtime_error("config field tau must be positive");
  if (cfg.total_steps < 1) throw std::runtime_error("config field total_steps must be positive");
  return cfg;
}

std::string resolve_run_dir(const TrainConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  const char* root_env = std::getenv("MCS_OUT_ROOT");
  const std::string root = root_env ? root_env : "runs";
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const long stamp = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return root + "/" + cfg.series + "-seed" + std::to_string(cfg.seed) + "-" +
         std::to_string(stamp);
}

TrainArtifacts cmd_train(const TrainConfig& cfg) {
  TrainArtifacts art;
  art.run_dir = resolve_run_dir(cfg);
  fs::create_directories(art.run_dir);

  Trainer trainer(cfg);
  Trainer::RunResult rr = trainer.run(art.run_dir);
  art.metrics_path = rr.metrics_path;
  art.checkpoints = rr.checkpoints;

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["series"] = cfg.series;
  manifest["seed"] = cfg.seed;
  manifest["config"] = config_json(cfg);
  manifest["metrics"] = fs::path(rr.metrics_path).filename().string();
  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& [step, path] : rr.checkpoints) {
    ckpts.push_back({{"step", step},
                     {"file", fs::path(path).filename().string()},
                     {"sha256", sha256_file(path)}});
  }
  manifest["checkpoints"] = std::move(ckpts);
  art.manifest_path = art.run_dir + "/manifest.json";
  std::ofstream mf(art.manifest_path, std::ios::trunc);
  mf << manifest.dump(2) << '\n';
  if (!mf) throw std::runtime_error("failed writing manifest: " + art.manifest_path);
  return art;
}

EvalArtifacts cmd_eval(const std::string& checkpoint, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& trace_path) {
  Trainer trainer(cfg);
  ParamList params = trainer.model().named_params();
  load_checkpoint(checkpoint, params, /*allow_missing_predictor=*/true);

  EvalArtifacts art;
  if (!trace_path.empty()) {
    EpisodeTracer tracer(trace_path);
    Trainer::ActionProvider traced = [&](int, const AliceBobEnv& env) {
      std::vector<Tensor> obs;
      for (int i = 0; i < env.spec().num_agents; ++i) obs.push_back(env.observe(i));
      StepDecision d = act_step(obs, trainer.model(), cfg, env.spec().action_width, nullptr, true,
                                false);
      // The tracer sees the pre-step state and the decision taken from it.
      StepResult preview;
      preview.reward = 0.0;
      tracer.record(env, d.actions, preview, {d.comm.mask.values().begin(),
                                              d.comm.mask.values().end()},
                    env.spec().num_agents);
      return d.actions;
    };
    art.report = trainer.evaluate_with(traced, cfg.eval_episodes);
  } else {
    art.report = trainer.evaluate(cfg.eval_episodes);
  }

  fs::create_directories(out_dir.empty() ? "." : out_dir);
  art.report_path = (out_dir.empty() ? std::string(".") : out_dir) + "/eval_report.csv";
  std::ofstream out(art.report_path, std::ios::trunc);
  out << "task,win_rate,episodes\n";
  for (std::size_t i = 0; i < art.report.task_ids.size(); ++i) {
    out << art.report.task_ids[i] << ',' << art.report.win_rates[i] << ','
        << art.report.episodes_per_task << '\n';
  }
  out << "avg," << art.report.avg << ',' << art.report.episodes_per_task << '\n';

  std::printf("%-12s %10s %10s\n", "task", "win_rate", "episodes");
  for (std::size_t i = 0; i < art.report.task_ids.size(); ++i) {
    std::printf("%-12s %10.4f %10d\n", art.report.task_ids[i].c_str(), art.report.win_rates[i],
                art.report.episodes_per_task);
  }
  std::printf("%-12s %10.4f %10d\n", "avg", art.report.avg, art.report.episodes_per_task);
  return art;
}

double metrics_tail_mean(const std::string& metrics_csv, const std::string& column, int rows) {
  auto table = read_csv(metrics_csv);
  if (table.size() < 2) throw std::runtime_error("metrics csv has no data rows: " + metrics_csv);
  const int col = csv_column(table[0], column);
  const int n = static_cast<int>(table.size()) - 1;
  const int take = std::min(rows, n);
  double acc = 0.0;
  for (int i = n - take + 1; i <= n; ++i) acc += std::stod(table[static_cast<std::size_t>(i)][col]);
  return acc / take;
}

long metrics_first_reach(const std::string& metrics_csv, double threshold) {
  auto table = read_csv(metrics_csv);
  if (table.size() < 2) throw std::runtime_error("metrics csv has no data rows: " + metrics_csv);
  const int avg_col = csv_column(table[0], "avg_winrate");
  const int step_col = csv_column(table[0], "step");
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (std::stod(table[i][avg_col]) >= threshold) return std::stol(table[i][step_col]);
  }
  return -1;
}

std::vector<SweepCell> cmd_sweep(const TrainConfig& base, const std::vector<double>& alpha_grid,
                                 const std::vector<double>& beta_grid, int jobs,
                                 const std::string& out_dir) {
  if (alpha_grid.empty() || beta_grid.empty()) {
    throw std::runtime_error("sweep: empty parameter grid");
  }
  fs::create_directories(out_dir);
  std::vector<SweepCell> cells;
  for (double a : alpha_grid) {
    for (double b : beta_grid) {
      SweepCell c;
      c.alpha_hat = a;
      c.beta = b;
      c.steps = base.total_steps;
      char name[64];
      std::snprintf(name, sizeof(name), "cell_a%.3g_b%.3g", a, b);
      c.run_dir = out_dir + "/" + name;
      cells.push_back(std::move(c));
    }
  }

  auto run_cell = [&](SweepCell& c) {
    TrainConfig cfg = base;
    cfg.alpha_hat = c.alpha_hat;
    cfg.beta = c.beta;
    cfg.out_dir = c.run_dir;
    TrainArtifacts art = cmd_train(cfg);
    c.avg_last10 = metrics_tail_mean(art.metrics_path, "avg_winrate", 10);
    c.mask_density_last10 = metrics_tail_mean(art.metrics_path, "mask_density", 10);
  };

  if (jobs <= 1) {
    for (auto& c : cells) run_cell(c);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex mu;
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t mine;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= cells.size()) return;
            mine = next++;
          }
          run_cell(cells[mine]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::ofstream out(out_dir + "/sweep.csv", std::ios::trunc);
  out << "alpha_hat,beta,avg_last10,mask_density_last10,steps\n";
  for (const auto& c : cells) {
    out << c.alpha_hat << ',' << c.beta << ',' << c.avg_last10 << ',' << c.mask_density_last10
        << ',' << c.steps << '\n';
  }
  return cells;
}

long cmd_dump_latents(const std::string& checkpoint, const TrainConfig& cfg, int episodes,
                      const std::string& out_path) {
  Trainer trainer(cfg);
  ParamList params = trainer.model().named_params();
  load_checkpoint(checkpoint, params, /*allow_missing_predictor=*/true);

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open latent dump file: " + out_path);
  long records = 0;
  const auto& tasks = trainer.tasks();
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    for (int ep = 0; ep < episodes; ++ep) {
      AliceBobEnv env(tasks[k]);
      env.reset(derive_seed(cfg.seed, "latents", static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(ep)));
      int step = 0;
      while (!env.done()) {
        std::vector<Tensor> obs;
        for (int i = 0; i < tasks[k].num_agents; ++i) obs.push_back(env.observe(i));
        StepDecision d = act_step(obs, trainer.model(), cfg, tasks[k].action_width, nullptr, true,
                                  false);
        const int n = tasks[k].num_agents;
        for (int i = 0; i < n; ++i) {
          nlohmann::json rec;
          rec["task_id"] = tasks[k].task_id;
          rec["agent_id"] = i;
          rec["episode"] = ep;
          rec["step"] = step;
          std::vector<double> msg(d.comm.messages.values().begin() + i * cfg.message_dim,
                                  d.comm.messages.values().begin() + (i + 1) * cfg.message_dim);
          rec["message"] = msg;
          std::vector<double> mask_row;
          for (int j = 0; j < n; ++j) mask_row.push_back(d.comm.mask.at(i, j));
          rec["mask_row"] = mask_row;
          out << rec.dump() << '\n';
          ++records;
        }
        env.step(d.actions);
        ++step;
      }
    }
  }
  return records;
}

}  // namespace mcs
