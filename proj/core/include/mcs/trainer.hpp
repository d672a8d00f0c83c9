#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mcs/alicebob.hpp"
#include "mcs/checkpoint.hpp"
#include "mcs/comm.hpp"
#include "mcs/predictor.hpp"
#include "mcs/rng.hpp"

namespace mcs {

// Per-agent centralized critic V(o_i, m_bar_i): shares the policy trunk's
// attention structure with its own parameters.
struct CriticParams {
  AttentionParams attn;  // q {D_h}, k/v {D_e} -> D_h
  Tensor val_w, val_b;   // D_h -> 1
  int heads = 4;

  static CriticParams init(int d_feat, int d_hidden, int heads, RngStream& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct TrainConfig {
  std::string series = "233";
  std::uint64_t seed = 1;
  // Optimizer and PPO machinery (defaults follow the shipped hyperparameters).
  double lr = 5e-4;
  double critic_lr = 5e-4;
  double opt_eps = 1e-5;
  int ppo_epochs = 8;
  int mini_batches = 10;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double max_grad_norm = 10.0;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int hidden = 64;
  int message_dim = 10;
  int batch_size = 32;
  long total_steps = 1'000'000;
  int eval_episodes = 32;
  long eval_interval = 0;  // env steps between evaluations; 0 = ~25 per run
  // Communication and predictor weighting.
  double alpha_hat = 0.5;
  double beta = 0.1;
  double tau = 1.0;
  // Network size knobs not fixed by the hyperparameter table.
  int encoder_blocks = 2;
  int heads = 4;
  int ffn_hidden = 64;
  int predictor_blocks = 1;
  // Ablation switches.
  bool no_mask = false;       // force the mask all-ones (scores still logged)
  bool no_predictor = false;  // drop the prediction loss (beta = 0)
  long checkpoint_interval = 0;  // env steps between checkpoints; 0 = final only
  long horizon_override = 0;     // rollout chunk per update; 0 = batch_size * max_steps
  SeriesOverrides env;
  std::string out_dir;
};

struct McsModel {
  CommParams comm;
  PolicyParams policy;
  CriticParams critic;
  PredictorParams pred;

  static McsModel init(const TrainConfig& cfg, int d_feat, int a_max, RngStream& rng);
  ParamList named_params() const;
  std::vector<Tensor> actor_tensors() const;   // encoder, gate, aggregator, policy, predictor
  std::vector<Tensor> critic_tensors() const;
  std::vector<Tensor> all_tensors() const;
};

// Batched critic values for stacked observations {B*E, D_e} and aggregated
// messages {B, D_h}; returns {B, 1}.
Tensor critic_values(const Tensor& obs_stack, const Tensor& m_bar, int entity_rows,
                     const CriticParams& p);

struct StepRecord {
  std::vector<double> obs;         // N*E*D_e row-major
  std::vector<double> noise;       // N*N Gumbel noise differences
  std::vector<double> messages;    // N*D_m
  std::vector<double> scores;      // N*N
  std::vector<double> mask;        // N*N
  std::vector<double> aggregated;  // N*D_h
  std::vector<int> actions;        // N
  std::vector<double> log_probs;   // N
  std::vector<double> values;      // N
  double reward = 0.0;
  bool done = false;
  bool win = false;
  std::vector<double> advantages;  // N, filled by compute_advantages
  std::vector<double> targets;     // N
};

struct RolloutBuffer {
  TaskSpec spec;
  std::vector<StepRecord> steps;
  std::vector<double> bootstrap_values;  // N, value of the post-horizon state
  void clear() {
    steps.clear();
    bootstrap_values.clear();
  }
};

// Generalized advantage estimation over one task buffer; fills each record's
// advantages (un-normalized) and value targets.
void compute_advantages(RolloutBuffer& buffer, double gamma, double lambda);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double eps, double beta1 = 0.9,
       double beta2 = 0.999);
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, eps_, beta1_, beta2_;
  long t_ = 0;
};

struct StepDecision {
  CommResult comm;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
};

// One decision step for all agents of a task: communicate, act, and (when
// requested) compute per-agent critic values. rng == nullptr selects
// noise-free greedy evaluation mode.
StepDecision act_step(const std::vector<Tensor>& obs, const McsModel& model,
                      const TrainConfig& cfg, int action_width, RngStream* rng, bool greedy,
                      bool with_values);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double pred_loss = 0.0;
  double entropy = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

struct EvalReport {
  std::vector<std::string> task_ids;
  std::vector<double> win_rates;
  double avg = 0.0;
  int episodes_per_task = 0;
};

struct TaskLosses {
  Tensor policy_loss;   // clipped surrogate (scalar)
  Tensor value_loss;    // mean squared error (scalar)
  Tensor entropy_mean;  // mean policy entropy (scalar)
  Tensor messages;      // fresh {S*N, D_m} forward pass
  PredictorBatch pred_batch;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);
  // Custom task set (testing and synthetic-series use); tasks must share the
  // feature width.
  Trainer(TrainConfig cfg, std::vector<TaskSpec> specs);

  const TrainConfig& config() const { return cfg_; }
  McsModel& model() { return model_; }
  const std::vector<TaskSpec>& tasks() const { return specs_; }
  std::vector<RolloutBuffer>& buffers() { return buffers_; }
  long horizon() const { return horizon_; }
  long steps_done() const { return steps_done_; }
  double last_mask_density() const { return last_mask_density_; }

  // Fills every task buffer with one horizon of transitions.
  void collect();
  // PPO round over the filled buffers; clears them afterwards.
  UpdateStats update();
  // Deterministic greedy evaluation with noise-free gating.
  EvalReport evaluate(int episodes_per_task);
  // Evaluation driven by an external policy (scripted oracles in tests).
  using ActionProvider = std::function<std::vector<int>(int task_index, const AliceBobEnv& env)>;
  EvalReport evaluate_with(const ActionProvider& provider, int episodes_per_task);

  // Loss tensors for one task minibatch; requires an active Tape when
  // gradients are wanted. Used by update() and by gradient-path tests.
  TaskLosses forward_losses(int task_index, const std::vector<int>& indices);

  struct RunResult {
    std::string metrics_path;
    std::vector<std::pair<long, std::string>> checkpoints;  // (step, path)
  };
  // Full training loop: alternates collect/update, evaluates on a fixed
  // cadence, writes metrics and checkpoints under out_dir.
  RunResult run(const std::string& out_dir);

 private:
  void reset_env(int task_index);
  std::vector<double> bootstrap_values(int task_index);
  // GAE plus per-task advantage normalization, once per round.
  void prepare_advantages();

  TrainConfig cfg_;
  std::vector<TaskSpec> specs_;
  std::vector<std::unique_ptr<AliceBobEnv>> envs_;
  std::vector<std::vector<Tensor>> cur_obs_;
  std::vector<std::uint64_t> episode_counter_;
  McsModel model_;
  std::vector<RolloutBuffer> buffers_;
  std::vector<RngStream> policy_rng_;
  RngStream shuffle_rng_;
  std::unique_ptr<Adam> actor_opt_;
  std::unique_ptr<Adam> critic_opt_;
  long horizon_ = 0;
  long steps_done_ = 0;
  long eval_round_ = 0;
  double last_mask_density_ = 0.0;
  int a_max_ = kNumActions;
  std::vector<std::vector<double>> norm_adv_;  // per task, [t * N + agent]
  bool adv_ready_ = false;
};

}  // namespace mcs
