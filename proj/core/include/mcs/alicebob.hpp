#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mcs/tensor.hpp"

namespace mcs {

enum class EntityClass { Agent, Target, Trigger, Wall, Empty };
enum class TargetKind { Diamond, Food };
enum class TriggerKind { Button, Key };

enum Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
constexpr int kNumActions = 5;

// One task of an AliceBob series. Entity rows of the observation follow the
// fixed roster order: agents, then targets in color order, then triggers in
// color order, then the 8 surrounding-cell rows.
struct TaskSpec {
  std::string task_id;
  int num_agents = 2;
  TargetKind target_kind = TargetKind::Diamond;
  TriggerKind trigger_kind = TriggerKind::Button;
  std::vector<int> colors;  // permutation of series color ids, one per pair
  int grid_width = 5;
  int grid_height = 5;
  int max_steps = 50;
  int series_colors = 2;  // color universe size of the owning series
  int action_width = kNumActions;

  int pair_count() const { return static_cast<int>(colors.size()); }
  int roster_size() const { return num_agents + 2 * pair_count(); }
  // agent | target-kind x color | trigger-kind x color | wall | empty
  int one_hot_width() const { return 3 + 4 * series_colors; }
  int feature_width() const { return 2 + one_hot_width(); }
  int obs_rows() const { return roster_size() + 8; }
};

struct SeriesOverrides {
  int grid_width = 0;  // 0 keeps the series default
  int grid_height = 0;
  int max_steps = 0;
};

// Series "233" (4 tasks, 2 agents, 3 pairs), "344" (4 tasks, 3 agents,
// 4 pairs) and "mini" (2 tasks, 2 agents, 2 pairs on a 5x5 grid). Tasks of a
// series differ in target/trigger kinds and in the per-task color permutation.
std::vector<TaskSpec> make_series(const std::string& name, const SeriesOverrides& ov = {});

// JSON file with {"series": name, "grid_width": .., "grid_height": ..,
// "max_steps": ..}; zero or absent fields keep series defaults.
std::vector<TaskSpec> load_series_config(const std::string& path);

struct EntityState {
  int x = 0;
  int y = 0;
  EntityClass cls = EntityClass::Empty;
  int color = -1;
  bool alive = true;
};

struct StepResult {
  std::vector<Tensor> observations;  // one {obs_rows, feature_width} matrix per agent
  double reward = 0.0;
  bool done = false;
  bool win = false;
  int pairs_completed = 0;
  int collisions = 0;
};

// Cooperative grid world. Targets spawn in the top half of the grid, triggers
// in the bottom half. A color-c target is collected exactly when one agent
// stands on it while another simultaneously stands on the color-c trigger.
// Shared team reward: +1 per pair completed, +5 on the winning step,
// -0.5 per colliding agent pair, -0.1 per step.
class AliceBobEnv {
 public:
  explicit AliceBobEnv(TaskSpec spec);

  std::vector<Tensor> reset(std::uint64_t seed);
  StepResult step(const std::vector<int>& actions);
  Tensor observe(int agent_index) const;

  const TaskSpec& spec() const { return spec_; }
  int steps_taken() const { return steps_; }
  bool done() const { return done_; }
  bool win() const { return win_; }
  const std::vector<EntityState>& agents() const { return agents_; }
  const std::vector<EntityState>& targets() const { return targets_; }
  const std::vector<EntityState>& triggers() const { return triggers_; }

  // One-hot feature index for an entity class (targets/triggers by color).
  int one_hot_index(EntityClass cls, TargetKind tk, TriggerKind gk, int color) const;

 private:
  TaskSpec spec_;
  std::vector<EntityState> agents_;
  std::vector<EntityState> targets_;
  std::vector<EntityState> triggers_;
  int steps_ = 0;
  bool done_ = true;
  bool win_ = false;
};

// JSON-lines episode trace: one step per line with a state summary, joint
// actions, reward breakdown and the communication mask used that step.
class EpisodeTracer {
 public:
  explicit EpisodeTracer(const std::string& path);
  void record(const AliceBobEnv& env, const std::vector<int>& actions, const StepResult& result,
              const std::vector<double>& mask_row_major, int mask_dim);

 private:
  std::ofstream out_;
};

}  // namespace mcs
