#include "mcs/alicebob.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace mcs {

namespace {

struct KindCombo {
  TargetKind target;
  TriggerKind trigger;
};

// Task index -> entity kinds. Tasks of a series run through the
// diamond/food x button/key combinations.
constexpr KindCombo kCombos[4] = {
    {TargetKind::Diamond, TriggerKind::Button},
    {TargetKind::Diamond, TriggerKind::Key},
    {TargetKind::Food, TriggerKind::Button},
    {TargetKind::Food, TriggerKind::Key},
};

std::vector<int> rotated_colors(int count, int shift) {
  std::vector<int> c(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) c[static_cast<std::size_t>(i)] = (i + shift) % count;
  return c;
}

TaskSpec base_task(const std::string& series, int index, int num_agents, int pairs, int grid,
                   int max_steps) {
  TaskSpec t;
  t.task_id = series + "-" + std::to_string(index);
  t.num_agents = num_agents;
  t.target_kind = kCombos[index % 4].target;
  t.trigger_kind = kCombos[index % 4].trigger;
  t.colors = rotated_colors(pairs, index);
  t.grid_width = grid;
  t.grid_height = grid;
  t.max_steps = max_steps;
  t.series_colors = pairs;
  return t;
}

}  // namespace

std::vector<TaskSpec> make_series(const std::string& name, const SeriesOverrides& ov) {
  std::vector<TaskSpec> tasks;
  if (name == "233") {
    for (int i = 0; i < 4; ++i) tasks.push_back(base_task(name, i, 2, 3, 10, 100));
  } else if (name == "344") {
    for (int i = 0; i < 4; ++i) tasks.push_back(base_task(name, i, 3, 4, 10, 100));
  } else if (name == "mini") {
    tasks.push_back(base_task(name, 0, 2, 2, 5, 50));
    tasks.push_back(base_task(name, 3, 2, 2, 5, 50));
    tasks[1].task_id = "mini-1";
  } else {
    throw std::invalid_argument("unknown task series '" + name + "'");
  }
  for (auto& t : tasks) {
    if (ov.grid_width > 0) t.grid_width = ov.grid_width;
    if (ov.grid_height > 0) t.grid_height = ov.grid_height;
    if (ov.max_steps > 0) t.max_steps = ov.max_steps;
  }
  return tasks;
}

std::vector<TaskSpec> load_series_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open series config: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  SeriesOverrides ov;
  ov.grid_width = j.value("grid_width", 0);
  ov.grid_height = j.value("grid_height", 0);
  ov.max_steps = j.value("max_steps", 0);
  return make_series(j.at("series").get<std::string>(), ov);
}

AliceBobEnv::AliceBobEnv(TaskSpec spec) : spec_(std::move(spec)) {
  if (spec_.num_agents < 1 || spec_.pair_count() < 1) {
    throw std::invalid_argument("task spec needs at least one agent and one pair");
  }
}

int AliceBobEnv::one_hot_index(EntityClass cls, TargetKind tk, TriggerKind gk, int color) const {
  const int c = spec_.series_colors;
  switch (cls) {
    case EntityClass::Agent:
      return 0;
    case EntityClass::Target:
      return 1 + (tk == TargetKind::Food ? c : 0) + color;
    case EntityClass::Trigger:
      return 1 + 2 * c + (gk == TriggerKind::Key ? c : 0) + color;
    case EntityClass::Wall:
      return 1 + 4 * c;
    case EntityClass::Empty:
      return 2 + 4 * c;
  }
  throw std::logic_error("unreachable entity class");
}

std::vector<Tensor> AliceBobEnv::reset(std::uint64_t seed) {
  const int w = spec_.grid_width, h = spec_.grid_height;
  const int top_rows = h / 2;
  const int pairs = spec_.pair_count();
  if (w * top_rows < pairs || w * h < 2 * pairs + spec_.num_agents) {
    throw std::runtime_error("grid " + std::to_string(w) + "x" + std::to_string(h) +
                             " too small to place entities of task " + spec_.task_id);
  }

  std::mt19937_64 rng(seed);
  auto sample_cells = [&rng](std::vector<std::pair<int, int>> pool, int count) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(count));
    return pool;
  };

  std::vector<std::pair<int, int>> top, bottom;
  for (int y = 0; y < top_rows; ++y) {
    for (int x = 0; x < w; ++x) top.emplace_back(x, y);
  }
  for (int y = h - top_rows; y < h; ++y) {
    for (int x = 0; x < w; ++x) bottom.emplace_back(x, y);
  }
  auto target_cells = sample_cells(top, pairs);
  auto trigger_cells = sample_cells(bottom, pairs);

  std::set<std::pair<int, int>> occupied(target_cells.begin(), target_cells.end());
  occupied.insert(trigger_cells.begin(), trigger_cells.end());
  std::vector<std::pair<int, int>> free_cells;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!occupied.count({x, y})) free_cells.emplace_back(x, y);
    }
  }
  auto agent_cells = sample_cells(std::move(free_cells), spec_.num_agents);

  agents_.clear();
  targets_.clear();
  triggers_.clear();
  for (int i = 0; i < spec_.num_agents; ++i) {
    agents_.push_back({agent_cells[i].first, agent_cells[i].second, EntityClass::Agent, -1, true});
  }
  for (int p = 0; p < pairs; ++p) {
    targets_.push_back({target_cells[p].first, target_cells[p].second, EntityClass::Target,
                        spec_.colors[static_cast<std::size_t>(p)], true});
    triggers_.push_back({trigger_cells[p].first, trigger_cells[p].second, EntityClass::Trigger,
                         spec_.colors[static_cast<std::size_t>(p)], true});
  }
  steps_ = 0;
  done_ = false;
  win_ = false;

  std::vector<Tensor> obs;
  for (int i = 0; i < spec_.num_agents; ++i) obs.push_back(observe(i));
  return obs;
}

StepResult AliceBobEnv::step(const std::vector<int>& actions) {
  if (done_) throw std::runtime_error("step on finished episode of task " + spec_.task_id);
  if (static_cast<int>(actions.size()) != spec_.num_agents) {
    throw std::invalid_argument("expected one action per agent");
  }
  for (int a : actions) {
    if (a < 0 || a >= kNumActions) {
      throw std::invalid_argument("action " + std::to_string(a) + " out of range [0,5)");
    }
  }

  const int n = spec_.num_agents;
  std::vector<std::pair<int, int>> prev(static_cast<std::size_t>(n));
  std::vector<std::pair<int, int>> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    prev[static_cast<std::size_t>(i)] = {agents_[static_cast<std::size_t>(i)].x,
                                         agents_[static_cast<std::size_t>(i)].y};
    int x = prev[static_cast<std::size_t>(i)].first;
    int y = prev[static_cast<std::size_t>(i)].second;
    switch (actions[static_cast<std::size_t>(i)]) {
      case kUp: --y; break;
      case kDown: ++y; break;
      case kLeft: --x; break;
      case kRight: ++x; break;
      default: break;
    }
    // moving into the boundary means staying put
    if (x < 0 || x >= spec_.grid_width || y < 0 || y >= spec_.grid_height) {
      pos[static_cast<std::size_t>(i)] = prev[static_cast<std::size_t>(i)];
    } else {
      pos[static_cast<std::size_t>(i)] = {x, y};
    }
  }

  // Simultaneous resolution: agents claiming the same cell or swapping cells
  // revert to their previous cells, one penalty per colliding pair. A revert
  // can create new conflicts, so iterate to a fixpoint; each unordered pair
  // is priced at most once.
  std::set<std::pair<int, int>> counted;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const auto ii = static_cast<std::size_t>(i);
        const auto jj = static_cast<std::size_t>(j);
        const bool same_cell = pos[ii] == pos[jj];
        const bool swapped = pos[ii] == prev[jj] && pos[jj] == prev[ii] && pos[ii] != pos[jj];
        const bool any_moved = pos[ii] != prev[ii] || pos[jj] != prev[jj];
        if ((same_cell || swapped) && any_moved) {
          counted.insert({i, j});
          if (pos[ii] != prev[ii]) {
            pos[ii] = prev[ii];
            changed = true;
          }
          if (pos[jj] != prev[jj]) {
            pos[jj] = prev[jj];
            changed = true;
          }
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    agents_[static_cast<std::size_t>(i)].x = pos[static_cast<std::size_t>(i)].first;
    agents_[static_cast<std::size_t>(i)].y = pos[static_cast<std::size_t>(i)].second;
  }

  // Pair completion in the post-movement state. Distinct cells force the
  // target-stander and trigger-stander to be different agents.
  int pairs_done = 0;
  for (std::size_t p = 0; p < targets_.size(); ++p) {
    if (!targets_[p].alive) continue;
    bool on_target = false, on_trigger = false;
    for (const auto& ag : agents_) {
      if (ag.x == targets_[p].x && ag.y == targets_[p].y) on_target = true;
      if (ag.x == triggers_[p].x && ag.y == triggers_[p].y) on_trigger = true;
    }
    if (on_target && on_trigger) {
      targets_[p].alive = false;
      ++pairs_done;
    }
  }

  ++steps_;
  bool all_done = true;
  for (const auto& t : targets_) all_done = all_done && !t.alive;
  win_ = all_done;
  const int collisions = static_cast<int>(counted.size());
  const double reward = 1.0 * pairs_done + (win_ ? 5.0 : 0.0) - 0.5 * collisions - 0.1;
  done_ = win_ || steps_ >= spec_.max_steps;

  StepResult r;
  r.reward = reward;
  r.done = done_;
  r.win = win_;
  r.pairs_completed = pairs_done;
  r.collisions = collisions;
  for (int i = 0; i < n; ++i) r.observations.push_back(observe(i));
  return r;
}

Tensor AliceBobEnv::observe(int agent_index) const {
  if (agent_index < 0 || agent_index >= spec_.num_agents) {
    throw std::invalid_argument("observe: agent index out of range");
  }
  const auto& me = agents_[static_cast<std::size_t>(agent_index)];
  const int feat = spec_.feature_width();
  Tensor obs = Tensor::zeros({spec_.obs_rows(), feat});

  int row = 0;
  auto emit = [&](int dx, int dy, int one_hot) {
    obs.at(row, 0) = dx;
    obs.at(row, 1) = dy;
    obs.at(row, 2 + one_hot) = 1.0;
    ++row;
  };

  for (const auto& ag : agents_) {
    emit(ag.x - me.x, ag.y - me.y, one_hot_index(EntityClass::Agent, spec_.target_kind,
                                                 spec_.trigger_kind, -1));
  }
  for (const auto& t : targets_) {
    if (!t.alive) {
      ++row;  // collected entities leave a zero row
      continue;
    }
    emit(t.x - me.x, t.y - me.y,
         one_hot_index(EntityClass::Target, spec_.target_kind, spec_.trigger_kind, t.color));
  }
  for (const auto& t : triggers_) {
    emit(t.x - me.x, t.y - me.y,
         one_hot_index(EntityClass::Trigger, spec_.target_kind, spec_.trigger_kind, t.color));
  }

  // Surrounding cells, clockwise from north. Occupant precedence:
  // agent > alive target > trigger > empty; outside the grid reads as wall.
  static constexpr int kOffsets[8][2] = {{0, -1}, {1, -1}, {1, 0},  {1, 1},
                                         {0, 1},  {-1, 1}, {-1, 0}, {-1, -1}};
  for (const auto& off : kOffsets) {
    const int cx = me.x + off[0], cy = me.y + off[1];
    EntityClass cls = EntityClass::Empty;
    int color = -1;
    if (cx < 0 || cx >= spec_.grid_width || cy < 0 || cy >= spec_.grid_height) {
      cls = EntityClass::Wall;
    } else {
      for (const auto& t : triggers_) {
        if (t.x == cx && t.y == cy) {
          cls = EntityClass::Trigger;
          color = t.color;
        }
      }
      for (const auto& t : targets_) {
        if (t.alive && t.x == cx && t.y == cy) {
          cls = EntityClass::Target;
          color = t.color;
        }
      }
      for (const auto& ag : agents_) {
        if (ag.x == cx && ag.y == cy) {
          cls = EntityClass::Agent;
          color = -1;
        }
      }
    }
    emit(off[0], off[1], one_hot_index(cls, spec_.target_kind, spec_.trigger_kind, color));
  }
  return obs;
}

EpisodeTracer::EpisodeTracer(const std::string& path) : out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open trace file: " + path);
}

void EpisodeTracer::record(const AliceBobEnv& env, const std::vector<int>& actions,
                           const StepResult& result, const std::vector<double>& mask_row_major,
                           int mask_dim) {
  nlohmann::json j;
  j["task_id"] = env.spec().task_id;
  j["t"] = env.steps_taken();
  auto agents = nlohmann::json::array();
  for (const auto& a : env.agents()) agents.push_back({a.x, a.y});
  j["agents"] = std::move(agents);
  auto targets = nlohmann::json::array();
  for (const auto& t : env.targets()) {
    targets.push_back({{"pos", {t.x, t.y}}, {"color", t.color}, {"alive", t.alive}});
  }
  j["targets"] = std::move(targets);
  auto triggers = nlohmann::json::array();
  for (const auto& t : env.triggers()) {
    triggers.push_back({{"pos", {t.x, t.y}}, {"color", t.color}});
  }
  j["triggers"] = std::move(triggers);
  j["actions"] = actions;
  j["reward"] = result.reward;
  j["pairs"] = result.pairs_completed;
  j["collisions"] = result.collisions;
  j["done"] = result.done;
  j["win"] = result.win;
  if (mask_dim > 0) {
    auto mask = nlohmann::json::array();
    for (int i = 0; i < mask_dim; ++i) {
      auto mrow = nlohmann::json::array();
      for (int k = 0; k < mask_dim; ++k) {
        mrow.push_back(mask_row_major[static_cast<std::size_t>(i) * mask_dim + k]);
      }
      mask.push_back(std::move(mrow));
    }
    j["mask"] = std::move(mask);
  }
  out_ << j.dump() << '\n';
  out_.flush();
}

}  // namespace mcs
