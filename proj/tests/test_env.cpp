#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mcs/alicebob.hpp"
#include "mcs/rng.hpp"
#include "testutil.hpp"

using namespace mcs;

TEST_CASE("series construction") {
  auto s233 = make_series("233");
  REQUIRE(s233.size() == 4);
  for (const auto& t : s233) {
    CHECK(t.num_agents == 2);
    CHECK(t.pair_count() == 3);
    CHECK(t.one_hot_width() == 15);
    CHECK(t.obs_rows() == 16);
    CHECK(t.feature_width() == 17);
  }
  // kinds and colors differ across the series
  std::set<std::pair<int, int>> combos;
  for (const auto& t : s233) {
    combos.insert({static_cast<int>(t.target_kind), static_cast<int>(t.trigger_kind)});
  }
  CHECK(combos.size() == 4);
  CHECK(s233[0].colors != s233[1].colors);

  auto s344 = make_series("344");
  REQUIRE(s344.size() == 4);
  for (const auto& t : s344) {
    CHECK(t.num_agents == 3);
    CHECK(t.pair_count() == 4);
  }

  auto mini = make_series("mini");
  REQUIRE(mini.size() == 2);
  for (const auto& t : mini) {
    CHECK(t.num_agents == 2);
    CHECK(t.pair_count() == 2);
    CHECK(t.grid_width == 5);
    CHECK(t.grid_height == 5);
    CHECK(t.max_steps == 50);
  }

  CHECK_THROWS_AS(make_series("999"), std::invalid_argument);
}

TEST_CASE("series overrides") {
  SeriesOverrides ov;
  ov.grid_width = 7;
  ov.max_steps = 60;
  auto mini = make_series("mini", ov);
  CHECK(mini[0].grid_width == 7);
  CHECK(mini[0].grid_height == 5);
  CHECK(mini[0].max_steps == 60);
}

TEST_CASE("reset determinism and observation shape") {
  auto s233 = make_series("233");
  AliceBobEnv a(s233[0]), b(s233[0]);
  auto obs_a = a.reset(777);
  auto obs_b = b.reset(777);
  REQUIRE(obs_a.size() == 2);
  CHECK(obs_a[0].dim(0) == 16);
  CHECK(obs_a[0].dim(1) == 17);
  for (std::size_t i = 0; i < obs_a.size(); ++i) {
    for (int j = 0; j < obs_a[i].size(); ++j) CHECK(obs_a[i].at(j) == obs_b[i].at(j));
  }
  for (std::size_t i = 0; i < a.agents().size(); ++i) {
    CHECK(a.agents()[i].x == b.agents()[i].x);
    CHECK(a.agents()[i].y == b.agents()[i].y);
  }
}

TEST_CASE("targets spawn in the top half and triggers in the bottom half") {
  for (const auto& name : {"233", "mini"}) {
    auto series = make_series(name);
    AliceBobEnv env(series[0]);
    const int h = series[0].grid_height;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      env.reset(seed);
      for (const auto& t : env.targets()) CHECK(t.y < h / 2);
      for (const auto& t : env.triggers()) CHECK(t.y >= h - h / 2);
      std::set<std::pair<int, int>> trigger_cells;
      for (const auto& t : env.triggers()) trigger_cells.insert({t.x, t.y});
      CHECK(trigger_cells.size() == env.triggers().size());
      std::set<std::pair<int, int>> target_cells;
      for (const auto& t : env.targets()) target_cells.insert({t.x, t.y});
      CHECK(target_cells.size() == env.targets().size());
      std::set<std::pair<int, int>> agent_cells;
      for (const auto& a : env.agents()) {
        agent_cells.insert({a.x, a.y});
        CHECK(!trigger_cells.count({a.x, a.y}));
        CHECK(!target_cells.count({a.x, a.y}));
      }
      CHECK(agent_cells.size() == env.agents().size());
    }
  }
}

TEST_CASE("grid too small raises a configuration error") {
  auto mini = make_series("mini");
  TaskSpec tiny = mini[0];
  tiny.grid_width = 1;
  tiny.grid_height = 2;  // one top cell for two targets
  AliceBobEnv env(tiny);
  CHECK_THROWS_AS(env.reset(0), std::runtime_error);
}

TEST_CASE("step reward composition") {
  auto mini = make_series("mini");
  AliceBobEnv env(mini[0]);
  env.reset(5);

  SUBCASE("idle step costs 0.1") {
    StepResult r = env.step({kStay, kStay});
    CHECK(r.reward == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(r.pairs_completed == 0);
    CHECK(r.collisions == 0);
    CHECK_FALSE(r.win);
  }

  SUBCASE("action validation") {
    CHECK_THROWS_AS(env.step({0}), std::invalid_argument);
    CHECK_THROWS_AS(env.step({0, 9}), std::invalid_argument);
  }
}

TEST_CASE("collision semantics: same target cell") {
  TaskSpec spec = make_series("mini")[0];
  spec.grid_width = 5;
  spec.grid_height = 5;
  AliceBobEnv env(spec);
  // Find a seed with the two agents horizontally two cells apart.
  bool found = false;
  for (std::uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    env.reset(seed);
    const auto& a = env.agents();
    if (a[0].y == a[1].y && a[1].x - a[0].x == 2) {
      const int midx = a[0].x + 1, midy = a[0].y;
      bool blocked = false;
      for (const auto& t : env.targets()) {
        if (t.x == midx && t.y == midy) blocked = true;
      }
      for (const auto& t : env.triggers()) {
        if (t.x == midx && t.y == midy) blocked = true;
      }
      if (blocked) continue;
      found = true;
      const auto before = a;
      StepResult r = env.step({kRight, kLeft});  // both into the middle cell
      CHECK(r.collisions == 1);
      CHECK(r.reward == doctest::Approx(-0.1 - 0.5 + 1.0 * r.pairs_completed +
                                        (r.win ? 5.0 : 0.0)));
      CHECK(env.agents()[0].x == before[0].x);  // bounced back
      CHECK(env.agents()[1].x == before[1].x);
    }
  }
  CHECK(found);
}

TEST_CASE("collision semantics: swap") {
  TaskSpec spec = make_series("mini")[0];
  AliceBobEnv env(spec);
  bool found = false;
  for (std::uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    env.reset(seed);
    const auto& a = env.agents();
    if (a[0].y == a[1].y && a[1].x - a[0].x == 1) {
      found = true;
      const auto before = a;
      StepResult r = env.step({kRight, kLeft});  // exchange cells
      CHECK(r.collisions == 1);
      CHECK(env.agents()[0].x == before[0].x);
      CHECK(env.agents()[1].x == before[1].x);
    }
  }
  CHECK(found);
}

TEST_CASE("pair completion and win accounting") {
  TaskSpec spec = make_series("mini")[0];
  AliceBobEnv env(spec);
  env.reset(11);

  int pair_events = 0;
  double episode_reward = 0.0;
  int guard = 0;
  while (!env.done() && guard++ < 100) {
    StepResult r = env.step(testutil::scripted_mini_actions(env));
    pair_events += r.pairs_completed;
    episode_reward += r.reward;
    if (r.win) {
      CHECK(r.done);
      CHECK(r.reward == doctest::Approx(1.0 * r.pairs_completed + 5.0 -
                                        0.5 * r.collisions - 0.1));
    }
  }
  CHECK(env.win());
  CHECK(pair_events == spec.pair_count());
  // Episode return stays below the structural bound.
  CHECK(episode_reward <= spec.pair_count() * 1.0 + 5.0 - 0.1);
}

TEST_CASE("reward decomposition identity over random steps") {
  RngStream rng(99);
  for (const auto& name : {"mini", "233", "344"}) {
    auto series = make_series(name);
    for (const auto& spec : series) {
      AliceBobEnv env(spec);
      env.reset(rng.engine()());
      for (int t = 0; t < 400; ++t) {
        if (env.done()) env.reset(rng.engine()());
        std::vector<int> actions;
        for (int i = 0; i < spec.num_agents; ++i) actions.push_back(rng.uniform_int(kNumActions));
        StepResult r = env.step(actions);
        const double recomposed =
            1.0 * r.pairs_completed + (r.win ? 5.0 : 0.0) - 0.5 * r.collisions - 0.1;
        CHECK(r.reward == doctest::Approx(recomposed).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("determinism: same seed and actions give identical trajectories") {
  auto spec = make_series("233")[1];
  AliceBobEnv e1(spec), e2(spec);
  e1.reset(4242);
  e2.reset(4242);
  RngStream rng(7);
  for (int t = 0; t < 60 && !e1.done(); ++t) {
    std::vector<int> actions;
    for (int i = 0; i < spec.num_agents; ++i) actions.push_back(rng.uniform_int(kNumActions));
    StepResult r1 = e1.step(actions);
    StepResult r2 = e2.step(actions);
    CHECK(r1.reward == r2.reward);
    CHECK(r1.done == r2.done);
    CHECK(r1.win == r2.win);
    for (std::size_t i = 0; i < r1.observations.size(); ++i) {
      for (int j = 0; j < r1.observations[i].size(); ++j) {
        CHECK(r1.observations[i].at(j) == r2.observations[i].at(j));
      }
    }
  }
}

TEST_CASE("observe semantics") {
  auto spec = make_series("mini")[0];
  AliceBobEnv env(spec);
  env.reset(3);

  SUBCASE("observer row is zero-offset with the agent one-hot") {
    for (int i = 0; i < spec.num_agents; ++i) {
      Tensor obs = env.observe(i);
      CHECK(obs.at(i, 0) == 0.0);
      CHECK(obs.at(i, 1) == 0.0);
      CHECK(obs.at(i, 2 + 0) == 1.0);  // agent class is one-hot index 0
    }
  }

  SUBCASE("relative offsets") {
    Tensor obs = env.observe(0);
    const auto& me = env.agents()[0];
    const auto& other = env.agents()[1];
    CHECK(obs.at(1, 0) == other.x - me.x);
    CHECK(obs.at(1, 1) == other.y - me.y);
  }

  SUBCASE("collected target row becomes all zeros") {
    int guard = 0;
    while (env.targets()[0].alive && guard++ < 60 && !env.done()) {
      env.step(testutil::scripted_mini_actions(env));
    }
    REQUIRE_FALSE(env.targets()[0].alive);
    Tensor obs = env.observe(0);
    const int dead_row = spec.num_agents + 0;
    for (int c = 0; c < spec.feature_width(); ++c) CHECK(obs.at(dead_row, c) == 0.0);
  }
}

TEST_CASE("surrounding cells encode walls on a 3x3 grid") {
  // Hand-constructed layout: 3x3 grid, agent forced into a corner by seed
  // search, then every out-of-bounds neighbor row must carry the wall class.
  TaskSpec spec = make_series("mini")[0];
  spec.grid_width = 3;
  spec.grid_height = 3;
  spec.colors = {0};  // single pair so placement fits
  AliceBobEnv env(spec);
  const int wall_hot = 2 + 1 + 4 * spec.series_colors;  // feature column of the wall class

  bool corner_seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !corner_seen; ++seed) {
    env.reset(seed);
    const auto& me = env.agents()[0];
    if (me.x == 0 && me.y == 0) {
      corner_seen = true;
      Tensor obs = env.observe(0);
      const int base = spec.roster_size();
      // Order: N, NE, E, SE, S, SW, W, NW. For the top-left corner the rows
      // N, NE, SW, W, NW are outside the grid.
      for (int neighbor : {0, 1, 5, 6, 7}) {
        CHECK(obs.at(base + neighbor, wall_hot) == 1.0);
      }
      CHECK(obs.at(base + 2, wall_hot) == 0.0);  // E stays inside
    }
  }
  CHECK(corner_seen);
}

TEST_CASE("episode trace is valid JSON lines") {
  auto spec = make_series("mini")[0];
  AliceBobEnv env(spec);
  env.reset(8);
  const std::string path = "trace_test.jsonl";
  std::remove(path.c_str());
  {
    EpisodeTracer tracer(path);
    StepResult r = env.step({kStay, kStay});
    tracer.record(env, {kStay, kStay}, r, {1, 0, 0, 1}, 2);
  }
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line.find("\"task_id\"") != std::string::npos);
  CHECK(line.find("\"mask\"") != std::string::npos);
  std::remove(path.c_str());
}
