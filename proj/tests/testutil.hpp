#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "mcs/alicebob.hpp"
#include "mcs/tensor.hpp"

namespace testutil {

// Central finite differences around the current values of `param` for a
// scalar-valued forward function. The forward must be deterministic (fix any
// sampling noise before using this).
inline std::vector<double> finite_difference(mcs::Tensor param,
                                             const std::function<double()>& forward,
                                             double step = 1e-5) {
  std::vector<double> grad(static_cast<std::size_t>(param.size()));
  auto vals = param.values();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double saved = vals[i];
    vals[i] = saved + step;
    const double up = forward();
    vals[i] = saved - step;
    const double down = forward();
    vals[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// Componentwise relative-error comparison where the analytic gradient is
// meaningfully non-zero; absolute comparison below that floor.
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double err = std::abs(a - n);
    const double rel = std::abs(a) > floor ? err / std::abs(a) : err;
    worst = std::max(worst, rel);
  }
  return worst;
}

inline std::vector<double> grad_of(const mcs::Tensor& t) {
  auto g = t.grad();
  return {g.begin(), g.end()};
}

inline mcs::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  mcs::Tensor t = mcs::Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Hand-scripted solver for two-agent tasks: agent 0 walks to the first alive
// target, agent 1 to the matching trigger; agent 1 yields whenever its move
// would collide with agent 0's chosen move. Wins well inside the step cap on
// every mini-series layout.
inline std::vector<int> scripted_mini_actions(const mcs::AliceBobEnv& env) {
  using namespace mcs;
  if (env.spec().num_agents != 2) throw std::logic_error("scripted oracle handles 2 agents");
  int color = -1;
  for (std::size_t p = 0; p < env.targets().size(); ++p) {
    if (env.targets()[p].alive) {
      color = static_cast<int>(p);
      break;
    }
  }
  if (color < 0) return {kStay, kStay};
  const auto& tgt = env.targets()[static_cast<std::size_t>(color)];
  const auto& trg = env.triggers()[static_cast<std::size_t>(color)];
  const auto& a0 = env.agents()[0];
  const auto& a1 = env.agents()[1];

  auto apply = [&](const mcs::EntityState& me, int action) {
    int x = me.x, y = me.y;
    switch (action) {
      case kUp: --y; break;
      case kDown: ++y; break;
      case kLeft: --x; break;
      case kRight: ++x; break;
      default: break;
    }
    if (x < 0 || x >= env.spec().grid_width || y < 0 || y >= env.spec().grid_height) {
      return std::pair<int, int>{me.x, me.y};
    }
    return std::pair<int, int>{x, y};
  };
  auto candidates = [&](const mcs::EntityState& me, int gx, int gy, bool y_first) {
    std::vector<int> order;
    const int xmove = me.x < gx ? kRight : (me.x > gx ? kLeft : -1);
    const int ymove = me.y < gy ? kDown : (me.y > gy ? kUp : -1);
    if (y_first) {
      if (ymove >= 0) order.push_back(ymove);
      if (xmove >= 0) order.push_back(xmove);
    } else {
      if (xmove >= 0) order.push_back(xmove);
      if (ymove >= 0) order.push_back(ymove);
    }
    order.push_back(kStay);
    return order;
  };

  // Agent 0 refuses to step onto agent 1's current cell.
  int act0 = kStay;
  for (int c : candidates(a0, tgt.x, tgt.y, false)) {
    auto cell = apply(a0, c);
    if (cell.first == a1.x && cell.second == a1.y) continue;
    act0 = c;
    break;
  }
  const auto cell0 = apply(a0, act0);

  // Agent 1 avoids agent 0's claimed cell and the swap pattern.
  int act1 = kStay;
  for (int c : candidates(a1, trg.x, trg.y, true)) {
    auto cell = apply(a1, c);
    if (cell == cell0) continue;
    const bool swap = cell.first == a0.x && cell.second == a0.y && cell0.first == a1.x &&
                      cell0.second == a1.y;
    if (swap) continue;
    act1 = c;
    break;
  }
  return {act0, act1};
}

}  // namespace testutil
