#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "skild/dataset.hpp"
#include "skild/maze.hpp"

namespace skild {

// A* on the 4-connected free-cell graph, unit edge cost, Manhattan heuristic.
// Neighbor expansion and queue ordering are fully tie-broken so the returned
// shortest path is deterministic.
inline std::vector<CellIdx> plan_path(const MazeSpec& maze, const CellIdx& start, const CellIdx& goal) {
  if (maze.is_wall(start.x, start.y) || maze.is_wall(goal.x, goal.y))
    raise(ErrorKind::InvalidConfig, "plan_path endpoints must be non-wall cells");
  const int W = maze.width(), H = maze.height();
  auto id = [W](const CellIdx& c) { return c.y * W + c.x; };
  auto manhattan = [&](const CellIdx& c) { return std::abs(c.x - goal.x) + std::abs(c.y - goal.y); };

  struct QEntry {
    int f, h, y, x;
    bool operator>(const QEntry& o) const {
      return std::tie(f, h, y, x) > std::tie(o.f, o.h, o.y, o.x);
    }
  };
  std::priority_queue<QEntry, std::vector<QEntry>, std::greater<QEntry>> open;
  std::vector<int> g(static_cast<size_t>(W) * H, -1);
  std::vector<int> parent(static_cast<size_t>(W) * H, -1);

  g[id(start)] = 0;
  open.push({manhattan(start), manhattan(start), start.y, start.x});
  while (!open.empty()) {
    const QEntry e = open.top();
    open.pop();
    const CellIdx c{e.x, e.y};
    if (e.f - e.h > g[id(c)]) continue;  // stale entry
    if (c == goal) break;
    for (const CellIdx& n : detail::neighbors4(c)) {
      if (maze.is_wall(n.x, n.y)) continue;
      const int ng = g[id(c)] + 1;
      if (g[id(n)] < 0 || ng < g[id(n)]) {
        g[id(n)] = ng;
        parent[id(n)] = id(c);
        open.push({ng + manhattan(n), manhattan(n), n.y, n.x});
      }
    }
  }
  if (g[id(goal)] < 0) raise(ErrorKind::NoPath, "cells are disconnected");

  std::vector<CellIdx> path;
  int cur = id(goal);
  while (cur >= 0) {
    path.push_back({cur % W, cur / W});
    cur = parent[cur];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

struct ControllerConfig {
  double noise_sigma = 0.2;
  double waypoint_tol = 0.2;
  int step_cap = 4000;
};

// Follows a cell path with noisy unit-velocity commands toward the next
// waypoint center. Records every (s, a) pair; success means the final
// waypoint was reached within tolerance before the step cap.
inline Trajectory rollout_controller(const MazeSpec& maze, EnvState state,
                                     const std::vector<CellIdx>& path, const ControllerConfig& cc,
                                     Rng& rng) {
  auto center = [](const CellIdx& c) { return Vec2{c.x + 0.5, c.y + 0.5}; };
  auto to_f32 = [](const std::vector<double>& v) {
    return std::vector<float>(v.begin(), v.end());
  };

  Trajectory traj;
  traj.states.push_back(to_f32(observe(maze, state)));

  size_t wp = 0;
  auto advance_waypoint = [&] {
    while (wp + 1 < path.size() && dist2d(state.pos, center(path[wp])) <= cc.waypoint_tol) ++wp;
  };
  advance_waypoint();

  for (int step_i = 0; step_i < cc.step_cap; ++step_i) {
    if (wp + 1 == path.size() && dist2d(state.pos, center(path[wp])) <= cc.waypoint_tol) {
      traj.success = true;
      break;
    }
    const Vec2 target = center(path[wp]);
    Vec2 dir{target.x - state.pos.x, target.y - state.pos.y};
    const double norm = std::hypot(dir.x, dir.y);
    if (norm > 1e-12) {
      dir.x /= norm;
      dir.y /= norm;
    } else {
      dir = {0.0, 0.0};
    }
    const Vec2 cmd = clamp_action(
        {dir.x + cc.noise_sigma * rng.normal(), dir.y + cc.noise_sigma * rng.normal()});
    state.pos = advance(maze, state.pos, cmd, maze.dt);
    state.vel = cmd;
    traj.actions.push_back(to_f32({cmd.x, cmd.y}));
    traj.states.push_back(to_f32(observe(maze, state)));
    advance_waypoint();
  }
  if (!traj.success && wp + 1 == path.size() &&
      dist2d(state.pos, center(path[wp])) <= cc.waypoint_tol)
    traj.success = true;
  return traj;
}

inline EnvState spawn_in_cell(const MazeSpec& maze, const CellIdx& c, Rng& rng) {
  EnvState s;
  s.pos = {c.x + rng.uniform(0.1, 0.9), c.y + rng.uniform(0.1, 0.9)};
  s.vel = {0.0, 0.0};
  s.steps_elapsed = 0;
  return s;
}

struct DatagenConfig {
  int n_traj = 3000;
  double noise_sigma = 0.2;
  bool keep_failures = true;
  ControllerConfig controller;
  int max_pair_retries = 64;
};

// Planner rollouts between uniformly sampled non-wall start/goal cell pairs.
// One child RNG stream per trajectory index so generation order never
// affects the data.
inline Dataset generate_task_agnostic(const MazeSpec& maze, const DatagenConfig& cfg, uint64_t seed) {
  if (cfg.n_traj < 1) raise(ErrorKind::InvalidConfig, "n_traj must be >= 1");
  const auto cells = maze.non_wall_cells();
  Dataset ds;
  ds.kind = DatasetKind::TaskAgnostic;
  ds.state_dim = kObsDim;
  ds.action_dim = kActDim;

  ControllerConfig cc = cfg.controller;
  cc.noise_sigma = cfg.noise_sigma;

  for (int i = 0; i < cfg.n_traj; ++i) {
    Rng rng = derive_rng(seed, "datagen.traj", static_cast<uint64_t>(i));
    for (int attempt = 0;; ++attempt) {
      if (attempt >= cfg.max_pair_retries)
        raise(ErrorKind::NoPath, "could not find a plannable start-goal pair");
      const CellIdx a = cells[rng.uniform_int(cells.size())];
      const CellIdx b = cells[rng.uniform_int(cells.size())];
      if (a == b) continue;
      std::vector<CellIdx> path;
      try {
        path = plan_path(maze, a, b);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NoPath) continue;
        throw;
      }
      Trajectory t = rollout_controller(maze, spawn_in_cell(maze, a, rng), path, cc, rng);
      if (t.actions.empty()) continue;  // degenerate spawn already at goal
      if (!t.success && !cfg.keep_failures) continue;
      ds.trajectories.push_back(std::move(t));
      break;
    }
  }
  ds.validate();
  return ds;
}

struct DemoConfig {
  CellIdx start;
  CellIdx goal;
  int k = 5;
  double jitter = 0.5;
  double noise_sigma = 0.2;
  ControllerConfig controller;
  int max_retries_per_demo = 50;
};

// k successful planner rollouts toward the target goal, starting from
// positions jittered around the target start cell center. Failures are
// discarded and resampled.
inline Dataset generate_demos(const MazeSpec& maze, const DemoConfig& cfg, uint64_t seed) {
  if (cfg.k < 1) raise(ErrorKind::InvalidConfig, "k must be >= 1");
  plan_path(maze, cfg.start, cfg.goal);  // validates reachability up front

  ControllerConfig cc = cfg.controller;
  cc.noise_sigma = cfg.noise_sigma;

  Dataset ds;
  ds.kind = DatasetKind::Demonstration;
  ds.state_dim = kObsDim;
  ds.action_dim = kActDim;

  const Vec2 base{cfg.start.x + 0.5, cfg.start.y + 0.5};
  for (int i = 0; i < cfg.k; ++i) {
    Rng rng = derive_rng(seed, "datagen.demo", static_cast<uint64_t>(i));
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries_per_demo && !ok; ++attempt) {
      Vec2 p{base.x + rng.uniform(-cfg.jitter, cfg.jitter),
             base.y + rng.uniform(-cfg.jitter, cfg.jitter)};
      const CellIdx c{static_cast<int>(std::floor(p.x)), static_cast<int>(std::floor(p.y))};
      if (maze.is_wall(c.x, c.y)) continue;
      std::vector<CellIdx> path;
      try {
        path = plan_path(maze, c, cfg.goal);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NoPath) continue;
        throw;
      }
      EnvState st;
      st.pos = p;
      Trajectory t = rollout_controller(maze, st, path, cc, rng);
      if (t.success && !t.actions.empty()) {
        ds.trajectories.push_back(std::move(t));
        ok = true;
      }
    }
    if (!ok) raise(ErrorKind::DemoGenerationFailed, "retries exhausted for demo " + std::to_string(i));
  }
  ds.validate();
  return ds;
}

}  // namespace skild
