#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skild/errors.hpp"
#include "skild/rng.hpp"

namespace skild {

enum class Cell : uint8_t { Wall, Free, StartRegion, Goal };

struct CellIdx {
  int x = 0;  // column
  int y = 0;  // row
  bool operator==(const CellIdx&) const = default;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double dist2d(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Axis-aligned unit-cell grid world. Cell (x, y) covers [x, x+1) x [y, y+1);
// row 0 of the layout text is y = 0.
struct MazeSpec {
  std::vector<std::vector<Cell>> grid;  // grid[y][x]
  CellIdx goal_cell;
  double goal_radius = 0.4;
  double dt = 0.1;
  int max_episode_steps = 2000;

  int height() const { return static_cast<int>(grid.size()); }
  int width() const { return grid.empty() ? 0 : static_cast<int>(grid[0].size()); }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width() && y < height(); }

  Cell cell(int x, int y) const { return in_bounds(x, y) ? grid[y][x] : Cell::Wall; }

  bool is_wall(int x, int y) const { return cell(x, y) == Cell::Wall; }

  bool is_wall_at(double px, double py) const {
    return is_wall(static_cast<int>(std::floor(px)), static_cast<int>(std::floor(py)));
  }

  Vec2 goal_center() const { return {goal_cell.x + 0.5, goal_cell.y + 0.5}; }

  std::vector<CellIdx> start_cells() const {
    std::vector<CellIdx> out;
    for (int y = 0; y < height(); ++y)
      for (int x = 0; x < width(); ++x)
        if (grid[y][x] == Cell::StartRegion) out.push_back({x, y});
    return out;
  }

  std::vector<CellIdx> non_wall_cells() const {
    std::vector<CellIdx> out;
    for (int y = 0; y < height(); ++y)
      for (int x = 0; x < width(); ++x)
        if (grid[y][x] != Cell::Wall) out.push_back({x, y});
    return out;
  }
};

struct EnvState {
  Vec2 pos;
  Vec2 vel;  // last applied command, components in [-1, 1]
  int steps_elapsed = 0;
};

struct PrimitiveAction {
  Vec2 v_cmd;
};

struct MazeScalars {
  double goal_radius = 0.4;
  double dt = 0.1;
  int max_episode_steps = 2000;
};

namespace detail {

inline std::vector<CellIdx> neighbors4(const CellIdx& c) {
  // Fixed (row, col) expansion order for deterministic searches.
  return {{c.x, c.y - 1}, {c.x - 1, c.y}, {c.x + 1, c.y}, {c.x, c.y + 1}};
}

inline std::vector<std::vector<uint8_t>> reachable_from(const MazeSpec& maze, const CellIdx& src) {
  std::vector<std::vector<uint8_t>> seen(maze.height(), std::vector<uint8_t>(maze.width(), 0));
  std::vector<CellIdx> stack{src};
  seen[src.y][src.x] = 1;
  while (!stack.empty()) {
    CellIdx c = stack.back();
    stack.pop_back();
    for (const CellIdx& n : neighbors4(c)) {
      if (maze.in_bounds(n.x, n.y) && !maze.is_wall(n.x, n.y) && !seen[n.y][n.x]) {
        seen[n.y][n.x] = 1;
        stack.push_back(n);
      }
    }
  }
  return seen;
}

}  // namespace detail

inline MazeSpec load_maze(const std::string& text, const MazeScalars& cfg = {}) {
  if (cfg.goal_radius <= 0.0 || cfg.goal_radius > 0.5)
    raise(ErrorKind::InvalidConfig, "goal_radius must be in (0, 0.5]");
  if (cfg.dt <= 0.0) raise(ErrorKind::InvalidConfig, "dt must be > 0");
  if (cfg.max_episode_steps < 1) raise(ErrorKind::InvalidConfig, "max_episode_steps must be >= 1");

  MazeSpec maze;
  maze.goal_radius = cfg.goal_radius;
  maze.dt = cfg.dt;
  maze.max_episode_steps = cfg.max_episode_steps;

  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 3) raise(ErrorKind::MalformedLayout, "need at least 3 rows");
  const size_t w = lines[0].size();
  if (w < 3) raise(ErrorKind::MalformedLayout, "need at least 3 columns");

  int goals = 0, starts = 0;
  for (size_t y = 0; y < lines.size(); ++y) {
    if (lines[y].size() != w) raise(ErrorKind::MalformedLayout, "ragged rows");
    std::vector<Cell> row;
    row.reserve(w);
    for (size_t x = 0; x < w; ++x) {
      switch (lines[y][x]) {
        case '#': row.push_back(Cell::Wall); break;
        case '.': row.push_back(Cell::Free); break;
        case 'S':
          row.push_back(Cell::StartRegion);
          ++starts;
          break;
        case 'G':
          row.push_back(Cell::Goal);
          maze.goal_cell = {static_cast<int>(x), static_cast<int>(y)};
          ++goals;
          break;
        default: raise(ErrorKind::MalformedLayout, std::string("illegal char '") + lines[y][x] + "'");
      }
    }
    maze.grid.push_back(std::move(row));
  }

  if (goals == 0) raise(ErrorKind::NoGoal, "layout has no G cell");
  if (goals > 1) raise(ErrorKind::MultipleGoals, "layout has multiple G cells");
  if (starts == 0) raise(ErrorKind::MissingStartRegion, "layout has no S cell");

  for (int x = 0; x < maze.width(); ++x)
    if (!maze.is_wall(x, 0) || !maze.is_wall(x, maze.height() - 1))
      raise(ErrorKind::MalformedLayout, "outer boundary must be all walls");
  for (int y = 0; y < maze.height(); ++y)
    if (!maze.is_wall(0, y) || !maze.is_wall(maze.width() - 1, y))
      raise(ErrorKind::MalformedLayout, "outer boundary must be all walls");

  const auto seen = detail::reachable_from(maze, maze.goal_cell);
  for (const CellIdx& s : maze.start_cells())
    if (!seen[s.y][s.x]) raise(ErrorKind::UnreachableGoal, "start region cannot reach goal");

  return maze;
}

inline MazeSpec load_maze_file(const std::string& path, const MazeScalars& cfg = {}) {
  std::ifstream f(path);
  if (!f) raise(ErrorKind::IoError, "cannot open maze file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return load_maze(ss.str(), cfg);
}

inline EnvState reset(const MazeSpec& maze, Rng& rng) {
  const auto starts = maze.start_cells();
  const CellIdx c = starts[rng.uniform_int(starts.size())];
  EnvState s;
  s.pos = {c.x + rng.uniform(0.1, 0.9), c.y + rng.uniform(0.1, 0.9)};
  s.vel = {0.0, 0.0};
  s.steps_elapsed = 0;
  return s;
}

inline Vec2 clamp_action(const Vec2& a) {
  return {std::clamp(a.x, -1.0, 1.0), std::clamp(a.y, -1.0, 1.0)};
}

// Kinematic advance with per-axis collision: move x first, then y; an axis
// move that would enter a wall cell is cancelled (slides along walls).
inline Vec2 advance(const MazeSpec& maze, const Vec2& pos, const Vec2& clamped, double dt) {
  Vec2 p = pos;
  const double nx = p.x + clamped.x * dt;
  if (!maze.is_wall_at(nx, p.y)) p.x = nx;
  const double ny = p.y + clamped.y * dt;
  if (!maze.is_wall_at(p.x, ny)) p.y = ny;
  return p;
}

inline bool in_goal(const MazeSpec& maze, const EnvState& s) {
  return dist2d(s.pos, maze.goal_center()) <= maze.goal_radius;
}

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

inline StepResult step(const MazeSpec& maze, const EnvState& s, const PrimitiveAction& a) {
  const Vec2 cmd = clamp_action(a.v_cmd);
  StepResult out;
  out.state.pos = advance(maze, s.pos, cmd, maze.dt);
  out.state.vel = cmd;
  out.state.steps_elapsed = s.steps_elapsed + 1;
  if (dist2d(out.state.pos, maze.goal_center()) <= maze.goal_radius) {
    out.reward = 100.0;
    out.done = true;
  } else if (out.state.steps_elapsed >= maze.max_episode_steps) {
    out.done = true;
  }
  return out;
}

// Observation: position normalized by maze extent into [0,1], velocity as-is.
inline std::vector<double> observe(const MazeSpec& maze, const EnvState& s) {
  return {s.pos.x / maze.width(), s.pos.y / maze.height(), s.vel.x, s.vel.y};
}

constexpr int kObsDim = 4;
constexpr int kActDim = 2;

}  // namespace skild
