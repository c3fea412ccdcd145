#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "skild/guidance.hpp"
#include "skild/harness/metrics.hpp"
#include "skild/harness/svg.hpp"
#include "skild/maze.hpp"
#include "skild/rl/skill_sac.hpp"
#include "skild/skill_model.hpp"

namespace skild {

// One value per probe point on a regular grid over the maze (probes per cell
// side given by density). Wall cells carry mask=0 and no probes.
struct ProbeGrid {
  int density = 2;
  int nx = 0, ny = 0;  // probe counts
  std::vector<double> value;  // nx*ny, row-major by probe row
  std::vector<uint8_t> mask;

  double& at(int ix, int iy) { return value[static_cast<size_t>(iy) * nx + ix]; }
  double at(int ix, int iy) const { return value[static_cast<size_t>(iy) * nx + ix]; }
  uint8_t mask_at(int ix, int iy) const { return mask[static_cast<size_t>(iy) * nx + ix]; }
};

// Evaluates fn on a zero-velocity probe lattice; wall cells are masked out.
template <typename Fn>
ProbeGrid probe_maze(const MazeSpec& maze, int density, Fn&& fn) {
  ProbeGrid g;
  g.density = density;
  g.nx = maze.width() * density;
  g.ny = maze.height() * density;
  g.value.assign(static_cast<size_t>(g.nx) * g.ny, 0.0);
  g.mask.assign(g.value.size(), 0);
  for (int iy = 0; iy < g.ny; ++iy) {
    for (int ix = 0; ix < g.nx; ++ix) {
      const double px = (ix + 0.5) / density;
      const double py = (iy + 0.5) / density;
      if (maze.is_wall_at(px, py)) continue;
      g.mask[static_cast<size_t>(iy) * g.nx + ix] = 1;
      EnvState s;
      s.pos = {px, py};
      g.value[static_cast<size_t>(iy) * g.nx + ix] = fn(observe(maze, s));
    }
  }
  return g;
}

inline void save_probe_grid_csv(const ProbeGrid& g, const MazeSpec& maze,
                                const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot write " + path);
  os << "x,y,in_wall,value\n";
  char buf[96];
  for (int iy = 0; iy < g.ny; ++iy)
    for (int ix = 0; ix < g.nx; ++ix) {
      const double px = (ix + 0.5) / g.density;
      const double py = (iy + 0.5) / g.density;
      std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%d,%.10g\n", px, py,
                    g.mask_at(ix, iy) ? 0 : 1, g.at(ix, iy));
      os << buf;
    }
  (void)maze;
}

inline void render_probe_grid_svg(const ProbeGrid& g, const MazeSpec& maze, double vmin,
                                  double vmax, const std::string& title,
                                  const std::string& path) {
  const double cell_px = 24.0;
  const double px = cell_px / g.density;
  SvgCanvas svg(maze.width() * cell_px, maze.height() * cell_px + 20.0);
  for (int iy = 0; iy < g.ny; ++iy)
    for (int ix = 0; ix < g.nx; ++ix) {
      std::string color = "#222222";
      if (g.mask_at(ix, iy)) {
        const double t = vmax > vmin ? (g.at(ix, iy) - vmin) / (vmax - vmin) : 0.5;
        color = heat_color(t);
      }
      svg.rect(ix * px, iy * px, px + 0.5, px + 0.5, color);
    }
  svg.text(4.0, maze.height() * cell_px + 15.0, title);
  svg.save(path);
}

// Fig.3-style maps: discriminator output, KL(policy || posterior) and
// KL(policy || prior) over the maze; every image has a numeric sibling CSV.
inline void render_support_maps(const MazeSpec& maze, const Guidance& guidance,
                                const SkillModel& skills, const PolicyNet* policy,
                                int probe_density, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const ProbeGrid d_grid = probe_maze(
      maze, probe_density, [&](const std::vector<double>& obs) { return guidance.disc_forward(obs); });
  save_probe_grid_csv(d_grid, maze, out_dir + "/disc_support.csv");
  render_probe_grid_svg(d_grid, maze, 0.0, 1.0, "discriminator D(s)",
                        out_dir + "/disc_support.svg");
  if (policy) {
    const ProbeGrid klq = probe_maze(maze, probe_density, [&](const std::vector<double>& obs) {
      return kl_diag_gaussians(policy->forward(obs), guidance.posterior_forward(obs));
    });
    save_probe_grid_csv(klq, maze, out_dir + "/kl_posterior.csv");
    double hi = 1e-9;
    for (size_t i = 0; i < klq.value.size(); ++i)
      if (klq.mask[i]) hi = std::max(hi, klq.value[i]);
    render_probe_grid_svg(klq, maze, 0.0, hi, "KL(policy, posterior)",
                          out_dir + "/kl_posterior.svg");

    const ProbeGrid klp = probe_maze(maze, probe_density, [&](const std::vector<double>& obs) {
      return kl_diag_gaussians(policy->forward(obs), skills.prior_forward(obs));
    });
    save_probe_grid_csv(klp, maze, out_dir + "/kl_prior.csv");
    hi = 1e-9;
    for (size_t i = 0; i < klp.value.size(); ++i)
      if (klp.mask[i]) hi = std::max(hi, klp.value[i]);
    render_probe_grid_svg(klp, maze, 0.0, hi, "KL(policy, prior)", out_dir + "/kl_prior.svg");
  }
}

enum class RolloutSource { Prior, Posterior, Policy };

struct RolloutMapStats {
  double goal_hit_fraction = 0.0;
  std::set<std::pair<int, int>> visited_cells;
  std::vector<Vec2> positions;
  // Fraction of visited states inside a reference cell set (demo corridor).
  double corridor_rate(const std::set<std::pair<int, int>>& corridor) const {
    if (positions.empty()) return 0.0;
    size_t n = 0;
    for (const Vec2& p : positions) {
      const std::pair<int, int> c{static_cast<int>(p.x), static_cast<int>(p.y)};
      if (corridor.count(c)) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(positions.size());
  }
};

// Executes skills sampled from the chosen head for full episodes and records
// every visited position.
inline RolloutMapStats collect_rollouts(const MazeSpec& maze, const SkillModel& skills,
                                        const Guidance* guidance, const PolicyNet* policy,
                                        RolloutSource source, int n_episodes, Rng& rng) {
  RolloutMapStats st;
  int hits = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    EnvState s = reset(maze, rng);
    bool done = false;
    bool hit = false;
    while (!done) {
      const std::vector<double> obs = observe(maze, s);
      DiagGaussian head;
      switch (source) {
        case RolloutSource::Prior: head = skills.prior_forward(obs); break;
        case RolloutSource::Posterior: head = guidance->posterior_forward(obs); break;
        case RolloutSource::Policy: head = policy->forward(obs); break;
      }
      const std::vector<double> z = nn::tanh_squash(head.sample(rng), kZSquashScale);
      const SkillExecution ex = execute_skill(maze, s, skills, z, skills.cfg.H, true, rng);
      for (const SkillStep& step_i : ex.steps) {
        if (step_i.reward >= 100.0) hit = true;
      }
      s = ex.final_state;
      st.positions.push_back(s.pos);
      st.visited_cells.insert({static_cast<int>(s.pos.x), static_cast<int>(s.pos.y)});
      done = ex.done;
    }
    if (hit) ++hits;
  }
  st.goal_hit_fraction = n_episodes > 0 ? static_cast<double>(hits) / n_episodes : 0.0;
  return st;
}

inline std::set<std::pair<int, int>> demo_corridor_cells(const MazeSpec& maze,
                                                         const Dataset& demos) {
  std::set<std::pair<int, int>> cells;
  for (const Trajectory& t : demos.trajectories)
    for (const auto& s : t.states)
      cells.insert({static_cast<int>(s[0] * maze.width()), static_cast<int>(s[1] * maze.height())});
  return cells;
}

inline void render_rollout_map(const MazeSpec& maze, const RolloutMapStats& st,
                               const std::string& title, const std::string& path_svg,
                               const std::string& path_csv) {
  const double cell_px = 24.0;
  SvgCanvas svg(maze.width() * cell_px, maze.height() * cell_px + 20.0);
  for (int y = 0; y < maze.height(); ++y)
    for (int x = 0; x < maze.width(); ++x)
      svg.rect(x * cell_px, y * cell_px, cell_px + 0.5, cell_px + 0.5,
               maze.is_wall(x, y) ? "#222222" : "#f4f4f4");
  const Vec2 g = maze.goal_center();
  svg.circle(g.x * cell_px, g.y * cell_px, maze.goal_radius * cell_px, "#d62728", 0.6);
  for (const Vec2& p : st.positions)
    svg.circle(p.x * cell_px, p.y * cell_px, 1.6, "#1f77b4", 0.35);
  svg.text(4.0, maze.height() * cell_px + 15.0, title);
  svg.save(path_svg);

  std::ofstream os(path_csv, std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot write " + path_csv);
  os << "x,y\n";
  char buf[64];
  for (const Vec2& p : st.positions) {
    std::snprintf(buf, sizeof(buf), "%.6g,%.6g\n", p.x, p.y);
    os << buf;
  }
}

// Learning-curve figure with mean lines and +/- std bands per method; raw
// plotted numbers are always written alongside the image.
inline void emit_learning_curves(const std::vector<std::pair<std::string, AggregateCurves>>& methods,
                                 size_t column, const std::string& column_name,
                                 const std::string& out_base) {
  if (methods.empty()) raise(ErrorKind::EmptyInput, "no curves");
  const double W = 640, H = 420, ML = 60, MB = 50, MT = 20, MR = 20;
  double xmax = 1.0, ymax = 1e-9;
  for (const auto& [name, agg] : methods) {
    if (!agg.grid.empty()) xmax = std::max(xmax, agg.grid.back());
    for (size_t i = 0; i < agg.grid.size(); ++i)
      ymax = std::max(ymax, agg.mean[i][column] + agg.stdev[i][column]);
  }
  ymax = std::max(ymax, 1.0);
  SvgCanvas svg(W, H);
  auto X = [&](double v) { return ML + v / xmax * (W - ML - MR); };
  auto Y = [&](double v) { return H - MB - v / ymax * (H - MB - MT); };
  svg.line(ML, H - MB, W - MR, H - MB, "#333333");
  svg.line(ML, H - MB, ML, MT, "#333333");
  for (int k = 0; k <= 4; ++k) {
    const double vx = xmax * k / 4.0;
    char lbl[32];
    std::snprintf(lbl, sizeof(lbl), "%.3g", vx);
    svg.text(X(vx) - 10, H - MB + 16, lbl, 10);
    const double vy = ymax * k / 4.0;
    std::snprintf(lbl, sizeof(lbl), "%.3g", vy);
    svg.text(ML - 40, Y(vy) + 4, lbl, 10);
  }
  svg.text(W / 2 - 30, H - 10, "env_steps", 11);
  svg.text(8, MT + 10, column_name, 11);

  std::ofstream os(out_base + ".csv", std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot write " + out_base + ".csv");
  os << "method,env_steps," << column_name << "_mean," << column_name << "_std\n";
  char buf[128];
  size_t mi = 0;
  for (const auto& [name, agg] : methods) {
    const std::string color = curve_palette()[mi % curve_palette().size()];
    std::vector<std::pair<double, double>> line, band;
    for (size_t i = 0; i < agg.grid.size(); ++i)
      line.emplace_back(X(agg.grid[i]), Y(agg.mean[i][column]));
    for (size_t i = 0; i < agg.grid.size(); ++i)
      band.emplace_back(X(agg.grid[i]),
                        Y(std::min(ymax, agg.mean[i][column] + agg.stdev[i][column])));
    for (size_t i = agg.grid.size(); i-- > 0;)
      band.emplace_back(X(agg.grid[i]), Y(std::max(0.0, agg.mean[i][column] - agg.stdev[i][column])));
    bool has_band = false;
    for (size_t i = 0; i < agg.grid.size(); ++i)
      if (agg.stdev[i][column] > 0.0) has_band = true;
    if (has_band) svg.polygon(band, color, 0.15);
    svg.polyline(line, color, 2.0);
    svg.text(W - MR - 110, MT + 16.0 * (mi + 1), name, 11, color);
    for (size_t i = 0; i < agg.grid.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g\n", name.c_str(), agg.grid[i],
                    agg.mean[i][column], agg.stdev[i][column]);
      os << buf;
    }
    ++mi;
  }
  svg.save(out_base + ".svg");
}

}  // namespace skild
