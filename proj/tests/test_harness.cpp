#include <catch2/catch.hpp>

#include "test_util.hpp"

#include <filesystem>
#include <sstream>

#include "skild/harness/pipeline.hpp"

using namespace skild;
namespace fs = std::filesystem;

TEST_CASE("experiment config validation") {
  SECTION("valid document with defaults") {
    const ExperimentConfig c = parse_experiment_config(json::parse(R"({
      "maze": {"file": "configs/maze20.txt"},
      "rl": {"modes": ["skild", "spirl"], "kappa": 0.9}
    })"));
    REQUIRE(c.rl_modes.size() == 2);
    REQUIRE(c.rl.kappa == 0.9);
    REQUIRE(c.skill_model.beta == 1e-3);
    REQUIRE(c.seeds == std::vector<uint64_t>{0, 1, 2});
  }
  SECTION("unknown keys rejected") {
    REQUIRE_THROWS_AS(parse_experiment_config(json::parse(R"({"mazes": {}})")), Error);
    REQUIRE_THROWS_AS(
        parse_experiment_config(json::parse(R"({"rl": {"kapa": 0.5}})")), Error);
  }
  SECTION("kappa outside [0,1] rejected") {
    REQUIRE_THROWS_AS(
        parse_experiment_config(json::parse(R"({"rl": {"kappa": 1.2}})")), Error);
  }
  SECTION("unknown mode rejected") {
    REQUIRE_THROWS_AS(
        parse_experiment_config(json::parse(R"({"rl": {"modes": ["sklid"]}})")), Error);
  }
  SECTION("negative rates rejected") {
    REQUIRE_THROWS_AS(
        parse_experiment_config(json::parse(R"({"rl": {"lr": -1.0}})")), Error);
  }
  SECTION("shipped reference config parses") {
    const ExperimentConfig c = load_experiment_config(reference_config_path());
    REQUIRE(!c.maze_file.empty());
    REQUIRE(!c.rl_modes.empty());
  }
}

TEST_CASE("metrics log rules") {
  MetricsLog log;
  log.columns = {"env_steps", "success_rate"};
  log.append({100.0, 0.0});
  SECTION("env_steps must strictly increase") {
    REQUIRE_THROWS_AS(log.append({100.0, 0.5}), Error);
    REQUIRE_THROWS_AS(log.append({50.0, 0.5}), Error);
  }
  SECTION("NaNs are rejected") {
    REQUIRE_THROWS_AS(log.append({200.0, std::nan("")}), Error);
  }
  SECTION("csv round-trip") {
    log.append({200.0, 0.25});
    log.save("metrics_rt.csv");
    const MetricsLog back = MetricsLog::load("metrics_rt.csv");
    REQUIRE(back.columns == log.columns);
    REQUIRE(back.rows == log.rows);
    fs::remove("metrics_rt.csv");
  }
}

TEST_CASE("aggregate_seeds") {
  auto mk = [](std::vector<std::pair<double, double>> pts) {
    MetricsLog log;
    log.columns = {"env_steps", "v"};
    for (auto [x, y] : pts) log.append({x, y});
    return log;
  };
  SECTION("single log has zero std") {
    const AggregateCurves agg = aggregate_seeds({mk({{0, 1}, {100, 3}})});
    REQUIRE(agg.grid.size() == 2);
    REQUIRE(agg.mean[0][0] == 1.0);
    REQUIRE(agg.stdev[0][0] == 0.0);
    REQUIRE(agg.stdev[1][0] == 0.0);
  }
  SECTION("two constant logs at 0 and 1: mean 0.5, population std 0.5") {
    const AggregateCurves agg =
        aggregate_seeds({mk({{0, 0}, {100, 0}}), mk({{0, 1}, {100, 1}})});
    REQUIRE(agg.mean[0][0] == Approx(0.5));
    REQUIRE(agg.stdev[0][0] == Approx(0.5));
  }
  SECTION("linear interpolation hits the midpoint") {
    const MetricsLog log = mk({{0, 0}, {100, 1}});
    REQUIRE(log.interpolate(1, 50.0) == Approx(0.5));
    REQUIRE(log.interpolate(1, -10.0) == 0.0);   // clamped
    REQUIRE(log.interpolate(1, 500.0) == 1.0);   // clamped
  }
  SECTION("mismatched grids are interpolated onto the common range") {
    const AggregateCurves agg =
        aggregate_seeds({mk({{0, 0}, {50, 1}, {100, 2}}), mk({{25, 1}, {100, 1}})});
    for (double g : agg.grid) {
      REQUIRE(g >= 25.0);
      REQUIRE(g <= 100.0);
    }
  }
  SECTION("empty input raises") {
    REQUIRE_THROWS_AS(aggregate_seeds({}), Error);
  }
  SECTION("steps_to_reach finds the first crossing") {
    const MetricsLog log = mk({{0, 0.1}, {100, 0.4}, {200, 0.6}});
    REQUIRE(log.steps_to_reach(1, 0.5) == 200.0);
    REQUIRE(log.steps_to_reach(1, 0.9) == -1.0);
  }
}

TEST_CASE("probe grid masks walls and writes numeric siblings") {
  const MazeSpec maze = load_maze_file(maze20_path());
  const ProbeGrid g = probe_maze(maze, 2, [](const std::vector<double>& obs) {
    return obs[0] + obs[1];
  });
  REQUIRE(g.nx == maze.width() * 2);
  // Boundary probes are wall cells.
  REQUIRE(g.mask_at(0, 0) == 0);
  int open = 0;
  for (uint8_t m : g.mask) open += m;
  REQUIRE(open > 0);
  save_probe_grid_csv(g, maze, "probe_rt.csv");
  std::ifstream is("probe_rt.csv");
  std::string header;
  std::getline(is, header);
  REQUIRE(header == "x,y,in_wall,value");
  fs::remove("probe_rt.csv");
}

TEST_CASE("rollout maps") {
  const MazeSpec maze = load_maze_file(maze20_path());
  Rng rng(1);
  SkillModelConfig scfg;
  scfg.H = 5;
  scfg.z_dim = 3;
  scfg.lstm_hidden = 6;
  scfg.decoder_hidden = {8};
  scfg.prior_hidden = {8};
  MazeScalars sc;
  sc.max_episode_steps = 60;
  const MazeSpec fast_maze = load_maze_file(maze20_path(), sc);
  SkillModel skills = SkillModel::init(scfg, kObsDim, kActDim, rng);

  SECTION("zero episodes produce an empty overlay") {
    Rng r(2);
    const RolloutMapStats st =
        collect_rollouts(fast_maze, skills, nullptr, nullptr, RolloutSource::Prior, 0, r);
    REQUIRE(st.positions.empty());
    REQUIRE(st.goal_hit_fraction == 0.0);
  }
  SECTION("prior rollouts visit cells and render to svg + csv") {
    Rng r(3);
    const RolloutMapStats st =
        collect_rollouts(fast_maze, skills, nullptr, nullptr, RolloutSource::Prior, 3, r);
    REQUIRE(!st.positions.empty());
    render_rollout_map(fast_maze, st, "prior", "rollout_rt.svg", "rollout_rt.csv");
    REQUIRE(fs::exists("rollout_rt.svg"));
    REQUIRE(fs::exists("rollout_rt.csv"));
    fs::remove("rollout_rt.svg");
    fs::remove("rollout_rt.csv");
  }
}

TEST_CASE("learning curve emission writes image plus numeric sibling") {
  auto mk = [](double y0, double y1) {
    MetricsLog log;
    log.columns = {"env_steps", "success_rate"};
    log.append({0.0, y0});
    log.append({1000.0, y1});
    return log;
  };
  const AggregateCurves a = aggregate_seeds({mk(0.0, 0.5), mk(0.1, 0.7)});
  const AggregateCurves b = aggregate_seeds({mk(0.0, 0.2)});
  emit_learning_curves({{"skild", a}, {"spirl", b}}, 1, "success_rate", "curves_rt");
  REQUIRE(fs::exists("curves_rt.svg"));
  REQUIRE(fs::exists("curves_rt.csv"));
  std::ifstream is("curves_rt.csv");
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "method,env_steps,success_rate_mean,success_rate_std");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  REQUIRE(rows == 4);
  fs::remove("curves_rt.svg");
  fs::remove("curves_rt.csv");
}

TEST_CASE("manifest skips unchanged stages and reruns on changed inputs") {
  const std::string dir = "manifest_rt";
  fs::create_directories(dir);
  const std::string out = dir + "/artifact.txt";
  {
    Manifest m(dir + "/manifest.json");
    REQUIRE_FALSE(m.up_to_date("stage", 42, {out}));
    std::ofstream(out) << "v1";
    m.record("stage", 42, {out});
    REQUIRE(m.up_to_date("stage", 42, {out}));
    REQUIRE_FALSE(m.up_to_date("stage", 43, {out}));
  }
  {
    Manifest m(dir + "/manifest.json");  // reloaded from disk
    REQUIRE(m.up_to_date("stage", 42, {out}));
    fs::remove(out);
    REQUIRE_FALSE(m.up_to_date("stage", 42, {out}));  // missing output
  }
  fs::remove_all(dir);
}

TEST_CASE("run_pipeline end to end: artifacts, idempotence, corruption") {
  // Tiny everything: a few trajectories, narrow nets, short budgets.
  json j = json::parse(R"({
    "master_seed": 5,
    "seeds": [0, 1],
    "maze": {"file": "PLACEHOLDER", "max_episode_steps": 120},
    "datagen": {"n_traj": 40, "k_demos": 2, "demo_start": [1, 1], "demo_goal": [17, 17]},
    "skill_model": {"H": 5, "z_dim": 3, "lstm_hidden": 6, "decoder_hidden": [8],
                     "prior_hidden": [8, 8], "train_steps": 30, "batch_size": 16},
    "guidance": {"posterior_hidden": [8, 8], "disc_hidden": [8], "posterior_steps": 20,
                  "disc_steps": 20, "batch_size": 16},
    "rl": {"modes": ["skild"], "batch": 16, "warmup_env_steps": 150,
            "env_step_budget": 500, "eval_period": 200, "eval_episodes": 2,
            "critic_hidden": [8]}
  })");
  j["maze"]["file"] = maze20_path();
  const ExperimentConfig cfg = parse_experiment_config(j);
  const std::string dir = "pipeline_rt";
  fs::remove_all(dir);

  std::ostringstream log1;
  run_pipeline(cfg, dir, log1);
  REQUIRE(fs::exists(dir + "/task_agnostic.skld"));
  REQUIRE(fs::exists(dir + "/demos.skld"));
  REQUIRE(fs::exists(dir + "/skills.sknn"));
  REQUIRE(fs::exists(dir + "/guidance.sknn"));
  REQUIRE(fs::exists(dir + "/runs/skild/seed0/metrics.csv"));
  REQUIRE(fs::exists(dir + "/runs/skild/seed1/metrics.csv"));
  REQUIRE(fs::exists(dir + "/runs/skild/seed0/policy.sknn"));
  REQUIRE(fs::exists(dir + "/aggregates/skild.csv"));
  REQUIRE(fs::exists(dir + "/figures/learning_curves.svg"));
  REQUIRE(fs::exists(dir + "/figures/learning_curves.csv"));
  REQUIRE(log1.str().find("[run ] datagen") != std::string::npos);

  SECTION("rerun with unchanged config skips every stage") {
    std::ostringstream log2;
    run_pipeline(cfg, dir, log2);
    REQUIRE(log2.str().find("[skip] datagen") != std::string::npos);
    REQUIRE(log2.str().find("[skip] pretrain-skills") != std::string::npos);
    REQUIRE(log2.str().find("[skip] train/skild/seed0") != std::string::npos);
    REQUIRE(log2.str().find("[run ]") == std::string::npos);
  }

  SECTION("corrupted checkpoint aborts naming the stage") {
    // Truncate the skills checkpoint and change its stage inputs so the
    // pipeline rebuilds downstream stages from the damaged file.
    {
      std::ofstream f(dir + "/skills.sknn", std::ios::binary | std::ios::trunc);
      f << "SKNNgarbage";
    }
    ExperimentConfig cfg2 = cfg;
    cfg2.guidance.posterior_steps = 21;  // invalidates the guidance stage hash
    fs::remove(dir + "/guidance.sknn");
    std::ostringstream log3;
    try {
      run_pipeline(cfg2, dir, log3);
      FAIL("expected stage failure");
    } catch (const Error& e) {
      REQUIRE(std::string(e.what()).find("pretrain-guidance") != std::string::npos);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("median helper") {
  REQUIRE(median({3.0, 1.0, 2.0}) == 2.0);
  REQUIRE(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  REQUIRE_THROWS_AS(median({}), Error);
}
