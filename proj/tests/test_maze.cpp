#include <catch2/catch.hpp>

#include "test_util.hpp"

#include "skild/maze.hpp"

using namespace skild;

TEST_CASE("load_maze validates layouts") {
  SECTION("minimal valid maze") {
    const MazeSpec m = load_maze("#####\n#S.G#\n#####");
    REQUIRE(m.width() == 5);
    REQUIRE(m.height() == 3);
    REQUIRE(m.goal_cell.x == 3);
    REQUIRE(m.goal_cell.y == 1);
    REQUIRE(m.start_cells().size() == 1);
  }
  SECTION("goal but no start region") {
    try {
      load_maze("###\n#G#\n###");
      FAIL("expected MissingStartRegion");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MissingStartRegion);
    }
  }
  SECTION("wall separates start from goal") {
    try {
      load_maze("#####\n#S#G#\n#####");
      FAIL("expected UnreachableGoal");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::UnreachableGoal);
    }
  }
  SECTION("no goal") {
    try {
      load_maze("####\n#S.#\n####");
      FAIL("expected NoGoal");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::NoGoal);
    }
  }
  SECTION("multiple goals") {
    try {
      load_maze("#####\n#SGG#\n#####");
      FAIL("expected MultipleGoals");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MultipleGoals);
    }
  }
  SECTION("ragged rows") {
    try {
      load_maze("#####\n#S.G##\n#####");
      FAIL("expected MalformedLayout");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MalformedLayout);
    }
  }
  SECTION("illegal character") {
    try {
      load_maze("#####\n#SxG#\n#####");
      FAIL("expected MalformedLayout");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MalformedLayout);
    }
  }
  SECTION("open boundary rejected") {
    try {
      load_maze("#####\n#S.G.\n#####");
      FAIL("expected MalformedLayout");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MalformedLayout);
    }
  }
  SECTION("bad scalars rejected") {
    MazeScalars s;
    s.goal_radius = 0.6;
    REQUIRE_THROWS_AS(load_maze("#####\n#S.G#\n#####", s), Error);
    s = {};
    s.dt = 0.0;
    REQUIRE_THROWS_AS(load_maze("#####\n#S.G#\n#####", s), Error);
  }
}

TEST_CASE("reset samples uniformly inside start cell interiors") {
  const MazeSpec m = load_maze("#####\n#S.G#\n#####");
  SECTION("support with 0.1 margin") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const EnvState s = reset(m, rng);
      REQUIRE(s.pos.x >= 1.1);
      REQUIRE(s.pos.x <= 1.9);
      REQUIRE(s.pos.y >= 1.1);
      REQUIRE(s.pos.y <= 1.9);
      REQUIRE(s.vel.x == 0.0);
      REQUIRE(s.vel.y == 0.0);
      REQUIRE(s.steps_elapsed == 0);
    }
  }
  SECTION("same seed twice gives identical position") {
    Rng a(7), b(7);
    const EnvState sa = reset(m, a);
    const EnvState sb = reset(m, b);
    REQUIRE(sa.pos.x == sb.pos.x);
    REQUIRE(sa.pos.y == sb.pos.y);
  }
  SECTION("two start cells split counts within 3 sigma") {
    // Binomial oracle: n=1e4, p=0.5 => sigma = 50, |count - 5000| <= 150.
    const MazeSpec m2 = load_maze("######\n#SS.G#\n######");
    Rng rng(11);
    int first = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const EnvState s = reset(m2, rng);
      if (s.pos.x < 2.0) ++first;
    }
    REQUIRE(std::abs(first - 5000) <= 150);
  }
}

TEST_CASE("step dynamics, collision, and goal handling") {
  MazeScalars sc;
  sc.dt = 0.1;
  const MazeSpec m = load_maze("#####\n#S.G#\n#####", sc);

  SECTION("free-space arithmetic") {
    EnvState s;
    s.pos = {1.5, 1.5};
    const StepResult r = step(m, s, {{1.0, 0.0}});
    REQUIRE(r.state.pos.x == Approx(1.6).margin(1e-12));
    REQUIRE(r.state.pos.y == Approx(1.5).margin(1e-12));
    REQUIRE(r.reward == 0.0);
    REQUIRE_FALSE(r.done);
    REQUIRE(r.state.vel.x == 1.0);
  }

  SECTION("per-axis collision slides along wall") {
    // Vertical corridor at x=1 with wall cells at x=2.
    const MazeSpec mw = load_maze("####\n#S##\n#.##\n#G##\n####", sc);
    EnvState s;
    s.pos = {1.95, 1.5};
    const StepResult r = step(mw, s, {{1.0, 1.0}});
    // x move into the wall cell (2, y) is cancelled, y move proceeds.
    REQUIRE(r.state.pos.x == Approx(1.95).margin(1e-12));
    REQUIRE(r.state.pos.y == Approx(1.6).margin(1e-12));
    // Geometry oracle: the resulting position is in a non-wall cell.
    REQUIRE_FALSE(mw.is_wall_at(r.state.pos.x, r.state.pos.y));
  }

  SECTION("goal ball gives one-time 100 and ends the episode") {
    EnvState s;
    s.pos = {3.2, 1.5};  // goal center (3.5, 1.5), radius 0.4
    const StepResult r = step(m, s, {{1.0, 0.0}});
    REQUIRE(r.reward == 100.0);
    REQUIRE(r.done);
  }

  SECTION("action clamped before dynamics") {
    EnvState s;
    s.pos = {1.5, 1.5};
    const StepResult r = step(m, s, {{5.0, 0.0}});
    REQUIRE(r.state.pos.x == Approx(1.6).margin(1e-12));
    REQUIRE(r.state.vel.x == 1.0);
  }

  SECTION("step cap sets done with zero reward") {
    MazeScalars sc2;
    sc2.max_episode_steps = 2;
    const MazeSpec m2 = load_maze("#####\n#S.G#\n#####", sc2);
    EnvState s;
    s.pos = {1.5, 1.5};
    StepResult r = step(m2, s, {{0.0, 0.0}});
    REQUIRE_FALSE(r.done);
    r = step(m2, r.state, {{0.0, 0.0}});
    REQUIRE(r.done);
    REQUIRE(r.reward == 0.0);
  }
}

TEST_CASE("in_goal is a closed ball") {
  const MazeSpec m = load_maze("#####\n#S.G#\n#####");
  EnvState s;
  s.pos = m.goal_center();
  REQUIRE(in_goal(m, s));
  s.pos = {m.goal_center().x - m.goal_radius, m.goal_center().y};
  REQUIRE(in_goal(m, s));
  s.pos = {m.goal_center().x - m.goal_radius - 1e-6, m.goal_center().y};
  REQUIRE_FALSE(in_goal(m, s));
}

TEST_CASE("fuzz: position never enters a wall cell") {
  const MazeSpec m = load_maze_file(maze20_path());
  Rng rng(99);
  EnvState s = reset(m, rng);
  for (int i = 0; i < 100000; ++i) {
    const StepResult r = step(m, s, {{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}});
    REQUIRE_FALSE(m.is_wall_at(r.state.pos.x, r.state.pos.y));
    s = r.done ? reset(m, rng) : r.state;
  }
}

TEST_CASE("step is pure: replaying a logged episode is bit-exact") {
  const MazeSpec m = load_maze_file(maze20_path());
  Rng rng(123);
  EnvState s = reset(m, rng);
  std::vector<Vec2> actions;
  std::vector<EnvState> states{s};
  double total = 0.0;
  for (int i = 0; i < 500; ++i) {
    const Vec2 a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const StepResult r = step(m, s, {a});
    actions.push_back(a);
    states.push_back(r.state);
    total += r.reward;
    if (r.done) break;
    s = r.state;
  }
  // Replay.
  EnvState t = states[0];
  double total2 = 0.0;
  for (size_t i = 0; i < actions.size(); ++i) {
    const StepResult r = step(m, t, {actions[i]});
    REQUIRE(r.state.pos.x == states[i + 1].pos.x);
    REQUIRE(r.state.pos.y == states[i + 1].pos.y);
    total2 += r.reward;
    t = r.state;
  }
  REQUIRE(total == total2);
  REQUIRE((total == 0.0 || total == 100.0));
}

TEST_CASE("observation normalization lands in the unit box") {
  const MazeSpec m = load_maze_file(maze20_path());
  Rng rng(5);
  EnvState s = reset(m, rng);
  const auto obs = observe(m, s);
  REQUIRE(obs.size() == 4);
  REQUIRE(obs[0] >= 0.0);
  REQUIRE(obs[0] <= 1.0);
  REQUIRE(obs[1] >= 0.0);
  REQUIRE(obs[1] <= 1.0);
}
