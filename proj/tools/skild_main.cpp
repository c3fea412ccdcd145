// skild: maze-scale demonstration-guided skill RL from one binary.
// Subcommands: datagen, pretrain-skills, pretrain-guidance, train, render,
// aggregate, pipeline.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "skild/harness/pipeline.hpp"

namespace fs = std::filesystem;
using namespace skild;

namespace {

CellIdx parse_rc(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) raise(ErrorKind::InvalidConfig, "expected R,C: " + s);
  const int r = std::stoi(s.substr(0, comma));
  const int c = std::stoi(s.substr(comma + 1));
  return {c, r};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SkiLD maze pipeline: skills from offline data, guidance from demonstrations, "
               "discriminator-gated skill RL"};
  app.require_subcommand(1);

  // --- datagen ---------------------------------------------------------------
  auto* dg = app.add_subcommand("datagen", "generate planner datasets");
  std::string dg_maze, dg_out, dg_start, dg_goal;
  int dg_n = 3000, dg_k = 5;
  uint64_t dg_seed = 0;
  double dg_noise = 0.2, dg_jitter = 0.5;
  bool dg_demo = false, dg_drop_failures = false;
  MazeScalars dg_scalars;
  dg->add_option("--maze", dg_maze, "maze layout file")->required();
  dg->add_option("--out", dg_out, "output dataset file")->required();
  dg->add_option("--n", dg_n, "number of trajectories");
  dg->add_option("--seed", dg_seed, "master seed");
  dg->add_option("--noise", dg_noise, "controller noise sigma");
  dg->add_flag("--demo", dg_demo, "generate demonstrations for a target pair");
  dg->add_option("--start", dg_start, "target start cell R,C (demo mode)");
  dg->add_option("--goal", dg_goal, "target goal cell R,C (demo mode)");
  dg->add_option("--k", dg_k, "number of demonstrations");
  dg->add_option("--jitter", dg_jitter, "demo start jitter in cells");
  dg->add_flag("--drop-failures", dg_drop_failures, "discard unsuccessful rollouts");
  dg->add_option("--goal-radius", dg_scalars.goal_radius, "goal radius in cells");
  dg->add_option("--dt", dg_scalars.dt, "step scale");
  dg->add_option("--max-episode-steps", dg_scalars.max_episode_steps, "episode cap");

  // --- pretrain-skills ---------------------------------------------------------
  auto* pk = app.add_subcommand("pretrain-skills", "train the skill embedding model");
  std::string pk_data, pk_out;
  SkillModelConfig pk_cfg;
  uint64_t pk_seed = 0;
  bool pk_open_loop = false;
  pk->add_option("--data", pk_data, "task-agnostic dataset")->required();
  pk->add_option("--out", pk_out, "output checkpoint")->required();
  pk->add_option("--beta", pk_cfg.beta, "embedding regularization weight");
  pk->add_option("--steps", pk_cfg.train_steps, "training steps");
  pk->add_option("--seed", pk_seed, "master seed");
  pk->add_option("--horizon", pk_cfg.H, "skill horizon H");
  pk->add_option("--z-dim", pk_cfg.z_dim, "skill latent dimension");
  pk->add_option("--lstm-hidden", pk_cfg.lstm_hidden, "encoder hidden size");
  pk->add_option("--lr", pk_cfg.lr, "learning rate");
  pk->add_option("--batch", pk_cfg.batch_size, "batch size");
  pk->add_flag("--open-loop", pk_open_loop, "use the open-loop action decoder");

  // --- pretrain-guidance -------------------------------------------------------
  auto* pg = app.add_subcommand("pretrain-guidance", "train skill posterior and discriminator");
  std::string pg_skills, pg_demos, pg_data, pg_out;
  GuidanceConfig pg_cfg;
  uint64_t pg_seed = 0;
  pg->add_option("--skills", pg_skills, "skills checkpoint")->required();
  pg->add_option("--demos", pg_demos, "demonstration dataset")->required();
  pg->add_option("--data", pg_data, "task-agnostic dataset")->required();
  pg->add_option("--out", pg_out, "output checkpoint")->required();
  pg->add_option("--seed", pg_seed, "master seed");
  pg->add_option("--posterior-steps", pg_cfg.posterior_steps, "posterior training steps");
  pg->add_option("--disc-steps", pg_cfg.disc_steps, "discriminator training steps");

  // --- train -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "downstream RL on the target task");
  std::string tr_mode = "skild", tr_maze, tr_skills, tr_guidance, tr_data, tr_demos, tr_out;
  RLConfig tr_cfg;
  MazeScalars tr_scalars;
  tr->add_option("--mode", tr_mode, "skild|spirl|sac_flat|bc_rl|demo_replay|skill_bc_rl|no_gail|post_only|no_post|imitation");
  tr->add_option("--maze", tr_maze, "maze layout file")->required();
  tr->add_option("--skills", tr_skills, "skills checkpoint");
  tr->add_option("--guidance", tr_guidance, "guidance checkpoint");
  tr->add_option("--data", tr_data, "task-agnostic dataset");
  tr->add_option("--demos", tr_demos, "demonstration dataset");
  tr->add_option("--steps", tr_cfg.env_step_budget, "environment step budget");
  tr->add_option("--seed", tr_cfg.seed, "run seed");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--kappa", tr_cfg.kappa, "reward weight kappa");
  tr->add_option("--batch", tr_cfg.batch, "batch size");
  tr->add_option("--warmup", tr_cfg.warmup_env_steps, "warmup env steps");
  tr->add_option("--eval-period", tr_cfg.eval_period, "env steps between evaluations");
  tr->add_option("--eval-episodes", tr_cfg.eval_episodes, "episodes per evaluation");
  tr->add_option("--goal-radius", tr_scalars.goal_radius, "goal radius in cells");
  tr->add_option("--dt", tr_scalars.dt, "step scale");
  tr->add_option("--max-episode-steps", tr_scalars.max_episode_steps, "episode cap");
  bool tr_finetune = false;
  tr->add_flag("--disc-finetune", tr_finetune, "finetune the discriminator online");

  // --- render --------------------------------------------------------------------
  auto* rd = app.add_subcommand("render", "support maps and rollout maps");
  std::string rd_kind = "support", rd_maze, rd_skills, rd_guidance, rd_policy, rd_demos, rd_out;
  int rd_density = 2, rd_episodes = 50;
  uint64_t rd_seed = 0;
  MazeScalars rd_scalars;
  rd->add_option("--kind", rd_kind, "support|rollouts");
  rd->add_option("--maze", rd_maze, "maze layout file")->required();
  rd->add_option("--skills", rd_skills, "skills checkpoint")->required();
  rd->add_option("--guidance", rd_guidance, "guidance checkpoint");
  rd->add_option("--policy", rd_policy, "policy checkpoint");
  rd->add_option("--demos", rd_demos, "demo dataset (corridor reference)");
  rd->add_option("--out", rd_out, "output directory")->required();
  rd->add_option("--density", rd_density, "probes per cell side");
  rd->add_option("--episodes", rd_episodes, "rollout episodes");
  rd->add_option("--seed", rd_seed, "rollout seed");
  rd->add_option("--goal-radius", rd_scalars.goal_radius, "goal radius in cells");
  rd->add_option("--dt", rd_scalars.dt, "step scale");
  rd->add_option("--max-episode-steps", rd_scalars.max_episode_steps, "episode cap");

  // --- aggregate -------------------------------------------------------------------
  auto* ag = app.add_subcommand("aggregate", "mean/std curves across seed runs");
  std::vector<std::string> ag_logs;
  std::string ag_out;
  ag->add_option("--out", ag_out, "output csv")->required();
  ag->add_option("logs", ag_logs, "metrics.csv files")->required();

  // --- pipeline ---------------------------------------------------------------------
  auto* pl = app.add_subcommand("pipeline", "full experiment from a config file");
  std::string pl_config, pl_out = "out";
  pl->add_option("--config", pl_config, "experiment config (json)")->required();
  pl->add_option("--out", pl_out, "output root (SKILD_OUT_DIR overrides)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dg) {
      const MazeSpec maze = load_maze_file(dg_maze, dg_scalars);
      if (dg_demo) {
        if (dg_start.empty() || dg_goal.empty())
          raise(ErrorKind::InvalidConfig, "--demo needs --start and --goal");
        DemoConfig dc;
        dc.start = parse_rc(dg_start);
        dc.goal = parse_rc(dg_goal);
        dc.k = dg_k;
        dc.jitter = dg_jitter;
        dc.noise_sigma = dg_noise;
        const Dataset ds = generate_demos(maze, dc, dg_seed);
        save_dataset(ds, dg_out);
        std::cout << "wrote " << ds.trajectories.size() << " demos to " << dg_out << "\n";
      } else {
        DatagenConfig dc;
        dc.n_traj = dg_n;
        dc.noise_sigma = dg_noise;
        dc.keep_failures = !dg_drop_failures;
        const Dataset ds = generate_task_agnostic(maze, dc, dg_seed);
        save_dataset(ds, dg_out);
        std::cout << "wrote " << ds.trajectories.size() << " trajectories to " << dg_out << "\n";
      }
    } else if (*pk) {
      const Dataset data = load_dataset(pk_data);
      pk_cfg.state_conditioned_decoder = !pk_open_loop;
      auto [train_split, val_split] = split_dataset(data, pk_cfg.val_fraction, pk_seed);
      Rng rng = derive_rng(pk_seed, "skills.init");
      SkillModel model = SkillModel::init(pk_cfg, data.state_dim, data.action_dim, rng);
      const SkillTrainResult res = train_skill_model(model, train_split, pk_seed);
      save_skill_model(model, pk_out);
      std::cout << "final loss " << (res.log.empty() ? 0.0 : res.log.back().total) << ", saved "
                << pk_out << "\n";
    } else if (*pg) {
      const SkillModel skills = load_skill_model(pg_skills);
      const Dataset demos = load_dataset(pg_demos);
      const Dataset data = load_dataset(pg_data);
      Rng rng = derive_rng(pg_seed, "guidance.init");
      Guidance g = Guidance::init(pg_cfg, skills.obs_dim, skills.cfg.z_dim, rng);
      train_posterior(g, skills, demos, pg_seed);
      train_discriminator(g, data, demos, pg_seed);
      save_guidance(g, pg_out);
      std::cout << "saved " << pg_out << "\n";
    } else if (*tr) {
      tr_cfg.mode = mode_from_name(tr_mode);
      tr_cfg.disc_finetune = tr_finetune;
      const MazeSpec maze = load_maze_file(tr_maze, tr_scalars);
      const std::string out_dir = out_root(tr_out);
      fs::create_directories(out_dir);
      RLInputs in;
      in.maze = &maze;
      Dataset demos;
      if (!tr_skills.empty()) in.skills = load_skill_model(tr_skills);
      if (!tr_guidance.empty()) in.guidance = load_guidance(tr_guidance);
      if (!tr_demos.empty()) {
        demos = load_dataset(tr_demos);
        in.demos = &demos;
      }
      tr_cfg.H = in.skills ? in.skills->cfg.H : tr_cfg.H;
      auto on_eval = [&](int env_steps, SkillSpaceTrainer& t) {
        save_policy_net(t.policy_, out_dir + "/policy_" + std::to_string(env_steps) + ".sknn");
        save_policy_net(t.policy_, out_dir + "/policy.sknn");
      };
      auto [log, policy] = run_rl(tr_cfg, in, on_eval);
      log.save(out_dir + "/metrics.csv");
      std::cout << "wrote " << out_dir << "/metrics.csv\n";
    } else if (*rd) {
      const MazeSpec maze = load_maze_file(rd_maze, rd_scalars);
      const SkillModel skills = load_skill_model(rd_skills);
      fs::create_directories(rd_out);
      std::optional<Guidance> guidance;
      if (!rd_guidance.empty()) guidance = load_guidance(rd_guidance);
      std::optional<PolicyNet> policy;
      if (!rd_policy.empty()) policy = load_policy_net(rd_policy);
      if (rd_kind == "support") {
        if (!guidance) raise(ErrorKind::MissingCheckpoint, "support maps need --guidance");
        render_support_maps(maze, *guidance, skills, policy ? &*policy : nullptr, rd_density,
                            rd_out);
        std::cout << "wrote support maps to " << rd_out << "\n";
      } else if (rd_kind == "rollouts") {
        Rng rng(derive_seed(rd_seed, "render.rollouts"));
        const RolloutMapStats prior_st = collect_rollouts(
            maze, skills, guidance ? &*guidance : nullptr, nullptr, RolloutSource::Prior,
            rd_episodes, rng);
        render_rollout_map(maze, prior_st, "skill prior rollouts", rd_out + "/rollouts_prior.svg",
                           rd_out + "/rollouts_prior.csv");
        std::cout << "prior goal-hit fraction " << prior_st.goal_hit_fraction << "\n";
        if (guidance) {
          const RolloutMapStats post_st =
              collect_rollouts(maze, skills, &*guidance, nullptr, RolloutSource::Posterior,
                               rd_episodes, rng);
          render_rollout_map(maze, post_st, "skill posterior rollouts",
                             rd_out + "/rollouts_posterior.svg",
                             rd_out + "/rollouts_posterior.csv");
          std::cout << "posterior goal-hit fraction " << post_st.goal_hit_fraction << "\n";
          if (!rd_demos.empty()) {
            const Dataset demos = load_dataset(rd_demos);
            const auto corridor = demo_corridor_cells(maze, demos);
            std::cout << "corridor visit rate prior " << prior_st.corridor_rate(corridor)
                      << " posterior " << post_st.corridor_rate(corridor) << "\n";
          }
        }
        if (policy) {
          const RolloutMapStats pol_st = collect_rollouts(
              maze, skills, nullptr, &*policy, RolloutSource::Policy, rd_episodes, rng);
          render_rollout_map(maze, pol_st, "policy rollouts", rd_out + "/rollouts_policy.svg",
                             rd_out + "/rollouts_policy.csv");
          std::cout << "policy goal-hit fraction " << pol_st.goal_hit_fraction << "\n";
        }
      } else {
        raise(ErrorKind::InvalidConfig, "unknown render kind " + rd_kind);
      }
    } else if (*ag) {
      std::vector<MetricsLog> logs;
      for (const std::string& p : ag_logs) logs.push_back(MetricsLog::load(p));
      save_aggregate(aggregate_seeds(logs), ag_out);
      std::cout << "wrote " << ag_out << "\n";
    } else if (*pl) {
      const ExperimentConfig cfg = load_experiment_config(pl_config);
      run_pipeline(cfg, pl_out, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
