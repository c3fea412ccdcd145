#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "skild/guidance.hpp"
#include "skild/maze.hpp"
#include "skild/planner.hpp"
#include "skild/rl/config.hpp"
#include "skild/skill_model.hpp"

namespace skild {

using nlohmann::json;

// One experiment document with sections {maze, datagen, skill_model,
// guidance, rl}. Defaults follow the published hyperparameters; the shipped
// reference config scales network widths and budgets down to desk size.
// Unknown keys are rejected so typos cannot silently fall back to defaults.
struct ExperimentConfig {
  int version = 1;
  std::string maze_file;
  MazeScalars maze;
  DatagenConfig datagen;
  DemoConfig demo;
  SkillModelConfig skill_model;
  GuidanceConfig guidance;
  RLConfig rl;
  std::vector<std::string> rl_modes{"skild"};
  std::vector<uint64_t> seeds{0, 1, 2};
  uint64_t master_seed = 0;
};

namespace cfg_detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      raise(ErrorKind::InvalidConfig, "unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void get_cell(const json& j, const char* key, CellIdx& out) {
  if (j.contains(key)) {
    const auto v = j.at(key).get<std::vector<int>>();
    if (v.size() != 2) raise(ErrorKind::InvalidConfig, std::string(key) + " needs [row, col]");
    out = {v[1], v[0]};  // file order is [row, col]
  }
}

}  // namespace cfg_detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  using cfg_detail::check_keys;
  using cfg_detail::get;
  ExperimentConfig c;
  check_keys(j, {"version", "maze", "datagen", "skill_model", "guidance", "rl", "seeds",
                 "master_seed"},
             "top level");
  get(j, "version", c.version);
  if (c.version != 1) raise(ErrorKind::InvalidConfig, "unsupported config version");
  get(j, "master_seed", c.master_seed);
  get(j, "seeds", c.seeds);

  if (j.contains("maze")) {
    const json& m = j.at("maze");
    check_keys(m, {"file", "goal_radius", "dt", "max_episode_steps"}, "maze");
    get(m, "file", c.maze_file);
    get(m, "goal_radius", c.maze.goal_radius);
    get(m, "dt", c.maze.dt);
    get(m, "max_episode_steps", c.maze.max_episode_steps);
  }

  if (j.contains("datagen")) {
    const json& d = j.at("datagen");
    check_keys(d,
               {"n_traj", "noise_sigma", "keep_failures", "controller_step_cap", "k_demos",
                "jitter", "demo_start", "demo_goal"},
               "datagen");
    get(d, "n_traj", c.datagen.n_traj);
    get(d, "noise_sigma", c.datagen.noise_sigma);
    get(d, "keep_failures", c.datagen.keep_failures);
    get(d, "controller_step_cap", c.datagen.controller.step_cap);
    c.demo.noise_sigma = c.datagen.noise_sigma;
    c.demo.controller.step_cap = c.datagen.controller.step_cap;
    get(d, "k_demos", c.demo.k);
    get(d, "jitter", c.demo.jitter);
    cfg_detail::get_cell(d, "demo_start", c.demo.start);
    cfg_detail::get_cell(d, "demo_goal", c.demo.goal);
  }

  if (j.contains("skill_model")) {
    const json& s = j.at("skill_model");
    check_keys(s,
               {"H", "z_dim", "beta", "closed_loop", "lstm_hidden", "decoder_hidden",
                "prior_hidden", "batch_norm", "lr", "batch_size", "train_steps", "val_fraction",
                "log_std_min"},
               "skill_model");
    get(s, "H", c.skill_model.H);
    get(s, "z_dim", c.skill_model.z_dim);
    get(s, "beta", c.skill_model.beta);
    get(s, "closed_loop", c.skill_model.state_conditioned_decoder);
    get(s, "lstm_hidden", c.skill_model.lstm_hidden);
    get(s, "decoder_hidden", c.skill_model.decoder_hidden);
    get(s, "prior_hidden", c.skill_model.prior_hidden);
    get(s, "batch_norm", c.skill_model.batch_norm);
    get(s, "lr", c.skill_model.lr);
    get(s, "batch_size", c.skill_model.batch_size);
    get(s, "train_steps", c.skill_model.train_steps);
    get(s, "val_fraction", c.skill_model.val_fraction);
    get(s, "log_std_min", c.skill_model.log_std_min);
  }

  if (j.contains("guidance")) {
    const json& g = j.at("guidance");
    check_keys(g,
               {"posterior_hidden", "disc_hidden", "batch_norm", "lr", "batch_size",
                "posterior_steps", "disc_steps", "init_post_from_prior", "label_smoothing",
                "log_std_min"},
               "guidance");
    get(g, "posterior_hidden", c.guidance.posterior_hidden);
    get(g, "disc_hidden", c.guidance.disc_hidden);
    get(g, "batch_norm", c.guidance.batch_norm);
    get(g, "lr", c.guidance.lr);
    get(g, "batch_size", c.guidance.batch_size);
    get(g, "posterior_steps", c.guidance.posterior_steps);
    get(g, "disc_steps", c.guidance.disc_steps);
    get(g, "init_post_from_prior", c.guidance.init_post_from_prior);
    get(g, "label_smoothing", c.guidance.label_smoothing);
    get(g, "log_std_min", c.guidance.log_std_min);
  }

  if (j.contains("rl")) {
    const json& r = j.at("rl");
    check_keys(r,
               {"modes", "kappa", "alpha", "alpha_q", "auto_alpha", "delta", "delta_q",
                "discount", "tau", "lr", "batch", "warmup_env_steps", "env_step_budget",
                "updates_per_macro", "eval_period", "eval_episodes", "critic_hidden",
                "replay_capacity", "disc_finetune", "disc_finetune_period", "disc_finetune_steps",
                "flat_entropy_target", "flat_update_every", "flat_policy_hidden",
                "bc_pretrain_steps", "bc_reg_weight", "skill_bc_steps", "skill_entropy_target",
                "gated_alpha_kls", "disc_bonus_avg_substeps"},
               "rl");
    get(r, "modes", c.rl_modes);
    get(r, "kappa", c.rl.kappa);
    get(r, "alpha", c.rl.alpha_init);
    get(r, "alpha_q", c.rl.alpha_q_init);
    get(r, "auto_alpha", c.rl.auto_alpha);
    get(r, "delta", c.rl.delta);
    get(r, "delta_q", c.rl.delta_q);
    get(r, "discount", c.rl.discount);
    get(r, "tau", c.rl.tau);
    get(r, "lr", c.rl.lr);
    get(r, "batch", c.rl.batch);
    get(r, "warmup_env_steps", c.rl.warmup_env_steps);
    get(r, "env_step_budget", c.rl.env_step_budget);
    get(r, "updates_per_macro", c.rl.updates_per_macro);
    get(r, "eval_period", c.rl.eval_period);
    get(r, "eval_episodes", c.rl.eval_episodes);
    get(r, "critic_hidden", c.rl.critic_hidden);
    uint64_t cap = c.rl.replay_capacity;
    get(r, "replay_capacity", cap);
    c.rl.replay_capacity = cap;
    get(r, "disc_finetune", c.rl.disc_finetune);
    get(r, "disc_finetune_period", c.rl.disc_finetune_period);
    get(r, "disc_finetune_steps", c.rl.disc_finetune_steps);
    get(r, "flat_entropy_target", c.rl.flat_entropy_target);
    get(r, "flat_update_every", c.rl.flat_update_every);
    get(r, "flat_policy_hidden", c.rl.flat_policy_hidden);
    get(r, "bc_pretrain_steps", c.rl.bc_pretrain_steps);
    get(r, "bc_reg_weight", c.rl.bc_reg_weight);
    get(r, "skill_bc_steps", c.rl.skill_bc_steps);
    get(r, "skill_entropy_target", c.rl.skill_entropy_target);
    get(r, "gated_alpha_kls", c.rl.gated_alpha_kls);
    get(r, "disc_bonus_avg_substeps", c.rl.disc_bonus_avg_substeps);
  }

  c.rl.H = c.skill_model.H;
  for (const std::string& m : c.rl_modes) mode_from_name(m);  // rejects unknown modes
  c.rl.validate();
  c.skill_model.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorKind::IoError, "cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    raise(ErrorKind::InvalidConfig, std::string("config parse error: ") + e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace skild
