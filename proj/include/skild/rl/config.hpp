#pragma once

#include <optional>
#include <string>
#include <vector>

#include "skild/errors.hpp"

namespace skild {

enum class RLMode {
  Skild,
  Spirl,
  SacFlat,
  BcRl,
  DemoReplay,
  SkillBcRl,
  NoGail,
  PostOnly,
  NoPost,
  Imitation,
};

inline const char* mode_name(RLMode m) {
  switch (m) {
    case RLMode::Skild: return "skild";
    case RLMode::Spirl: return "spirl";
    case RLMode::SacFlat: return "sac_flat";
    case RLMode::BcRl: return "bc_rl";
    case RLMode::DemoReplay: return "demo_replay";
    case RLMode::SkillBcRl: return "skill_bc_rl";
    case RLMode::NoGail: return "no_gail";
    case RLMode::PostOnly: return "post_only";
    case RLMode::NoPost: return "no_post";
    case RLMode::Imitation: return "imitation";
  }
  return "?";
}

inline RLMode mode_from_name(const std::string& s) {
  for (RLMode m : {RLMode::Skild, RLMode::Spirl, RLMode::SacFlat, RLMode::BcRl, RLMode::DemoReplay,
                   RLMode::SkillBcRl, RLMode::NoGail, RLMode::PostOnly, RLMode::NoPost,
                   RLMode::Imitation})
    if (s == mode_name(m)) return m;
  raise(ErrorKind::InvalidConfig, "unknown mode " + s);
}

struct RLConfig {
  RLMode mode = RLMode::Skild;
  double kappa = 0.9;
  double alpha_init = 0.1;
  double alpha_q_init = 0.1;
  bool auto_alpha = true;
  double delta = 1.0;     // target divergence to the skill prior
  double delta_q = 10.0;  // target divergence to the skill posterior
  double discount = 0.99;
  double tau = 5e-3;
  double lr = 3e-4;
  int batch = 256;
  int warmup_env_steps = 5000;
  int H = 10;
  size_t replay_capacity = 1000000;
  int env_step_budget = 500000;
  int updates_per_macro = 1;
  int eval_period = 10000;
  int eval_episodes = 20;
  uint64_t seed = 0;
  std::vector<int> critic_hidden{256, 256};

  bool disc_finetune = false;
  int disc_finetune_period = 20000;  // env steps between finetune bursts
  int disc_finetune_steps = 16;

  // Flat-SAC family (sac_flat, bc_rl, demo_replay).
  double flat_entropy_target = -2.0;  // -action_dim
  int flat_update_every = 1;          // env steps per gradient step
  std::vector<int> flat_policy_hidden{128, 128, 128};
  int bc_pretrain_steps = 2000;
  double bc_reg_weight = 1.0;

  // skill_bc_rl
  int skill_bc_steps = 2000;
  double skill_entropy_target = -10.0;  // -z_dim

  // Test hooks for the exact mode-algebra identities (see invariants): force
  // the discriminator gate to a constant and/or override kappa.
  std::optional<double> gate_override;
  std::optional<double> kappa_override;

  // Open-question flags: evaluate the divergence terms of the alpha updates
  // gated by D(s) instead of ungated; average the discriminator bonus over a
  // skill's intermediate states instead of evaluating it at s_t.
  bool gated_alpha_kls = false;
  bool disc_bonus_avg_substeps = false;

  void validate() const {
    if (kappa < 0.0 || kappa > 1.0) raise(ErrorKind::InvalidConfig, "kappa must be in [0,1]");
    if (discount < 0.0 || discount > 1.0) raise(ErrorKind::InvalidConfig, "discount in [0,1]");
    if (tau <= 0.0 || tau > 1.0) raise(ErrorKind::InvalidConfig, "tau in (0,1]");
    if (lr <= 0.0) raise(ErrorKind::InvalidConfig, "lr must be > 0");
    if (batch < 2) raise(ErrorKind::InvalidConfig, "batch must be >= 2");
    if (H < 1) raise(ErrorKind::InvalidConfig, "H must be >= 1");
    if (gate_override && (*gate_override < 0.0 || *gate_override > 1.0))
      raise(ErrorKind::InvalidConfig, "gate_override in [0,1]");
    if (kappa_override && (*kappa_override < 0.0 || *kappa_override > 1.0))
      raise(ErrorKind::InvalidConfig, "kappa_override in [0,1]");
  }

  double effective_kappa() const {
    if (kappa_override) return *kappa_override;
    switch (mode) {
      case RLMode::Spirl: return 0.0;
      case RLMode::NoGail: return 0.0;
      case RLMode::Imitation: return 1.0;
      default: return kappa;
    }
  }
};

// Who regularizes the policy where, and how the policy starts.
struct ModeTraits {
  enum class Gate { Disc, Zero, One } gate = Gate::Disc;
  enum class PolicyInit { Posterior, Prior, Random } init = PolicyInit::Posterior;
  bool entropy_instead_of_divergence = false;  // skill_bc_rl finetuning
  bool needs_posterior = false;
  bool needs_discriminator = false;
  bool needs_demos = false;
  bool flat = false;
};

inline ModeTraits mode_traits(RLMode m) {
  ModeTraits t;
  switch (m) {
    case RLMode::Skild:
      t = {ModeTraits::Gate::Disc, ModeTraits::PolicyInit::Posterior, false, true, true, false, false};
      break;
    case RLMode::Spirl:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Prior, false, false, false, false, false};
      break;
    case RLMode::NoGail:
      t = {ModeTraits::Gate::Disc, ModeTraits::PolicyInit::Posterior, false, true, true, false, false};
      break;
    case RLMode::PostOnly:
      t = {ModeTraits::Gate::One, ModeTraits::PolicyInit::Posterior, false, true, true, false, false};
      break;
    case RLMode::NoPost:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Prior, false, false, true, false, false};
      break;
    case RLMode::Imitation:
      t = {ModeTraits::Gate::Disc, ModeTraits::PolicyInit::Posterior, false, true, true, false, false};
      break;
    case RLMode::SkillBcRl:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Random, true, false, false, true, false};
      break;
    case RLMode::SacFlat:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Random, true, false, false, false, true};
      break;
    case RLMode::BcRl:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Random, true, false, false, true, true};
      break;
    case RLMode::DemoReplay:
      t = {ModeTraits::Gate::Zero, ModeTraits::PolicyInit::Random, true, false, false, true, true};
      break;
  }
  return t;
}

// Eq. 4 combined reward at a macro step.
inline double combined_reward(double kappa, double r_env_sum, double disc_reward) {
  return (1.0 - kappa) * r_env_sum + kappa * disc_reward;
}

// Posterior/prior divergence penalty gated by the support weight.
inline double gated_divergence_penalty(double kl_post, double kl_prior, double gate, double alpha,
                                       double alpha_q) {
  return alpha_q * kl_post * gate + alpha * kl_prior * (1.0 - gate);
}

}  // namespace skild
