#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "skild/guidance.hpp"
#include "skild/harness/metrics.hpp"
#include "skild/maze.hpp"
#include "skild/nn/net.hpp"
#include "skild/nn/optim.hpp"
#include "skild/rl/config.hpp"
#include "skild/rl/replay.hpp"
#include "skild/skill_model.hpp"

namespace skild {

constexpr double kZSquashScale = 2.0;

// High-level skill policy pi(z|s): Gaussian head, no normalization layers so
// that posterior/prior checkpoints fold into it exactly.
struct PolicyNet {
  nn::NetSpec spec;
  ParamStore ps;

  static PolicyNet init(int obs_dim, int z_dim, const std::vector<int>& hidden, Rng& rng,
                        double log_std_min = nn::kLogStdMin) {
    PolicyNet p;
    p.spec = {.in_dim = obs_dim,
              .hidden = hidden,
              .out_dim = z_dim,
              .head = nn::Head::Gaussian,
              .log_std_min = log_std_min};
    nn::init_mlp(p.ps, "policy", p.spec, rng);
    return p;
  }

  DiagGaussian forward(const std::vector<double>& obs) const {
    return nn::eval_gaussian(const_cast<ParamStore&>(ps), "policy", spec, obs);
  }

  nn::GaussBatch forward_batch(const Mat& X) const {
    return nn::eval_gaussian_batch(const_cast<ParamStore&>(ps), "policy", spec, X);
  }
};

inline void save_policy_net(const PolicyNet& p, const std::string& path) {
  nn::RawCheckpoint meta;
  meta["meta.obs_dim"] = nn::meta_from_scalar(p.spec.in_dim);
  meta["meta.z_dim"] = nn::meta_from_scalar(p.spec.out_dim);
  meta["meta.hidden"] = nn::meta_from_ints(p.spec.hidden);
  meta["meta.log_std_min"] = nn::meta_from_scalar(p.spec.log_std_min);
  nn::save_checkpoint({{"", &p.ps}}, path, meta);
}

inline PolicyNet load_policy_net(const std::string& path) {
  const nn::RawCheckpoint raw = nn::load_checkpoint(path);
  Rng rng(0);
  PolicyNet p = PolicyNet::init(static_cast<int>(nn::meta_scalar(raw, "meta.obs_dim")),
                                static_cast<int>(nn::meta_scalar(raw, "meta.z_dim")),
                                nn::meta_ints(raw, "meta.hidden"), rng,
                                nn::meta_scalar(raw, "meta.log_std_min"));
  nn::assign_from_checkpoint(p.ps, raw, "");
  return p;
}

struct EvalStats {
  double mean_return = 0.0;
  double success_rate = 0.0;
};

struct UpdateStats {
  double kl_prior = 0.0;
  double kl_post = 0.0;
  double kl_prior_gated = 0.0;  // mean KL(pi||prior)*(1-D)
  double kl_post_gated = 0.0;   // mean KL(pi||post)*D
  double r_disc = 0.0;
  double log_pi = 0.0;
  double critic_loss = 0.0;
  double policy_loss = 0.0;
};

// Soft actor-critic over skill space with discriminator-gated prior/posterior
// divergence regularization. One learner instance owns all parameters.
class SkillSpaceTrainer {
 public:
  SkillSpaceTrainer(MazeSpec maze, RLConfig cfg, SkillModel skills,
                    std::optional<Guidance> guidance, const Dataset* demos = nullptr)
      : maze_(std::move(maze)),
        cfg_(std::move(cfg)),
        traits_(mode_traits(cfg_.mode)),
        skills_(std::move(skills)),
        guidance_(std::move(guidance)),
        demos_(demos),
        buffer_(cfg_.replay_capacity),
        rng_rollout_(derive_rng(cfg_.seed, "rl.rollout")),
        rng_update_(derive_rng(cfg_.seed, "rl.update")),
        rng_finetune_(derive_rng(cfg_.seed, "rl.finetune")) {
    cfg_.validate();
    if (traits_.flat) raise(ErrorKind::InvalidConfig, "flat mode on skill-space trainer");
    if (traits_.needs_posterior && !guidance_)
      raise(ErrorKind::MissingCheckpoint, "mode requires the guidance checkpoint (posterior)");
    if (traits_.needs_discriminator && !guidance_)
      raise(ErrorKind::MissingCheckpoint, "mode requires the guidance checkpoint (discriminator)");
    if ((traits_.needs_demos || cfg_.disc_finetune) && !demos_)
      raise(ErrorKind::MissingCheckpoint, "mode requires the demonstration dataset");

    z_dim_ = skills_.cfg.z_dim;
    obs_dim_ = skills_.obs_dim;
    Rng rng_init = derive_rng(cfg_.seed, "rl.init");
    const bool from_post = traits_.init == ModeTraits::PolicyInit::Posterior;
    const std::vector<int> policy_hidden =
        from_post ? guidance_->cfg.posterior_hidden : skills_.cfg.prior_hidden;
    // The policy keeps the wide clamp: it may sharpen toward deterministic
    // exploitation. Only the distilled regularization targets are floored.
    policy_ = PolicyNet::init(obs_dim_, z_dim_, policy_hidden, rng_init);
    if (traits_.init == ModeTraits::PolicyInit::Posterior) {
      nn::fold_batchnorm_into(policy_.ps, "policy", guidance_->posterior_ps, "posterior",
                              guidance_->posterior_spec());
    } else if (traits_.init == ModeTraits::PolicyInit::Prior) {
      nn::fold_batchnorm_into(policy_.ps, "policy", skills_.ps, "prior", skills_.prior_spec());
    }

    critic_spec_ = {.in_dim = obs_dim_ + z_dim_,
                    .hidden = cfg_.critic_hidden,
                    .out_dim = 1,
                    .head = nn::Head::Scalar};
    nn::init_mlp(q1_, "q1", critic_spec_, rng_init);
    nn::init_mlp(q2_, "q2", critic_spec_, rng_init);
    nn::init_mlp(q1t_, "q1", critic_spec_, rng_init);
    nn::init_mlp(q2t_, "q2", critic_spec_, rng_init);
    copy_values(q1_, q1t_);
    copy_values(q2_, q2t_);

    alpha_.add("alpha", Mat(1, 1, cfg_.alpha_init));
    alpha_.add("alpha_q", Mat(1, 1, cfg_.alpha_q_init));

    if (demos_) demo_states_ = StatePool::from(*demos_);

    env_state_ = reset(maze_, rng_rollout_);
    env_done_ = false;
  }

  // --- public state for tests and rendering ---------------------------------

  PolicyNet policy_;
  ParamStore q1_, q2_, q1t_, q2t_, alpha_;

  double alpha() const { return alpha_.at("alpha").value(0, 0); }
  double alpha_q() const { return alpha_.at("alpha_q").value(0, 0); }
  int env_steps() const { return env_steps_; }
  ReplayBuffer<MacroTransition>& buffer() { return buffer_; }
  const Guidance* guidance() const { return guidance_ ? &*guidance_ : nullptr; }
  const SkillModel& skills() const { return skills_; }
  const RLConfig& config() const { return cfg_; }

  static void copy_values(const ParamStore& src, ParamStore& dst) {
    for (auto& [name, e] : dst.entries) e.value = src.at(name).value;
  }

  // --- rollout ---------------------------------------------------------------

  // One high-level decision: sample z, execute the frozen low-level policy,
  // store the macro transition. `from_prior` draws z from the skill prior
  // (warmup data collection).
  void macro_step(bool from_prior) {
    if (env_done_) {
      env_state_ = reset(maze_, rng_rollout_);
      env_done_ = false;
      episode_return_ = 0.0;
    }
    const std::vector<double> obs = observe(maze_, env_state_);
    const DiagGaussian head = from_prior ? skills_.prior_forward(obs) : policy_.forward(obs);
    const std::vector<double> z = nn::tanh_squash(head.sample(rng_rollout_), kZSquashScale);
    const SkillExecution ex =
        execute_skill(maze_, env_state_, skills_, z, cfg_.H, /*deterministic=*/true, rng_rollout_);

    MacroTransition m;
    m.s = obs;
    m.z = z;
    m.steps_executed = static_cast<int>(ex.steps.size());
    for (const SkillStep& st : ex.steps) m.r_env_sum += st.reward;
    if (cfg_.disc_bonus_avg_substeps && guidance_) {
      double acc = 0.0;
      for (const SkillStep& st : ex.steps) acc += guidance_->discriminator_reward(st.obs);
      m.r_disc_sub_mean = acc / static_cast<double>(ex.steps.size());
    }
    m.s_next = observe(maze_, ex.final_state);
    m.done = ex.done;
    buffer_.push(m);

    env_state_ = ex.final_state;
    env_done_ = ex.done;
    env_steps_ += m.steps_executed;
    episode_return_ += m.r_env_sum;
  }

  void warmup() {
    while (env_steps_ < cfg_.warmup_env_steps) macro_step(/*from_prior=*/true);
  }

  // --- updates ----------------------------------------------------------------

  struct Batch {
    Mat S, Z, S2;
    std::vector<double> r_env;
    std::vector<double> r_disc_sub;
    std::vector<uint8_t> done;
    int size = 0;
  };

  Batch sample_batch() {
    Batch b;
    b.size = cfg_.batch;
    b.S = Mat(b.size, obs_dim_);
    b.Z = Mat(b.size, z_dim_);
    b.S2 = Mat(b.size, obs_dim_);
    b.r_env.resize(b.size);
    b.r_disc_sub.resize(b.size);
    b.done.resize(b.size);
    for (int i = 0; i < b.size; ++i) {
      const MacroTransition& m = buffer_.sample(rng_update_);
      for (int j = 0; j < obs_dim_; ++j) {
        b.S(i, j) = m.s[j];
        b.S2(i, j) = m.s_next[j];
      }
      for (int j = 0; j < z_dim_; ++j) b.Z(i, j) = m.z[j];
      b.r_env[i] = m.r_env_sum;
      b.r_disc_sub[i] = m.r_disc_sub_mean;
      b.done[i] = m.done ? 1 : 0;
    }
    return b;
  }

  Mat gate_batch(const Mat& S) {
    Mat g(S.rows, 1);
    if (cfg_.gate_override) {
      g.fill(*cfg_.gate_override);
      return g;
    }
    switch (traits_.gate) {
      case ModeTraits::Gate::Zero: return g;
      case ModeTraits::Gate::One: g.fill(1.0); return g;
      case ModeTraits::Gate::Disc:
        return nn::eval_sigmoid_batch(guidance_->disc_ps, "disc", guidance_->disc_spec(), S);
    }
    return g;
  }

  // Closed-form KL between row-batched diagonal Gaussians, as plain values.
  static std::vector<double> kl_rows_plain(const nn::GaussBatch& p, const nn::GaussBatch& q) {
    std::vector<double> out(p.mean.rows, 0.0);
    for (int i = 0; i < p.mean.rows; ++i) {
      double kl = 0.0;
      for (int j = 0; j < p.mean.cols; ++j) {
        const double sp2 = std::exp(2.0 * p.log_std(i, j));
        const double sq2 = std::exp(2.0 * q.log_std(i, j));
        const double dm = p.mean(i, j) - q.mean(i, j);
        kl += q.log_std(i, j) - p.log_std(i, j) + (sp2 + dm * dm) / (2.0 * sq2) - 0.5;
      }
      out[i] = kl;
    }
    return out;
  }

  // Q-target per Algorithm lines 10-12: combined reward plus the discounted
  // bootstrap with gated divergence penalties at s', truncated on done.
  std::vector<double> compute_targets(const Batch& b, UpdateStats& stats,
                                      bool sample_next_mean = false) {
    const double kappa = cfg_.effective_kappa();
    const double a = alpha(), aq = alpha_q();

    const nn::GaussBatch pi2 = policy_.forward_batch(b.S2);
    Mat z2raw(b.size, z_dim_);
    const Mat eps2 = sample_next_mean ? Mat(b.size, z_dim_) : nn::normal_mat(b.size, z_dim_, rng_update_);
    for (int i = 0; i < b.size; ++i)
      for (int j = 0; j < z_dim_; ++j)
        z2raw(i, j) = pi2.mean(i, j) + std::exp(pi2.log_std(i, j)) * eps2(i, j);
    Mat sz2(b.size, obs_dim_ + z_dim_);
    for (int i = 0; i < b.size; ++i) {
      for (int j = 0; j < obs_dim_; ++j) sz2(i, j) = b.S2(i, j);
      for (int j = 0; j < z_dim_; ++j)
        sz2(i, obs_dim_ + j) = nn::tanh_squash(z2raw(i, j), kZSquashScale);
    }
    const Mat qt1 = nn::eval_scalar_batch(q1t_, "q1", critic_spec_, sz2);
    const Mat qt2 = nn::eval_scalar_batch(q2t_, "q2", critic_spec_, sz2);

    std::vector<double> pen2(b.size, 0.0);
    if (traits_.entropy_instead_of_divergence) {
      for (int i = 0; i < b.size; ++i) {
        double lp = -0.5 * nn::kLog2Pi * z_dim_;
        for (int j = 0; j < z_dim_; ++j) {
          lp += -pi2.log_std(i, j) - 0.5 * eps2(i, j) * eps2(i, j);
          const double u = z2raw(i, j) / kZSquashScale;
          lp -= 2.0 * (0.6931471805599453 - u -
                       (u < 0.0 ? std::log1p(std::exp(2.0 * u)) - 2.0 * u
                                : std::log1p(std::exp(-2.0 * u))));
        }
        pen2[i] = a * lp;
      }
    } else {
      const Mat gate2 = gate_batch(b.S2);
      const nn::GaussBatch prior2 = nn::eval_gaussian_batch(
          const_cast<ParamStore&>(skills_.ps), "prior", skills_.prior_spec(), b.S2);
      const std::vector<double> klprior2 = kl_rows_plain(pi2, prior2);
      std::vector<double> klpost2(b.size, 0.0);
      if (has_posterior()) {
        const nn::GaussBatch post2 = nn::eval_gaussian_batch(
            guidance_->posterior_ps, "posterior", guidance_->posterior_spec(), b.S2);
        klpost2 = kl_rows_plain(pi2, post2);
      }
      for (int i = 0; i < b.size; ++i) {
        pen2[i] = has_posterior()
                      ? gated_divergence_penalty(klpost2[i], klprior2[i], gate2(i, 0), a, aq)
                      : a * klprior2[i] * (1.0 - gate2(i, 0));
      }
    }

    std::vector<double> r_disc(b.size, 0.0);
    if (kappa > 0.0) {
      if (cfg_.disc_bonus_avg_substeps) {
        r_disc = b.r_disc_sub;
      } else {
        const Mat d = nn::eval_sigmoid_batch(guidance_->disc_ps, "disc", guidance_->disc_spec(), b.S);
        for (int i = 0; i < b.size; ++i) r_disc[i] = std::log(d(i, 0)) - std::log(1.0 - d(i, 0));
      }
    }
    double rd_sum = 0.0;
    std::vector<double> targets(b.size);
    for (int i = 0; i < b.size; ++i) {
      const double r_sigma = combined_reward(kappa, b.r_env[i], r_disc[i]);
      const double q_min = std::min(qt1(i, 0), qt2(i, 0));
      targets[i] = r_sigma;
      if (!b.done[i]) targets[i] += cfg_.discount * (q_min - pen2[i]);
      rd_sum += r_disc[i];
    }
    stats.r_disc = rd_sum / b.size;
    return targets;
  }

  void critic_update(const Batch& b, const std::vector<double>& targets, UpdateStats& stats) {
    Mat sz(b.size, obs_dim_ + z_dim_);
    Mat tgt(b.size, 1);
    for (int i = 0; i < b.size; ++i) {
      for (int j = 0; j < obs_dim_; ++j) sz(i, j) = b.S(i, j);
      for (int j = 0; j < z_dim_; ++j) sz(i, obs_dim_ + j) = b.Z(i, j);
      tgt(i, 0) = targets[i];
    }
    Tape t;
    const int x = t.leaf(sz);
    const int y = t.leaf(tgt);
    const int d1 = t.sub(nn::mlp_scalar(t, q1_, "q1", critic_spec_, x, {}), y);
    const int d2 = t.sub(nn::mlp_scalar(t, q2_, "q2", critic_spec_, x, {}), y);
    const int loss =
        t.scale(t.add(t.mean_all(t.square(d1)), t.mean_all(t.square(d2))), 0.5);
    t.backward(loss);
    stats.critic_loss = t.val(loss)(0, 0);
    guard_finite(stats.critic_loss, "critic", &b);
    const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
    nn::optimizer_step(opt, q1_);
    nn::optimizer_step(opt, q2_);
  }

  // Lines 13-14: ascend min-critic Q at reparameterized z minus the gated
  // divergences (or the entropy term in uniform-prior mode).
  void policy_update(const Batch& b, UpdateStats& stats, bool apply_step = true) {
    const double a = alpha(), aq = alpha_q();
    Tape t;
    const int S = t.leaf(b.S);
    const nn::GaussNodes pi =
        nn::mlp_gaussian(t, policy_.ps, "policy", policy_.spec, S, {});
    const Mat eps = nn::normal_mat(b.size, z_dim_, rng_update_);
    const int zraw = nn::reparam_rows(t, pi, t.leaf(eps));
    const int z = nn::squash_rows(t, zraw, kZSquashScale);
    const int sz = t.concat_cols(S, z);
    const int q1n = nn::mlp_scalar(t, q1_, "q1", critic_spec_, sz, {.apply_grads = false});
    const int q2n = nn::mlp_scalar(t, q2_, "q2", critic_spec_, sz, {.apply_grads = false});
    const int qmin = t.minimum(q1n, q2n);

    int pen = -1;
    if (traits_.entropy_instead_of_divergence) {
      const int logp = t.sub(nn::log_prob_rows(t, pi, zraw), nn::squash_log_det_rows(t, zraw, kZSquashScale));
      pen = t.scale(logp, a);
      double lp = 0.0;
      for (double v : t.val(logp).a) lp += v;
      stats.log_pi = lp / b.size;
      stats.kl_prior = 0.0;
      stats.kl_post = 0.0;
    } else {
      const nn::GaussBatch prior = nn::eval_gaussian_batch(
          const_cast<ParamStore&>(skills_.ps), "prior", skills_.prior_spec(), b.S);
      const int klprior = nn::kl_rows(t, pi, {t.leaf(prior.mean), t.leaf(prior.log_std)});
      const Mat gate = gate_batch(b.S);
      const int gate_n = t.leaf(gate);
      const int one_minus_gate = t.add_const(t.scale(gate_n, -1.0), 1.0);
      const int prior_gated = t.mul(klprior, one_minus_gate);
      const int prior_term = t.scale(prior_gated, a);
      stats.kl_prior_gated = mean_of(t.val(prior_gated));
      if (has_posterior()) {
        const nn::GaussBatch post = nn::eval_gaussian_batch(
            guidance_->posterior_ps, "posterior", guidance_->posterior_spec(), b.S);
        const int klpost = nn::kl_rows(t, pi, {t.leaf(post.mean), t.leaf(post.log_std)});
        const int post_gated = t.mul(klpost, gate_n);
        const int post_term = t.scale(post_gated, aq);
        pen = t.add(post_term, prior_term);
        stats.kl_post = mean_of(t.val(klpost));
        stats.kl_post_gated = mean_of(t.val(post_gated));
      } else {
        pen = prior_term;
        stats.kl_post = 0.0;
      }
      stats.kl_prior = mean_of(t.val(klprior));
    }

    const int loss = t.mean_all(t.sub(pen, qmin));
    t.backward(loss);
    stats.policy_loss = t.val(loss)(0, 0);
    guard_finite(stats.policy_loss, "policy", &b);
    if (apply_step) {
      const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
      nn::optimizer_step(opt, policy_.ps);
    }
  }

  // Lines 16-17: dual updates steering the batch-mean divergences toward
  // their targets; temperatures stay projected onto [0, inf). The divergences
  // enter ungated as written in the update rules; the gated variant weighs
  // them like the policy loss (config flag).
  void alpha_update(const UpdateStats& stats) {
    if (!cfg_.auto_alpha) return;
    const double kl_prior = cfg_.gated_alpha_kls ? stats.kl_prior_gated : stats.kl_prior;
    const double kl_post = cfg_.gated_alpha_kls ? stats.kl_post_gated : stats.kl_post;
    if (traits_.entropy_instead_of_divergence) {
      alpha_.at("alpha").grad(0, 0) = -stats.log_pi - cfg_.skill_entropy_target;
    } else {
      alpha_.at("alpha").grad(0, 0) = cfg_.delta - kl_prior;
      if (has_posterior()) alpha_.at("alpha_q").grad(0, 0) = cfg_.delta_q - kl_post;
    }
    const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
    nn::optimizer_step(opt, alpha_);
    auto& av = alpha_.at("alpha").value;
    auto& aqv = alpha_.at("alpha_q").value;
    if (av(0, 0) < 0.0) av(0, 0) = 0.0;
    if (aqv(0, 0) < 0.0) aqv(0, 0) = 0.0;
  }

  void polyak_update() {
    polyak(q1_, q1t_, cfg_.tau);
    polyak(q2_, q2t_, cfg_.tau);
  }

  static void polyak(const ParamStore& src, ParamStore& dst, double tau) {
    for (auto& [name, e] : dst.entries) {
      const Mat& s = src.at(name).value;
      for (size_t k = 0; k < e.value.size(); ++k)
        e.value.a[k] = tau * s.a[k] + (1.0 - tau) * e.value.a[k];
    }
  }

  UpdateStats update_step() {
    UpdateStats stats;
    const Batch b = sample_batch();
    const std::vector<double> targets = compute_targets(b, stats);
    policy_update(b, stats);
    critic_update(b, targets, stats);
    alpha_update(stats);
    polyak_update();
    last_stats_ = stats;
    return stats;
  }

  // --- evaluation and the training loop ---------------------------------------

  EvalStats evaluate(int episodes, uint64_t eval_index) {
    Rng rng = derive_rng(cfg_.seed, "rl.eval", eval_index);
    EvalStats st;
    for (int ep = 0; ep < episodes; ++ep) {
      EnvState s = reset(maze_, rng);
      bool done = false;
      double ret = 0.0;
      bool success = false;
      while (!done) {
        const std::vector<double> obs = observe(maze_, s);
        const DiagGaussian head = policy_.forward(obs);
        const std::vector<double> z = nn::tanh_squash(head.mean, kZSquashScale);
        const SkillExecution ex = execute_skill(maze_, s, skills_, z, cfg_.H, true, rng);
        for (const SkillStep& step_i : ex.steps) {
          ret += step_i.reward;
          if (step_i.reward >= 100.0) success = true;
        }
        s = ex.final_state;
        done = ex.done;
      }
      st.mean_return += ret;
      st.success_rate += success ? 1.0 : 0.0;
    }
    st.mean_return /= episodes;
    st.success_rate /= episodes;
    return st;
  }

  static std::vector<std::string> metric_columns() {
    return {"env_steps", "episode_return", "success_rate", "kl_prior",
            "kl_post",   "alpha",          "alpha_q",      "r_disc_mean"};
  }

  // Full Algorithm-1 loop: warmup rollouts, then macro steps interleaved with
  // gradient updates, periodic deterministic evaluation, and optional
  // discriminator finetuning.
  MetricsLog train(const std::function<void(int, SkillSpaceTrainer&)>& on_eval = {}) {
    if (traits_.entropy_instead_of_divergence && demos_) bc_pretrain();
    MetricsLog log;
    log.columns = metric_columns();
    warmup();
    int next_eval = ((env_steps_ / cfg_.eval_period) + 1) * cfg_.eval_period;
    int next_finetune = env_steps_ + cfg_.disc_finetune_period;
    uint64_t eval_index = 0;

    append_eval_row(log, eval_index++, on_eval);
    while (env_steps_ < cfg_.env_step_budget) {
      macro_step(/*from_prior=*/false);
      for (int u = 0; u < cfg_.updates_per_macro; ++u) update_step();
      if (cfg_.disc_finetune && guidance_ && env_steps_ >= next_finetune) {
        finetune_disc_from_replay();
        next_finetune += cfg_.disc_finetune_period;
      }
      if (env_steps_ >= next_eval) {
        append_eval_row(log, eval_index++, on_eval);
        while (next_eval <= env_steps_) next_eval += cfg_.eval_period;
      }
    }
    if (log.rows.empty() || env_steps_ > log.rows.back()[0])
      append_eval_row(log, eval_index++, on_eval);
    return log;
  }

  // Skill-space behavioral cloning: match encoder outputs on demo windows
  // (the skill_bc_rl first stage).
  std::vector<double> bc_pretrain() {
    if (!demos_) raise(ErrorKind::MissingCheckpoint, "bc_pretrain needs demos");
    Rng rng = derive_rng(cfg_.seed, "rl.skill_bc");
    const WindowSampler sampler(*demos_, skills_.cfg.H);
    const nn::OptimConfig opt{nn::OptimKind::Adam, 1e-3, 0.9, 0.999, 1e-8};
    std::vector<double> log;
    for (int step_i = 0; step_i < cfg_.skill_bc_steps; ++step_i) {
      std::vector<SkillWindow> ws;
      for (int k = 0; k < cfg_.batch; ++k) ws.push_back(sampler.sample(rng));
      const WindowBatch wb = make_window_batch(ws, skills_.cfg.H, obs_dim_, skills_.act_dim);
      Tape t;
      const nn::GaussNodes q = skills_.encode(t, wb, {.apply_grads = false});
      const nn::GaussNodes target{t.stopgrad(q.mean), t.stopgrad(q.log_std)};
      const nn::GaussNodes pi =
          nn::mlp_gaussian(t, policy_.ps, "policy", policy_.spec, t.leaf(wb.S[0]), {});
      const int loss = t.mean_all(nn::kl_rows(t, target, pi));
      t.backward(loss);
      const double lv = t.val(loss)(0, 0);
      guard_finite(lv, "skill_bc");
      nn::optimizer_step(opt, policy_.ps);
      log.push_back(lv);
    }
    return log;
  }

  double bc_kl_on_demos(int n_windows) {
    Rng rng = derive_rng(cfg_.seed, "rl.skill_bc_eval");
    const WindowSampler sampler(*demos_, skills_.cfg.H);
    double acc = 0.0;
    for (int k = 0; k < n_windows; ++k) {
      const SkillWindow w = sampler.sample(rng);
      const DiagGaussian enc = skills_.encoder_forward(w);
      std::vector<double> s0(w.states[0].begin(), w.states[0].end());
      acc += kl_diag_gaussians(enc, policy_.forward(s0));
    }
    return acc / n_windows;
  }

  const UpdateStats& last_stats() const { return last_stats_; }

 private:
  bool has_posterior() const { return guidance_ && traits_.needs_posterior; }

  static double mean_of(const Mat& m) {
    double s = 0.0;
    for (double v : m.a) s += v;
    return s / static_cast<double>(m.size());
  }

  void guard_finite(double v, const char* what, const Batch* b = nullptr) const {
    if (std::isfinite(v)) return;
    std::string msg = std::string(what) + " loss non-finite at env step " +
                      std::to_string(env_steps_) + " (alpha " + std::to_string(alpha()) +
                      ", alpha_q " + std::to_string(alpha_q()) + ")";
    if (b) {
      auto span = [](const Mat& m) {
        double lo = m.a.empty() ? 0.0 : m.a[0], hi = lo;
        for (double x : m.a) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
        return "[" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
      };
      msg += "; batch dump: S " + span(b->S) + " Z " + span(b->Z) + " S2 " + span(b->S2);
      double rlo = b->r_env[0], rhi = rlo;
      for (double r : b->r_env) {
        rlo = std::min(rlo, r);
        rhi = std::max(rhi, r);
      }
      msg += " r_env [" + std::to_string(rlo) + ", " + std::to_string(rhi) + "]";
    }
    raise(ErrorKind::NonFiniteLoss, msg);
  }

  void finetune_disc_from_replay() {
    const size_t n = std::min<size_t>(buffer_.size(), 2048);
    std::vector<std::vector<double>> states;
    states.reserve(n);
    for (size_t i = 0; i < n; ++i) states.push_back(buffer_.sample(rng_finetune_).s);
    finetune_discriminator(*guidance_, states, demo_states_, cfg_.disc_finetune_steps,
                           rng_finetune_);
  }

  void append_eval_row(MetricsLog& log, uint64_t eval_index,
                       const std::function<void(int, SkillSpaceTrainer&)>& on_eval) {
    const EvalStats ev = evaluate(cfg_.eval_episodes, eval_index);
    log.append({static_cast<double>(env_steps_), ev.mean_return, ev.success_rate,
                last_stats_.kl_prior, last_stats_.kl_post, alpha(), alpha_q(),
                last_stats_.r_disc});
    if (on_eval) on_eval(env_steps_, *this);
  }

  MazeSpec maze_;
  RLConfig cfg_;
  ModeTraits traits_;
  SkillModel skills_;
  std::optional<Guidance> guidance_;
  const Dataset* demos_;
  StatePool demo_states_;
  nn::NetSpec critic_spec_;
  ReplayBuffer<MacroTransition> buffer_;
  Rng rng_rollout_;
  Rng rng_update_;
  Rng rng_finetune_;
  EnvState env_state_;
  bool env_done_ = false;
  double episode_return_ = 0.0;
  int env_steps_ = 0;
  int obs_dim_ = 0, z_dim_ = 0;
  UpdateStats last_stats_;
};

}  // namespace skild
