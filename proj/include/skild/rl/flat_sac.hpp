#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "skild/dataset.hpp"
#include "skild/harness/metrics.hpp"
#include "skild/maze.hpp"
#include "skild/nn/net.hpp"
#include "skild/nn/optim.hpp"
#include "skild/rl/config.hpp"
#include "skild/rl/replay.hpp"
#include "skild/rl/skill_sac.hpp"

namespace skild {

// Standard soft actor-critic over primitive actions, plus the two
// demonstration-guided variants that operate on the flat action space:
// BC-initialized/regularized SAC and demonstration replay.
class FlatSacTrainer {
 public:
  FlatSacTrainer(MazeSpec maze, RLConfig cfg, const Dataset* demos = nullptr)
      : maze_(std::move(maze)),
        cfg_(std::move(cfg)),
        buffer_(cfg_.replay_capacity),
        demo_buffer_(cfg_.replay_capacity),
        rng_rollout_(derive_rng(cfg_.seed, "rl.rollout")),
        rng_update_(derive_rng(cfg_.seed, "rl.update")) {
    cfg_.validate();
    const ModeTraits traits = mode_traits(cfg_.mode);
    if (!traits.flat) raise(ErrorKind::InvalidConfig, "skill mode on flat trainer");
    if (traits.needs_demos && !demos)
      raise(ErrorKind::MissingCheckpoint, "mode requires the demonstration dataset");

    Rng rng_init = derive_rng(cfg_.seed, "rl.init");
    policy_spec_ = {.in_dim = kObsDim,
                    .hidden = cfg_.flat_policy_hidden,
                    .out_dim = kActDim,
                    .head = nn::Head::Gaussian};
    critic_spec_ = {.in_dim = kObsDim + kActDim,
                    .hidden = cfg_.critic_hidden,
                    .out_dim = 1,
                    .head = nn::Head::Scalar};
    nn::init_mlp(policy_, "policy", policy_spec_, rng_init);
    nn::init_mlp(q1_, "q1", critic_spec_, rng_init);
    nn::init_mlp(q2_, "q2", critic_spec_, rng_init);
    nn::init_mlp(q1t_, "q1", critic_spec_, rng_init);
    nn::init_mlp(q2t_, "q2", critic_spec_, rng_init);
    for (auto& [name, e] : q1t_.entries) e.value = q1_.at(name).value;
    for (auto& [name, e] : q2t_.entries) e.value = q2_.at(name).value;
    alpha_.add("alpha", Mat(1, 1, cfg_.alpha_init));

    if (cfg_.mode == RLMode::BcRl && demos) {
      bc_pretrain(*demos);
      nn::init_mlp(bc_ref_, "policy", policy_spec_, rng_init);
      for (auto& [name, e] : bc_ref_.entries) e.value = policy_.at(name).value;
    }
    if (cfg_.mode == RLMode::DemoReplay && demos) seed_demo_buffer(*demos);

    env_state_ = reset(maze_, rng_rollout_);
  }

  ParamStore policy_, q1_, q2_, q1t_, q2t_, alpha_, bc_ref_;

  double alpha() const { return alpha_.at("alpha").value(0, 0); }
  int env_steps() const { return env_steps_; }
  ReplayBuffer<FlatTransition>& buffer() { return buffer_; }
  ReplayBuffer<FlatTransition>& demo_buffer() { return demo_buffer_; }

  // L2 behavioral cloning of demo actions onto the policy mean.
  std::vector<double> bc_pretrain(const Dataset& demos) {
    Rng rng = derive_rng(cfg_.seed, "rl.bc");
    std::vector<std::pair<const Trajectory*, int>> pairs;
    for (const Trajectory& t : demos.trajectories)
      for (int i = 0; i < t.length(); ++i) pairs.emplace_back(&t, i);
    if (pairs.empty()) raise(ErrorKind::EmptyInput, "demos have no transitions");
    const nn::OptimConfig opt{nn::OptimKind::Adam, 1e-3, 0.9, 0.999, 1e-8};
    std::vector<double> log;
    for (int step_i = 0; step_i < cfg_.bc_pretrain_steps; ++step_i)
      log.push_back(bc_step(pairs, rng, opt));
    return log;
  }

  double bc_step(const std::vector<std::pair<const Trajectory*, int>>& pairs, Rng& rng,
                 const nn::OptimConfig& opt) {
    const int B = std::min<int>(cfg_.batch, static_cast<int>(pairs.size()));
    Mat S(B, kObsDim), A(B, kActDim);
    for (int i = 0; i < B; ++i) {
      const auto& [traj, idx] = pairs[rng.uniform_int(pairs.size())];
      for (int j = 0; j < kObsDim; ++j) S(i, j) = traj->states[idx][j];
      for (int j = 0; j < kActDim; ++j) A(i, j) = traj->actions[idx][j];
    }
    Tape t;
    const nn::GaussNodes pi = nn::mlp_gaussian(t, policy_, "policy", policy_spec_, t.leaf(S), {});
    const int mean_exec = nn::squash_rows(t, pi.mean, 1.0);
    const int loss = t.mean_all(t.square(t.sub(mean_exec, t.leaf(A))));
    t.backward(loss);
    const double lv = t.val(loss)(0, 0);
    nn::optimizer_step(opt, policy_);
    return lv;
  }

  double bc_action_mse(const Dataset& demos) {
    double se = 0.0;
    size_t n = 0;
    for (const Trajectory& t : demos.trajectories) {
      for (int i = 0; i < t.length(); ++i) {
        std::vector<double> obs(t.states[i].begin(), t.states[i].end());
        const DiagGaussian pi = nn::eval_gaussian(policy_, "policy", policy_spec_, obs);
        for (int j = 0; j < kActDim; ++j) {
          const double d = std::tanh(pi.mean[j]) - t.actions[i][j];
          se += d * d;
          ++n;
        }
      }
    }
    return se / static_cast<double>(n);
  }

  // Demo transitions with the heuristic sparse reward: 100 on the final
  // transition of each trajectory, zero elsewhere.
  void seed_demo_buffer(const Dataset& demos) {
    for (const Trajectory& t : demos.trajectories) {
      for (int i = 0; i < t.length(); ++i) {
        FlatTransition f;
        f.s.assign(t.states[i].begin(), t.states[i].end());
        f.a.assign(t.actions[i].begin(), t.actions[i].end());
        f.s_next.assign(t.states[i + 1].begin(), t.states[i + 1].end());
        f.done = i + 1 == t.length();
        f.r = f.done ? 100.0 : 0.0;
        demo_buffer_.push(f);
      }
    }
  }

  void env_step(bool random_action) {
    if (env_done_) {
      env_state_ = reset(maze_, rng_rollout_);
      env_done_ = false;
    }
    const std::vector<double> obs = observe(maze_, env_state_);
    Vec2 a;
    if (random_action) {
      a = {rng_rollout_.uniform(-1.0, 1.0), rng_rollout_.uniform(-1.0, 1.0)};
    } else {
      const DiagGaussian pi = nn::eval_gaussian(policy_, "policy", policy_spec_, obs);
      const std::vector<double> raw = pi.sample(rng_rollout_);
      a = {std::tanh(raw[0]), std::tanh(raw[1])};
    }
    const StepResult r = step(maze_, env_state_, {a});
    FlatTransition f;
    f.s = obs;
    f.a = {a.x, a.y};
    f.r = r.reward;
    f.s_next = observe(maze_, r.state);
    f.done = r.done;
    buffer_.push(f);
    env_state_ = r.state;
    env_done_ = r.done;
    env_steps_ += 1;
  }

  // Half demo, half agent batch in demo-replay mode (all demo while the agent
  // buffer is still empty); plain uniform batch otherwise.
  std::vector<const FlatTransition*> sample_batch() {
    std::vector<const FlatTransition*> out;
    out.reserve(cfg_.batch);
    if (cfg_.mode == RLMode::DemoReplay) {
      const int half = cfg_.batch / 2;
      const int from_agent = buffer_.empty() ? 0 : half;
      for (int i = 0; i < cfg_.batch - from_agent; ++i)
        out.push_back(&demo_buffer_.sample(rng_update_));
      for (int i = 0; i < from_agent; ++i) out.push_back(&buffer_.sample(rng_update_));
    } else {
      for (int i = 0; i < cfg_.batch; ++i) out.push_back(&buffer_.sample(rng_update_));
    }
    return out;
  }

  void update_step() {
    const std::vector<const FlatTransition*> batch = sample_batch();
    const int B = static_cast<int>(batch.size());
    Mat S(B, kObsDim), A(B, kActDim), S2(B, kObsDim);
    std::vector<double> r(B);
    std::vector<uint8_t> done(B);
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < kObsDim; ++j) {
        S(i, j) = batch[i]->s[j];
        S2(i, j) = batch[i]->s_next[j];
      }
      for (int j = 0; j < kActDim; ++j) A(i, j) = batch[i]->a[j];
      r[i] = batch[i]->r;
      done[i] = batch[i]->done ? 1 : 0;
    }
    const double a = alpha();

    // Targets: r + eta (1-done) [minQt(s', a') - alpha log pi(a'|s')].
    const nn::GaussBatch pi2 = nn::eval_gaussian_batch(policy_, "policy", policy_spec_, S2);
    const Mat eps2 = nn::normal_mat(B, kActDim, rng_update_);
    Mat sa2(B, kObsDim + kActDim);
    std::vector<double> logp2(B, 0.0);
    for (int i = 0; i < B; ++i) {
      double lp = -0.5 * nn::kLog2Pi * kActDim;
      for (int j = 0; j < kActDim; ++j) {
        const double zr = pi2.mean(i, j) + std::exp(pi2.log_std(i, j)) * eps2(i, j);
        lp += -pi2.log_std(i, j) - 0.5 * eps2(i, j) * eps2(i, j);
        lp -= 2.0 * (0.6931471805599453 - zr -
                     (zr < 0.0 ? std::log1p(std::exp(2.0 * zr)) - 2.0 * zr
                               : std::log1p(std::exp(-2.0 * zr))));
        sa2(i, kObsDim + j) = std::tanh(zr);
      }
      for (int j = 0; j < kObsDim; ++j) sa2(i, j) = S2(i, j);
      logp2[i] = lp;
    }
    const Mat qt1 = nn::eval_scalar_batch(q1t_, "q1", critic_spec_, sa2);
    const Mat qt2 = nn::eval_scalar_batch(q2t_, "q2", critic_spec_, sa2);
    Mat tgt(B, 1);
    for (int i = 0; i < B; ++i) {
      tgt(i, 0) = r[i];
      if (!done[i])
        tgt(i, 0) += cfg_.discount * (std::min(qt1(i, 0), qt2(i, 0)) - a * logp2[i]);
    }

    // Policy update.
    double logp_mean = 0.0;
    {
      Tape t;
      const int Sn = t.leaf(S);
      const nn::GaussNodes pi = nn::mlp_gaussian(t, policy_, "policy", policy_spec_, Sn, {});
      const Mat eps = nn::normal_mat(B, kActDim, rng_update_);
      const int zraw = nn::reparam_rows(t, pi, t.leaf(eps));
      const int act = nn::squash_rows(t, zraw, 1.0);
      const int sa = t.concat_cols(Sn, act);
      const int q1n = nn::mlp_scalar(t, q1_, "q1", critic_spec_, sa, {.apply_grads = false});
      const int q2n = nn::mlp_scalar(t, q2_, "q2", critic_spec_, sa, {.apply_grads = false});
      const int qmin = t.minimum(q1n, q2n);
      const int logp =
          t.sub(nn::log_prob_rows(t, pi, zraw), nn::squash_log_det_rows(t, zraw, 1.0));
      int loss = t.mean_all(t.sub(t.scale(logp, a), qmin));
      if (cfg_.mode == RLMode::BcRl && cfg_.bc_reg_weight > 0.0) {
        Tape tb;  // frozen reference mean
        const nn::GaussNodes ref =
            nn::mlp_gaussian(tb, bc_ref_, "policy", policy_spec_, tb.leaf(S), {});
        const int ref_mean = t.leaf(tb.val(ref.mean));
        const int reg = t.mean_all(t.square(t.sub(pi.mean, ref_mean)));
        loss = t.add(loss, t.scale(reg, cfg_.bc_reg_weight));
      }
      t.backward(loss);
      const double lv = t.val(loss)(0, 0);
      if (!std::isfinite(lv)) raise(ErrorKind::NonFiniteLoss, "flat policy loss non-finite");
      for (double v : t.val(logp).a) logp_mean += v;
      logp_mean /= B;
      const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
      nn::optimizer_step(opt, policy_);
    }

    // Critic update.
    {
      Mat sa(B, kObsDim + kActDim);
      for (int i = 0; i < B; ++i) {
        for (int j = 0; j < kObsDim; ++j) sa(i, j) = S(i, j);
        for (int j = 0; j < kActDim; ++j) sa(i, kObsDim + j) = A(i, j);
      }
      Tape t;
      const int x = t.leaf(sa);
      const int y = t.leaf(tgt);
      const int d1 = t.sub(nn::mlp_scalar(t, q1_, "q1", critic_spec_, x, {}), y);
      const int d2 = t.sub(nn::mlp_scalar(t, q2_, "q2", critic_spec_, x, {}), y);
      const int loss = t.scale(t.add(t.mean_all(t.square(d1)), t.mean_all(t.square(d2))), 0.5);
      t.backward(loss);
      if (!std::isfinite(t.val(loss)(0, 0)))
        raise(ErrorKind::NonFiniteLoss, "flat critic loss non-finite");
      const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
      nn::optimizer_step(opt, q1_);
      nn::optimizer_step(opt, q2_);
    }

    // Entropy temperature toward the target, projected to stay nonnegative.
    if (cfg_.auto_alpha) {
      alpha_.at("alpha").grad(0, 0) = -logp_mean - cfg_.flat_entropy_target;
      const nn::OptimConfig opt{nn::OptimKind::Adam, cfg_.lr, 0.9, 0.999, 1e-8};
      nn::optimizer_step(opt, alpha_);
      if (alpha_.at("alpha").value(0, 0) < 0.0) alpha_.at("alpha").value(0, 0) = 0.0;
    }

    for (auto& [name, e] : q1t_.entries) {
      const Mat& s = q1_.at(name).value;
      for (size_t k = 0; k < e.value.size(); ++k)
        e.value.a[k] = cfg_.tau * s.a[k] + (1.0 - cfg_.tau) * e.value.a[k];
    }
    for (auto& [name, e] : q2t_.entries) {
      const Mat& s = q2_.at(name).value;
      for (size_t k = 0; k < e.value.size(); ++k)
        e.value.a[k] = cfg_.tau * s.a[k] + (1.0 - cfg_.tau) * e.value.a[k];
    }
  }

  EvalStats evaluate(int episodes, uint64_t eval_index) {
    Rng rng = derive_rng(cfg_.seed, "rl.eval", eval_index);
    EvalStats st;
    for (int ep = 0; ep < episodes; ++ep) {
      EnvState s = reset(maze_, rng);
      bool done = false, success = false;
      double ret = 0.0;
      while (!done) {
        const std::vector<double> obs = observe(maze_, s);
        const DiagGaussian pi = nn::eval_gaussian(policy_, "policy", policy_spec_, obs);
        const StepResult r = step(maze_, s, {{std::tanh(pi.mean[0]), std::tanh(pi.mean[1])}});
        ret += r.reward;
        if (r.reward >= 100.0) success = true;
        s = r.state;
        done = r.done;
      }
      st.mean_return += ret;
      st.success_rate += success ? 1.0 : 0.0;
    }
    st.mean_return /= episodes;
    st.success_rate /= episodes;
    return st;
  }

  MetricsLog train() {
    MetricsLog log;
    log.columns = {"env_steps", "episode_return", "success_rate", "kl_prior",
                   "kl_post",   "alpha",          "alpha_q",      "r_disc_mean"};
    while (env_steps_ < cfg_.warmup_env_steps)
      env_step(/*random_action=*/cfg_.mode != RLMode::BcRl);
    int next_eval = ((env_steps_ / cfg_.eval_period) + 1) * cfg_.eval_period;
    uint64_t eval_index = 0;
    auto append_row = [&] {
      const EvalStats ev = evaluate(cfg_.eval_episodes, eval_index++);
      log.append({static_cast<double>(env_steps_), ev.mean_return, ev.success_rate, 0.0, 0.0,
                  alpha(), 0.0, 0.0});
    };
    append_row();
    while (env_steps_ < cfg_.env_step_budget) {
      env_step(false);
      if (env_steps_ % cfg_.flat_update_every == 0) update_step();
      if (env_steps_ >= next_eval) {
        append_row();
        while (next_eval <= env_steps_) next_eval += cfg_.eval_period;
      }
    }
    if (log.rows.empty() || env_steps_ > log.rows.back()[0]) append_row();
    return log;
  }

  nn::NetSpec policy_spec_;
  nn::NetSpec critic_spec_;

 private:
  MazeSpec maze_;
  RLConfig cfg_;
  ReplayBuffer<FlatTransition> buffer_;
  ReplayBuffer<FlatTransition> demo_buffer_;
  Rng rng_rollout_;
  Rng rng_update_;
  EnvState env_state_;
  bool env_done_ = false;
  int env_steps_ = 0;
};

}  // namespace skild
