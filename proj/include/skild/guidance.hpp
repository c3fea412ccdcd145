#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "skild/dataset.hpp"
#include "skild/nn/net.hpp"
#include "skild/nn/optim.hpp"
#include "skild/skill_model.hpp"

namespace skild {

struct GuidanceConfig {
  std::vector<int> posterior_hidden{128, 128, 128, 128, 128};
  std::vector<int> disc_hidden{32, 32, 32};
  bool batch_norm = true;
  double lr = 1e-3;
  int batch_size = 128;
  int posterior_steps = 3000;
  int disc_steps = 2000;
  bool init_post_from_prior = true;
  double label_smoothing = 0.0;
  double log_std_min = nn::kLogStdMin;
};

// Flattened (trajectory, state) view for uniform state sampling.
struct StatePool {
  std::vector<std::vector<double>> states;

  static StatePool from(const Dataset& ds) {
    StatePool p;
    p.states.reserve(ds.total_states());
    for (const Trajectory& t : ds.trajectories)
      for (const auto& s : t.states) p.states.emplace_back(s.begin(), s.end());
    if (p.states.empty()) raise(ErrorKind::EmptyInput, "dataset has no states");
    return p;
  }

  const std::vector<double>& sample(Rng& rng) const {
    return states[rng.uniform_int(states.size())];
  }
};

// Task-specific skill posterior q(z|s) distilled from demonstrations through
// the frozen skill inference network, plus the demonstration-support
// discriminator D(s) trained with binary cross-entropy.
struct Guidance {
  GuidanceConfig cfg;
  int obs_dim = kObsDim;
  int z_dim = 10;
  ParamStore posterior_ps;
  ParamStore disc_ps;

  nn::NetSpec posterior_spec() const {
    return {.in_dim = obs_dim,
            .hidden = cfg.posterior_hidden,
            .out_dim = z_dim,
            .batch_norm = cfg.batch_norm,
            .head = nn::Head::Gaussian,
            .log_std_min = cfg.log_std_min};
  }

  nn::NetSpec disc_spec() const {
    return {.in_dim = obs_dim,
            .hidden = cfg.disc_hidden,
            .out_dim = 1,
            .batch_norm = cfg.batch_norm,
            .head = nn::Head::SigmoidScalar};
  }

  static Guidance init(const GuidanceConfig& cfg, int obs_dim, int z_dim, Rng& rng) {
    Guidance g;
    g.cfg = cfg;
    g.obs_dim = obs_dim;
    g.z_dim = z_dim;
    nn::init_mlp(g.posterior_ps, "posterior", g.posterior_spec(), rng);
    nn::init_mlp(g.disc_ps, "disc", g.disc_spec(), rng);
    return g;
  }

  DiagGaussian posterior_forward(const std::vector<double>& obs) const {
    return nn::eval_gaussian(const_cast<ParamStore&>(posterior_ps), "posterior", posterior_spec(),
                             obs);
  }

  double disc_forward(const std::vector<double>& obs) const {
    return nn::eval_sigmoid(const_cast<ParamStore&>(disc_ps), "disc", disc_spec(), obs);
  }

  // log D(s) - log(1 - D(s)), finite by the [eps, 1-eps] output clamp.
  double discriminator_reward(const std::vector<double>& obs) const {
    const double d = disc_forward(obs);
    return std::log(d) - std::log(1.0 - d);
  }

  // Convex gate between posterior and prior regularization.
  double support_weight(const std::vector<double>& obs) const { return disc_forward(obs); }
};

inline double discriminator_reward_from_d(double d) {
  d = std::clamp(d, nn::kDiscClampEps, 1.0 - nn::kDiscClampEps);
  return std::log(d) - std::log(1.0 - d);
}

// Minimizes mean KL( sg(q_enc(window)) || q_post(s_0) ) over demo windows.
// The encoder is frozen: gradients are blocked by the stop-gradient and its
// store is never handed to the optimizer.
inline std::vector<double> train_posterior(Guidance& g, const SkillModel& skills,
                                           const Dataset& demos, uint64_t seed) {
  if (g.cfg.init_post_from_prior) {
    // Same architecture as the skill prior; warm-starting it speeds up
    // convergence on a handful of demos.
    for (auto& [name, e] : g.posterior_ps.entries) {
      const std::string src = "prior" + name.substr(std::string("posterior").size());
      if (skills.ps.has(src) && skills.ps.at(src).value.same_shape(e.value))
        e.value = skills.ps.at(src).value;
    }
  }
  Rng rng = derive_rng(seed, "guidance.posterior");
  const WindowSampler sampler(demos, skills.cfg.H);
  const nn::OptimConfig opt{nn::OptimKind::RAdam, g.cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<double> log;
  log.reserve(g.cfg.posterior_steps);
  for (int step_i = 0; step_i < g.cfg.posterior_steps; ++step_i) {
    std::vector<SkillWindow> ws;
    ws.reserve(g.cfg.batch_size);
    for (int k = 0; k < g.cfg.batch_size; ++k) ws.push_back(sampler.sample(rng));
    const WindowBatch b = make_window_batch(ws, skills.cfg.H, skills.obs_dim, skills.act_dim);
    Tape t;
    const GaussNodes q = skills.encode(t, b, FwdOpts{.apply_grads = false});
    const GaussNodes target{t.stopgrad(q.mean), t.stopgrad(q.log_std)};
    const GaussNodes post =
        nn::mlp_gaussian(t, g.posterior_ps, "posterior", g.posterior_spec(), t.leaf(b.S[0]),
                         FwdOpts{.training = true, .update_bn = true});
    const int loss = t.mean_all(nn::kl_rows(t, target, post));
    t.backward(loss);
    const double lv = t.val(loss)(0, 0);
    if (!std::isfinite(lv)) raise(ErrorKind::NonFiniteLoss, "posterior loss diverged");
    nn::optimizer_step(opt, g.posterior_ps);
    log.push_back(lv);
  }
  return log;
}

// One BCE step on a half-demo (label 1) half-task-agnostic (label 0) batch.
inline double discriminator_bce_step(Guidance& g, const StatePool& positives,
                                     const StatePool& negatives, Rng& rng,
                                     const nn::OptimConfig& opt) {
  const int half = g.cfg.batch_size / 2;
  Mat X(2 * half, g.obs_dim);
  Mat Y(2 * half, 1);
  for (int i = 0; i < half; ++i) {
    const auto& s = positives.sample(rng);
    for (int j = 0; j < g.obs_dim; ++j) X(i, j) = s[j];
    Y(i, 0) = 1.0 - g.cfg.label_smoothing;
  }
  for (int i = 0; i < half; ++i) {
    const auto& s = negatives.sample(rng);
    for (int j = 0; j < g.obs_dim; ++j) X(half + i, j) = s[j];
    Y(half + i, 0) = g.cfg.label_smoothing;
  }
  Tape t;
  const int d = nn::mlp_sigmoid(t, g.disc_ps, "disc", g.disc_spec(), t.leaf(X),
                                FwdOpts{.training = true, .update_bn = true});
  const int y = t.leaf(Y);
  const int one_minus_y = t.add_const(t.scale(y, -1.0), 1.0);
  const int one_minus_d = t.add_const(t.scale(d, -1.0), 1.0);
  const int ll = t.add(t.mul(y, t.log_(d)), t.mul(one_minus_y, t.log_(one_minus_d)));
  const int loss = t.scale(t.mean_all(ll), -1.0);
  t.backward(loss);
  const double lv = t.val(loss)(0, 0);
  if (!std::isfinite(lv)) raise(ErrorKind::NonFiniteLoss, "discriminator loss diverged");
  nn::optimizer_step(opt, g.disc_ps);
  return lv;
}

inline std::vector<double> train_discriminator(Guidance& g, const Dataset& task_agnostic,
                                               const Dataset& demos, uint64_t seed) {
  Rng rng = derive_rng(seed, "guidance.disc");
  const StatePool pos = StatePool::from(demos);
  const StatePool neg = StatePool::from(task_agnostic);
  const nn::OptimConfig opt{nn::OptimKind::RAdam, g.cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<double> log;
  log.reserve(g.cfg.disc_steps);
  for (int i = 0; i < g.cfg.disc_steps; ++i)
    log.push_back(discriminator_bce_step(g, pos, neg, rng, opt));
  return log;
}

// Continues BCE training with negatives drawn from downstream rollout states.
inline void finetune_discriminator(Guidance& g, const std::vector<std::vector<double>>& replay_states,
                                   const StatePool& demo_states, int steps, Rng& rng) {
  if (replay_states.empty()) raise(ErrorKind::EmptyInput, "no replay states");
  if (steps <= 0) return;
  StatePool neg;
  neg.states = replay_states;
  const nn::OptimConfig opt{nn::OptimKind::RAdam, g.cfg.lr, 0.9, 0.999, 1e-8};
  for (int i = 0; i < steps; ++i) discriminator_bce_step(g, demo_states, neg, rng, opt);
}

// Rank-statistic ROC AUC of D over held-out positive/negative states.
inline double discriminator_auc(const Guidance& g, const std::vector<std::vector<double>>& pos,
                                const std::vector<std::vector<double>>& neg) {
  if (pos.empty() || neg.empty()) raise(ErrorKind::EmptyInput, "auc needs both classes");
  std::vector<std::pair<double, int>> scored;
  scored.reserve(pos.size() + neg.size());
  for (const auto& s : pos) scored.emplace_back(g.disc_forward(s), 1);
  for (const auto& s : neg) scored.emplace_back(g.disc_forward(s), 0);
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Average rank of positives with tie handling.
  double rank_sum = 0.0;
  size_t i = 0;
  double rank = 1.0;
  while (i < scored.size()) {
    size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    const double avg_rank = rank + static_cast<double>(j - i - 1) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (scored[k].second == 1) rank_sum += avg_rank;
    rank += static_cast<double>(j - i);
    i = j;
  }
  const double np = static_cast<double>(pos.size());
  const double nn_ = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn_);
}

// --- checkpointing ----------------------------------------------------------

inline void save_guidance(const Guidance& g, const std::string& path) {
  nn::RawCheckpoint meta;
  meta["meta.obs_dim"] = nn::meta_from_scalar(g.obs_dim);
  meta["meta.z_dim"] = nn::meta_from_scalar(g.z_dim);
  meta["meta.posterior_hidden"] = nn::meta_from_ints(g.cfg.posterior_hidden);
  meta["meta.disc_hidden"] = nn::meta_from_ints(g.cfg.disc_hidden);
  meta["meta.batch_norm"] = nn::meta_from_scalar(g.cfg.batch_norm ? 1 : 0);
  meta["meta.log_std_min"] = nn::meta_from_scalar(g.cfg.log_std_min);
  nn::save_checkpoint({{"", &g.posterior_ps}, {"", &g.disc_ps}}, path, meta);
}

inline Guidance load_guidance(const std::string& path) {
  const nn::RawCheckpoint raw = nn::load_checkpoint(path);
  GuidanceConfig cfg;
  cfg.posterior_hidden = nn::meta_ints(raw, "meta.posterior_hidden");
  cfg.disc_hidden = nn::meta_ints(raw, "meta.disc_hidden");
  cfg.batch_norm = nn::meta_scalar(raw, "meta.batch_norm") != 0.0;
  cfg.log_std_min = nn::meta_scalar(raw, "meta.log_std_min");
  Rng rng(0);
  Guidance g = Guidance::init(cfg, static_cast<int>(nn::meta_scalar(raw, "meta.obs_dim")),
                              static_cast<int>(nn::meta_scalar(raw, "meta.z_dim")), rng);
  nn::assign_from_checkpoint(g.posterior_ps, raw, "");
  nn::assign_from_checkpoint(g.disc_ps, raw, "");
  return g;
}

}  // namespace skild
