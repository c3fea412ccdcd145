#pragma once

#include <string>
#include <vector>

#include "skild/dataset.hpp"
#include "skild/maze.hpp"
#include "skild/nn/net.hpp"
#include "skild/nn/optim.hpp"

namespace skild {

using nn::DiagGaussian;
using nn::FwdOpts;
using nn::GaussNodes;
using nn::ParamStore;
using nn::Tape;

struct SkillModelConfig {
  int H = 10;
  int z_dim = 10;
  double beta = 1e-3;
  bool state_conditioned_decoder = true;  // false: open-loop decoder on (phase, z)
  int lstm_hidden = 128;
  std::vector<int> decoder_hidden{128, 128, 128};
  std::vector<int> prior_hidden{128, 128, 128, 128, 128};
  bool batch_norm = true;
  double lr = 1e-3;
  int batch_size = 128;
  int train_steps = 8000;
  double val_fraction = 0.1;
  double log_std_min = nn::kLogStdMin;

  void validate() const {
    if (H < 2) raise(ErrorKind::InvalidConfig, "H must be >= 2");
    if (beta <= 0.0) raise(ErrorKind::InvalidConfig, "beta must be > 0");
    if (z_dim < 1) raise(ErrorKind::InvalidConfig, "z_dim must be >= 1");
  }
};

struct StepLoss {
  double total = 0.0;
  double recon = 0.0;
  double kl_embed = 0.0;
  double kl_prior = 0.0;
};

// Batched H-step windows as per-timestep matrices.
struct WindowBatch {
  std::vector<Mat> S;  // H mats, B x obs
  std::vector<Mat> A;  // H-1 mats, B x act
  int size = 0;
};

inline WindowBatch make_window_batch(const std::vector<SkillWindow>& ws, int H, int obs_dim,
                                     int act_dim) {
  if (ws.empty()) raise(ErrorKind::EmptyInput, "empty window batch");
  WindowBatch b;
  b.size = static_cast<int>(ws.size());
  b.S.assign(H, Mat(b.size, obs_dim));
  b.A.assign(H - 1, Mat(b.size, act_dim));
  for (int i = 0; i < b.size; ++i) {
    if (static_cast<int>(ws[i].states.size()) != H ||
        static_cast<int>(ws[i].actions.size()) != H - 1)
      raise(ErrorKind::ShapeMismatch, "window does not match H");
    for (int tt = 0; tt < H; ++tt)
      for (int j = 0; j < obs_dim; ++j) b.S[tt](i, j) = ws[i].states[tt][j];
    for (int tt = 0; tt < H - 1; ++tt)
      for (int j = 0; j < act_dim; ++j) b.A[tt](i, j) = ws[i].actions[tt][j];
  }
  return b;
}

// Skill embedding model: LSTM inference network q(z | s_{0:H-1}, a_{0:H-2}),
// low-level policy pi(a | s, z) (or open-loop pi(a | phase, z)), and the
// state-conditioned skill prior p(z | s_0). All three live in one store under
// the prefixes "encoder", "decoder", "prior".
struct SkillModel {
  SkillModelConfig cfg;
  int obs_dim = kObsDim;
  int act_dim = kActDim;
  ParamStore ps;

  nn::LstmSpec encoder_spec() const { return {obs_dim + act_dim, cfg.lstm_hidden}; }

  // Both decoder variants receive the normalized sub-step phase so they index
  // into the skill identically; the state input is the only difference
  // between closed- and open-loop.
  int decoder_in_dim() const {
    return cfg.state_conditioned_decoder ? obs_dim + 1 + cfg.z_dim : 1 + cfg.z_dim;
  }

  nn::NetSpec decoder_spec() const {
    return {.in_dim = decoder_in_dim(),
            .hidden = cfg.decoder_hidden,
            .out_dim = act_dim,
            .batch_norm = cfg.batch_norm,
            .head = nn::Head::Scalar};
  }

  nn::NetSpec prior_spec() const {
    return {.in_dim = obs_dim,
            .hidden = cfg.prior_hidden,
            .out_dim = cfg.z_dim,
            .batch_norm = cfg.batch_norm,
            .head = nn::Head::Gaussian,
            .log_std_min = cfg.log_std_min};
  }

  static SkillModel init(const SkillModelConfig& cfg, int obs_dim, int act_dim, Rng& rng) {
    cfg.validate();
    SkillModel m;
    m.cfg = cfg;
    m.obs_dim = obs_dim;
    m.act_dim = act_dim;
    nn::init_lstm(m.ps, "encoder", m.encoder_spec(), rng);
    nn::init_linear(m.ps, "encoder.head", cfg.lstm_hidden, 2 * cfg.z_dim, rng);
    nn::init_mlp(m.ps, "decoder", m.decoder_spec(), rng);
    nn::init_mlp(m.ps, "prior", m.prior_spec(), rng);
    return m;
  }

  // Encoder forward over a window batch: (s_t, a_t) pairs in time order, the
  // final step carries zero action padding.
  GaussNodes encode(Tape& t, const WindowBatch& b, const FwdOpts& o) const {
    ParamStore& mp = const_cast<ParamStore&>(ps);
    std::vector<int> xs;
    xs.reserve(cfg.H);
    for (int tt = 0; tt < cfg.H - 1; ++tt)
      xs.push_back(t.concat_cols(t.leaf(b.S[tt]), t.leaf(b.A[tt])));
    xs.push_back(t.concat_cols(t.leaf(b.S[cfg.H - 1]), t.leaf(Mat(b.size, act_dim))));
    const int h = nn::lstm_last_hidden(t, mp, "encoder", encoder_spec(), xs, o);
    const int raw = t.add_rowvec(t.matmul(h, t.param(mp, "encoder.head.W", o.apply_grads)),
                                 t.param(mp, "encoder.head.b", o.apply_grads));
    GaussNodes g;
    g.mean = t.slice_cols(raw, 0, cfg.z_dim);
    g.log_std = t.clamp_(t.slice_cols(raw, cfg.z_dim, 2 * cfg.z_dim), cfg.log_std_min,
                         nn::kLogStdMax);
    return g;
  }

  double open_loop_phase(int tt) const {
    return static_cast<double>(tt) / static_cast<double>(cfg.H - 1);
  }

  // Mean action of the low-level policy for sub-step tt.
  int decode_mean(Tape& t, int s_node, int z_node, int tt, const FwdOpts& o) const {
    ParamStore& mp = const_cast<ParamStore&>(ps);
    const int phase = t.leaf(Mat(t.rows(z_node), 1, open_loop_phase(tt)));
    int inp = t.concat_cols(phase, z_node);
    if (cfg.state_conditioned_decoder) inp = t.concat_cols(s_node, inp);
    return nn::mlp_scalar(t, mp, "decoder", decoder_spec(), inp, o);
  }

  struct LossNodes {
    int total = -1, recon = -1, kl_embed = -1, kl_prior = -1;
    GaussNodes q;
    int z = -1;
  };

  // Appendix-style pretraining loss:
  //   sum_t ||a_t - pi(s_t, z)||^2 + beta * KL(q || N(0,I)) + KL(sg(q) || p(s_0))
  // with z reparameterized from q and the prior term cut off from the encoder.
  // `frozen_prior_target` (optional, for finite-difference oracles) replaces
  // the stop-gradient target with fixed matrices.
  LossNodes skill_loss_nodes(Tape& t, const WindowBatch& b, const Mat& eps, const FwdOpts& o,
                             const Mat* frozen_target_mean = nullptr,
                             const Mat* frozen_target_log_std = nullptr) const {
    ParamStore& mp = const_cast<ParamStore&>(ps);
    LossNodes out;
    out.q = encode(t, b, o);
    out.z = nn::reparam_rows(t, out.q, t.leaf(eps));

    int recon_rows = -1;
    for (int tt = 0; tt < cfg.H - 1; ++tt) {
      const int mu = decode_mean(t, t.leaf(b.S[tt]), out.z, tt, o);
      const int term = t.row_sum(t.square(t.sub(t.leaf(b.A[tt]), mu)));
      recon_rows = tt == 0 ? term : t.add(recon_rows, term);
    }
    out.recon = t.mean_all(recon_rows);

    const GaussNodes unit{t.leaf(Mat(b.size, cfg.z_dim)), t.leaf(Mat(b.size, cfg.z_dim))};
    out.kl_embed = t.mean_all(nn::kl_rows(t, out.q, unit));

    GaussNodes target;
    if (frozen_target_mean) {
      target = {t.leaf(*frozen_target_mean), t.leaf(*frozen_target_log_std)};
    } else {
      target = {t.stopgrad(out.q.mean), t.stopgrad(out.q.log_std)};
    }
    const GaussNodes prior = nn::mlp_gaussian(t, mp, "prior", prior_spec(), t.leaf(b.S[0]), o);
    out.kl_prior = t.mean_all(nn::kl_rows(t, target, prior));

    out.total = t.add(t.add(out.recon, t.scale(out.kl_embed, cfg.beta)), out.kl_prior);
    return out;
  }

  StepLoss skill_loss(const WindowBatch& b, Rng& rng, bool training, bool backward) {
    Tape t;
    const Mat eps = nn::normal_mat(b.size, cfg.z_dim, rng);
    FwdOpts o{.training = training, .update_bn = training, .apply_grads = backward};
    const LossNodes n = skill_loss_nodes(t, b, eps, o);
    if (backward) t.backward(n.total);
    StepLoss s;
    s.total = t.val(n.total)(0, 0);
    s.recon = t.val(n.recon)(0, 0);
    s.kl_embed = t.val(n.kl_embed)(0, 0);
    s.kl_prior = t.val(n.kl_prior)(0, 0);
    return s;
  }

  DiagGaussian prior_forward(const std::vector<double>& obs) const {
    return nn::eval_gaussian(const_cast<ParamStore&>(ps), "prior", prior_spec(), obs);
  }

  DiagGaussian encoder_forward(const SkillWindow& w) const {
    Tape t;
    const WindowBatch b = make_window_batch({w}, cfg.H, obs_dim, act_dim);
    const GaussNodes g = encode(t, b, {});
    return {t.val(g.mean).a, t.val(g.log_std).a};
  }

  // Low-level policy action for one state. Stochastic mode samples the
  // unit-variance output distribution the decoder was trained under.
  PrimitiveAction decode_step(const std::vector<double>& obs, const std::vector<double>& z,
                              bool deterministic, Rng& rng, int sub_step = 0) const {
    Tape t;
    std::vector<double> inp;
    if (cfg.state_conditioned_decoder) inp = obs;
    inp.push_back(open_loop_phase(sub_step));
    inp.insert(inp.end(), z.begin(), z.end());
    const std::vector<double> mean =
        nn::eval_scalar(const_cast<ParamStore&>(ps), "decoder", decoder_spec(), inp);
    Vec2 a{mean[0], mean[1]};
    if (!deterministic) {
      a.x += rng.normal();
      a.y += rng.normal();
    }
    return {clamp_action(a)};
  }
};

struct SkillStep {
  std::vector<double> obs;
  Vec2 action;
  double reward = 0.0;
};

struct SkillExecution {
  std::vector<SkillStep> steps;
  EnvState final_state;
  bool done = false;
};

// Runs the frozen low-level policy for up to H environment steps, stopping
// early when the episode ends.
inline SkillExecution execute_skill(const MazeSpec& maze, const EnvState& start,
                                    const SkillModel& model, const std::vector<double>& z, int H,
                                    bool deterministic, Rng& rng) {
  SkillExecution out;
  out.final_state = start;
  for (int tt = 0; tt < H; ++tt) {
    const std::vector<double> obs = observe(maze, out.final_state);
    const PrimitiveAction a = model.decode_step(obs, z, deterministic, rng, tt);
    const StepResult r = step(maze, out.final_state, a);
    out.steps.push_back({obs, a.v_cmd, r.reward});
    out.final_state = r.state;
    if (r.done) {
      out.done = true;
      break;
    }
  }
  return out;
}

struct SkillTrainResult {
  std::vector<StepLoss> log;
};

// RAdam pretraining over minibatches of windows sampled from the train split.
inline SkillTrainResult train_skill_model(SkillModel& model, const Dataset& data, uint64_t seed) {
  const SkillModelConfig& cfg = model.cfg;
  Rng rng = derive_rng(seed, "skills.train");
  const WindowSampler sampler(data, cfg.H);
  const nn::OptimConfig opt{nn::OptimKind::RAdam, cfg.lr, 0.9, 0.999, 1e-8};

  SkillTrainResult res;
  res.log.reserve(cfg.train_steps);
  for (int step_i = 0; step_i < cfg.train_steps; ++step_i) {
    std::vector<SkillWindow> ws;
    ws.reserve(cfg.batch_size);
    for (int k = 0; k < cfg.batch_size; ++k) ws.push_back(sampler.sample(rng));
    const WindowBatch b = make_window_batch(ws, cfg.H, model.obs_dim, model.act_dim);
    const StepLoss l = model.skill_loss(b, rng, /*training=*/true, /*backward=*/true);
    if (!std::isfinite(l.total))
      raise(ErrorKind::NonFiniteLoss, "skill loss diverged at step " + std::to_string(step_i));
    nn::optimizer_step(opt, model.ps);
    res.log.push_back(l);
  }
  return res;
}

// Mean per-element action reconstruction error using the posterior mean
// embedding (no sampling), eval-mode normalization.
inline double reconstruction_mse(const SkillModel& model, const std::vector<SkillWindow>& ws) {
  if (ws.empty()) raise(ErrorKind::EmptyInput, "no windows");
  const WindowBatch b = make_window_batch(ws, model.cfg.H, model.obs_dim, model.act_dim);
  Tape t;
  const GaussNodes q = model.encode(t, b, {});
  double se = 0.0;
  size_t n = 0;
  for (int tt = 0; tt < model.cfg.H - 1; ++tt) {
    const int mu = model.decode_mean(t, t.leaf(b.S[tt]), q.mean, tt, {});
    const Mat& m = t.val(mu);
    for (int i = 0; i < b.size; ++i)
      for (int j = 0; j < model.act_dim; ++j) {
        const double d = m(i, j) - b.A[tt](i, j);
        se += d * d;
        ++n;
      }
  }
  return se / static_cast<double>(n);
}

// Splits trajectories into train/validation parts (validation gets at least
// one trajectory when the fraction is positive).
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction,
                                                 uint64_t seed) {
  Dataset train = ds, val = ds;
  train.trajectories.clear();
  val.trajectories.clear();
  size_t n_val = static_cast<size_t>(val_fraction * static_cast<double>(ds.trajectories.size()));
  if (val_fraction > 0.0 && n_val == 0) n_val = 1;
  std::vector<size_t> idx(ds.trajectories.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = derive_rng(seed, "dataset.split");
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
  for (size_t i = 0; i < idx.size(); ++i)
    (i < n_val ? val : train).trajectories.push_back(ds.trajectories[idx[i]]);
  if (train.trajectories.empty()) raise(ErrorKind::EmptyInput, "train split empty");
  return {std::move(train), std::move(val)};
}

// --- checkpointing ----------------------------------------------------------

inline void save_skill_model(const SkillModel& m, const std::string& path) {
  nn::RawCheckpoint meta;
  meta["meta.H"] = nn::meta_from_scalar(m.cfg.H);
  meta["meta.z_dim"] = nn::meta_from_scalar(m.cfg.z_dim);
  meta["meta.beta"] = nn::meta_from_scalar(m.cfg.beta);
  meta["meta.closed_loop"] = nn::meta_from_scalar(m.cfg.state_conditioned_decoder ? 1 : 0);
  meta["meta.lstm_hidden"] = nn::meta_from_scalar(m.cfg.lstm_hidden);
  meta["meta.decoder_hidden"] = nn::meta_from_ints(m.cfg.decoder_hidden);
  meta["meta.prior_hidden"] = nn::meta_from_ints(m.cfg.prior_hidden);
  meta["meta.batch_norm"] = nn::meta_from_scalar(m.cfg.batch_norm ? 1 : 0);
  meta["meta.log_std_min"] = nn::meta_from_scalar(m.cfg.log_std_min);
  meta["meta.obs_dim"] = nn::meta_from_scalar(m.obs_dim);
  meta["meta.act_dim"] = nn::meta_from_scalar(m.act_dim);
  nn::save_checkpoint({{"", &m.ps}}, path, meta);
}

inline SkillModel load_skill_model(const std::string& path) {
  const nn::RawCheckpoint raw = nn::load_checkpoint(path);
  SkillModelConfig cfg;
  cfg.H = static_cast<int>(nn::meta_scalar(raw, "meta.H"));
  cfg.z_dim = static_cast<int>(nn::meta_scalar(raw, "meta.z_dim"));
  cfg.beta = nn::meta_scalar(raw, "meta.beta");
  cfg.state_conditioned_decoder = nn::meta_scalar(raw, "meta.closed_loop") != 0.0;
  cfg.lstm_hidden = static_cast<int>(nn::meta_scalar(raw, "meta.lstm_hidden"));
  cfg.decoder_hidden = nn::meta_ints(raw, "meta.decoder_hidden");
  cfg.prior_hidden = nn::meta_ints(raw, "meta.prior_hidden");
  cfg.batch_norm = nn::meta_scalar(raw, "meta.batch_norm") != 0.0;
  cfg.log_std_min = nn::meta_scalar(raw, "meta.log_std_min");
  Rng rng(0);
  SkillModel m = SkillModel::init(cfg, static_cast<int>(nn::meta_scalar(raw, "meta.obs_dim")),
                                  static_cast<int>(nn::meta_scalar(raw, "meta.act_dim")), rng);
  nn::assign_from_checkpoint(m.ps, raw, "");
  return m;
}

}  // namespace skild
