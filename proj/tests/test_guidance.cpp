#include <catch2/catch.hpp>

#include "test_util.hpp"

#include "skild/guidance.hpp"

using namespace skild;
using namespace skild::nn;

namespace {

GuidanceConfig tiny_gcfg() {
  GuidanceConfig cfg;
  cfg.posterior_hidden = {6, 6};
  cfg.disc_hidden = {8, 8};
  cfg.batch_size = 16;
  cfg.posterior_steps = 0;
  cfg.disc_steps = 0;
  return cfg;
}

SkillModelConfig tiny_scfg() {
  SkillModelConfig cfg;
  cfg.H = 4;
  cfg.z_dim = 2;
  cfg.lstm_hidden = 5;
  cfg.decoder_hidden = {6};
  cfg.prior_hidden = {6, 6};
  return cfg;
}

Dataset const_dataset(const std::vector<float>& state, int n_traj, int T) {
  Dataset ds;
  ds.state_dim = static_cast<int>(state.size());
  ds.action_dim = 2;
  for (int i = 0; i < n_traj; ++i) {
    Trajectory t;
    for (int k = 0; k <= T; ++k) t.states.push_back(state);
    for (int k = 0; k < T; ++k) t.actions.push_back({0.1f, -0.1f});
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

Dataset noisy_dataset(std::vector<float> center, int n_traj, int T, uint64_t seed) {
  Dataset ds;
  ds.state_dim = static_cast<int>(center.size());
  ds.action_dim = 2;
  Rng rng(seed);
  for (int i = 0; i < n_traj; ++i) {
    Trajectory t;
    for (int k = 0; k <= T; ++k) {
      std::vector<float> s = center;
      for (auto& v : s) v += 0.05f * static_cast<float>(rng.normal());
      t.states.push_back(s);
    }
    for (int k = 0; k < T; ++k)
      t.actions.push_back({static_cast<float>(rng.uniform(-1, 1)),
                           static_cast<float>(rng.uniform(-1, 1))});
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

}  // namespace

TEST_CASE("train_posterior") {
  Rng rng(1);
  SkillModelConfig scfg = tiny_scfg();
  SkillModel skills = SkillModel::init(scfg, 3, 2, rng);

  SECTION("overfits a single demo window to small KL") {
    GuidanceConfig gcfg = tiny_gcfg();
    gcfg.posterior_steps = 800;
    gcfg.batch_size = 8;
    gcfg.init_post_from_prior = false;
    Guidance g = Guidance::init(gcfg, 3, scfg.z_dim, rng);
    const Dataset demos = noisy_dataset({0.3f, 0.4f, 0.5f}, 1, scfg.H - 1, 3);
    const auto log = train_posterior(g, skills, demos, 5);
    REQUIRE(log.back() <= 1e-2);
  }

  SECTION("posterior matching the encoder contributes zero loss") {
    // With zeroed encoder and posterior nets both emit N(0,I).
    GuidanceConfig gcfg = tiny_gcfg();
    gcfg.init_post_from_prior = false;
    Guidance g = Guidance::init(gcfg, 3, scfg.z_dim, rng);
    for (auto& [name, e] : skills.ps.entries)
      if (name.rfind("encoder", 0) == 0) e.value.fill(0.0);
    for (auto& [name, e] : g.posterior_ps.entries) e.value.fill(0.0);
    const Dataset demos = noisy_dataset({0.3f, 0.4f, 0.5f}, 1, scfg.H - 1, 3);
    const SkillWindow w = extract_window(demos.trajectories[0], 0, scfg.H);
    const DiagGaussian q = skills.encoder_forward(w);
    std::vector<double> s0(w.states[0].begin(), w.states[0].end());
    REQUIRE(kl_diag_gaussians(q, g.posterior_forward(s0)) == 0.0);
  }

  SECTION("encoder and decoder stay frozen (hash + exact zero gradients)") {
    GuidanceConfig gcfg = tiny_gcfg();
    gcfg.posterior_steps = 25;
    Guidance g = Guidance::init(gcfg, 3, scfg.z_dim, rng);
    const Dataset demos = noisy_dataset({0.3f, 0.4f, 0.5f}, 2, 8, 7);
    skills.ps.zero_grads();
    const uint64_t before = skills.ps.value_hash();
    train_posterior(g, skills, demos, 9);
    REQUIRE(skills.ps.value_hash() == before);
    for (const auto& [name, e] : skills.ps.entries)
      for (double gv : e.grad.a) REQUIRE(gv == 0.0);
  }
}

TEST_CASE("train_discriminator") {
  Rng rng(2);

  SECTION("separable single-state classes are driven to the clamp edges") {
    GuidanceConfig gcfg = tiny_gcfg();
    gcfg.disc_steps = 1200;
    gcfg.batch_size = 16;
    gcfg.batch_norm = false;
    Guidance g = Guidance::init(gcfg, 3, 2, rng);
    const Dataset demos = const_dataset({0.9f, 0.9f, 0.9f}, 1, 4);
    const Dataset other = const_dataset({0.1f, 0.1f, 0.1f}, 1, 4);
    train_discriminator(g, other, demos, 11);
    REQUIRE(g.disc_forward({0.9, 0.9, 0.9}) > 0.99);
    REQUIRE(g.disc_forward({0.1, 0.1, 0.1}) < 0.01);
  }

  SECTION("identical datasets converge toward D = 0.5") {
    GuidanceConfig gcfg = tiny_gcfg();
    gcfg.disc_steps = 1500;
    gcfg.batch_norm = false;
    Guidance g = Guidance::init(gcfg, 3, 2, rng);
    const Dataset ds = noisy_dataset({0.5f, 0.5f, 0.5f}, 4, 10, 13);
    train_discriminator(g, ds, ds, 17);
    const double d = g.disc_forward({0.5, 0.5, 0.5});
    REQUIRE(d == Approx(0.5).margin(0.1));
  }
}

TEST_CASE("discriminator_reward closed forms") {
  Rng rng(3);
  GuidanceConfig gcfg = tiny_gcfg();
  Guidance g = Guidance::init(gcfg, 3, 2, rng);

  SECTION("D = 0.5 gives zero reward") {
    REQUIRE(discriminator_reward_from_d(0.5) == Approx(0.0).margin(1e-12));
  }
  SECTION("D = 0.9 gives ln 9") {
    REQUIRE(discriminator_reward_from_d(0.9) == Approx(std::log(9.0)).epsilon(1e-9));
  }
  SECTION("clamp keeps the reward finite at the ceiling") {
    const double r = discriminator_reward_from_d(1.0);
    REQUIRE(std::isfinite(r));
    REQUIRE(r == Approx(std::log((1.0 - 1e-6) / 1e-6)).epsilon(1e-6));
    REQUIRE(r == Approx(13.8155).margin(1e-3));
  }
  SECTION("strictly increasing in D") {
    double prev = discriminator_reward_from_d(0.0);
    for (double d = 0.05; d <= 1.0; d += 0.05) {
      const double r = discriminator_reward_from_d(d);
      REQUIRE(r > prev);
      prev = r;
    }
  }
}

TEST_CASE("support_weight") {
  Rng rng(4);
  GuidanceConfig gcfg = tiny_gcfg();
  gcfg.batch_norm = false;
  Guidance g = Guidance::init(gcfg, 3, 2, rng);

  SECTION("zero-initialized head gives exactly 0.5") {
    g.disc_ps.at("disc.head.W").value.fill(0.0);
    g.disc_ps.at("disc.head.b").value.fill(0.0);
    REQUIRE(g.support_weight({0.2, 0.8, 0.5}) == 0.5);
  }
  SECTION("gate is convex by construction") {
    const double w = g.support_weight({0.3, 0.3, 0.3});
    REQUIRE(w >= 0.0);
    REQUIRE(w <= 1.0);
    REQUIRE(w + (1.0 - w) == 1.0);
  }
}

TEST_CASE("finetune_discriminator") {
  Rng rng(5);
  GuidanceConfig gcfg = tiny_gcfg();
  gcfg.disc_steps = 300;
  gcfg.batch_norm = false;
  Guidance g = Guidance::init(gcfg, 3, 2, rng);
  const Dataset demos = const_dataset({0.8f, 0.8f, 0.8f}, 1, 6);
  const Dataset other = noisy_dataset({0.3f, 0.3f, 0.3f}, 3, 10, 19);
  train_discriminator(g, other, demos, 23);
  const StatePool demo_pool = StatePool::from(demos);

  SECTION("zero steps leave parameters unchanged") {
    const uint64_t before = g.disc_ps.value_hash();
    Rng fr(1);
    finetune_discriminator(g, {{0.2, 0.2, 0.2}}, demo_pool, 0, fr);
    REQUIRE(g.disc_ps.value_hash() == before);
  }

  SECTION("finetuning sharpens the boundary and keeps positives classified") {
    // Probe states between the two clusters.
    std::vector<std::vector<double>> probes;
    for (double v = 0.0; v <= 1.0; v += 0.05) probes.push_back({v, v, v});
    double before_sharp = 0.0, before_pos = g.disc_forward({0.8, 0.8, 0.8});
    for (const auto& p : probes) before_sharp += std::abs(g.disc_forward(p) - 0.5);
    std::vector<std::vector<double>> replay;
    Rng rr(7);
    for (int i = 0; i < 64; ++i)
      replay.push_back({rr.uniform(0.1, 0.5), rr.uniform(0.1, 0.5), rr.uniform(0.1, 0.5)});
    Rng fr(2);
    finetune_discriminator(g, replay, demo_pool, 400, fr);
    double after_sharp = 0.0;
    for (const auto& p : probes) after_sharp += std::abs(g.disc_forward(p) - 0.5);
    REQUIRE(after_sharp >= before_sharp);
    REQUIRE(g.disc_forward({0.8, 0.8, 0.8}) >= before_pos - 0.05);
  }

  SECTION("empty replay raises") {
    Rng fr(3);
    REQUIRE_THROWS_AS(finetune_discriminator(g, {}, demo_pool, 10, fr), Error);
  }
}

TEST_CASE("discriminator AUC on separable clusters") {
  Rng rng(6);
  GuidanceConfig gcfg = tiny_gcfg();
  gcfg.disc_steps = 600;
  gcfg.batch_norm = false;
  Guidance g = Guidance::init(gcfg, 3, 2, rng);
  const Dataset demos = noisy_dataset({0.85f, 0.85f, 0.85f}, 3, 12, 29);
  const Dataset other = noisy_dataset({0.25f, 0.25f, 0.25f}, 3, 12, 31);
  train_discriminator(g, other, demos, 37);
  std::vector<std::vector<double>> pos, neg;
  Rng hrng(8);
  for (int i = 0; i < 100; ++i) {
    pos.push_back({0.85 + 0.05 * hrng.normal(), 0.85 + 0.05 * hrng.normal(),
                   0.85 + 0.05 * hrng.normal()});
    neg.push_back({0.25 + 0.05 * hrng.normal(), 0.25 + 0.05 * hrng.normal(),
                   0.25 + 0.05 * hrng.normal()});
  }
  REQUIRE(discriminator_auc(g, pos, neg) >= 0.99);
  // Mean ordering property.
  double mp = 0.0, mn = 0.0;
  for (const auto& s : pos) mp += g.disc_forward(s);
  for (const auto& s : neg) mn += g.disc_forward(s);
  REQUIRE(mp / pos.size() > mn / neg.size());
}

TEST_CASE("posterior training gradient wrt encoder is exactly zero (tape-level probe)") {
  Rng rng(7);
  SkillModelConfig scfg = tiny_scfg();
  SkillModel skills = SkillModel::init(scfg, 3, 2, rng);
  GuidanceConfig gcfg = tiny_gcfg();
  Guidance g = Guidance::init(gcfg, 3, scfg.z_dim, rng);
  const Dataset demos = noisy_dataset({0.4f, 0.4f, 0.4f}, 2, 8, 41);
  Rng wrng(9);
  std::vector<SkillWindow> ws;
  WindowSampler sampler(demos, scfg.H);
  for (int i = 0; i < 4; ++i) ws.push_back(sampler.sample(wrng));
  const WindowBatch b = make_window_batch(ws, scfg.H, 3, 2);

  skills.ps.zero_grads();
  Tape t;
  // Bind encoder params with gradient collection ON: the stop-gradient alone
  // must keep them at zero.
  const GaussNodes q = skills.encode(t, b, {.apply_grads = true});
  const GaussNodes target{t.stopgrad(q.mean), t.stopgrad(q.log_std)};
  const GaussNodes post = mlp_gaussian(t, g.posterior_ps, "posterior", g.posterior_spec(),
                                       t.leaf(b.S[0]), {.training = true, .update_bn = false});
  const int loss = t.mean_all(kl_rows(t, target, post));
  t.backward(loss);
  for (const auto& [name, e] : skills.ps.entries)
    for (double gv : e.grad.a) REQUIRE(gv == 0.0);
}

TEST_CASE("guidance checkpoint round-trip") {
  Rng rng(8);
  GuidanceConfig gcfg = tiny_gcfg();
  Guidance g = Guidance::init(gcfg, 3, 2, rng);
  save_guidance(g, "guidance_rt.sknn");
  Guidance g2 = load_guidance("guidance_rt.sknn");
  REQUIRE(g2.z_dim == 2);
  REQUIRE(g2.obs_dim == 3);
  REQUIRE(g2.disc_forward({0.5, 0.5, 0.5}) ==
          Approx(g.disc_forward({0.5, 0.5, 0.5})).margin(1e-6));
  std::remove("guidance_rt.sknn");
}
