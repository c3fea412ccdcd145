#include <catch2/catch.hpp>

#include "skild/nn/net.hpp"
#include "skild/nn/optim.hpp"

using namespace skild;
using namespace skild::nn;

TEST_CASE("forward_mlp basics") {
  Rng rng(1);
  SECTION("identity-initialized single linear layer") {
    ParamStore ps;
    NetSpec spec{.in_dim = 3, .hidden = {}, .out_dim = 3, .head = Head::Scalar};
    init_mlp(ps, "n", spec, rng);
    Mat& W = ps.at("n.head.W").value;
    W.fill(0.0);
    for (int i = 0; i < 3; ++i) W(i, i) = 1.0;
    const std::vector<double> x{0.3, -1.2, 2.5};
    const auto y = eval_scalar(ps, "n", spec, x);
    for (int i = 0; i < 3; ++i) REQUIRE(y[i] == Approx(x[i]));
  }
  SECTION("zero weights and bias give zero output") {
    ParamStore ps;
    NetSpec spec{.in_dim = 4, .hidden = {6}, .out_dim = 2, .head = Head::Scalar};
    init_mlp(ps, "n", spec, rng);
    for (auto& [name, e] : ps.entries) e.value.fill(0.0);
    const auto y = eval_scalar(ps, "n", spec, {1.0, 2.0, 3.0, 4.0});
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == 0.0);
  }
  SECTION("matches an independent matrix-arithmetic oracle") {
    ParamStore ps;
    NetSpec spec{.in_dim = 2, .hidden = {3}, .out_dim = 1, .head = Head::Scalar};
    init_mlp(ps, "n", spec, rng);
    const std::vector<double> x{0.7, -0.4};
    // Straight-line oracle: h = lrelu(x W0 + b0), y = h W1 + b1.
    const Mat& W0 = ps.at("n.l0.W").value;
    const Mat& b0 = ps.at("n.l0.b").value;
    const Mat& W1 = ps.at("n.head.W").value;
    const Mat& b1 = ps.at("n.head.b").value;
    double h[3];
    for (int j = 0; j < 3; ++j) {
      double v = b0(0, j);
      for (int i = 0; i < 2; ++i) v += x[i] * W0(i, j);
      h[j] = v >= 0.0 ? v : 0.2 * v;
    }
    double y = b1(0, 0);
    for (int j = 0; j < 3; ++j) y += h[j] * W1(j, 0);
    REQUIRE(eval_scalar(ps, "n", spec, x)[0] == Approx(y).epsilon(1e-9));
  }
  SECTION("dimension mismatch raises ShapeMismatch") {
    ParamStore ps;
    NetSpec spec{.in_dim = 4, .hidden = {6}, .out_dim = 2, .head = Head::Scalar};
    init_mlp(ps, "n", spec, rng);
    Tape t;
    REQUIRE_THROWS_AS(mlp_scalar(t, ps, "n", spec, t.leaf(Mat(1, 3)), {}), Error);
  }
}

TEST_CASE("rnn encoder contracts") {
  Rng rng(2);
  const LstmSpec spec{.in_dim = 6, .hidden = 12};
  ParamStore ps;
  init_lstm(ps, "enc", spec, rng);
  init_linear(ps, "enc.head", spec.hidden, 8, rng);

  SECTION("zeroed recurrent weights reduce output mean to the head bias") {
    ParamStore zps;
    init_lstm(zps, "enc", spec, rng);
    init_linear(zps, "enc.head", spec.hidden, 8, rng);
    for (auto& [name, e] : zps.entries) e.value.fill(0.0);
    zps.at("enc.head.b").value(0, 3) = 0.77;
    Tape t;
    std::vector<int> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(t.leaf(Mat(2, 6)));
    const int h = lstm_last_hidden(t, zps, "enc", spec, xs, {});
    const int y = t.add_rowvec(t.matmul(h, t.param(zps, "enc.head.W")),
                               t.param(zps, "enc.head.b"));
    REQUIRE(t.val(y)(0, 3) == Approx(0.77));
    REQUIRE(t.val(y)(0, 0) == 0.0);
  }

  SECTION("sequence order changes the output") {
    Rng noise(3);
    std::vector<Mat> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(normal_mat(1, 6, noise));
    auto run = [&](const std::vector<Mat>& steps) {
      Tape t;
      std::vector<int> nodes;
      for (const Mat& m : steps) nodes.push_back(t.leaf(m));
      return t.val(lstm_last_hidden(t, ps, "enc", spec, nodes, {}));
    };
    const Mat a = run(xs);
    std::vector<Mat> rev(xs.rbegin(), xs.rend());
    const Mat b = run(rev);
    double diff = 0.0;
    for (size_t k = 0; k < a.size(); ++k) diff += std::abs(a.a[k] - b.a[k]);
    REQUIRE(diff > 1e-6);
  }

  SECTION("gradients match central finite differences") {
    Rng noise(4);
    std::vector<Mat> xs;
    for (int i = 0; i < 3; ++i) xs.push_back(normal_mat(2, 6, noise));
    auto loss = [&](bool wg) {
      Tape t;
      std::vector<int> nodes;
      for (const Mat& m : xs) nodes.push_back(t.leaf(m));
      const int h = lstm_last_hidden(t, ps, "enc", spec, nodes, {.apply_grads = wg});
      const int y = t.add_rowvec(t.matmul(h, t.param(ps, "enc.head.W", wg)),
                                 t.param(ps, "enc.head.b", wg));
      const int l = t.mean_all(t.square(y));
      if (wg) t.backward(l);
      return t.val(l)(0, 0);
    };
    REQUIRE(grad_check(loss, {&ps}) <= 1e-4);
  }
}

TEST_CASE("kl_diag_gaussians closed form") {
  SECTION("identical distributions give exactly zero") {
    DiagGaussian p{{0.3, -1.0}, {0.2, -0.5}};
    REQUIRE(kl_diag_gaussians(p, p) == 0.0);
  }
  SECTION("unit-variance mean shift: mu^2/2") {
    DiagGaussian p{{2.0}, {0.0}}, q{{0.0}, {0.0}};
    REQUIRE(kl_diag_gaussians(p, q) == Approx(2.0));
  }
  SECTION("dimension mismatch raises") {
    DiagGaussian p{{0.0, 0.0}, {0.0, 0.0}}, q{{0.0}, {0.0}};
    REQUIRE_THROWS_AS(kl_diag_gaussians(p, q), Error);
  }
  SECTION("matches Monte-Carlo estimate within 1%") {
    // KL(p||q) = E_p[log p - log q], 1e6 samples.
    DiagGaussian p{{0.0}, {std::log(2.0)}}, q{{0.0}, {0.0}};
    Rng rng(5);
    const int n = 1000000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto z = p.sample(rng);
      acc += p.log_prob(z) - q.log_prob(z);
    }
    const double mc = acc / n;
    const double cf = kl_diag_gaussians(p, q);
    REQUIRE(std::abs(mc - cf) / cf < 0.01);
  }
  SECTION("non-negative on random pairs, zero on equal pairs") {
    Rng rng(6);
    for (int i = 0; i < 100000; ++i) {
      DiagGaussian p{{rng.uniform(-3, 3)}, {rng.uniform(-2, 1)}};
      DiagGaussian q{{rng.uniform(-3, 3)}, {rng.uniform(-2, 1)}};
      REQUIRE(kl_diag_gaussians(p, q) >= 0.0);
    }
  }
}

TEST_CASE("sample_reparam") {
  SECTION("clamp floor collapses samples onto the mean") {
    DiagGaussian g{{1.5, -0.5}, {kLogStdMin, kLogStdMin}};
    Rng rng(7);
    const ReparamSample s = sample_reparam(g, rng);
    REQUIRE(s.z[0] == Approx(1.5).margin(1e-3));
    REQUIRE(s.z[1] == Approx(-0.5).margin(1e-3));
  }
  SECTION("log_prob at the mean equals -sum(log sigma) - d/2 log 2pi") {
    DiagGaussian g{{0.7, -0.2, 0.1}, {0.3, -0.6, 0.0}};
    const double expect = -(0.3 - 0.6 + 0.0) - 1.5 * kLog2Pi;
    REQUIRE(g.log_prob(g.mean) == Approx(expect).epsilon(1e-12));
  }
  SECTION("sample mean concentrates around mu (CLT oracle)") {
    DiagGaussian g{{0.25}, {std::log(0.5)}};
    Rng rng(8);
    const int n = 100000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += sample_reparam(g, rng).z[0];
    const double se = 0.5 / std::sqrt(static_cast<double>(n));
    REQUIRE(std::abs(acc / n - 0.25) <= 4.0 * se);
  }
}

TEST_CASE("tanh_squash") {
  REQUIRE(tanh_squash(0.0) == 0.0);
  REQUIRE(tanh_squash(1e9) < 2.0);
  REQUIRE(tanh_squash(1e9) == Approx(2.0).margin(1e-9));
  REQUIRE(tanh_squash(-1e9) > -2.0);
  SECTION("derivative at 0 is 1 (finite differences)") {
    const double eps = 1e-6;
    const double fd = (tanh_squash(eps) - tanh_squash(-eps)) / (2.0 * eps);
    REQUIRE(fd == Approx(1.0).epsilon(1e-6));
  }
  SECTION("strictly inside (-2,2) and monotone") {
    double prev = tanh_squash(-50.0);
    for (double x = -50.0 + 0.5; x <= 50.0; x += 0.5) {
      const double y = tanh_squash(x);
      REQUIRE(y > -2.0);
      REQUIRE(y < 2.0);
      REQUIRE(y >= prev);  // plateaus only at float saturation
      if (std::abs(x) < 20.0) REQUIRE(y > prev);
      prev = y;
    }
  }
}

TEST_CASE("optimizer_step") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParamStore ps;
    ps.add("x", Mat(1, 1, 3.0));
    optimizer_step({OptimKind::Adam, 1e-3, 0.9, 0.999, 1e-8}, ps);
    REQUIRE(ps.at("x").value(0, 0) == 3.0);
    optimizer_step({OptimKind::RAdam, 1e-3, 0.9, 0.999, 1e-8}, ps);
    REQUIRE(ps.at("x").value(0, 0) == 3.0);
  }
  SECTION("Adam first step with unit gradient moves by ~lr") {
    ParamStore ps;
    ps.add("x", Mat(1, 1, 5.0));
    ps.at("x").grad(0, 0) = 1.0;
    optimizer_step({OptimKind::Adam, 1e-3, 0.9, 0.999, 1e-8}, ps);
    REQUIRE(ps.at("x").value(0, 0) - 5.0 == Approx(-1e-3).epsilon(1e-6));
  }
  SECTION("quadratic bowl converges") {
    ParamStore ps;
    ps.add("x", Mat(1, 1, 5.0));
    for (int i = 0; i < 2000; ++i) {
      ps.at("x").grad(0, 0) = 2.0 * ps.at("x").value(0, 0);
      optimizer_step({OptimKind::Adam, 1e-2, 0.9, 0.999, 1e-8}, ps);
    }
    REQUIRE(std::abs(ps.at("x").value(0, 0)) < 1e-3);
  }
  SECTION("RAdam quadratic bowl converges") {
    // RAdam needs a longer run than Adam here: its rectified term keeps the
    // adaptive step small for the first few hundred updates.
    ParamStore ps;
    ps.add("x", Mat(1, 1, 5.0));
    for (int i = 0; i < 6000; ++i) {
      ps.at("x").grad(0, 0) = 2.0 * ps.at("x").value(0, 0);
      optimizer_step({OptimKind::RAdam, 1e-2, 0.9, 0.999, 1e-8}, ps);
    }
    REQUIRE(std::abs(ps.at("x").value(0, 0)) < 1e-3);
  }
  SECTION("step is deterministic given identical state") {
    ParamStore a, b;
    Rng ra(10), rb(10);
    a.add("w", rand_uniform(4, 4, -1, 1, ra));
    b.add("w", rand_uniform(4, 4, -1, 1, rb));
    for (int i = 0; i < 5; ++i) {
      for (int k = 0; k < 16; ++k) {
        a.at("w").grad.a[k] = 0.1 * k;
        b.at("w").grad.a[k] = 0.1 * k;
      }
      optimizer_step({OptimKind::RAdam, 1e-3, 0.9, 0.999, 1e-8}, a);
      optimizer_step({OptimKind::RAdam, 1e-3, 0.9, 0.999, 1e-8}, b);
    }
    REQUIRE(a.at("w").value.a == b.at("w").value.a);
  }
}

TEST_CASE("grad_check suite over every network shape in use") {
  Rng rng(11);
  SECTION("linear function is exact") {
    ParamStore ps;
    ps.add("w", rand_uniform(3, 1, -1, 1, rng));
    const Mat x = normal_mat(5, 3, rng);
    auto loss = [&](bool wg) {
      Tape t;
      const int y = t.matmul(t.leaf(x), t.param(ps, "w", wg));
      const int l = t.mean_all(y);
      if (wg) t.backward(l);
      return t.val(l)(0, 0);
    };
    REQUIRE(grad_check(loss, {&ps}) <= 1e-8);
  }
  SECTION("gaussian-head MLP with batch norm (training mode)") {
    ParamStore ps;
    NetSpec spec{.in_dim = 4, .hidden = {8, 8}, .out_dim = 3, .batch_norm = true,
                 .head = Head::Gaussian};
    init_mlp(ps, "n", spec, rng);
    const Mat X = normal_mat(6, 4, rng);
    const Mat eps = normal_mat(6, 3, rng);
    auto loss = [&](bool wg) {
      Tape t;
      const GaussNodes g =
          mlp_gaussian(t, ps, "n", spec, t.leaf(X), {.training = true, .apply_grads = wg});
      const int z = reparam_rows(t, g, t.leaf(eps));
      const GaussNodes unit{t.leaf(Mat(6, 3)), t.leaf(Mat(6, 3))};
      const int l = t.mean_all(t.add(t.row_sum(t.square(z)), kl_rows(t, g, unit)));
      if (wg) t.backward(l);
      return t.val(l)(0, 0);
    };
    REQUIRE(grad_check(loss, {&ps}) <= 1e-4);
  }
  SECTION("sigmoid discriminator with BCE loss") {
    ParamStore ps;
    NetSpec spec{.in_dim = 4, .hidden = {8, 8, 8}, .out_dim = 1, .batch_norm = true,
                 .head = Head::SigmoidScalar};
    init_mlp(ps, "d", spec, rng);
    const Mat X = normal_mat(8, 4, rng);
    Mat Y(8, 1);
    for (int i = 0; i < 8; ++i) Y(i, 0) = i % 2;
    auto loss = [&](bool wg) {
      Tape t;
      const int d = mlp_sigmoid(t, ps, "d", spec, t.leaf(X), {.training = true, .apply_grads = wg});
      const int y = t.leaf(Y);
      const int ll = t.add(t.mul(y, t.log_(d)),
                           t.mul(t.add_const(t.scale(y, -1.0), 1.0),
                                 t.log_(t.add_const(t.scale(d, -1.0), 1.0))));
      const int l = t.scale(t.mean_all(ll), -1.0);
      if (wg) t.backward(l);
      return t.val(l)(0, 0);
    };
    REQUIRE(grad_check(loss, {&ps}) <= 1e-4);
  }
  SECTION("squash and its log-det correction") {
    ParamStore ps;
    NetSpec spec{.in_dim = 3, .hidden = {6}, .out_dim = 2, .head = Head::Gaussian};
    init_mlp(ps, "p", spec, rng);
    const Mat X = normal_mat(4, 3, rng);
    const Mat eps = normal_mat(4, 2, rng);
    auto loss = [&](bool wg) {
      Tape t;
      const GaussNodes g = mlp_gaussian(t, ps, "p", spec, t.leaf(X), {.apply_grads = wg});
      const int zr = reparam_rows(t, g, t.leaf(eps));
      const int logp = t.sub(log_prob_rows(t, g, zr), squash_log_det_rows(t, zr));
      const int z = squash_rows(t, zr);
      const int l = t.mean_all(t.add(t.row_sum(t.square(z)), logp));
      if (wg) t.backward(l);
      return t.val(l)(0, 0);
    };
    REQUIRE(grad_check(loss, {&ps}) <= 1e-4);
  }
}

TEST_CASE("batch-norm eval mode is batch-composition independent") {
  Rng rng(12);
  ParamStore ps;
  NetSpec spec{.in_dim = 3, .hidden = {8}, .out_dim = 2, .batch_norm = true, .head = Head::Scalar};
  init_mlp(ps, "n", spec, rng);
  // Push some statistics into the running buffers.
  for (int i = 0; i < 10; ++i) {
    Tape t;
    mlp_scalar(t, ps, "n", spec, t.leaf(normal_mat(16, 3, rng)),
               {.training = true, .update_bn = true, .apply_grads = false});
  }
  const Mat X = normal_mat(5, 3, rng);
  Tape t1;
  const Mat batched = t1.val(mlp_scalar(t1, ps, "n", spec, t1.leaf(X), {}));
  for (int i = 0; i < 5; ++i) {
    Mat row(1, 3);
    for (int j = 0; j < 3; ++j) row(0, j) = X(i, j);
    Tape t2;
    const Mat single = t2.val(mlp_scalar(t2, ps, "n", spec, t2.leaf(row), {}));
    for (int j = 0; j < 2; ++j) REQUIRE(single(0, j) == Approx(batched(i, j)).margin(1e-6));
  }
}

TEST_CASE("checkpoint round-trip preserves f32 payloads bit-exactly") {
  Rng rng(13);
  ParamStore ps;
  NetSpec spec{.in_dim = 4, .hidden = {8}, .out_dim = 3, .batch_norm = true, .head = Head::Gaussian};
  init_mlp(ps, "n", spec, rng);
  // Dirty the optimizer state.
  for (auto& [name, e] : ps.entries)
    if (e.trainable) {
      for (size_t k = 0; k < e.grad.size(); ++k) e.grad.a[k] = 0.01 * (k + 1);
    }
  optimizer_step({OptimKind::RAdam, 1e-3, 0.9, 0.999, 1e-8}, ps);

  const std::string path = "test_ckpt.sknn";
  save_checkpoint({{"", &ps}}, path);
  const RawCheckpoint raw = load_checkpoint(path);
  ParamStore ps2;
  init_mlp(ps2, "n", spec, rng);
  assign_from_checkpoint(ps2, raw, "");
  save_checkpoint({{"", &ps2}}, path + "2");
  std::ifstream f1(path, std::ios::binary), f2(path + "2", std::ios::binary);
  const std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(!c1.empty());
  REQUIRE(c1 == c2);
  // Optimizer step counters survive.
  REQUIRE(ps2.at("n.head.W").step == 1);
  std::remove(path.c_str());
  std::remove((path + "2").c_str());
}

TEST_CASE("batch-norm folding reproduces the eval-mode function") {
  Rng rng(14);
  NetSpec bn_spec{.in_dim = 4, .hidden = {8, 8}, .out_dim = 3, .batch_norm = true,
                  .head = Head::Gaussian};
  ParamStore src;
  init_mlp(src, "post", bn_spec, rng);
  for (int i = 0; i < 20; ++i) {
    Tape t;
    mlp_gaussian(t, src, "post", bn_spec, t.leaf(normal_mat(16, 4, rng)),
                 {.training = true, .update_bn = true, .apply_grads = false});
  }
  NetSpec plain{.in_dim = 4, .hidden = {8, 8}, .out_dim = 3, .head = Head::Gaussian};
  ParamStore dst;
  init_mlp(dst, "policy", plain, rng);
  fold_batchnorm_into(dst, "policy", src, "post", bn_spec);
  for (int k = 0; k < 10; ++k) {
    std::vector<double> x{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const DiagGaussian a = eval_gaussian(src, "post", bn_spec, x);
    const DiagGaussian b = eval_gaussian(dst, "policy", plain, x);
    for (int j = 0; j < 3; ++j) {
      REQUIRE(b.mean[j] == Approx(a.mean[j]).margin(1e-9));
      REQUIRE(b.log_std[j] == Approx(a.log_std[j]).margin(1e-9));
    }
  }
}
