#pragma once

#include <string>
#include <vector>

#include "skild/nn/gaussian.hpp"
#include "skild/nn/params.hpp"
#include "skild/nn/tape.hpp"

namespace skild::nn {

enum class Head { Gaussian, Scalar, SigmoidScalar };

struct NetSpec {
  int in_dim = 0;
  std::vector<int> hidden;
  int out_dim = 0;  // Gaussian: latent dim; Scalar: output width; SigmoidScalar: 1
  double leaky_slope = 0.2;
  bool batch_norm = false;
  Head head = Head::Gaussian;
  // Heads may tighten the lower clamp: distilled Gaussians that collapse to
  // the global floor make the downstream KL terms ill-conditioned.
  double log_std_min = kLogStdMin;

  int head_width() const { return head == Head::Gaussian ? 2 * out_dim : out_dim; }
};

struct FwdOpts {
  bool training = false;
  bool update_bn = false;     // fold batch stats into running buffers
  bool apply_grads = true;    // collect gradients for this net's params
};

constexpr double kDiscClampEps = 1e-6;

inline void init_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(name + ".W", rand_uniform(in, out, -bound, bound, rng));
  ps.add(name + ".b", Mat(1, out));
}

inline void init_mlp(ParamStore& ps, const std::string& prefix, const NetSpec& spec, Rng& rng) {
  if (spec.hidden.empty() && spec.out_dim <= 0) raise(ErrorKind::InvalidConfig, "empty net spec");
  int in = spec.in_dim;
  for (size_t l = 0; l < spec.hidden.size(); ++l) {
    const std::string ln = prefix + ".l" + std::to_string(l);
    init_linear(ps, ln, in, spec.hidden[l], rng);
    if (spec.batch_norm) {
      ps.add(ln + ".g", Mat(1, spec.hidden[l], 1.0));
      ps.add(ln + ".be", Mat(1, spec.hidden[l]));
      ps.add(ln + ".bn_mu", Mat(1, spec.hidden[l]), /*trainable=*/false);
      ps.add(ln + ".bn_var", Mat(1, spec.hidden[l], 1.0), /*trainable=*/false);
    }
    in = spec.hidden[l];
  }
  init_linear(ps, prefix + ".head", in, spec.head_width(), rng);
}

// Hidden stack: linear -> [batchnorm] -> leaky relu per layer.
inline int mlp_features(Tape& t, ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                        int x, const FwdOpts& o) {
  check_shapes(t.cols(x) == spec.in_dim, "mlp input dim");
  int h = x;
  for (size_t l = 0; l < spec.hidden.size(); ++l) {
    const std::string ln = prefix + ".l" + std::to_string(l);
    h = t.add_rowvec(t.matmul(h, t.param(ps, ln + ".W", o.apply_grads)),
                     t.param(ps, ln + ".b", o.apply_grads));
    if (spec.batch_norm) {
      h = t.batchnorm(h, t.param(ps, ln + ".g", o.apply_grads),
                      t.param(ps, ln + ".be", o.apply_grads), ps.at(ln + ".bn_mu"),
                      ps.at(ln + ".bn_var"), o.training, o.update_bn);
    }
    h = t.leaky_relu(h, spec.leaky_slope);
  }
  return h;
}

inline int head_linear(Tape& t, ParamStore& ps, const std::string& prefix, int h,
                       const FwdOpts& o) {
  return t.add_rowvec(t.matmul(h, t.param(ps, prefix + ".head.W", o.apply_grads)),
                      t.param(ps, prefix + ".head.b", o.apply_grads));
}

inline GaussNodes mlp_gaussian(Tape& t, ParamStore& ps, const std::string& prefix,
                               const NetSpec& spec, int x, const FwdOpts& o) {
  const int raw = head_linear(t, ps, prefix, mlp_features(t, ps, prefix, spec, x, o), o);
  GaussNodes g;
  g.mean = t.slice_cols(raw, 0, spec.out_dim);
  g.log_std =
      t.clamp_(t.slice_cols(raw, spec.out_dim, 2 * spec.out_dim), spec.log_std_min, kLogStdMax);
  return g;
}

inline int mlp_scalar(Tape& t, ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                      int x, const FwdOpts& o) {
  return head_linear(t, ps, prefix, mlp_features(t, ps, prefix, spec, x, o), o);
}

// Sigmoid output clamped into [eps, 1-eps] so logs stay finite.
inline int mlp_sigmoid(Tape& t, ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                       int x, const FwdOpts& o) {
  return t.clamp_(t.sigmoid_(mlp_scalar(t, ps, prefix, spec, x, o)), kDiscClampEps,
                  1.0 - kDiscClampEps);
}

// Single-row eval helpers (fresh throwaway tape; eval-mode batch norm).
inline DiagGaussian eval_gaussian(ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                                  const std::vector<double>& x) {
  Tape t;
  const GaussNodes g = mlp_gaussian(t, ps, prefix, spec, t.leaf(Mat::row(x)), {});
  return {t.val(g.mean).a, t.val(g.log_std).a};
}

inline std::vector<double> eval_scalar(ParamStore& ps, const std::string& prefix,
                                       const NetSpec& spec, const std::vector<double>& x) {
  Tape t;
  return t.val(mlp_scalar(t, ps, prefix, spec, t.leaf(Mat::row(x)), {})).a;
}

inline double eval_sigmoid(ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                           const std::vector<double>& x) {
  Tape t;
  return t.val(mlp_sigmoid(t, ps, prefix, spec, t.leaf(Mat::row(x)), {}))(0, 0);
}

struct GaussBatch {
  Mat mean;
  Mat log_std;
};

inline GaussBatch eval_gaussian_batch(ParamStore& ps, const std::string& prefix,
                                      const NetSpec& spec, const Mat& X) {
  Tape t;
  const GaussNodes g = mlp_gaussian(t, ps, prefix, spec, t.leaf(X), {});
  return {t.val(g.mean), t.val(g.log_std)};
}

inline Mat eval_scalar_batch(ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                             const Mat& X) {
  Tape t;
  return t.val(mlp_scalar(t, ps, prefix, spec, t.leaf(X), {}));
}

inline Mat eval_sigmoid_batch(ParamStore& ps, const std::string& prefix, const NetSpec& spec,
                              const Mat& X) {
  Tape t;
  return t.val(mlp_sigmoid(t, ps, prefix, spec, t.leaf(X), {}));
}

// --- LSTM -------------------------------------------------------------------

struct LstmSpec {
  int in_dim = 0;
  int hidden = 128;
};

inline void init_lstm(ParamStore& ps, const std::string& prefix, const LstmSpec& spec, Rng& rng) {
  const double bx = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
  const double bh = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  ps.add(prefix + ".lstm.Wx", rand_uniform(spec.in_dim, 4 * spec.hidden, -bx, bx, rng));
  ps.add(prefix + ".lstm.Wh", rand_uniform(spec.hidden, 4 * spec.hidden, -bh, bh, rng));
  Mat b(1, 4 * spec.hidden);
  for (int j = spec.hidden; j < 2 * spec.hidden; ++j) b(0, j) = 1.0;  // forget gate bias
  ps.add(prefix + ".lstm.b", std::move(b));
}

// Unrolls the cell over the given per-step input nodes (each B x in_dim) and
// returns the final hidden state (B x hidden). Gate packing is [i | f | g | o].
inline int lstm_last_hidden(Tape& t, ParamStore& ps, const std::string& prefix,
                            const LstmSpec& spec, const std::vector<int>& xs, const FwdOpts& o) {
  if (xs.empty()) raise(ErrorKind::ShapeMismatch, "lstm needs at least one step");
  const int B = t.rows(xs[0]);
  const int hdim = spec.hidden;
  const int Wx = t.param(ps, prefix + ".lstm.Wx", o.apply_grads);
  const int Wh = t.param(ps, prefix + ".lstm.Wh", o.apply_grads);
  const int b = t.param(ps, prefix + ".lstm.b", o.apply_grads);

  int h = t.leaf(Mat(B, hdim));
  int c = t.leaf(Mat(B, hdim));
  for (int x : xs) {
    check_shapes(t.cols(x) == spec.in_dim && t.rows(x) == B, "lstm input");
    const int gates = t.add_rowvec(t.add(t.matmul(x, Wx), t.matmul(h, Wh)), b);
    const int gi = t.sigmoid_(t.slice_cols(gates, 0, hdim));
    const int gf = t.sigmoid_(t.slice_cols(gates, hdim, 2 * hdim));
    const int gg = t.tanh_(t.slice_cols(gates, 2 * hdim, 3 * hdim));
    const int go = t.sigmoid_(t.slice_cols(gates, 3 * hdim, 4 * hdim));
    c = t.add(t.mul(gf, c), t.mul(gi, gg));
    h = t.mul(go, t.tanh_(c));
  }
  return h;
}

// --- batch-norm folding -----------------------------------------------------

// Rewrites a batch-normalized MLP as a plain one computing the identical
// eval-mode function: the affine normalization folds into each layer's
// weights. Used to initialize the (norm-free) RL policy from the posterior
// or prior checkpoints.
inline void fold_batchnorm_into(ParamStore& dst, const std::string& dst_prefix,
                                const ParamStore& src, const std::string& src_prefix,
                                const NetSpec& src_spec, double eps = 1e-5) {
  for (size_t l = 0; l < src_spec.hidden.size(); ++l) {
    const std::string sl = src_prefix + ".l" + std::to_string(l);
    const std::string dl = dst_prefix + ".l" + std::to_string(l);
    const Mat& W = src.at(sl + ".W").value;
    const Mat& b = src.at(sl + ".b").value;
    Mat W2 = W, b2 = b;
    if (src_spec.batch_norm) {
      const Mat& g = src.at(sl + ".g").value;
      const Mat& be = src.at(sl + ".be").value;
      const Mat& mu = src.at(sl + ".bn_mu").value;
      const Mat& var = src.at(sl + ".bn_var").value;
      for (int j = 0; j < W.cols; ++j) {
        const double s = g(0, j) / std::sqrt(var(0, j) + eps);
        for (int i = 0; i < W.rows; ++i) W2(i, j) = W(i, j) * s;
        b2(0, j) = (b(0, j) - mu(0, j)) * s + be(0, j);
      }
    }
    dst.at(dl + ".W").value = std::move(W2);
    dst.at(dl + ".b").value = std::move(b2);
  }
  dst.at(dst_prefix + ".head.W").value = src.at(src_prefix + ".head.W").value;
  dst.at(dst_prefix + ".head.b").value = src.at(src_prefix + ".head.b").value;
}

}  // namespace skild::nn
