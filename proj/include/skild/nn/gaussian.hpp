#pragma once

#include <cmath>
#include <vector>

#include "skild/errors.hpp"
#include "skild/nn/tape.hpp"
#include "skild/rng.hpp"

namespace skild::nn {

constexpr double kLogStdMin = -10.0;
constexpr double kLogStdMax = 2.0;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian as plain values (stddev = exp(log_std)).
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;

  int dim() const { return static_cast<int>(mean.size()); }

  std::vector<double> sample(Rng& rng) const {
    std::vector<double> z(mean.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
    return z;
  }

  double log_prob(const std::vector<double>& z) const {
    double lp = -0.5 * kLog2Pi * static_cast<double>(mean.size());
    for (size_t i = 0; i < z.size(); ++i) {
      const double s = std::exp(log_std[i]);
      const double u = (z[i] - mean[i]) / s;
      lp += -log_std[i] - 0.5 * u * u;
    }
    return lp;
  }
};

// KL(p || q) for diagonal Gaussians, summed over dimensions:
//   sum_i log(sq/sp) + (sp^2 + (mp-mq)^2) / (2 sq^2) - 1/2
inline double kl_diag_gaussians(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim()) raise(ErrorKind::DimMismatch, "kl_diag_gaussians");
  double kl = 0.0;
  for (int i = 0; i < p.dim(); ++i) {
    const double sp2 = std::exp(2.0 * p.log_std[i]);
    const double sq2 = std::exp(2.0 * q.log_std[i]);
    const double dm = p.mean[i] - q.mean[i];
    kl += q.log_std[i] - p.log_std[i] + (sp2 + dm * dm) / (2.0 * sq2) - 0.5;
  }
  return kl;
}

struct ReparamSample {
  std::vector<double> z;
  double log_prob = 0.0;
};

inline ReparamSample sample_reparam(const DiagGaussian& g, Rng& rng) {
  ReparamSample out;
  out.z.resize(g.mean.size());
  out.log_prob = -0.5 * kLog2Pi * static_cast<double>(g.mean.size());
  for (size_t i = 0; i < out.z.size(); ++i) {
    const double eps = rng.normal();
    out.z[i] = g.mean[i] + std::exp(g.log_std[i]) * eps;
    out.log_prob += -g.log_std[i] - 0.5 * eps * eps;
  }
  return out;
}

// Smooth bound into (-scale, scale) with unit slope at the origin. Saturated
// values are nudged off the boundary so executed latents stay strictly
// inside the interval.
inline double tanh_squash(double z_raw, double scale = 2.0) {
  double v = scale * std::tanh(z_raw / scale);
  if (v >= scale) v = std::nextafter(scale, 0.0);
  if (v <= -scale) v = std::nextafter(-scale, 0.0);
  return v;
}

inline std::vector<double> tanh_squash(const std::vector<double>& z, double scale = 2.0) {
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) out[i] = tanh_squash(z[i], scale);
  return out;
}

// --- tape builders (row-batched) --------------------------------------------

struct GaussNodes {
  int mean = -1;
  int log_std = -1;
};

// Per-row KL(p || q) as a B x 1 node.
inline int kl_rows(Tape& t, const GaussNodes& p, const GaussNodes& q) {
  if (t.cols(p.mean) != t.cols(q.mean)) raise(ErrorKind::DimMismatch, "kl_rows");
  const int var_p = t.exp_(t.scale(p.log_std, 2.0));
  const int inv2var_q = t.scale(t.exp_(t.scale(q.log_std, -2.0)), 0.5);
  const int dm2 = t.square(t.sub(p.mean, q.mean));
  const int frac = t.mul(t.add(var_p, dm2), inv2var_q);
  const int terms = t.add_const(t.add(t.sub(q.log_std, p.log_std), frac), -0.5);
  return t.row_sum(terms);
}

// z = mean + exp(log_std) * eps for a fixed noise leaf.
inline int reparam_rows(Tape& t, const GaussNodes& g, int eps_leaf) {
  return t.add(g.mean, t.mul(t.exp_(g.log_std), eps_leaf));
}

// Per-row Gaussian log density of z under g, as a B x 1 node.
inline int log_prob_rows(Tape& t, const GaussNodes& g, int z) {
  const int d = t.cols(g.mean);
  const int u = t.mul(t.sub(z, g.mean), t.exp_(t.scale(g.log_std, -1.0)));
  const int per_dim = t.add(g.log_std, t.scale(t.square(u), 0.5));
  return t.add_const(t.scale(t.row_sum(per_dim), -1.0), -0.5 * kLog2Pi * d);
}

inline int squash_rows(Tape& t, int z_raw, double scale = 2.0) {
  return t.scale(t.tanh_(t.scale(z_raw, 1.0 / scale)), scale);
}

// Per-row log|det da/dz| correction for a = scale*tanh(z/scale):
//   sum_i log(1 - tanh^2(z_i/scale)) computed stably as
//   sum_i 2*(log 2 - z_i/scale - softplus(-2 z_i/scale)).
inline int squash_log_det_rows(Tape& t, int z_raw, double scale = 2.0) {
  const int u = t.scale(z_raw, 1.0 / scale);
  const int sp = t.softplus(t.scale(u, -2.0));
  const int inner = t.sub(t.add_const(t.scale(u, -1.0), 0.6931471805599453), sp);
  return t.row_sum(t.scale(inner, 2.0));
}

inline Mat normal_mat(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.a) x = rng.normal();
  return m;
}

}  // namespace skild::nn
