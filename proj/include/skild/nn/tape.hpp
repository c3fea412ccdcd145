#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "skild/errors.hpp"
#include "skild/mat.hpp"
#include "skild/nn/params.hpp"

namespace skild::nn {

// Reverse-mode tape over dense matrices. Nodes are appended during the
// forward pass; backward() walks them in reverse, visiting only nodes
// reachable from the root. The op set is fixed to what the networks here
// need; there is no graph compiler.
class Tape {
 public:
  const Mat& val(int i) const { return nodes_[i].val; }
  Mat& grad(int i) { return nodes_[i].grad; }
  int rows(int i) const { return nodes_[i].val.rows; }
  int cols(int i) const { return nodes_[i].val.cols; }

  int leaf(Mat v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, false});
    return last();
  }

  // Leaf backed by a store entry. Gradients accumulate into entry.grad after
  // backward() unless apply_grads is false (frozen networks still propagate
  // gradients through, they just never collect them).
  int param(ParamStore& ps, const std::string& name, bool apply_grads = true) {
    ParamEntry& e = ps.at(name);
    nodes_.push_back(Node{e.value, {}, nullptr, false});
    bindings_.push_back(Binding{&e, last(), apply_grads});
    return last();
  }

  // --- arithmetic -----------------------------------------------------------

  int add(int a, int b) {
    same_shape(a, b, "add");
    Mat out = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    for (size_t k = 0; k < out.size(); ++k) out.a[k] += vb.a[k];
    return make(std::move(out), [a, b](Tape& t, const Mat& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  int sub(int a, int b) {
    same_shape(a, b, "sub");
    Mat out = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    for (size_t k = 0; k < out.size(); ++k) out.a[k] -= vb.a[k];
    return make(std::move(out), [a, b](Tape& t, const Mat& g) {
      t.accumulate(a, g);
      Mat& gb = t.grad_buf(b);
      for (size_t k = 0; k < g.size(); ++k) gb.a[k] -= g.a[k];
    });
  }

  int mul(int a, int b) {
    same_shape(a, b, "mul");
    Mat out = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    for (size_t k = 0; k < out.size(); ++k) out.a[k] *= vb.a[k];
    return make(std::move(out), [a, b](Tape& t, const Mat& g) {
      const Mat& va = t.nodes_[a].val;
      const Mat& vb2 = t.nodes_[b].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += g.a[k] * vb2.a[k];
      Mat& gb = t.grad_buf(b);
      for (size_t k = 0; k < g.size(); ++k) gb.a[k] += g.a[k] * va.a[k];
    });
  }

  // Elementwise minimum; ties route the gradient to a.
  int minimum(int a, int b) {
    same_shape(a, b, "minimum");
    const Mat& va = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = va.a[k] <= vb.a[k] ? va.a[k] : vb.a[k];
    return make(std::move(out), [a, b](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      const Mat& vb2 = t.nodes_[b].val;
      Mat& ga = t.grad_buf(a);
      Mat& gb = t.grad_buf(b);
      for (size_t k = 0; k < g.size(); ++k) {
        if (va2.a[k] <= vb2.a[k])
          ga.a[k] += g.a[k];
        else
          gb.a[k] += g.a[k];
      }
    });
  }

  int scale(int a, double c) {
    Mat out = nodes_[a].val;
    for (double& x : out.a) x *= c;
    return make(std::move(out), [a, c](Tape& t, const Mat& g) {
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += c * g.a[k];
    });
  }

  int add_const(int a, double c) {
    Mat out = nodes_[a].val;
    for (double& x : out.a) x += c;
    return make(std::move(out), [a](Tape& t, const Mat& g) { t.accumulate(a, g); });
  }

  int matmul(int a, int b) {
    const Mat& va = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    check_shapes(va.cols == vb.rows, "matmul");
    Mat out(va.rows, vb.cols);
    mm_nn(va, vb, out, false);
    return make(std::move(out), [a, b](Tape& t, const Mat& g) {
      mm_nt(g, t.nodes_[b].val, t.grad_buf(a), true);   // dA += G * B^T
      mm_tn(t.nodes_[a].val, g, t.grad_buf(b), true);   // dB += A^T * G
    });
  }

  // a: B x C, bias: 1 x C broadcast over rows.
  int add_rowvec(int a, int bias) {
    const Mat& va = nodes_[a].val;
    const Mat& vb = nodes_[bias].val;
    check_shapes(vb.rows == 1 && vb.cols == va.cols, "add_rowvec");
    Mat out = va;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) += vb(0, j);
    return make(std::move(out), [a, bias](Tape& t, const Mat& g) {
      t.accumulate(a, g);
      Mat& gb = t.grad_buf(bias);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
    });
  }

  // a: B x C, v: B x 1 broadcast over columns.
  int mul_colvec(int a, int v) {
    const Mat& va = nodes_[a].val;
    const Mat& vv = nodes_[v].val;
    check_shapes(vv.cols == 1 && vv.rows == va.rows, "mul_colvec");
    Mat out = va;
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= vv(i, 0);
    return make(std::move(out), [a, v](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      const Mat& vv2 = t.nodes_[v].val;
      Mat& ga = t.grad_buf(a);
      Mat& gv = t.grad_buf(v);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          ga(i, j) += g(i, j) * vv2(i, 0);
          gv(i, 0) += g(i, j) * va2(i, j);
        }
    });
  }

  int mul_scalar_node(int a, int s) {
    const Mat& vs = nodes_[s].val;
    check_shapes(vs.rows == 1 && vs.cols == 1, "mul_scalar_node");
    const double c = vs(0, 0);
    Mat out = nodes_[a].val;
    for (double& x : out.a) x *= c;
    return make(std::move(out), [a, s, c](Tape& t, const Mat& g) {
      const Mat& va = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      double ds = 0.0;
      for (size_t k = 0; k < g.size(); ++k) {
        ga.a[k] += c * g.a[k];
        ds += g.a[k] * va.a[k];
    }
      t.grad_buf(s)(0, 0) += ds;
    });
  }

  // --- elementwise nonlinearities -------------------------------------------

  int leaky_relu(int a, double slope) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k)
      out.a[k] = va.a[k] >= 0.0 ? va.a[k] : slope * va.a[k];
    return make(std::move(out), [a, slope](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k)
        ga.a[k] += (va2.a[k] >= 0.0 ? 1.0 : slope) * g.a[k];
    });
  }

  int tanh_(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = std::tanh(va.a[k]);
    const int o = make_placeholder(std::move(out));
    set_back(o, [a, o](Tape& t, const Mat& g) {
      const Mat& vo = t.nodes_[o].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += (1.0 - vo.a[k] * vo.a[k]) * g.a[k];
    });
    return o;
  }

  int sigmoid_(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) {
      const double x = va.a[k];
      out.a[k] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    const int o = make_placeholder(std::move(out));
    set_back(o, [a, o](Tape& t, const Mat& g) {
      const Mat& vo = t.nodes_[o].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += vo.a[k] * (1.0 - vo.a[k]) * g.a[k];
    });
    return o;
  }

  int exp_(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = std::exp(va.a[k]);
    const int o = make_placeholder(std::move(out));
    set_back(o, [a, o](Tape& t, const Mat& g) {
      const Mat& vo = t.nodes_[o].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += vo.a[k] * g.a[k];
    });
    return o;
  }

  int log_(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = std::log(va.a[k]);
    return make(std::move(out), [a](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += g.a[k] / va2.a[k];
    });
  }

  int square(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = va.a[k] * va.a[k];
    return make(std::move(out), [a](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) ga.a[k] += 2.0 * va2.a[k] * g.a[k];
    });
  }

  int softplus(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) {
      const double x = va.a[k];
      out.a[k] = (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    return make(std::move(out), [a](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k) {
        const double x = va2.a[k];
        const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        ga.a[k] += s * g.a[k];
      }
    });
  }

  // Gradient passes through where lo <= x <= hi, zero outside.
  int clamp_(int a, double lo, double hi) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, va.cols);
    for (size_t k = 0; k < out.size(); ++k) out.a[k] = std::clamp(va.a[k], lo, hi);
    return make(std::move(out), [a, lo, hi](Tape& t, const Mat& g) {
      const Mat& va2 = t.nodes_[a].val;
      Mat& ga = t.grad_buf(a);
      for (size_t k = 0; k < g.size(); ++k)
        if (va2.a[k] >= lo && va2.a[k] <= hi) ga.a[k] += g.a[k];
    });
  }

  // --- structure ------------------------------------------------------------

  int concat_cols(int a, int b) {
    const Mat& va = nodes_[a].val;
    const Mat& vb = nodes_[b].val;
    check_shapes(va.rows == vb.rows, "concat_cols");
    Mat out(va.rows, va.cols + vb.cols);
    for (int i = 0; i < out.rows; ++i) {
      for (int j = 0; j < va.cols; ++j) out(i, j) = va(i, j);
      for (int j = 0; j < vb.cols; ++j) out(i, va.cols + j) = vb(i, j);
    }
    const int ca = va.cols;
    return make(std::move(out), [a, b, ca](Tape& t, const Mat& g) {
      Mat& ga = t.grad_buf(a);
      Mat& gb = t.grad_buf(b);
      for (int i = 0; i < g.rows; ++i) {
        for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(i, j);
        for (int j = 0; j < gb.cols; ++j) gb(i, j) += g(i, ca + j);
      }
    });
  }

  int slice_cols(int a, int c0, int c1) {
    const Mat& va = nodes_[a].val;
    check_shapes(c0 >= 0 && c1 <= va.cols && c0 < c1, "slice_cols");
    Mat out(va.rows, c1 - c0);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) = va(i, c0 + j);
    return make(std::move(out), [a, c0](Tape& t, const Mat& g) {
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
    });
  }

  int sum_all(int a) {
    double s = 0.0;
    for (double x : nodes_[a].val.a) s += x;
    Mat out(1, 1);
    out(0, 0) = s;
    return make(std::move(out), [a](Tape& t, const Mat& g) {
      const double gs = g(0, 0);
      Mat& ga = t.grad_buf(a);
      for (double& x : ga.a) x += gs;
    });
  }

  int mean_all(int a) {
    const double inv = 1.0 / static_cast<double>(nodes_[a].val.size());
    double s = 0.0;
    for (double x : nodes_[a].val.a) s += x;
    Mat out(1, 1);
    out(0, 0) = s * inv;
    return make(std::move(out), [a, inv](Tape& t, const Mat& g) {
      const double gs = g(0, 0) * inv;
      Mat& ga = t.grad_buf(a);
      for (double& x : ga.a) x += gs;
    });
  }

  int row_sum(int a) {
    const Mat& va = nodes_[a].val;
    Mat out(va.rows, 1);
    for (int i = 0; i < va.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < va.cols; ++j) s += va(i, j);
      out(i, 0) = s;
    }
    return make(std::move(out), [a](Tape& t, const Mat& g) {
      Mat& ga = t.grad_buf(a);
      for (int i = 0; i < ga.rows; ++i)
        for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(i, 0);
    });
  }

  // Identity forward, blocks the backward pass.
  int stopgrad(int a) {
    Mat out = nodes_[a].val;
    nodes_.push_back(Node{std::move(out), {}, nullptr, false});
    return last();
  }

  // Batch normalization over rows. Training mode normalizes with batch
  // statistics (biased variance) and optionally folds them into the running
  // buffers; eval mode uses the running buffers and is batch-independent.
  int batchnorm(int x, int gamma, int beta, ParamEntry& run_mu, ParamEntry& run_var, bool training,
                bool update_running, double momentum = 0.1, double eps = 1e-5) {
    const Mat& vx = nodes_[x].val;
    const int B = vx.rows, C = vx.cols;
    check_shapes(nodes_[gamma].val.cols == C && nodes_[beta].val.cols == C &&
                     run_mu.value.cols == C && run_var.value.cols == C,
                 "batchnorm");

    auto xhat = std::make_shared<Mat>(B, C);
    auto invstd = std::make_shared<Mat>(1, C);
    if (training) {
      for (int j = 0; j < C; ++j) {
        double mu = 0.0;
        for (int i = 0; i < B; ++i) mu += vx(i, j);
        mu /= B;
        double var = 0.0;
        for (int i = 0; i < B; ++i) {
          const double d = vx(i, j) - mu;
          var += d * d;
        }
        var /= B;
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)(0, j) = is;
        for (int i = 0; i < B; ++i) (*xhat)(i, j) = (vx(i, j) - mu) * is;
        if (update_running) {
          run_mu.value(0, j) = (1.0 - momentum) * run_mu.value(0, j) + momentum * mu;
          run_var.value(0, j) = (1.0 - momentum) * run_var.value(0, j) + momentum * var;
        }
      }
    } else {
      for (int j = 0; j < C; ++j) {
        const double is = 1.0 / std::sqrt(run_var.value(0, j) + eps);
        (*invstd)(0, j) = is;
        for (int i = 0; i < B; ++i) (*xhat)(i, j) = (vx(i, j) - run_mu.value(0, j)) * is;
      }
    }

    const Mat& vg = nodes_[gamma].val;
    const Mat& vb = nodes_[beta].val;
    Mat out(B, C);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < C; ++j) out(i, j) = vg(0, j) * (*xhat)(i, j) + vb(0, j);

    return make(std::move(out), [x, gamma, beta, xhat, invstd, training](Tape& t, const Mat& g) {
      const int B2 = g.rows, C2 = g.cols;
      const Mat& vg2 = t.nodes_[gamma].val;
      Mat& ggamma = t.grad_buf(gamma);
      Mat& gbeta = t.grad_buf(beta);
      Mat& gx = t.grad_buf(x);
      for (int j = 0; j < C2; ++j) {
        double dg = 0.0, db = 0.0;
        for (int i = 0; i < B2; ++i) {
          dg += g(i, j) * (*xhat)(i, j);
          db += g(i, j);
        }
        ggamma(0, j) += dg;
        gbeta(0, j) += db;
        const double is = (*invstd)(0, j);
        if (training) {
          // dL/dx through batch statistics.
          const double mean_dy = db / B2 * vg2(0, j);
          const double mean_dy_xhat = dg / B2 * vg2(0, j);
          for (int i = 0; i < B2; ++i)
            gx(i, j) += is * (g(i, j) * vg2(0, j) - mean_dy - (*xhat)(i, j) * mean_dy_xhat);
        } else {
          for (int i = 0; i < B2; ++i) gx(i, j) += is * vg2(0, j) * g(i, j);
        }
      }
    });
  }

  // --- engine ---------------------------------------------------------------

  // Seeds d(root)/d(root) = 1, sweeps the tape in reverse, then flushes
  // accumulated leaf gradients into their bound ParamStore entries.
  void backward(int root) {
    check_shapes(nodes_[root].val.rows == 1 && nodes_[root].val.cols == 1,
                 "backward root must be scalar");
    touched_.assign(nodes_.size(), 0);
    touched_[root] = 1;
    grad_buf(root)(0, 0) = 1.0;
    for (int i = root; i >= 0; --i) {
      if (!touched_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, nodes_[i].grad);
    }
    for (const Binding& b : bindings_) {
      if (!b.apply || !touched_[b.node]) continue;
      const Mat& g = nodes_[b.node].grad;
      for (size_t k = 0; k < g.size(); ++k) b.entry->grad.a[k] += g.a[k];
    }
  }

  bool leaf_touched(int i) const { return !touched_.empty() && touched_[i]; }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&, const Mat&)> back;
    bool has_grad = false;
  };
  struct Binding {
    ParamEntry* entry;
    int node;
    bool apply;
  };

  int last() const { return static_cast<int>(nodes_.size()) - 1; }

  int make(Mat out, std::function<void(Tape&, const Mat&)> back) {
    nodes_.push_back(Node{std::move(out), {}, std::move(back), false});
    return last();
  }

  int make_placeholder(Mat out) {
    nodes_.push_back(Node{std::move(out), {}, nullptr, false});
    return last();
  }

  void set_back(int i, std::function<void(Tape&, const Mat&)> back) {
    nodes_[i].back = std::move(back);
  }

  Mat& grad_buf(int i) {
    Node& n = nodes_[i];
    if (!n.has_grad) {
      n.grad = Mat(n.val.rows, n.val.cols);
      n.has_grad = true;
    }
    touched_[i] = 1;
    return n.grad;
  }

  void accumulate(int i, const Mat& g) {
    Mat& gi = grad_buf(i);
    for (size_t k = 0; k < g.size(); ++k) gi.a[k] += g.a[k];
  }

  void same_shape(int a, int b, const char* what) {
    check_shapes(nodes_[a].val.same_shape(nodes_[b].val), what);
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  std::vector<char> touched_;
};

}  // namespace skild::nn
