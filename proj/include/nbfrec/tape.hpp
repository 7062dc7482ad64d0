#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nbfrec/param_store.hpp"
#include "nbfrec/tensor.hpp"

namespace nbfrec {

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const noexcept { return id != UINT32_MAX; }
};

/// Reverse-mode gradient tape over dense tensors.
///
/// Operations append nodes with recorded backward closures; backward() runs
/// one reverse sweep and accumulates parameter-leaf gradients into their
/// ParamStore. A tape is single-use: re-running backward without re-taping
/// throws. Not movable: closures capture `this`.
template <class Real>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  const Tensor<Real>& value(Var v) const { return nodes_[v.id].value; }
  const Tensor<Real>& grad(Var v) const { return nodes_[v.id].grad; }
  Real scalar_value(Var v) const { return nodes_[v.id].value[0]; }

  std::size_t node_count() const noexcept { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    leaves_.clear();
    backward_done_ = false;
  }

  // ---- leaves ------------------------------------------------------------

  Var constant(Tensor<Real> t) { return push(std::move(t), false); }

  /// Parameter leaf: snapshots the current value; backward() adds the leaf
  /// gradient into store.grad(name).
  Var param(ParamStore<Real>& store, const std::string& name) {
    Var v = push(store.value(name), true);
    leaves_.push_back(Leaf{v, &store, name});
    return v;
  }

  // ---- elementwise and affine ops ----------------------------------------

  Var add(Var a, Var b) {
    const Tensor<Real>&ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor<Real> out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    record(o, [this, a, b, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(a)) {
        Tensor<Real>& ga = ensure_grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs(b)) {
        Tensor<Real>& gb = ensure_grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
    return o;
  }

  /// ca*a + cb*b with same-shape tensors.
  Var scale_add(Var a, Real ca, Var b, Real cb) {
    const Tensor<Real>&ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "scale_add: shape mismatch");
    Tensor<Real> out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * ta[i] + cb * tb[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    record(o, [this, a, b, ca, cb, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(a)) {
        Tensor<Real>& ga = ensure_grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += ca * g[i];
      }
      if (needs(b)) {
        Tensor<Real>& gb = ensure_grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += cb * g[i];
      }
    });
    return o;
  }

  Var scale(Var x, Real c) {
    const Tensor<Real>& tx = val(x);
    Tensor<Real> out(tx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * tx[i];
    Var o = push(std::move(out), needs(x));
    record(o, [this, x, c, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
    return o;
  }

  /// Hadamard product (the DistMult message kernel on row vectors).
  Var mul(Var a, Var b) {
    const Tensor<Real>&ta = val(a), &tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor<Real> out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
    Var o = push(std::move(out), needs(a) || needs(b));
    record(o, [this, a, b, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(a)) {
        Tensor<Real>& ga = ensure_grad(a);
        const Tensor<Real>& tb2 = nodes_[b.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * tb2[i];
      }
      if (needs(b)) {
        Tensor<Real>& gb = ensure_grad(b);
        const Tensor<Real>& ta2 = nodes_[a.id].value;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ta2[i];
      }
    });
    return o;
  }

  Var relu(Var x) {
    const Tensor<Real>& tx = val(x);
    Tensor<Real> out(tx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tx[i] > Real(0) ? tx[i] : Real(0);
    Var o = push(std::move(out), needs(x));
    record(o, [this, x, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      const Tensor<Real>& tx2 = nodes_[x.id].value;
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (tx2[i] > Real(0)) gx[i] += g[i];
    });
    return o;
  }

  Var sigmoid(Var x) {
    const Tensor<Real>& tx = val(x);
    Tensor<Real> out(tx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(tx[i]);
    Var o = push(std::move(out), needs(x));
    record(o, [this, x, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      const Tensor<Real>& ty = nodes_[o.id].value;
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ty[i] * (Real(1) - ty[i]);
    });
    return o;
  }

  /// min(log(1 + e^x), cap). The cap implements probability clamping: with
  /// cap = -log(p_min), softplus_capped(-s) == -log(max(sigmoid(s), p_min)).
  Var softplus_capped(Var x, Real cap) {
    const Tensor<Real>& tx = val(x);
    Tensor<Real> out(tx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      Real sp = softplus(tx[i]);
      out[i] = sp < cap ? sp : cap;
    }
    Var o = push(std::move(out), needs(x));
    record(o, [this, x, cap, o] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      const Tensor<Real>& tx2 = nodes_[x.id].value;
      const Tensor<Real>& ty = nodes_[o.id].value;
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (ty[i] < cap) gx[i] += g[i] * stable_sigmoid(tx2[i]);
    });
    return o;
  }

  // ---- matrix ops ---------------------------------------------------------

  /// c[n,m] = a[n,k] @ b[k,m]
  Var matmul(Var a, Var b) {
    const Tensor<Real>&ta = val(a), &tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2, "matmul: rank-2 tensors required");
    require(ta.cols() == tb.rows(), "matmul: inner dimension mismatch");
    const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
    Tensor<Real> out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      Real* ci = out.data() + i * m;
      const Real* ai = ta.data() + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real aik = ai[kk];
        const Real* bk = tb.data() + kk * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += aik * bk[j];
      }
    }
    Var o = push(std::move(out), needs(a) || needs(b));
    record(o, [this, a, b, o, n, k, m] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(a)) {
        // dA = dC @ B^T
        Tensor<Real>& ga = ensure_grad(a);
        const Tensor<Real>& tb2 = nodes_[b.id].value;
        for (std::size_t i = 0; i < n; ++i) {
          const Real* gi = g.data() + i * m;
          Real* gai = ga.data() + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Real* bk = tb2.data() + kk * m;
            Real acc = 0;
            for (std::size_t j = 0; j < m; ++j) acc += gi[j] * bk[j];
            gai[kk] += acc;
          }
        }
      }
      if (needs(b)) {
        // dB = A^T @ dC
        Tensor<Real>& gb = ensure_grad(b);
        const Tensor<Real>& ta2 = nodes_[a.id].value;
        for (std::size_t i = 0; i < n; ++i) {
          const Real* gi = g.data() + i * m;
          const Real* ai = ta2.data() + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const Real aik = ai[kk];
            Real* gbk = gb.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) gbk[j] += aik * gi[j];
          }
        }
      }
    });
    return o;
  }

  /// x[n,m] + bias[m] broadcast over rows.
  Var add_rowwise(Var x, Var bias) {
    const Tensor<Real>&tx = val(x), &tb = val(bias);
    require(tx.rank() == 2 && tb.size() == tx.cols(), "add_rowwise: bias width mismatch");
    const std::size_t n = tx.rows(), m = tx.cols();
    Tensor<Real> out({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out(i, j) = tx(i, j) + tb[j];
    Var o = push(std::move(out), needs(x) || needs(bias));
    record(o, [this, x, bias, o, n, m] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(x)) {
        Tensor<Real>& gx = ensure_grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (needs(bias)) {
        Tensor<Real>& gb = ensure_grad(bias);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g.data()[i * m + j];
      }
    });
    return o;
  }

  /// Row-wise normalization to mean 0 / variance 1 (eps inside the sqrt),
  /// then per-column affine with gamma and beta.
  Var layer_norm(Var x, Var gamma, Var beta, Real eps) {
    const Tensor<Real>&tx = val(x), &tg = val(gamma), &tb = val(beta);
    require(tx.rank() == 2, "layer_norm: rank-2 input required");
    const std::size_t n = tx.rows(), d = tx.cols();
    require(tg.size() == d && tb.size() == d, "layer_norm: gamma/beta width mismatch");
    Tensor<Real> xhat({n, d});
    Tensor<Real> rstd({n});
    Tensor<Real> out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      const Real* xi = tx.data() + i * d;
      Real mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += xi[j];
      mu /= Real(d);
      Real var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        Real c = xi[j] - mu;
        var += c * c;
      }
      var /= Real(d);
      const Real rs = Real(1) / std::sqrt(var + eps);
      rstd[i] = rs;
      Real* xh = xhat.data() + i * d;
      Real* oi = out.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        xh[j] = (xi[j] - mu) * rs;
        oi[j] = tg[j] * xh[j] + tb[j];
      }
    }
    Var o = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
    record(o, [this, x, gamma, beta, o, n, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      const Tensor<Real>& tg2 = nodes_[gamma.id].value;
      if (needs(gamma)) {
        Tensor<Real>& gg = ensure_grad(gamma);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g.data()[i * d + j] * xhat.data()[i * d + j];
      }
      if (needs(beta)) {
        Tensor<Real>& gb = ensure_grad(beta);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g.data()[i * d + j];
      }
      if (needs(x)) {
        Tensor<Real>& gx = ensure_grad(x);
        for (std::size_t i = 0; i < n; ++i) {
          const Real* gi = g.data() + i * d;
          const Real* xh = xhat.data() + i * d;
          Real mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const Real dxh = gi[j] * tg2[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
          }
          mean_dxhat /= Real(d);
          mean_dxhat_xhat /= Real(d);
          Real* gxi = gx.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            const Real dxh = gi[j] * tg2[j];
            gxi[j] += rstd[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      }
    });
    return o;
  }

  Var concat_cols(Var a, Var b) {
    const Tensor<Real>&ta = val(a), &tb = val(b);
    require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(),
            "concat_cols: row count mismatch");
    const std::size_t n = ta.rows(), p = ta.cols(), q = tb.cols();
    Tensor<Real> out({n, p + q});
    for (std::size_t i = 0; i < n; ++i) {
      Real* oi = out.data() + i * (p + q);
      const Real* ai = ta.data() + i * p;
      const Real* bi = tb.data() + i * q;
      for (std::size_t j = 0; j < p; ++j) oi[j] = ai[j];
      for (std::size_t j = 0; j < q; ++j) oi[p + j] = bi[j];
    }
    Var o = push(std::move(out), needs(a) || needs(b));
    record(o, [this, a, b, o, n, p, q] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      if (needs(a)) {
        Tensor<Real>& ga = ensure_grad(a);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < p; ++j) ga.data()[i * p + j] += g.data()[i * (p + q) + j];
      }
      if (needs(b)) {
        Tensor<Real>& gb = ensure_grad(b);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < q; ++j) gb.data()[i * q + j] += g.data()[i * (p + q) + p + j];
      }
    });
    return o;
  }

  Var gather_rows(Var x, std::vector<std::uint32_t> rows) {
    const Tensor<Real>& tx = val(x);
    require(tx.rank() == 2, "gather_rows: rank-2 input required");
    const std::size_t d = tx.cols();
    Tensor<Real> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i] < tx.rows(), "gather_rows: row index out of range");
      const Real* src = tx.data() + std::size_t(rows[i]) * d;
      Real* dst = out.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    Var o = push(std::move(out), needs(x));
    record(o, [this, x, o, d, rows = std::move(rows)] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Real* dst = gx.data() + std::size_t(rows[i]) * d;
        const Real* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
    return o;
  }

  /// [num_rows, d] tensor whose listed rows all equal the given row vector;
  /// every other row is zero. Rows may repeat.
  Var broadcast_to_rows(Var vec, std::vector<std::uint32_t> rows, std::size_t num_rows) {
    const Tensor<Real>& tv = val(vec);
    const std::size_t d = tv.size();
    Tensor<Real> out({num_rows, d});
    for (std::uint32_t r : rows) {
      require(r < num_rows, "broadcast_to_rows: row index out of range");
      Real* dst = out.data() + std::size_t(r) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += tv[j];
    }
    Var o = push(std::move(out), needs(vec));
    record(o, [this, vec, o, d, rows = std::move(rows)] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      Tensor<Real>& gv = ensure_grad(vec);
      for (std::uint32_t r : rows) {
        const Real* src = g.data() + std::size_t(r) * d;
        for (std::size_t j = 0; j < d; ++j) gv[j] += src[j];
      }
    });
    return o;
  }

  /// [n, d] tensor with every row equal to the given row vector.
  Var broadcast_rows(Var vec, std::size_t n) {
    const Tensor<Real>& tv = val(vec);
    const std::size_t d = tv.size();
    Tensor<Real> out({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out.data()[i * d + j] = tv[j];
    Var o = push(std::move(out), needs(vec));
    record(o, [this, vec, o, n, d] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      Tensor<Real>& gv = ensure_grad(vec);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gv[j] += g.data()[i * d + j];
    });
    return o;
  }

  /// Sparse message aggregation over directed arcs, vectorized over q
  /// interleaved state slices ("queries").
  ///
  /// states:  [num_nodes * q, d], row (v*q + i) is node v's state for slice i
  /// weights: [num_arcs, d], one weight row per arc
  /// out[dst[a]*q + i] += states[src[a]*q + i] * weights[a]  (elementwise)
  ///
  /// Arcs are processed in storage order, so per-node summation order is
  /// fixed and results are deterministic. The src/dst vectors must outlive
  /// the tape's backward pass.
  Var edge_mul_scatter(Var states, Var weights, const std::vector<std::uint32_t>* src,
                       const std::vector<std::uint32_t>* dst, std::size_t q) {
    const Tensor<Real>&ts = val(states), &tw = val(weights);
    require(ts.rank() == 2 && tw.rank() == 2, "edge_mul_scatter: rank-2 inputs required");
    require(ts.cols() == tw.cols(), "edge_mul_scatter: width mismatch");
    require(src->size() == tw.rows() && dst->size() == tw.rows(),
            "edge_mul_scatter: arc count mismatch");
    const std::size_t d = ts.cols(), num_arcs = src->size();
    Tensor<Real> out(ts.shape());
    for (std::size_t a = 0; a < num_arcs; ++a) {
      const Real* w = tw.data() + a * d;
      const Real* s = ts.data() + std::size_t((*src)[a]) * q * d;
      Real* t = out.data() + std::size_t((*dst)[a]) * q * d;
      for (std::size_t i = 0; i < q; ++i) {
        const Real* si = s + i * d;
        Real* ti = t + i * d;
        for (std::size_t j = 0; j < d; ++j) ti[j] += si[j] * w[j];
      }
    }
    Var o = push(std::move(out), needs(states) || needs(weights));
    record(o, [this, states, weights, o, src, dst, q, d, num_arcs] {
      const Tensor<Real>& g = nodes_[o.id].grad;
      const Tensor<Real>& ts2 = nodes_[states.id].value;
      const Tensor<Real>& tw2 = nodes_[weights.id].value;
      const bool ns = needs(states), nw = needs(weights);
      Tensor<Real>* gs = ns ? &ensure_grad(states) : nullptr;
      Tensor<Real>* gw = nw ? &ensure_grad(weights) : nullptr;
      for (std::size_t a = 0; a < num_arcs; ++a) {
        const Real* w = tw2.data() + a * d;
        const Real* go = g.data() + std::size_t((*dst)[a]) * q * d;
        const Real* s = ts2.data() + std::size_t((*src)[a]) * q * d;
        for (std::size_t i = 0; i < q; ++i) {
          const Real* gi = go + i * d;
          const Real* si = s + i * d;
          if (ns) {
            Real* gsi = gs->data() + std::size_t((*src)[a]) * q * d + i * d;
            for (std::size_t j = 0; j < d; ++j) gsi[j] += gi[j] * w[j];
          }
          if (nw) {
            Real* gwa = gw->data() + a * d;
            for (std::size_t j = 0; j < d; ++j) gwa[j] += gi[j] * si[j];
          }
        }
      }
    });
    return o;
  }

  // ---- reductions ----------------------------------------------------------

  Var sum_all(Var x) {
    const Tensor<Real>& tx = val(x);
    Real s = 0;
    for (std::size_t i = 0; i < tx.size(); ++i) s += tx[i];
    Var o = push(Tensor<Real>::scalar(s), needs(x));
    record(o, [this, x, o] {
      const Real g = nodes_[o.id].grad[0];
      Tensor<Real>& gx = ensure_grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return o;
  }

  Var mean_all(Var x) {
    const std::size_t n = val(x).size();
    require(n > 0, "mean_all: empty tensor");
    return scale(sum_all(x), Real(1) / Real(n));
  }

  // ---- backward ------------------------------------------------------------

  /// Reverse sweep from a scalar loss. Fills parameter gradients (+=) in the
  /// stores the leaves came from. Throws if run twice on the same taped graph.
  void backward(Var loss) {
    if (backward_done_)
      throw std::logic_error("Tape::backward called twice without re-taping");
    require(val(loss).size() == 1, "backward: loss must be scalar");
    backward_done_ = true;
    ensure_grad(loss)[0] = Real(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backprop && !node.grad.empty()) node.backprop();
    }
    for (const Leaf& leaf : leaves_) {
      const Tensor<Real>& g = nodes_[leaf.var.id].grad;
      if (g.empty()) continue;
      Tensor<Real>& dst = leaf.store->grad(leaf.name);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated lazily during backward
    std::function<void()> backprop;
    bool needs_grad = false;
  };
  struct Leaf {
    Var var;
    ParamStore<Real>* store;
    std::string name;
  };

  static void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  }

  static Real stable_sigmoid(Real x) {
    if (x >= Real(0)) {
      const Real e = std::exp(-x);
      return Real(1) / (Real(1) + e);
    }
    const Real e = std::exp(x);
    return e / (Real(1) + e);
  }

  static Real softplus(Real x) {
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    const Real m = x > Real(0) ? x : Real(0);
    return m + std::log1p(std::exp(-std::abs(x)));
  }

  const Tensor<Real>& val(Var v) const { return nodes_[v.id].value; }
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Tensor<Real>& ensure_grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<Real>(n.value.shape());
    return n.grad;
  }

  Var push(Tensor<Real> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<Real>(), nullptr, needs_grad});
    return Var{std::uint32_t(nodes_.size() - 1)};
  }

  template <class Fn>
  void record(Var out, Fn&& fn) {
    if (grad_enabled_ && nodes_[out.id].needs_grad)
      nodes_[out.id].backprop = std::forward<Fn>(fn);
  }

  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

}  // namespace nbfrec
