#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "finex/tensor.hpp"

namespace finex::ad {

// Reverse-mode tape over matrix-granularity ops. A Tape is built per batch,
// backward() runs the recorded closures in reverse order, and leaf gradients
// are accumulated into external sinks (the parameter grad buffers).
class Tape {
 public:
  using Var = int;
  static constexpr Var kNone = -1;

  struct Node {
    Tensor val;                    // owned value (interior nodes)
    const Tensor* ext = nullptr;   // external value (leaves)
    Tensor* grad_sink = nullptr;   // external grad accumulator (leaves)
    Tensor grad;
    bool needs = false;
    std::function<void(Tape&, Node&)> back;
  };

  const Tensor& val(Var v) const {
    const Node& n = nodes_[v];
    return n.ext ? *n.ext : n.val;
  }

  bool needs_grad(Var v) const { return nodes_[v].needs; }

  Tensor& grad(Var v) {
    Node& n = nodes_[v];
    if (n.grad.empty()) {
      const Tensor& t = val(v);
      n.grad = Tensor::zeros(t.rows, t.cols);
    }
    return n.grad;
  }

  // Leaf referencing external storage. Gradient flows into *sink when given.
  Var leaf(const Tensor& t, Tensor* sink = nullptr) {
    Node n;
    n.ext = &t;
    n.grad_sink = sink;
    n.needs = sink != nullptr;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var constant(Tensor t) {
    Node n;
    n.val = std::move(t);
    n.needs = false;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void backward(Var root) {
    Node& r = nodes_[root];
    const Tensor& rv = val(root);
    if (rv.rows != 1 || rv.cols != 1)
      throw std::runtime_error("backward: root must be scalar");
    grad(root).d[0] = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs || n.grad.empty()) continue;
      if (n.back) n.back(*this, n);
      if (n.grad_sink) n.grad_sink->m() += n.grad.m();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- ops ----

  // C = A * B
  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    Tensor out(ta.rows, tb.cols);
    out.m().noalias() = ta.m() * tb.m();
    return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m().noalias() += n.grad.m() * t.val(b).m().transpose();
      if (t.needs_grad(b)) t.grad(b).m().noalias() += t.val(a).m().transpose() * n.grad.m();
    });
  }

  // C = A * B^T
  Var matmul_nt(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    Tensor out(ta.rows, tb.rows);
    out.m().noalias() = ta.m() * tb.m().transpose();
    return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m().noalias() += n.grad.m() * t.val(b).m();
      if (t.needs_grad(b)) t.grad(b).m().noalias() += n.grad.m().transpose() * t.val(a).m();
    });
  }

  Var add(Var a, Var b) {
    Tensor out = val(a);
    out.m() += val(b).m();
    return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m() += n.grad.m();
      if (t.needs_grad(b)) t.grad(b).m() += n.grad.m();
    });
  }

  // A [m x n] + row vector b [1 x n] broadcast over rows
  Var add_rowvec(Var a, Var b) {
    Tensor out = val(a);
    out.m().rowwise() += Eigen::RowVectorXd::Map(val(b).d.data(), val(b).cols);
    return make(std::move(out), {a, b}, [a, b](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m() += n.grad.m();
      if (t.needs_grad(b))
        t.grad(b).m() += n.grad.m().colwise().sum();
    });
  }

  Var scale(Var a, double c) {
    Tensor out = val(a);
    out.m() *= c;
    return make(std::move(out), {a}, [a, c](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m() += c * n.grad.m();
    });
  }

  Var add_many(const std::vector<Var>& vs) {
    Tensor out = val(vs.front());
    for (std::size_t i = 1; i < vs.size(); ++i) out.m() += val(vs[i]).m();
    auto vars = vs;
    return make(std::move(out), vars, [vars](Tape& t, Node& n) {
      for (Var v : vars)
        if (t.needs_grad(v)) t.grad(v).m() += n.grad.m();
    });
  }

  // rows of E gathered by ids: out[i] = E[ids[i]]
  Var rows_lookup(Var e, const std::vector<int>& ids) {
    const Tensor& te = val(e);
    Tensor out(static_cast<int>(ids.size()), te.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.m().row(static_cast<int>(i)) = te.m().row(ids[i]);
    return make(std::move(out), {e}, [e, ids](Tape& t, Node& n) {
      if (!t.needs_grad(e)) return;
      auto g = t.grad(e).m();
      for (std::size_t i = 0; i < ids.size(); ++i)
        g.row(ids[i]) += n.grad.m().row(static_cast<int>(i));
    });
  }

  Var slice_rows(Var a, int start, int len) {
    const Tensor& ta = val(a);
    Tensor out(len, ta.cols);
    out.m() = ta.m().middleRows(start, len);
    return make(std::move(out), {a}, [a, start, len](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m().middleRows(start, len) += n.grad.m();
    });
  }

  Var slice_cols(Var a, int start, int len) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, len);
    out.m() = ta.m().middleCols(start, len);
    return make(std::move(out), {a}, [a, start, len](Tape& t, Node& n) {
      if (t.needs_grad(a)) t.grad(a).m().middleCols(start, len) += n.grad.m();
    });
  }

  Var concat_cols(const std::vector<Var>& vs) {
    int rows = val(vs.front()).rows;
    int cols = 0;
    for (Var v : vs) cols += val(v).cols;
    Tensor out(rows, cols);
    int off = 0;
    for (Var v : vs) {
      out.m().middleCols(off, val(v).cols) = val(v).m();
      off += val(v).cols;
    }
    auto vars = vs;
    return make(std::move(out), vars, [vars](Tape& t, Node& n) {
      int off = 0;
      for (Var v : vars) {
        int c = t.val(v).cols;
        if (t.needs_grad(v)) t.grad(v).m() += n.grad.m().middleCols(off, c);
        off += c;
      }
    });
  }

  // row-wise softmax; when causal, entry (i, j) with j > i + offset is masked
  Var softmax_rows(Var a, bool causal = false, int offset = 0) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (int i = 0; i < ta.rows; ++i) {
      int limit = causal ? std::min(ta.cols, i + 1 + offset) : ta.cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < limit; ++j) mx = std::max(mx, ta.at(i, j));
      double sum = 0;
      for (int j = 0; j < limit; ++j) {
        double e = std::exp(ta.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < limit; ++j) out.at(i, j) /= sum;
      for (int j = limit; j < ta.cols; ++j) out.at(i, j) = 0.0;
    }
    return make(std::move(out), {a}, [a](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      const Tensor& y = n.val;
      auto ga = t.grad(a).m();
      for (int i = 0; i < y.rows; ++i) {
        double dot = 0;
        for (int j = 0; j < y.cols; ++j) dot += n.grad.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols; ++j)
          ga(i, j) += y.at(i, j) * (n.grad.at(i, j) - dot);
      }
    });
  }

  // per-row layer norm with gain g [1 x n] and bias b [1 x n]
  Var layer_norm(Var a, Var g, Var b, double eps = 1e-5) {
    const Tensor& ta = val(a);
    const Tensor& tg = val(g);
    const Tensor& tb = val(b);
    const int n = ta.cols;
    Tensor out(ta.rows, n);
    Tensor xhat(ta.rows, n);
    Tensor inv_std(ta.rows, 1);
    for (int i = 0; i < ta.rows; ++i) {
      double mu = 0;
      for (int j = 0; j < n; ++j) mu += ta.at(i, j);
      mu /= n;
      double var = 0;
      for (int j = 0; j < n; ++j) {
        double dv = ta.at(i, j) - mu;
        var += dv * dv;
      }
      var /= n;
      double is = 1.0 / std::sqrt(var + eps);
      inv_std.at(i, 0) = is;
      for (int j = 0; j < n; ++j) {
        double xh = (ta.at(i, j) - mu) * is;
        xhat.at(i, j) = xh;
        out.at(i, j) = xh * tg.at(0, j) + tb.at(0, j);
      }
    }
    auto xh_c = std::make_shared<Tensor>(std::move(xhat));
    auto is_c = std::make_shared<Tensor>(std::move(inv_std));
    return make(std::move(out), {a, g, b}, [a, g, b, xh_c, is_c](Tape& t, Node& n) {
      const Tensor& xh = *xh_c;
      const int rows = xh.rows, cols = xh.cols;
      const Tensor& tg = t.val(g);
      if (t.needs_grad(g) || t.needs_grad(b)) {
        for (int j = 0; j < cols; ++j) {
          double dg = 0, db = 0;
          for (int i = 0; i < rows; ++i) {
            dg += n.grad.at(i, j) * xh.at(i, j);
            db += n.grad.at(i, j);
          }
          if (t.needs_grad(g)) t.grad(g).at(0, j) += dg;
          if (t.needs_grad(b)) t.grad(b).at(0, j) += db;
        }
      }
      if (t.needs_grad(a)) {
        auto ga = t.grad(a).m();
        for (int i = 0; i < rows; ++i) {
          double sum_dxh = 0, sum_dxh_xh = 0;
          for (int j = 0; j < cols; ++j) {
            double dxh = n.grad.at(i, j) * tg.at(0, j);
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh.at(i, j);
          }
          double is = is_c->at(i, 0);
          for (int j = 0; j < cols; ++j) {
            double dxh = n.grad.at(i, j) * tg.at(0, j);
            ga(i, j) += is * (dxh - (sum_dxh + xh.at(i, j) * sum_dxh_xh) / cols);
          }
        }
      }
    });
  }

  // tanh-approximation GELU (smooth, finite-difference friendly)
  Var gelu(Var a) {
    static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      double x = ta.d[i];
      double u = kC * (x + kA * x * x * x);
      out.d[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
    return make(std::move(out), {a}, [a](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      const Tensor& ta = t.val(a);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ta.size(); ++i) {
        double x = ta.d[i];
        double u = kC * (x + kA * x * x * x);
        double th = std::tanh(u);
        double dudx = kC * (1.0 + 3.0 * kA * x * x);
        double dydx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dudx;
        ga.d[i] += n.grad.d[i] * dydx;
      }
    });
  }

  Var sigmoid(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < ta.size(); ++i)
      out.d[i] = 1.0 / (1.0 + std::exp(-ta.d[i]));
    return make(std::move(out), {a}, [a](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < n.val.size(); ++i) {
        double y = n.val.d[i];
        ga.d[i] += n.grad.d[i] * y * (1.0 - y);
      }
    });
  }

  // log(max(a, floor)); zero gradient below the clamp
  Var log_clamped(Var a, double floor) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (std::size_t i = 0; i < ta.size(); ++i)
      out.d[i] = std::log(std::max(ta.d[i], floor));
    return make(std::move(out), {a}, [a, floor](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      const Tensor& ta = t.val(a);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ta.size(); ++i)
        if (ta.d[i] > floor) ga.d[i] += n.grad.d[i] / ta.d[i];
    });
  }

  Var sum_squares(Var a) {
    const Tensor& ta = val(a);
    double s = 0;
    for (double v : ta.d) s += v * v;
    return make(Tensor::scalar(s), {a}, [a](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      const Tensor& ta = t.val(a);
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < ta.size(); ++i)
        ga.d[i] += 2.0 * ta.d[i] * n.grad.d[0];
    });
  }

  Var mean_all(Var a) {
    const Tensor& ta = val(a);
    double s = 0;
    for (double v : ta.d) s += v;
    const double inv = 1.0 / static_cast<double>(ta.size());
    return make(Tensor::scalar(s * inv), {a}, [a, inv](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      t.grad(a).m().array() += n.grad.d[0] * inv;
    });
  }

  // mean over selected positions of -log(P[t, ids[t]]); positions with
  // ids[t] == skip_id are excluded
  Var nll_mean(Var probs, const std::vector<int>& ids, int skip_id = -1) {
    const Tensor& p = val(probs);
    std::vector<int> pos;
    for (std::size_t t = 0; t < ids.size(); ++t)
      if (ids[t] != skip_id) pos.push_back(static_cast<int>(t));
    if (pos.empty()) throw std::runtime_error("nll_mean: no scored positions");
    double s = 0;
    for (int t : pos) s += -std::log(std::max(p.at(t, ids[t]), 1e-300));
    const double inv = 1.0 / static_cast<double>(pos.size());
    return make(Tensor::scalar(s * inv), {probs},
                [probs, ids, pos, inv](Tape& t, Node& n) {
                  if (!t.needs_grad(probs)) return;
                  const Tensor& p = t.val(probs);
                  Tensor& g = t.grad(probs);
                  for (int ti : pos) {
                    double pv = std::max(p.at(ti, ids[ti]), 1e-300);
                    g.at(ti, ids[ti]) += n.grad.d[0] * (-inv / pv);
                  }
                });
  }

  // gathers 1x1 vars into a column vector [n x 1]
  Var stack_scalars(const std::vector<Var>& vs) {
    Tensor out(static_cast<int>(vs.size()), 1);
    for (std::size_t i = 0; i < vs.size(); ++i) out.at(static_cast<int>(i), 0) = val(vs[i]).item();
    auto vars = vs;
    return make(std::move(out), vars, [vars](Tape& t, Node& n) {
      for (std::size_t i = 0; i < vars.size(); ++i)
        if (t.needs_grad(vars[i]))
          t.grad(vars[i]).d[0] += n.grad.at(static_cast<int>(i), 0);
    });
  }

  // scalar log(sum(exp(a_i))) over all entries
  Var logsumexp_all(Var a) {
    const Tensor& ta = val(a);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : ta.d) mx = std::max(mx, v);
    double s = 0;
    for (double v : ta.d) s += std::exp(v - mx);
    double lse = mx + std::log(s);
    return make(Tensor::scalar(lse), {a}, [a, lse](Tape& t, Node& n) {
      if (!t.needs_grad(a)) return;
      const Tensor& ta = t.val(a);
      Tensor& g = t.grad(a);
      for (std::size_t i = 0; i < ta.size(); ++i)
        g.d[i] += n.grad.d[0] * std::exp(ta.d[i] - lse);
    });
  }

 private:
  Var make(Tensor out, const std::vector<Var>& parents,
           std::function<void(Tape&, Node&)> back) {
    Node n;
    n.val = std::move(out);
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[p].needs;
    n.needs = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace finex::ad
