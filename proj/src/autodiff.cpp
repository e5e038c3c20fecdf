#include "plan/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "plan/kernels.hpp"

namespace plan::ad {

Var Tape::leaf(Tensor v) { return make(std::move(v), nullptr); }

Var Tape::make(Tensor v, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(Var x) {
  Node& n = nodes_[x.id];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (nodes_[root.id].value.numel() != 1)
    throw std::invalid_argument("backward: root must be a single element");
  grad(root)[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad_live && n.back) n.back(*this);
  }
}

void Tape::clear() { nodes_.clear(); }

namespace {
const Tensor& V(Tape& t, Var x) { return t.val(x); }
}  // namespace

Var add(Tape& t, Var a, Var b) {
  return t.make(kern::add(V(t, a), V(t, b)), [a, b, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& ga = tp.grad(a);
    Tensor& gb = tp.grad(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  return t.make(kern::sub(V(t, a), V(t, b)), [a, b, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& ga = tp.grad(a);
    Tensor& gb = tp.grad(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var elem_mul(Tape& t, Var a, Var b) {
  return t.make(kern::elem_mul(V(t, a), V(t, b)),
                [a, b, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  const Tensor& av = tp.val(a);
                  const Tensor& bv = tp.val(b);
                  Tensor& ga = tp.grad(a);
                  Tensor& gb = tp.grad(b);
                  for (std::size_t i = 0; i < g.numel(); ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                  }
                });
}

Var scale(Tape& t, Var a, double c) {
  return t.make(kern::scale(V(t, a), c), [a, c, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  });
}

Var linear_mix(Tape& t, Var a, Var b, double ca, double cb) {
  return t.make(kern::linear_mix(V(t, a), V(t, b), ca, cb),
                [a, b, ca, cb, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  Tensor& ga = tp.grad(a);
                  Tensor& gb = tp.grad(b);
                  for (std::size_t i = 0; i < g.numel(); ++i) {
                    ga[i] += ca * g[i];
                    gb[i] += cb * g[i];
                  }
                });
}

Var mul_scalar_var(Tape& t, Var x, Var s) {
  if (V(t, s).numel() != 1) throw std::invalid_argument("mul_scalar_var: s must be 1-element");
  const double sv = V(t, s)[0];
  return t.make(kern::scale(V(t, x), sv), [x, s, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& xv = tp.val(x);
    const double sval = tp.val(s)[0];
    Tensor& gx = tp.grad(x);
    Tensor& gs = tp.grad(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      gx[i] += sval * g[i];
      acc += g[i] * xv[i];
    }
    gs[0] += acc;
  });
}

Var matmul(Tape& t, Var a, Var b) {
  return t.make(kern::matmul(V(t, a), V(t, b)),
                [a, b, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  // dA = G @ B^T ; dB = A^T @ G
                  Tensor da = kern::matmul_nt(g, tp.val(b));
                  Tensor db = kern::matmul_tn(tp.val(a), g);
                  Tensor& ga = tp.grad(a);
                  Tensor& gb = tp.grad(b);
                  for (std::size_t i = 0; i < da.numel(); ++i) ga[i] += da[i];
                  for (std::size_t i = 0; i < db.numel(); ++i) gb[i] += db[i];
                });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  return t.make(kern::matmul_nt(V(t, a), V(t, b)),
                [a, b, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  // C = A @ B^T: dA = G @ B ; dB = G^T @ A
                  Tensor da = kern::matmul(g, tp.val(b));
                  Tensor db = kern::matmul_tn(g, tp.val(a));
                  Tensor& ga = tp.grad(a);
                  Tensor& gb = tp.grad(b);
                  for (std::size_t i = 0; i < da.numel(); ++i) ga[i] += da[i];
                  for (std::size_t i = 0; i < db.numel(); ++i) gb[i] += db[i];
                });
}

Var affine_rows(Tape& t, Var x, Var w, Var b) {
  return t.make(kern::affine_rows(V(t, x), V(t, w), V(t, b)),
                [x, w, b, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});  // [m,e]
                  // Y = X W^T + 1 b^T: dX = G W ; dW = G^T X ; db = colsum(G)
                  Tensor dx = kern::matmul(g, tp.val(w));
                  Tensor dw = kern::matmul_tn(g, tp.val(x));
                  Tensor& gx = tp.grad(x);
                  Tensor& gw = tp.grad(w);
                  Tensor& gb = tp.grad(b);
                  for (std::size_t i = 0; i < dx.numel(); ++i) gx[i] += dx[i];
                  for (std::size_t i = 0; i < dw.numel(); ++i) gw[i] += dw[i];
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
                });
}

Var row_mean(Tape& t, Var x) {
  const std::size_t n = V(t, x).cols();
  return t.make(kern::row_mean(V(t, x)), [x, n, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g[i] * inv;
  });
}

Var col_mean(Tape& t, Var x) {
  const std::size_t m = V(t, x).rows();
  return t.make(kern::col_mean(V(t, x)), [x, m, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[j] * inv;
  });
}

Var row_sum(Tape& t, Var x) {
  return t.make(kern::row_sum(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[i];
  });
}

Var col_sum(Tape& t, Var x) {
  return t.make(kern::col_sum(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[j];
  });
}

// d std_i / d x_ij = (x_ij - mu_i) / (n * std_i); zero at zero variance.
Var row_std_pop(Tape& t, Var x) {
  return t.make(kern::row_std_pop(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& xv = tp.val(x);
    const Tensor s = tp.val(Var{out});
    const Tensor mu = kern::row_mean(xv);
    Tensor& gx = tp.grad(x);
    const double n = static_cast<double>(xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      if (s[i] <= 0.0) continue;
      const double c = g[i] / (n * s[i]);
      for (std::size_t j = 0; j < xv.cols(); ++j) gx(i, j) += c * (xv(i, j) - mu[i]);
    }
  });
}

Var col_std_pop(Tape& t, Var x) {
  return t.make(kern::col_std_pop(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& xv = tp.val(x);
    const Tensor s = tp.val(Var{out});
    const Tensor mu = kern::col_mean(xv);
    Tensor& gx = tp.grad(x);
    const double m = static_cast<double>(xv.rows());
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      if (s[j] <= 0.0) continue;
      const double c = g[j] / (m * s[j]);
      for (std::size_t i = 0; i < xv.rows(); ++i) gx(i, j) += c * (xv(i, j) - mu[j]);
    }
  });
}

Var mean_rows(Tape& t, Var x) {
  const std::size_t m = V(t, x).rows();
  return t.make(kern::mean_rows(V(t, x)), [x, m, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g[j] * inv;
  });
}

Var sum_all(Tape& t, Var x) {
  return t.make(Tensor::scalar(kern::sum_all(V(t, x))),
                [x, out = static_cast<int>(t.size())](Tape& tp) {
                  const double g = tp.grad(Var{out})[0];
                  Tensor& gx = tp.grad(x);
                  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                });
}

Var mean_vec(Tape& t, Var v) {
  const std::size_t n = V(t, v).numel();
  return t.make(Tensor::scalar(kern::mean_all(V(t, v))),
                [v, n, out = static_cast<int>(t.size())](Tape& tp) {
                  const double g = tp.grad(Var{out})[0] / static_cast<double>(n);
                  Tensor& gv = tp.grad(v);
                  for (std::size_t i = 0; i < n; ++i) gv[i] += g;
                });
}

Var outer_sum(Tape& t, Var u, Var v) {
  return t.make(kern::outer_sum(V(t, u), V(t, v)),
                [u, v, out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  Tensor& gu = tp.grad(u);
                  Tensor& gv = tp.grad(v);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) {
                      gu[i] += g(i, j);
                      gv[j] += g(i, j);
                    }
                });
}

Var gather_rows(Tape& t, Var x, std::vector<std::size_t> idx) {
  return t.make(kern::gather_rows(V(t, x), idx),
                [x, idx = std::move(idx), out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  Tensor& gx = tp.grad(x);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gx(idx[i], j) += g(i, j);
                });
}

Var gather_vec(Tape& t, Var v, std::vector<std::size_t> idx) {
  return t.make(kern::gather_vec(V(t, v), idx),
                [v, idx = std::move(idx), out = static_cast<int>(t.size())](Tape& tp) {
                  const Tensor& g = tp.grad(Var{out});
                  Tensor& gv = tp.grad(v);
                  for (std::size_t i = 0; i < idx.size(); ++i) gv[idx[i]] += g[i];
                });
}

Var stack_rows(Tape& t, const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const std::size_t d = V(t, rows[0]).numel();
  Tensor v({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& r = V(t, rows[i]);
    if (r.numel() != d) throw std::invalid_argument("stack_rows: ragged rows");
    for (std::size_t j = 0; j < d; ++j) v(i, j) = r[j];
  }
  return t.make(std::move(v), [rows, d, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tensor& gr = tp.grad(rows[i]);
      for (std::size_t j = 0; j < d; ++j) gr[j] += g(i, j);
    }
  });
}

Var diag(Tape& t, Var x) {
  return t.make(kern::diag(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx(i, i) += g[i];
  });
}

Var softmax_all(Tape& t, Var x) {
  return t.make(kern::softmax_all(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& p = tp.val(Var{out});
    Tensor& gx = tp.grad(x);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) dot += g[i] * p[i];
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += p[i] * (g[i] - dot);
  });
}

Var lse_all(Tape& t, Var x) {
  return t.make(Tensor::scalar(kern::lse_all(V(t, x))),
                [x, out = static_cast<int>(t.size())](Tape& tp) {
                  const double g = tp.grad(Var{out})[0];
                  const Tensor p = kern::softmax_all(tp.val(x));
                  Tensor& gx = tp.grad(x);
                  for (std::size_t i = 0; i < p.numel(); ++i) gx[i] += g * p[i];
                });
}

Var row_lse(Tape& t, Var x) {
  return t.make(kern::row_lse(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& xv = tp.val(x);
    const Tensor& l = tp.val(Var{out});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < xv.rows(); ++i)
      for (std::size_t j = 0; j < xv.cols(); ++j) gx(i, j) += g[i] * std::exp(xv(i, j) - l[i]);
  });
}

Var col_lse(Tape& t, Var x) {
  return t.make(kern::col_lse(V(t, x)), [x, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& xv = tp.val(x);
    const Tensor& l = tp.val(Var{out});
    Tensor& gx = tp.grad(x);
    for (std::size_t j = 0; j < xv.cols(); ++j)
      for (std::size_t i = 0; i < xv.rows(); ++i) gx(i, j) += g[j] * std::exp(xv(i, j) - l[j]);
  });
}

Var l2_normalize_vec(Tape& t, Var v) {
  return t.make(kern::l2_normalize(V(t, v)), [v, out = static_cast<int>(t.size())](Tape& tp) {
    const Tensor& g = tp.grad(Var{out});
    const Tensor& x = tp.val(v);
    double n2 = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) n2 += x[i] * x[i];
    const double n = std::sqrt(n2);
    Tensor& gx = tp.grad(v);
    if (n == 0.0) return;  // subgradient 0 at the origin
    double dot = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) dot += g[i] * x[i];
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[i] / n - x[i] * dot / (n2 * n);
  });
}

namespace {
Var scalar_binary(Tape& t, Var a, Var b, double val, std::function<void(Tape&, int)> back) {
  if (t.val(a).numel() != 1 || t.val(b).numel() != 1)
    throw std::invalid_argument("scalar op: 1-element operands required");
  return t.make(Tensor::scalar(val),
                [back = std::move(back), out = static_cast<int>(t.size())](Tape& tp) { back(tp, out); });
}
}  // namespace

Var s_add(Tape& t, Var a, Var b) {
  return scalar_binary(t, a, b, V(t, a)[0] + V(t, b)[0], [a, b](Tape& tp, int out) {
    const double g = tp.grad(Var{out})[0];
    tp.grad(a)[0] += g;
    tp.grad(b)[0] += g;
  });
}

Var s_sub(Tape& t, Var a, Var b) {
  return scalar_binary(t, a, b, V(t, a)[0] - V(t, b)[0], [a, b](Tape& tp, int out) {
    const double g = tp.grad(Var{out})[0];
    tp.grad(a)[0] += g;
    tp.grad(b)[0] -= g;
  });
}

Var s_mul(Tape& t, Var a, Var b) {
  return scalar_binary(t, a, b, V(t, a)[0] * V(t, b)[0], [a, b](Tape& tp, int out) {
    const double g = tp.grad(Var{out})[0];
    tp.grad(a)[0] += g * tp.val(b)[0];
    tp.grad(b)[0] += g * tp.val(a)[0];
  });
}

Var s_div(Tape& t, Var a, Var b) {
  return scalar_binary(t, a, b, V(t, a)[0] / V(t, b)[0], [a, b](Tape& tp, int out) {
    const double g = tp.grad(Var{out})[0];
    const double av = tp.val(a)[0], bv = tp.val(b)[0];
    tp.grad(a)[0] += g / bv;
    tp.grad(b)[0] -= g * av / (bv * bv);
  });
}

}  // namespace plan::ad
