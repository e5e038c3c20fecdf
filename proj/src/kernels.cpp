#include "plan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plan::kern {

namespace {
void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), "matmul: shape mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
    }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), "matmul_nt: shape mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(), "matmul_tn: shape mismatch");
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += av * b(p, j);
    }
  return c;
}

Tensor affine_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "affine_rows: rank mismatch");
  require(x.cols() == w.cols() && w.rows() == b.dim(0), "affine_rows: shape mismatch");
  Tensor y = matmul_nt(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "sub: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] -= b[i];
  return c;
}

Tensor elem_mul(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "elem_mul: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] *= b[i];
  return c;
}

Tensor scale(const Tensor& a, double c) {
  Tensor r = a;
  for (std::size_t i = 0; i < r.numel(); ++i) r[i] *= c;
  return r;
}

Tensor linear_mix(const Tensor& a, const Tensor& b, double ca, double cb) {
  require(a.same_shape(b), "linear_mix: shape mismatch");
  Tensor c = a;
  for (std::size_t i = 0; i < c.numel(); ++i) c[i] = ca * a[i] + cb * b[i];
  return c;
}

Tensor row_mean(const Tensor& x) {
  require(x.rank() == 2, "row_mean: rank-2 required");
  Tensor r({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x(i, j);
    r[i] = s / static_cast<double>(x.cols());
  }
  return r;
}

Tensor col_mean(const Tensor& x) {
  require(x.rank() == 2, "col_mean: rank-2 required");
  Tensor r({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
    r[j] = s / static_cast<double>(x.rows());
  }
  return r;
}

Tensor row_sum(const Tensor& x) {
  require(x.rank() == 2, "row_sum: rank-2 required");
  Tensor r({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x(i, j);
    r[i] = s;
  }
  return r;
}

Tensor col_sum(const Tensor& x) {
  require(x.rank() == 2, "col_sum: rank-2 required");
  Tensor r({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
    r[j] = s;
  }
  return r;
}

Tensor row_std_pop(const Tensor& x) {
  require(x.rank() == 2, "row_std_pop: rank-2 required");
  Tensor mu = row_mean(x);
  Tensor r({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - mu[i];
      s += d * d;
    }
    r[i] = std::sqrt(s / static_cast<double>(x.cols()));
  }
  return r;
}

Tensor col_std_pop(const Tensor& x) {
  require(x.rank() == 2, "col_std_pop: rank-2 required");
  Tensor mu = col_mean(x);
  Tensor r({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double d = x(i, j) - mu[j];
      s += d * d;
    }
    r[j] = std::sqrt(s / static_cast<double>(x.rows()));
  }
  return r;
}

Tensor mean_rows(const Tensor& x) {
  require(x.rank() == 2, "mean_rows: rank-2 required");
  Tensor r({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
    r[j] = s / static_cast<double>(x.rows());
  }
  return r;
}

double sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  return s;
}

double mean_all(const Tensor& x) { return sum_all(x) / static_cast<double>(x.numel()); }

double frobenius_norm(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Tensor outer_sum(const Tensor& u, const Tensor& v) {
  require(u.rank() == 1 && v.rank() == 1, "outer_sum: rank-1 required");
  Tensor x({u.dim(0), v.dim(0)});
  for (std::size_t i = 0; i < u.dim(0); ++i)
    for (std::size_t j = 0; j < v.dim(0); ++j) x(i, j) = u[i] + v[j];
  return x;
}

Tensor softmax_all(const Tensor& x) {
  require(x.numel() > 0, "softmax_all: empty input");
  double mx = x[0];
  for (std::size_t i = 1; i < x.numel(); ++i) mx = std::max(mx, x[i]);
  Tensor p = x;
  double z = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    p[i] = std::exp(p[i] - mx);
    z += p[i];
  }
  for (std::size_t i = 0; i < p.numel(); ++i) p[i] /= z;
  return p;
}

double lse_all(const Tensor& x) {
  require(x.numel() > 0, "lse_all: empty input");
  double mx = x[0];
  for (std::size_t i = 1; i < x.numel(); ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) z += std::exp(x[i] - mx);
  return mx + std::log(z);
}

Tensor row_lse(const Tensor& x) {
  require(x.rank() == 2, "row_lse: rank-2 required");
  Tensor r({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(x(i, j) - mx);
    r[i] = mx + std::log(z);
  }
  return r;
}

Tensor col_lse(const Tensor& x) {
  require(x.rank() == 2, "col_lse: rank-2 required");
  Tensor r({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mx = x(0, j);
    for (std::size_t i = 1; i < x.rows(); ++i) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) z += std::exp(x(i, j) - mx);
    r[j] = mx + std::log(z);
  }
  return r;
}

Tensor diag(const Tensor& x) {
  require(x.rank() == 2 && x.rows() == x.cols(), "diag: square rank-2 required");
  Tensor r({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) r[i] = x(i, i);
  return r;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  require(x.rank() == 2, "gather_rows: rank-2 required");
  Tensor r({idx.size(), x.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < x.rows(), "gather_rows: index out of range");
    for (std::size_t j = 0; j < x.cols(); ++j) r(i, j) = x(idx[i], j);
  }
  return r;
}

Tensor gather_vec(const Tensor& v, const std::vector<std::size_t>& idx) {
  require(v.rank() == 1, "gather_vec: rank-1 required");
  Tensor r({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < v.dim(0), "gather_vec: index out of range");
    r[i] = v[idx[i]];
  }
  return r;
}

Tensor l2_normalize(const Tensor& v) {
  require(v.rank() == 1, "l2_normalize: rank-1 required");
  double n = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) n += v[i] * v[i];
  n = std::sqrt(n);
  if (n == 0.0) return v;
  return scale(v, 1.0 / n);
}

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace plan::kern
