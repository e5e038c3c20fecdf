#pragma once

#include <cstddef>
#include <vector>

#include "plan/tensor.hpp"

namespace plan::kern {

// A @ B for [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// A @ B^T for [m,k] x [n,k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// A^T @ B for [k,m] x [k,n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// X @ W^T + b for X [m,d], W [e,d], b [e].
Tensor affine_rows(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor elem_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// ca*a + cb*b
Tensor linear_mix(const Tensor& a, const Tensor& b, double ca, double cb);

Tensor row_mean(const Tensor& x);     // [m,n] -> [m]
Tensor col_mean(const Tensor& x);     // [m,n] -> [n]
Tensor row_sum(const Tensor& x);      // [m,n] -> [m]
Tensor col_sum(const Tensor& x);      // [m,n] -> [n]
Tensor row_std_pop(const Tensor& x);  // population std per row
Tensor col_std_pop(const Tensor& x);  // population std per column
Tensor mean_rows(const Tensor& x);    // [m,d] -> [d], mean over rows

double sum_all(const Tensor& x);
double mean_all(const Tensor& x);
double frobenius_norm(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

// X(i,j) = u(i) + v(j)
Tensor outer_sum(const Tensor& u, const Tensor& v);

// softmax over all entries jointly, max-subtracted.
Tensor softmax_all(const Tensor& x);

double lse_all(const Tensor& x);  // log-sum-exp over all entries
Tensor row_lse(const Tensor& x);  // [m,n] -> [m]
Tensor col_lse(const Tensor& x);  // [m,n] -> [n]
Tensor diag(const Tensor& x);     // [m,m] -> [m]

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
Tensor gather_vec(const Tensor& v, const std::vector<std::size_t>& idx);

// v / ||v||_2; the zero vector maps to zero.
Tensor l2_normalize(const Tensor& v);

bool all_finite(const Tensor& t);

}  // namespace plan::kern
