#pragma once

#include <functional>
#include <vector>

#include "plan/tensor.hpp"

namespace plan::ad {

// Node handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are created in topological order, so the
// backward sweep is a single reverse pass over creation order.
class Tape {
 public:
  Var leaf(Tensor v);

  Var make(Tensor v, std::function<void(Tape&)> back);

  const Tensor& val(Var x) const { return nodes_[x.id].value; }
  Tensor& grad(Var x);
  bool has_grad(Var x) const { return nodes_[x.id].grad_live; }

  // Seeds d(root)=1 and accumulates gradients into every ancestor.
  // root must hold a single element.
  void backward(Var root);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_live = false;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise / linear ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var elem_mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var linear_mix(Tape& t, Var a, Var b, double ca, double cb);  // ca*a + cb*b
// X scaled by a scalar-valued Var (rank-0/1-element node)
Var mul_scalar_var(Tape& t, Var x, Var s);

// ---- matrix ----
Var matmul(Tape& t, Var a, Var b);     // [m,k]x[k,n]
Var matmul_nt(Tape& t, Var a, Var b);  // [m,k]x[n,k] -> [m,n]
Var affine_rows(Tape& t, Var x, Var w, Var b);

// ---- reductions / statistics ----
Var row_mean(Tape& t, Var x);
Var col_mean(Tape& t, Var x);
Var row_sum(Tape& t, Var x);
Var col_sum(Tape& t, Var x);
Var row_std_pop(Tape& t, Var x);  // zero-variance rows get zero gradient
Var col_std_pop(Tape& t, Var x);
Var mean_rows(Tape& t, Var x);  // [m,d] -> [d]
Var sum_all(Tape& t, Var x);    // -> scalar
Var mean_vec(Tape& t, Var v);   // rank-1 -> scalar

// ---- structure ----
Var outer_sum(Tape& t, Var u, Var v);  // X(i,j) = u(i)+v(j)
Var gather_rows(Tape& t, Var x, std::vector<std::size_t> idx);
Var gather_vec(Tape& t, Var v, std::vector<std::size_t> idx);
Var stack_rows(Tape& t, const std::vector<Var>& rows);  // k x d
Var diag(Tape& t, Var x);

// ---- softmax family ----
Var softmax_all(Tape& t, Var x);
Var lse_all(Tape& t, Var x);  // scalar
Var row_lse(Tape& t, Var x);
Var col_lse(Tape& t, Var x);

// ---- vector geometry ----
Var l2_normalize_vec(Tape& t, Var v);  // zero vector: value 0, gradient 0

// ---- scalar arithmetic on 1-element nodes ----
Var s_add(Tape& t, Var a, Var b);
Var s_sub(Tape& t, Var a, Var b);
Var s_mul(Tape& t, Var a, Var b);
Var s_div(Tape& t, Var a, Var b);

}  // namespace plan::ad
