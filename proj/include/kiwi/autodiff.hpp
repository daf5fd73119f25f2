#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kiwi/params.hpp"
#include "kiwi/tensor.hpp"

namespace kiwi::ad {

// Reverse-mode autodiff over 2D tensors. Graphs are built per forward pass
// as shared_ptr DAGs and freed when the roots go out of scope; backward()
// walks the DAG in reverse topological order. Leaves tied to a Param
// accumulate into Param::grad.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;
    std::vector<Var> parents;
    std::function<void(Node&)> back; // distributes this->grad into parents
    Param* param = nullptr;
};

Var constant(Tensor v);
Var leaf(Param& p);

Var matmul(const Var& a, const Var& b);     // (m,k)x(k,n)
Var matmul_nt(const Var& a, const Var& b);  // (m,k)x(n,k)^T -> (m,n)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& r); // broadcast (1,n) over rows
Var mul_rowvec(const Var& a, const Var& r);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var scale_by(const Var& a, const Var& s);   // s is (1,1)
Var gelu(const Var& a);
Var layernorm(const Var& a, double eps = 1e-6); // row-wise, no affine
Var softmax_rows(const Var& a);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int64_t r0, int64_t r1); // [r0, r1)
Var slice_cols(const Var& a, int64_t c0, int64_t c1);
Var gather_rows(const Var& a, std::vector<int64_t> idx);
Var reshape(const Var& a, std::vector<int64_t> shape);
Var mean_sq_diff(const Var& a, Tensor target);  // scalar (1,1)
Var sum_all(const Var& a);                      // scalar (1,1)

void backward(const Var& loss);

} // namespace kiwi::ad
