#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "after/rng.hpp"
#include "after/tensor.hpp"

namespace after {

// Define-by-run reverse-mode tape over 2-D tensors. A Graph is rebuilt for
// every forward pass and owns the op records in insertion order, which is a
// valid topological order by construction. backward() sweeps the tape once
// in reverse. Leaf tensors (parameters, inputs) accumulate gradients across
// backward calls; tape-produced intermediates are re-zeroed on each call.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // c = a * b
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

  // elementwise sum, same shape
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);

  // y = c * x
  TensorPtr scale(const TensorPtr& x, double c);

  // elementwise product
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

  // row-broadcast bias add; bias is 1 x n
  TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias);

  // exact-erf GELU
  TensorPtr gelu(const TensorPtr& x);

  // per-row standardization then affine; gamma/beta are 1 x n
  TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                       const TensorPtr& beta, double eps = 1e-5);

  // row-wise softmax
  TensorPtr softmax_rows(const TensorPtr& x);

  // mean of -log softmax(logits)[target] over rows with row_mask != 0;
  // masked rows contribute nothing and their targets are ignored
  TensorPtr cross_entropy_logits(const TensorPtr& logits,
                                 const std::vector<int>& targets,
                                 const std::vector<std::uint8_t>& row_mask);

  // row gather; backward scatter-adds (duplicate ids accumulate)
  TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids);

  // identity forward, exact negation of the upstream gradient in backward
  TensorPtr grad_reverse(const TensorPtr& x);

  // inverted-scaling dropout; identity (no tape node) when !train_mode or p == 0
  TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool train_mode);

  // multi-head scaled dot-product self-attention over a flattened batch.
  // q/k/v are (batch*seq) x d; key_mask has one flag per flattened position,
  // 0 marks padding (excluded from the softmax as attention keys).
  TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                      int batch, int seq, int n_heads,
                      const std::vector<std::uint8_t>& key_mask);

  // 1x1 sum of all entries
  TensorPtr sum_all(const TensorPtr& x);

  // Seeds loss grad with 1.0 and accumulates gradients in reverse insertion
  // order. loss must be a 1x1 output of this graph.
  void backward(const TensorPtr& loss);

  std::size_t node_count() const { return tape_.size(); }

 private:
  struct Node {
    TensorPtr out;
    std::function<void()> grad_fn;
  };
  std::vector<Node> tape_;

  TensorPtr new_output(int rows, int cols, bool requires_grad);
  void record(TensorPtr out, std::function<void()> grad_fn);
};

// Max relative error between the tape gradient of f and a central finite
// difference, coordinate by coordinate. Denominator floored at 1.0 so
// near-zero gradients are compared absolutely.
struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_row = -1;
  int worst_col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = false;
};

GradCheckReport grad_check(
    const std::function<TensorPtr(Graph&, const TensorPtr&)>& f,
    const TensorPtr& x, double h, double tol);

}  // namespace after
