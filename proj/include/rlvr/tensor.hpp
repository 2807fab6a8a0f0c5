#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rlvr::ad {

// Dense row-major tensor of 64-bit reals, rank 1 or 2. Tensors are immutable
// after the forward op that created them; `grad` accumulates (+=) across
// backward passes until zero_grad().
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first touched by backward

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double scalar() const;
  void ensure_grad();
  void zero_grad();
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, double fill = 0.0);
TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data);
TensorPtr make_param(std::vector<int> shape, std::vector<double> data);
TensorPtr make_scalar(double v);

// Records one backward rule per forward op, in creation order. Creation order
// is a valid topological order (an op's inputs always exist before its
// output), so backward is a single reverse sweep visiting each node once.
class Tape {
 public:
  void record(TensorPtr output, std::function<void()> rule) {
    nodes_.push_back({std::move(output), std::move(rule)});
  }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad leaf.
  // Leaf grads accumulate across calls; intermediate (op output) grads are
  // reset each pass, so a second backward adds one more copy of the gradient.
  void backward(const TensorPtr& loss);

 private:
  struct Node {
    TensorPtr output;
    std::function<void()> rule;
  };
  std::vector<Node> nodes_;
};

// ---- forward ops -----------------------------------------------------------
// Every op takes the tape as first argument; pass nullptr (or inputs without
// requires_grad) for a value-only forward that records nothing.

// C[m×n] = A[m×k] · B[k×n]
TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// C[m×n] = A[m×k] · B[n×k]ᵀ
TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b);

// Elementwise; equal shapes or one scalar operand (no general broadcasting).
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr scale(Tape* tape, const TensorPtr& a, double c);
TensorPtr add_const(Tape* tape, const TensorPtr& a, double c);
// y = a + c·v with v a constant flat array matching a's numel.
TensorPtr add_flat(Tape* tape, const TensorPtr& a, const std::vector<double>& v, double c = 1.0);

TensorPtr gelu(Tape* tape, const TensorPtr& a);
TensorPtr exp_op(Tape* tape, const TensorPtr& a);
TensorPtr log_op(Tape* tape, const TensorPtr& a);  // domain error on x <= 0
TensorPtr clamp(Tape* tape, const TensorPtr& a, double lo, double hi);
TensorPtr minimum(Tape* tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr sum(Tape* tape, const TensorPtr& a);   // -> scalar
TensorPtr mean(Tape* tape, const TensorPtr& a);  // -> scalar

// Row-wise stable log-softmax over the last axis of [n×V] (or a rank-1 [V]).
TensorPtr log_softmax(Tape* tape, const TensorPtr& a);

// Row i of the output is softmax over columns j <= offset+i; masked entries 0.
TensorPtr softmax_causal(Tape* tape, const TensorPtr& scores, int offset);

// Per row: y = x * gain / sqrt(mean(x^2) + eps).
TensorPtr rmsnorm(Tape* tape, const TensorPtr& x, const TensorPtr& gain, double eps = 1e-6);

// Gather rows of an embedding table [V×D] by ids -> [n×D].
TensorPtr embedding_rows(Tape* tape, const TensorPtr& table, const std::vector<int>& ids);

// pick(x[n×V], ids[n]) -> [n] with y_i = x[i, ids[i]].
TensorPtr pick(Tape* tape, const TensorPtr& x, const std::vector<int>& ids);

TensorPtr slice_rows(Tape* tape, const TensorPtr& x, int r0, int r1);
TensorPtr slice_cols(Tape* tape, const TensorPtr& x, int c0, int c1);
TensorPtr concat_rows(Tape* tape, const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(Tape* tape, const std::vector<TensorPtr>& parts);

// y[n×D] = x[n×D] + b[D] broadcast over rows.
TensorPtr add_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& b);

// ---- plain kernels ---------------------------------------------------------
// Serial reference and the OpenMP kernel used by matmul above. Both produce
// bitwise-identical results (row partitioning never reorders a dot product).
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_omp(const double* a, const double* b, double* c, int m, int k, int n);

bool all_finite(const Tensor& t);

// Global cap for worker threads (rollout/scoring/gradient pools and the
// OpenMP kernels). 0 = hardware default.
void set_max_threads(int n);
int max_threads();

}  // namespace rlvr::ad
