#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ssrl {

using real = double;
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  uint64_t graph_gen = 0;  // generation of the graph that produced it; 0 = leaf
  int node_id = -1;        // position of the producing op on the tape; -1 = leaf
};
}  // namespace detail

// Dense n-dimensional array participating in a recorded computation graph.
// Value-semantic handle; copies share storage. Row-major layout.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  std::vector<real>& data() { return node_->value; }
  const std::vector<real>& data() const { return node_->value; }
  real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<real>& grad() const;
  std::vector<real>& grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of values; fresh leaf, no graph attachment.
  Tensor clone_detached(bool requires_grad = false) const;

  int node_id() const { return node_->node_id; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Graph: single-use tape. Operations append themselves in execution order
// (hence topological); backward walks the list exactly once in reverse, then
// frees the tape. A second backward on the same graph is an error.
// ---------------------------------------------------------------------------

bool grad_enabled();

// RAII guard that suspends graph recording; tensors created inside never
// receive gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Computes d(loss)/d(leaf) for every requires_grad leaf reachable from loss.
// loss must be scalar. Consumes the active graph.
void backward(const Tensor& loss);

// Number of operations currently recorded (test hook).
size_t graph_size();

// ---------------------------------------------------------------------------
// Operations. Each op validates shapes, checks preconditions, and records a
// backward closure when recording is enabled and any input requires grad.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor add_bias(const Tensor& x, const Tensor& b);       // (B,F) + (F)
Tensor sub(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
Tensor matmul(const Tensor& a, const Tensor& b);         // (M,K)x(K,N)
Tensor transpose(const Tensor& a);                       // 2-D
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor mean_all(const Tensor& a);                        // scalar
Tensor sum_all(const Tensor& a);                         // scalar
Tensor concat_cols(const Tensor& a, const Tensor& b);    // (B,N1)|(B,N2) -> (B,N1+N2)

// Value-identical tensor detached from the graph; gradients never cross.
Tensor stop_grad(const Tensor& a);

// Each slice along `axis` is scaled to unit Euclidean norm; slices with norm
// below eps_norm are scaled by 1/eps_norm instead (no NaN on collapsed input).
inline constexpr real kEpsNorm = 1e-12;
Tensor l2_normalize(const Tensor& a, int axis);

// Cross-correlation. x (B,Cin,H,W), kernel (Cout,Cin,KH,KW).
// Output spatial extent = floor((H + 2*pad - K)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad);

Tensor max_pool2d(const Tensor& x, int window, int stride);
Tensor avg_pool2d(const Tensor& x, int window, int stride);
Tensor global_avg_pool(const Tensor& x);                 // (B,C,H,W) -> (B,C)

// Batch normalization over the batch axis (and spatial axes for 4-D input).
// Train mode uses batch statistics and updates running stats in `stats` via
// momentum rho; eval mode uses running stats only.
inline constexpr real kBnEps = 1e-5;
inline constexpr real kBnMomentum = 0.9;
struct RunningStats {
  std::vector<real> mean;
  std::vector<real> var;
};
enum class BnMode { kTrain, kEval };
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  RunningStats* stats, BnMode mode);

// Column-standardizes a (B,F) matrix with batch statistics, no affine terms,
// no running stats. Used by the batch-norm loss-normalization variant.
Tensor batch_standardize(const Tensor& x);

// Row-wise log(sum(exp(x))) with max subtraction. (B,N) -> (B).
Tensor log_sum_exp_rows(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label]. logits (B,C).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Raw kernels (no autodiff) shared with non-tape code paths.
// ---------------------------------------------------------------------------
namespace kernels {
// C (M,N) = A (M,K) * B (K,N)
void matmul_nn(const real* a, const real* b, real* c, int m, int k, int n);
// C (M,N) = A (M,K) * B^T, B is (N,K)
void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n);
// C (M,N) += A^T * B, A is (K,M), B is (K,N)
void matmul_tn_acc(const real* a, const real* b, real* c, int m, int k, int n);
}  // namespace kernels

bool all_finite(const std::vector<real>& v);

}  // namespace ssrl
