#include "ssrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include "ssrl/parallel.hpp"

namespace ssrl {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

bool all_finite(const std::vector<real>& v) {
  for (real x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {

struct OpRecord {
  const char* kind;
  std::function<void()> bw;
};

struct GraphState {
  std::vector<OpRecord> ops;
  uint64_t generation = 1;
  bool recording = true;
};

GraphState g_graph;

using NodePtr = std::shared_ptr<detail::TensorNode>;

void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
}

void check_shape(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + detail);
}

}  // namespace

bool grad_enabled() { return g_graph.recording; }

NoGradGuard::NoGradGuard() : prev_(g_graph.recording) { g_graph.recording = false; }
NoGradGuard::~NoGradGuard() { g_graph.recording = prev_; }

size_t graph_size() { return g_graph.ops.size(); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, real v, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), v);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<real> data, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  int64_t want = shape_numel(shape);
  if (data.empty()) data.assign(static_cast<size_t>(want), 0.0);
  if (static_cast<int64_t>(data.size()) != want)
    throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(real v) { return from_data({1}, {v}); }

real Tensor::item() const {
  if (size() != 1) throw std::runtime_error("Tensor::item on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

const std::vector<real>& Tensor::grad() const {
  if (node_->grad.empty())
    throw std::runtime_error("Tensor::grad: no gradient present (shape " + shape_str(shape()) + ")");
  return node_->grad;
}

Tensor Tensor::clone_detached(bool requires_grad) const {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = node_->shape;
  n->value = node_->value;
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("backward: undefined tensor");
  if (loss.size() != 1)
    throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto node = loss.node();
  if (node->graph_gen != 0 && node->graph_gen != g_graph.generation)
    throw std::runtime_error("backward: graph already consumed (single-use tape)");
  node->grad.assign(1, 1.0);
  for (size_t i = g_graph.ops.size(); i-- > 0;) g_graph.ops[i].bw();
  g_graph.ops.clear();
  ++g_graph.generation;
}

// Creates the output node of an op, records the backward closure when needed.
static Tensor make_result(Shape shape, std::vector<real> value, const char* kind,
                          std::initializer_list<const Tensor*> inputs,
                          const std::function<void()>& bw) {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (g_graph.recording)
    for (const Tensor* t : inputs)
      if (t->requires_grad()) needs = true;
  if (needs) {
    n->requires_grad = true;
    n->graph_gen = g_graph.generation;
    n->node_id = static_cast<int>(g_graph.ops.size());
    g_graph.ops.push_back({kind, bw});
  }
  return Tensor::wrap(std::move(n));
}

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

namespace kernels {

void matmul_nn(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    real* ci = c + static_cast<int64_t>(i) * n;
    std::fill(ci, ci + n, 0.0);
    const real* ai = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      real av = ai[p];
      const real* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* ai = a + static_cast<int64_t>(i) * k;
    real* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const real* bj = b + static_cast<int64_t>(j) * k;
      real acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void matmul_tn_acc(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const real* ap = a + static_cast<int64_t>(p) * m;
    const real* bp = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      real av = ap[i];
      if (av == 0.0) continue;
      real* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// Row-parallel variants; each output row is produced by exactly one thread.
static void matmul_nn_par(const real* a, const real* b, real* c, int m, int k, int n) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    matmul_nn(a + r0 * k, b, c + r0 * n, static_cast<int>(r1 - r0), k, n);
  });
}

static void matmul_nt_par(const real* a, const real* b, real* c, int m, int k, int n) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    matmul_nt(a + r0 * k, b, c + r0 * n, static_cast<int>(r1 - r0), k, n);
  });
}

static void matmul_tn_acc_par(const real* a, const real* b, real* c, int m, int k, int n) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int p = 0; p < k; ++p) {
      const real* ap = a + static_cast<int64_t>(p) * m;
      const real* bp = b + static_cast<int64_t>(p) * n;
      for (int64_t i = r0; i < r1; ++i) {
        real av = ap[i];
        if (av == 0.0) continue;
        real* ci = c + i * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

// The output node does not exist until make_result returns, so each closure
// receives it through a small shared holder filled in afterwards.
namespace {
template <typename F>
Tensor op_with_out(Shape shape, std::vector<real> value, const char* kind,
                   std::initializer_list<const Tensor*> inputs, F&& make_bw) {
  auto holder = std::make_shared<NodePtr>();
  std::function<void()> bw = make_bw(holder);
  Tensor out = make_result(std::move(shape), std::move(value), kind, inputs, bw);
  *holder = out.node();
  return out;
}
}  // namespace

#define SSRL_OUT_GRAD                              \
  const NodePtr& out = *holder;                    \
  if (!out || out->grad.empty()) return;           \
  const std::vector<real>& g = out->grad;

Tensor add(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "add",
              "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<real> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  return op_with_out(a.shape(), std::move(out), "add", {&a, &b}, [&](auto holder) {
    return [an, bn, holder]() {
      SSRL_OUT_GRAD
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
      }
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check_shape(x.ndim() == 2 && b.ndim() == 1 && x.dim(1) == b.dim(0), "add_bias",
              "want (B,F)+(F), got " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  int B = x.dim(0), F = x.dim(1);
  std::vector<real> out(x.data());
  const auto& bv = b.data();
  for (int i = 0; i < B; ++i)
    for (int f = 0; f < F; ++f) out[static_cast<size_t>(i) * F + f] += bv[f];
  auto xn = x.node(), bn = b.node();
  return op_with_out(x.shape(), std::move(out), "add_bias", {&x, &b}, [&](auto holder) {
    return [xn, bn, holder, B, F]() {
      SSRL_OUT_GRAD
      if (xn->requires_grad) {
        ensure_grad(xn);
        for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (int i = 0; i < B; ++i)
          for (int f = 0; f < F; ++f) bn->grad[f] += g[static_cast<size_t>(i) * F + f];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "sub",
              "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<real> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  return op_with_out(a.shape(), std::move(out), "sub", {&a, &b}, [&](auto holder) {
    return [an, bn, holder]() {
      SSRL_OUT_GRAD
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "mul",
              "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<real> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  return op_with_out(a.shape(), std::move(out), "mul", {&a, &b}, [&](auto holder) {
    return [an, bn, holder]() {
      SSRL_OUT_GRAD
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
      }
    };
  });
}

Tensor scale(const Tensor& a, real c) {
  std::vector<real> out(a.data());
  for (real& v : out) v *= c;
  auto an = a.node();
  return op_with_out(a.shape(), std::move(out), "scale", {&a}, [&](auto holder) {
    return [an, holder, c]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < g.size(); ++i) an->grad[i] += c * g[i];
    };
  });
}

Tensor add_scalar(const Tensor& a, real c) {
  std::vector<real> out(a.data());
  for (real& v : out) v += c;
  auto an = a.node();
  return op_with_out(a.shape(), std::move(out), "add_scalar", {&a}, [&](auto holder) {
    return [an, holder]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
    };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_shape(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
              "incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<real> out(static_cast<size_t>(m) * n);
  kernels::matmul_nn_par(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return op_with_out({m, n}, std::move(out), "matmul", {&a, &b}, [&](auto holder) {
    return [an, bn, holder, m, k, n]() {
      SSRL_OUT_GRAD
      if (an->requires_grad) {
        ensure_grad(an);
        std::vector<real> da(static_cast<size_t>(m) * k);
        kernels::matmul_nt_par(g.data(), bn->value.data(), da.data(), m, n, k);
        for (size_t i = 0; i < da.size(); ++i) an->grad[i] += da[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        kernels::matmul_tn_acc_par(an->value.data(), g.data(), bn->grad.data(), k, m, n);
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  check_shape(a.ndim() == 2, "transpose", "want 2-D, got " + shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<real> out(static_cast<size_t>(m) * n);
  const auto& av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  auto an = a.node();
  return op_with_out({n, m}, std::move(out), "transpose", {&a}, [&](auto holder) {
    return [an, holder, m, n]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
    };
  });
}

Tensor relu(const Tensor& a) {
  std::vector<real> out(a.data());
  for (real& v : out) v = v > 0.0 ? v : 0.0;
  auto an = a.node();
  return op_with_out(a.shape(), std::move(out), "relu", {&a}, [&](auto holder) {
    return [an, holder]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (size_t i = 0; i < g.size(); ++i)
        if (an->value[i] > 0.0) an->grad[i] += g[i];
    };
  });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  check_shape(shape_numel(new_shape) == a.size(), "reshape",
              "cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  auto an = a.node();
  return op_with_out(std::move(new_shape), std::vector<real>(a.data()), "reshape", {&a},
                     [&](auto holder) {
                       return [an, holder]() {
                         SSRL_OUT_GRAD
                         if (!an->requires_grad) return;
                         ensure_grad(an);
                         for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                       };
                     });
}

Tensor mean_all(const Tensor& a) {
  real s = 0.0;
  for (real v : a.data()) s += v;
  real inv = 1.0 / static_cast<real>(a.size());
  auto an = a.node();
  return op_with_out({1}, {s * inv}, "mean", {&a}, [&](auto holder) {
    return [an, holder, inv]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      real gi = g[0] * inv;
      for (real& d : an->grad) d += gi;
    };
  });
}

Tensor sum_all(const Tensor& a) {
  real s = 0.0;
  for (real v : a.data()) s += v;
  auto an = a.node();
  return op_with_out({1}, {s}, "sum", {&a}, [&](auto holder) {
    return [an, holder]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      for (real& d : an->grad) d += g[0];
    };
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_shape(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0), "concat_cols",
              "want same row count, got " + shape_str(a.shape()) + " | " + shape_str(b.shape()));
  int B = a.dim(0), n1 = a.dim(1), n2 = b.dim(1);
  std::vector<real> out(static_cast<size_t>(B) * (n1 + n2));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < B; ++i) {
    std::copy_n(&av[static_cast<size_t>(i) * n1], n1, &out[static_cast<size_t>(i) * (n1 + n2)]);
    std::copy_n(&bv[static_cast<size_t>(i) * n2], n2,
                &out[static_cast<size_t>(i) * (n1 + n2) + n1]);
  }
  auto an = a.node(), bn = b.node();
  return op_with_out({B, n1 + n2}, std::move(out), "concat_cols", {&a, &b}, [&](auto holder) {
    return [an, bn, holder, B, n1, n2]() {
      SSRL_OUT_GRAD
      if (an->requires_grad) {
        ensure_grad(an);
        for (int i = 0; i < B; ++i)
          for (int j = 0; j < n1; ++j)
            an->grad[static_cast<size_t>(i) * n1 + j] += g[static_cast<size_t>(i) * (n1 + n2) + j];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (int i = 0; i < B; ++i)
          for (int j = 0; j < n2; ++j)
            bn->grad[static_cast<size_t>(i) * n2 + j] +=
                g[static_cast<size_t>(i) * (n1 + n2) + n1 + j];
      }
    };
  });
}

Tensor stop_grad(const Tensor& a) {
  // Value-identical, detached: never records, never requires grad.
  return a.clone_detached(false);
}

Tensor l2_normalize(const Tensor& a, int axis) {
  if (!all_finite(a.data())) throw std::runtime_error("l2_normalize: non-finite input");
  check_shape(axis >= 0 && axis < a.ndim(), "l2_normalize", "axis out of range");
  const Shape& s = a.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= s[static_cast<size_t>(i)];
  int len = s[static_cast<size_t>(axis)];
  const auto& av = a.data();
  std::vector<real> out(av.size());
  std::vector<real> norms(static_cast<size_t>(outer * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * len * inner + in;
      real sq = 0.0;
      for (int j = 0; j < len; ++j) {
        real v = av[static_cast<size_t>(base + j * inner)];
        sq += v * v;
      }
      real n = std::sqrt(sq);
      real denom = n < kEpsNorm ? kEpsNorm : n;
      norms[static_cast<size_t>(o * inner + in)] = n;
      for (int j = 0; j < len; ++j)
        out[static_cast<size_t>(base + j * inner)] = av[static_cast<size_t>(base + j * inner)] / denom;
    }
  auto an = a.node();
  return op_with_out(a.shape(), std::move(out), "l2_normalize", {&a}, [&, axis](auto holder) {
    return [an, holder, outer, inner, len, norms = std::move(norms)]() {
      SSRL_OUT_GRAD
      if (!an->requires_grad) return;
      ensure_grad(an);
      const NodePtr& o_node = *holder;
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * len * inner + in;
          real n = norms[static_cast<size_t>(o * inner + in)];
          if (n < kEpsNorm) {
            for (int j = 0; j < len; ++j)
              an->grad[static_cast<size_t>(base + j * inner)] +=
                  g[static_cast<size_t>(base + j * inner)] / kEpsNorm;
            continue;
          }
          real gy = 0.0;
          for (int j = 0; j < len; ++j)
            gy += g[static_cast<size_t>(base + j * inner)] *
                  o_node->value[static_cast<size_t>(base + j * inner)];
          for (int j = 0; j < len; ++j) {
            size_t idx = static_cast<size_t>(base + j * inner);
            an->grad[idx] += (g[idx] - o_node->value[idx] * gy) / n;
          }
        }
    };
  });
}

// ---------------------------------------------------------------------------
// Convolution / pooling
// ---------------------------------------------------------------------------

namespace {

void im2col(const real* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, real* cols) {
  // cols is (cin*kh*kw, oh*ow)
  for (int c = 0; c < cin; ++c)
    for (int a = 0; a < kh; ++a)
      for (int b = 0; b < kw; ++b) {
        real* row = cols + (static_cast<int64_t>((c * kh + a) * kw + b)) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          int yi = i * stride + a - pad;
          if (yi < 0 || yi >= h) {
            std::fill(row + static_cast<int64_t>(i) * ow, row + static_cast<int64_t>(i + 1) * ow, 0.0);
            continue;
          }
          const real* xr = x + (static_cast<int64_t>(c) * h + yi) * w;
          for (int j = 0; j < ow; ++j) {
            int xj = j * stride + b - pad;
            row[static_cast<int64_t>(i) * ow + j] = (xj < 0 || xj >= w) ? 0.0 : xr[xj];
          }
        }
      }
}

void col2im_acc(const real* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, real* dx) {
  for (int c = 0; c < cin; ++c)
    for (int a = 0; a < kh; ++a)
      for (int b = 0; b < kw; ++b) {
        const real* row = cols + (static_cast<int64_t>((c * kh + a) * kw + b)) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          int yi = i * stride + a - pad;
          if (yi < 0 || yi >= h) continue;
          real* xr = dx + (static_cast<int64_t>(c) * h + yi) * w;
          for (int j = 0; j < ow; ++j) {
            int xj = j * stride + b - pad;
            if (xj >= 0 && xj < w) xr[xj] += row[static_cast<int64_t>(i) * ow + j];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad) {
  check_shape(x.ndim() == 4 && kernel.ndim() == 4, "conv2d",
              "want x (B,Cin,H,W) and kernel (Cout,Cin,KH,KW), got " + shape_str(x.shape()) +
                  " and " + shape_str(kernel.shape()));
  check_shape(x.dim(1) == kernel.dim(1), "conv2d",
              "channel mismatch: x has " + std::to_string(x.dim(1)) + ", kernel wants " +
                  std::to_string(kernel.dim(1)));
  check_shape(stride >= 1 && pad >= 0, "conv2d", "stride must be >=1, pad >=0");
  int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Cout = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (KH > H + 2 * pad || KW > W + 2 * pad)
    throw std::invalid_argument("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                                " larger than padded input " + std::to_string(H + 2 * pad) + "x" +
                                std::to_string(W + 2 * pad));
  int OH = (H + 2 * pad - KH) / stride + 1;
  int OW = (W + 2 * pad - KW) / stride + 1;
  int ck = Cin * KH * KW;
  int64_t cols_per_img = static_cast<int64_t>(ck) * OH * OW;
  auto cols = std::make_shared<std::vector<real>>(static_cast<size_t>(B) * cols_per_img);
  std::vector<real> out(static_cast<size_t>(B) * Cout * OH * OW);
  const real* xv = x.data().data();
  const real* kv = kernel.data().data();
  parallel_for(B, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      real* cb = cols->data() + b * cols_per_img;
      im2col(xv + b * Cin * H * W, Cin, H, W, KH, KW, stride, pad, OH, OW, cb);
      kernels::matmul_nn(kv, cb, out.data() + b * Cout * OH * OW, Cout, ck, OH * OW);
    }
  });
  auto xn = x.node(), kn = kernel.node();
  return op_with_out({B, Cout, OH, OW}, std::move(out), "conv2d", {&x, &kernel},
                     [&](auto holder) {
                       return [xn, kn, holder, cols, B, Cin, H, W, Cout, KH, KW, stride, pad, OH,
                               OW, ck, cols_per_img]() {
                         SSRL_OUT_GRAD
                         int64_t out_per_img = static_cast<int64_t>(Cout) * OH * OW;
                         if (kn->requires_grad) {
                           ensure_grad(kn);
                           // dK[i,:] += sum_b dout_b[i,:] * cols_b^T; each thread owns
                           // a row range of dK across all batch elements.
                           parallel_for(Cout, [&](int64_t r0, int64_t r1) {
                             for (int b = 0; b < B; ++b) {
                               const real* gb = g.data() + static_cast<int64_t>(b) * out_per_img;
                               const real* cb = cols->data() + static_cast<int64_t>(b) * cols_per_img;
                               for (int64_t i = r0; i < r1; ++i) {
                                 const real* gi = gb + i * OH * OW;
                                 real* ki = kn->grad.data() + i * ck;
                                 for (int j = 0; j < ck; ++j) {
                                   const real* cj = cb + static_cast<int64_t>(j) * OH * OW;
                                   real acc = 0.0;
                                   for (int t = 0; t < OH * OW; ++t) acc += gi[t] * cj[t];
                                   ki[j] += acc;
                                 }
                               }
                             }
                           });
                         }
                         if (xn->requires_grad) {
                           ensure_grad(xn);
                           parallel_for(B, [&](int64_t b0, int64_t b1) {
                             std::vector<real> dcols(static_cast<size_t>(cols_per_img));
                             for (int64_t b = b0; b < b1; ++b) {
                               std::fill(dcols.begin(), dcols.end(), 0.0);
                               kernels::matmul_tn_acc(kn->value.data(),
                                                      g.data() + b * out_per_img, dcols.data(),
                                                      ck, Cout, OH * OW);
                               col2im_acc(dcols.data(), Cin, H, W, KH, KW, stride, pad, OH, OW,
                                          xn->grad.data() + b * Cin * H * W);
                             }
                           });
                         }
                       };
                     });
}

Tensor max_pool2d(const Tensor& x, int window, int stride) {
  check_shape(x.ndim() == 4, "max_pool2d", "want 4-D input, got " + shape_str(x.shape()));
  check_shape(window >= 1 && stride >= 1, "max_pool2d", "window and stride must be >= 1");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_shape(H >= window && W >= window, "max_pool2d", "window larger than input");
  int OH = (H - window) / stride + 1;
  int OW = (W - window) / stride + 1;
  std::vector<real> out(static_cast<size_t>(B) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int>>(out.size());
  const auto& xv = x.data();
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int bc = 0; bc < B * C; ++bc) {
    const real* xp = xv.data() + bc * plane;
    for (int i = 0; i < OH; ++i)
      for (int j = 0; j < OW; ++j) {
        int best = (i * stride) * W + j * stride;
        real bv = xp[best];
        for (int a = 0; a < window; ++a)
          for (int b = 0; b < window; ++b) {
            int idx = (i * stride + a) * W + (j * stride + b);
            if (xp[idx] > bv) {  // strict: first max wins on ties
              bv = xp[idx];
              best = idx;
            }
          }
        size_t o = static_cast<size_t>(bc) * OH * OW + static_cast<size_t>(i) * OW + j;
        out[o] = bv;
        (*argmax)[o] = best;
      }
  }
  auto xn = x.node();
  return op_with_out({B, C, OH, OW}, std::move(out), "max_pool2d", {&x}, [&](auto holder) {
    return [xn, holder, argmax, B, C, OH, OW, plane]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      for (int bc = 0; bc < B * C; ++bc) {
        real* xg = xn->grad.data() + bc * plane;
        for (int64_t o = 0; o < static_cast<int64_t>(OH) * OW; ++o) {
          size_t oi = static_cast<size_t>(bc) * OH * OW + o;
          xg[(*argmax)[oi]] += g[oi];
        }
      }
    };
  });
}

Tensor avg_pool2d(const Tensor& x, int window, int stride) {
  check_shape(x.ndim() == 4, "avg_pool2d", "want 4-D input, got " + shape_str(x.shape()));
  check_shape(window >= 1 && stride >= 1, "avg_pool2d", "window and stride must be >= 1");
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_shape(H >= window && W >= window, "avg_pool2d", "window larger than input");
  int OH = (H - window) / stride + 1;
  int OW = (W - window) / stride + 1;
  real inv = 1.0 / (static_cast<real>(window) * window);
  std::vector<real> out(static_cast<size_t>(B) * C * OH * OW);
  const auto& xv = x.data();
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int bc = 0; bc < B * C; ++bc) {
    const real* xp = xv.data() + bc * plane;
    for (int i = 0; i < OH; ++i)
      for (int j = 0; j < OW; ++j) {
        real s = 0;
        for (int a = 0; a < window; ++a)
          for (int b = 0; b < window; ++b) s += xp[(i * stride + a) * W + j * stride + b];
        out[static_cast<size_t>(bc) * OH * OW + static_cast<size_t>(i) * OW + j] = s * inv;
      }
  }
  auto xn = x.node();
  return op_with_out({B, C, OH, OW}, std::move(out), "avg_pool2d", {&x}, [&](auto holder) {
    return [xn, holder, B, C, OH, OW, W, stride, window, plane, inv]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      for (int bc = 0; bc < B * C; ++bc) {
        real* xg = xn->grad.data() + bc * plane;
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j) {
            real gi = g[static_cast<size_t>(bc) * OH * OW + static_cast<size_t>(i) * OW + j] * inv;
            for (int a = 0; a < window; ++a)
              for (int b = 0; b < window; ++b) xg[(i * stride + a) * W + j * stride + b] += gi;
          }
      }
    };
  });
}

Tensor global_avg_pool(const Tensor& x) {
  check_shape(x.ndim() == 4, "global_avg_pool", "want 4-D input, got " + shape_str(x.shape()));
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t plane = static_cast<int64_t>(H) * W;
  real inv = 1.0 / static_cast<real>(plane);
  std::vector<real> out(static_cast<size_t>(B) * C);
  const auto& xv = x.data();
  for (int bc = 0; bc < B * C; ++bc) {
    real s = 0.0;
    const real* xp = xv.data() + bc * plane;
    for (int64_t i = 0; i < plane; ++i) s += xp[i];
    out[static_cast<size_t>(bc)] = s * inv;
  }
  auto xn = x.node();
  return op_with_out({B, C}, std::move(out), "global_avg_pool", {&x}, [&](auto holder) {
    return [xn, holder, B, C, plane, inv]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      for (int bc = 0; bc < B * C; ++bc) {
        real gi = g[static_cast<size_t>(bc)] * inv;
        real* xg = xn->grad.data() + bc * plane;
        for (int64_t i = 0; i < plane; ++i) xg[i] += gi;
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Normalization ops
// ---------------------------------------------------------------------------

namespace {

// Reduction layout for batch norm: (B,F) reduces over B per feature;
// (B,C,H,W) reduces over B,H,W per channel.
struct BnLayout {
  int features;     // F or C
  int64_t count;    // reduction set size per feature
  // iterate: for each feature f, indices are base(f) walked via (n, s)
  int B;
  int64_t spatial;  // 1 for 2-D, H*W for 4-D
};

BnLayout bn_layout(const Tensor& x, const char* op) {
  BnLayout L;
  if (x.ndim() == 2) {
    L.B = x.dim(0);
    L.features = x.dim(1);
    L.spatial = 1;
  } else if (x.ndim() == 4) {
    L.B = x.dim(0);
    L.features = x.dim(1);
    L.spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  } else {
    throw std::invalid_argument(std::string(op) + ": want 2-D or 4-D input, got " +
                                shape_str(x.shape()));
  }
  L.count = static_cast<int64_t>(L.B) * L.spatial;
  return L;
}

inline size_t bn_index(const BnLayout& L, int n, int f, int64_t s) {
  return (static_cast<size_t>(n) * L.features + f) * L.spatial + static_cast<size_t>(s);
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats* stats,
                  BnMode mode) {
  BnLayout L = bn_layout(x, "batch_norm");
  check_shape(gamma.ndim() == 1 && gamma.dim(0) == L.features && beta.ndim() == 1 &&
                  beta.dim(0) == L.features,
              "batch_norm", "gamma/beta must be (" + std::to_string(L.features) + ")");
  if (mode == BnMode::kTrain && L.B < 2)
    throw std::invalid_argument("batch_norm: train mode needs batch of >= 2, got " +
                                std::to_string(L.B));
  if (mode == BnMode::kEval) {
    check_shape(stats != nullptr && static_cast<int>(stats->mean.size()) == L.features,
                "batch_norm", "eval mode needs running stats");
  }
  const auto& xv = x.data();
  std::vector<real> mean(static_cast<size_t>(L.features));
  std::vector<real> var(static_cast<size_t>(L.features));
  if (mode == BnMode::kTrain) {
    for (int f = 0; f < L.features; ++f) {
      real s = 0.0;
      for (int n = 0; n < L.B; ++n)
        for (int64_t sp = 0; sp < L.spatial; ++sp) s += xv[bn_index(L, n, f, sp)];
      mean[static_cast<size_t>(f)] = s / static_cast<real>(L.count);
    }
    for (int f = 0; f < L.features; ++f) {
      real s = 0.0;
      for (int n = 0; n < L.B; ++n)
        for (int64_t sp = 0; sp < L.spatial; ++sp) {
          real d = xv[bn_index(L, n, f, sp)] - mean[static_cast<size_t>(f)];
          s += d * d;
        }
      var[static_cast<size_t>(f)] = s / static_cast<real>(L.count);  // biased
    }
    if (stats != nullptr) {
      if (stats->mean.empty()) {
        stats->mean.assign(static_cast<size_t>(L.features), 0.0);
        stats->var.assign(static_cast<size_t>(L.features), 1.0);
      }
      for (int f = 0; f < L.features; ++f) {
        stats->mean[static_cast<size_t>(f)] =
            kBnMomentum * stats->mean[static_cast<size_t>(f)] + (1.0 - kBnMomentum) * mean[static_cast<size_t>(f)];
        stats->var[static_cast<size_t>(f)] =
            kBnMomentum * stats->var[static_cast<size_t>(f)] + (1.0 - kBnMomentum) * var[static_cast<size_t>(f)];
      }
    }
  } else {
    mean = stats->mean;
    var = stats->var;
  }
  std::vector<real> invstd(static_cast<size_t>(L.features));
  for (int f = 0; f < L.features; ++f)
    invstd[static_cast<size_t>(f)] = 1.0 / std::sqrt(var[static_cast<size_t>(f)] + kBnEps);
  auto xhat = std::make_shared<std::vector<real>>(xv.size());
  std::vector<real> out(xv.size());
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int n = 0; n < L.B; ++n)
    for (int f = 0; f < L.features; ++f)
      for (int64_t sp = 0; sp < L.spatial; ++sp) {
        size_t i = bn_index(L, n, f, sp);
        real xh = (xv[i] - mean[static_cast<size_t>(f)]) * invstd[static_cast<size_t>(f)];
        (*xhat)[i] = xh;
        out[i] = gv[static_cast<size_t>(f)] * xh + bv[static_cast<size_t>(f)];
      }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  bool train = mode == BnMode::kTrain;
  return op_with_out(x.shape(), std::move(out), "batch_norm", {&x, &gamma, &beta},
                     [&](auto holder) {
                       return [xn, gn, bn, holder, xhat, L, invstd = std::move(invstd), train]() {
                         SSRL_OUT_GRAD
                         std::vector<real> sum_g(static_cast<size_t>(L.features), 0.0);
                         std::vector<real> sum_gx(static_cast<size_t>(L.features), 0.0);
                         for (int n = 0; n < L.B; ++n)
                           for (int f = 0; f < L.features; ++f)
                             for (int64_t sp = 0; sp < L.spatial; ++sp) {
                               size_t i = bn_index(L, n, f, sp);
                               sum_g[static_cast<size_t>(f)] += g[i];
                               sum_gx[static_cast<size_t>(f)] += g[i] * (*xhat)[i];
                             }
                         if (gn->requires_grad) {
                           ensure_grad(gn);
                           for (int f = 0; f < L.features; ++f)
                             gn->grad[static_cast<size_t>(f)] += sum_gx[static_cast<size_t>(f)];
                         }
                         if (bn->requires_grad) {
                           ensure_grad(bn);
                           for (int f = 0; f < L.features; ++f)
                             bn->grad[static_cast<size_t>(f)] += sum_g[static_cast<size_t>(f)];
                         }
                         if (xn->requires_grad) {
                           ensure_grad(xn);
                           real m = static_cast<real>(L.count);
                           for (int n = 0; n < L.B; ++n)
                             for (int f = 0; f < L.features; ++f) {
                               real gam = gn->value[static_cast<size_t>(f)];
                               real is = invstd[static_cast<size_t>(f)];
                               for (int64_t sp = 0; sp < L.spatial; ++sp) {
                                 size_t i = bn_index(L, n, f, sp);
                                 if (train) {
                                   xn->grad[i] += gam * is *
                                                  (g[i] - sum_g[static_cast<size_t>(f)] / m -
                                                   (*xhat)[i] * sum_gx[static_cast<size_t>(f)] / m);
                                 } else {
                                   xn->grad[i] += gam * is * g[i];
                                 }
                               }
                             }
                         }
                       };
                     });
}

Tensor batch_standardize(const Tensor& x) {
  check_shape(x.ndim() == 2, "batch_standardize", "want (B,F), got " + shape_str(x.shape()));
  int B = x.dim(0), F = x.dim(1);
  check_shape(B >= 2, "batch_standardize", "need batch of >= 2");
  const auto& xv = x.data();
  std::vector<real> mean(static_cast<size_t>(F), 0.0);
  std::vector<real> invstd(static_cast<size_t>(F));
  for (int n = 0; n < B; ++n)
    for (int f = 0; f < F; ++f) mean[static_cast<size_t>(f)] += xv[static_cast<size_t>(n) * F + f];
  for (real& m : mean) m /= static_cast<real>(B);
  for (int f = 0; f < F; ++f) {
    real s = 0.0;
    for (int n = 0; n < B; ++n) {
      real d = xv[static_cast<size_t>(n) * F + f] - mean[static_cast<size_t>(f)];
      s += d * d;
    }
    invstd[static_cast<size_t>(f)] = 1.0 / std::sqrt(s / static_cast<real>(B) + kBnEps);
  }
  auto xhat = std::make_shared<std::vector<real>>(xv.size());
  std::vector<real> out(xv.size());
  for (int n = 0; n < B; ++n)
    for (int f = 0; f < F; ++f) {
      size_t i = static_cast<size_t>(n) * F + f;
      real xh = (xv[i] - mean[static_cast<size_t>(f)]) * invstd[static_cast<size_t>(f)];
      (*xhat)[i] = xh;
      out[i] = xh;
    }
  auto xn = x.node();
  return op_with_out(x.shape(), std::move(out), "batch_standardize", {&x}, [&](auto holder) {
    return [xn, holder, xhat, B, F, invstd = std::move(invstd)]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      real m = static_cast<real>(B);
      for (int f = 0; f < F; ++f) {
        real sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < B; ++n) {
          size_t i = static_cast<size_t>(n) * F + f;
          sum_g += g[i];
          sum_gx += g[i] * (*xhat)[i];
        }
        real is = invstd[static_cast<size_t>(f)];
        for (int n = 0; n < B; ++n) {
          size_t i = static_cast<size_t>(n) * F + f;
          xn->grad[i] += is * (g[i] - sum_g / m - (*xhat)[i] * sum_gx / m);
        }
      }
    };
  });
}

Tensor log_sum_exp_rows(const Tensor& x) {
  check_shape(x.ndim() == 2, "log_sum_exp_rows", "want (B,N), got " + shape_str(x.shape()));
  int B = x.dim(0), N = x.dim(1);
  const auto& xv = x.data();
  std::vector<real> out(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) {
    const real* row = xv.data() + static_cast<size_t>(i) * N;
    real m = row[0];
    for (int j = 1; j < N; ++j) m = std::max(m, row[j]);
    real s = 0.0;
    for (int j = 0; j < N; ++j) s += std::exp(row[j] - m);
    out[static_cast<size_t>(i)] = m + std::log(s);
  }
  auto xn = x.node();
  return op_with_out({B}, std::move(out), "log_sum_exp_rows", {&x}, [&](auto holder) {
    return [xn, holder, B, N]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      const NodePtr& o_node = *holder;
      for (int i = 0; i < B; ++i) {
        real lse = o_node->value[static_cast<size_t>(i)];
        real gi = g[static_cast<size_t>(i)];
        for (int j = 0; j < N; ++j) {
          size_t idx = static_cast<size_t>(i) * N + j;
          xn->grad[idx] += gi * std::exp(xn->value[idx] - lse);
        }
      }
    };
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_shape(logits.ndim() == 2, "softmax_cross_entropy",
              "want (B,C), got " + shape_str(logits.shape()));
  int B = logits.dim(0), C = logits.dim(1);
  check_shape(static_cast<int>(labels.size()) == B, "softmax_cross_entropy",
              "labels size != batch");
  for (int y : labels)
    check_shape(y >= 0 && y < C, "softmax_cross_entropy", "label out of range");
  const auto& xv = logits.data();
  auto lse = std::make_shared<std::vector<real>>(static_cast<size_t>(B));
  real loss = 0.0;
  for (int i = 0; i < B; ++i) {
    const real* row = xv.data() + static_cast<size_t>(i) * C;
    real m = row[0];
    for (int j = 1; j < C; ++j) m = std::max(m, row[j]);
    real s = 0.0;
    for (int j = 0; j < C; ++j) s += std::exp(row[j] - m);
    (*lse)[static_cast<size_t>(i)] = m + std::log(s);
    loss += (*lse)[static_cast<size_t>(i)] - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<real>(B);
  auto xn = logits.node();
  auto labs = std::make_shared<std::vector<int>>(labels);
  return op_with_out({1}, {loss}, "softmax_cross_entropy", {&logits}, [&](auto holder) {
    return [xn, holder, lse, labs, B, C]() {
      SSRL_OUT_GRAD
      if (!xn->requires_grad) return;
      ensure_grad(xn);
      real g0 = g[0] / static_cast<real>(B);
      for (int i = 0; i < B; ++i) {
        for (int j = 0; j < C; ++j) {
          size_t idx = static_cast<size_t>(i) * C + j;
          real p = std::exp(xn->value[idx] - (*lse)[static_cast<size_t>(i)]);
          xn->grad[idx] += g0 * (p - (j == (*labs)[static_cast<size_t>(i)] ? 1.0 : 0.0));
        }
      }
    };
  });
}

}  // namespace ssrl
