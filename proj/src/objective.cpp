#include "ssrl/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace ssrl {

void LossSpec::validate() const {
  if (family == LossFamily::kInfoNce && !(alpha > 0.0))
    throw std::invalid_argument("LossSpec: infonce requires alpha > 0");
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("LossSpec: beta must lie in [0,1]");
  if (closed_form_predictor && family != LossFamily::kByol)
    throw std::invalid_argument("LossSpec: closed-form predictor applies to the byol family only");
  if (!(loss_scale > 0.0)) throw std::invalid_argument("LossSpec: loss_scale must be positive");
}

// Row centering y = x - rowmean(x), expressed as x * (I - 11^T/F).
static Tensor center_rows(const Tensor& x) {
  int F = x.dim(1);
  std::vector<real> cm(static_cast<size_t>(F) * F, -1.0 / F);
  for (int j = 0; j < F; ++j) cm[static_cast<size_t>(j) * F + j] += 1.0;
  return matmul(x, Tensor::from_data({F, F}, std::move(cm)));
}

Tensor loss_normalize(const Tensor& x, LossNormalization kind) {
  if (x.ndim() != 2)
    throw std::invalid_argument("loss_normalize: want (B,P), got " + shape_str(x.shape()));
  switch (kind) {
    case LossNormalization::kL2:
      return l2_normalize(x, 1);
    case LossNormalization::kLayerNorm:
      // (x - mu_row) / (sigma_row * sqrt(d)) == unit-normalized centered row.
      return l2_normalize(center_rows(x), 1);
    case LossNormalization::kBatchNorm:
      return scale(batch_standardize(x), 1.0 / std::sqrt(static_cast<real>(x.dim(1))));
    case LossNormalization::kNone:
    default:
      return x;
  }
}

Tensor byol_pair_loss(const Tensor& p, const Tensor& z_prime, LossNormalization norm) {
  if (p.shape() != z_prime.shape())
    throw std::invalid_argument("byol_pair_loss: shape mismatch " + shape_str(p.shape()) +
                                " vs " + shape_str(z_prime.shape()));
  int B = p.dim(0);
  Tensor np = loss_normalize(p, norm);
  Tensor nz = loss_normalize(z_prime, norm);
  Tensor d = sub(np, nz);
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<real>(B));
}

namespace {

// Online projection with gradients.
Tensor online_projection(const NetworkPair& pair, const Tensor& v, BnMode mode) {
  return pair.online.project(pair.online.encode(v, mode), mode);
}

Tensor apply_phi(const NetworkPair& pair, const Tensor& z, const LossSpec& spec, BnMode mode) {
  return spec.use_predictor ? pair.online.predict(z, mode) : z;
}

}  // namespace

Tensor byol_symmetrized_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                             const LossSpec& spec, BnMode mode) {
  spec.validate();
  Tensor z1 = online_projection(pair, v, mode);
  Tensor z2 = online_projection(pair, v_prime, mode);
  Tensor t1 = pair.forward_target(v_prime, spec.target_mode, mode);  // pairs with z1
  Tensor t2 = pair.forward_target(v, spec.target_mode, mode);        // pairs with z2
  Tensor loss;
  if (spec.closed_form_predictor) {
    loss = add(closed_form_pair_loss(z1, t1), closed_form_pair_loss(z2, t2));
  } else {
    loss = add(byol_pair_loss(apply_phi(pair, z1, spec, mode), t1, spec.normalization),
               byol_pair_loss(apply_phi(pair, z2, spec, mode), t2, spec.normalization));
  }
  return spec.loss_scale == 1.0 ? loss : scale(loss, spec.loss_scale);
}

InfoNceFeatures infonce_features(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                                 const LossSpec& spec, BnMode mode) {
  Tensor zv = online_projection(pair, v, mode);
  Tensor phi_v = apply_phi(pair, zv, spec, mode);
  Tensor psi_v, psi_vp;
  if (spec.target_mode == TargetMode::kTheta) {
    psi_v = zv;  // shares the online forward, gradients flow into both roles
    psi_vp = online_projection(pair, v_prime, mode);
  } else {
    psi_v = pair.forward_target(v, spec.target_mode, mode);
    psi_vp = pair.forward_target(v_prime, spec.target_mode, mode);
  }
  return {l2_normalize(phi_v, 1), l2_normalize(psi_v, 1), l2_normalize(psi_vp, 1)};
}

Tensor infonce_from_similarities(const Tensor& s_vv, const Tensor& s_vvp, real alpha, real beta) {
  int B = s_vvp.dim(0);
  // Positive alignment term: sum_i S(v_i, v'_i) = trace of s_vvp.
  std::vector<real> eye(static_cast<size_t>(B) * B, 0.0);
  for (int i = 0; i < B; ++i) eye[static_cast<size_t>(i) * B + i] = 1.0;
  Tensor diag_mask = Tensor::from_data({B, B}, std::move(eye));
  Tensor pos = sum_all(mul(s_vvp, diag_mask));
  Tensor loss = scale(pos, -2.0 / static_cast<real>(B));
  if (beta > 0.0) {
    // Exclude j == i from the view-v negatives by pushing the diagonal to -inf.
    std::vector<real> neg_diag(static_cast<size_t>(B) * B, 0.0);
    for (int i = 0; i < B; ++i) neg_diag[static_cast<size_t>(i) * B + i] = -1e30;
    Tensor masked = add(s_vv, Tensor::from_data({B, B}, std::move(neg_diag)));
    Tensor logits = scale(concat_cols(masked, s_vvp), 1.0 / alpha);
    Tensor lse = log_sum_exp_rows(logits);
    loss = add(loss, scale(sum_all(lse), beta * 2.0 * alpha / static_cast<real>(B)));
  }
  return loss;
}

Tensor infonce_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                    const LossSpec& spec, BnMode mode) {
  spec.validate();
  if (v.dim(0) < 1) throw std::invalid_argument("infonce_loss: empty batch");
  if (v.dim(0) != v_prime.dim(0))
    throw std::invalid_argument("infonce_loss: view batches differ in size");
  InfoNceFeatures f = infonce_features(v, v_prime, pair, spec, mode);
  Tensor s_vv = matmul(f.phi_v, transpose(f.psi_v));    // S(v_i, v_j)
  Tensor s_vvp = matmul(f.phi_v, transpose(f.psi_vp));  // S(v_i, v'_j)
  Tensor loss = infonce_from_similarities(s_vv, s_vvp, spec.alpha, spec.beta);
  return spec.loss_scale == 1.0 ? loss : scale(loss, spec.loss_scale);
}

namespace linalg {

std::vector<real> cholesky_solve(std::vector<real> a, std::vector<real> b, int n, int m) {
  // In-place lower Cholesky of a (n,n).
  for (int j = 0; j < n; ++j) {
    real diag = a[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      real v = a[static_cast<size_t>(j) * n + k];
      diag -= v * v;
    }
    if (diag <= 0.0)
      throw std::runtime_error("cholesky_solve: matrix not positive definite");
    real dj = std::sqrt(diag);
    a[static_cast<size_t>(j) * n + j] = dj;
    for (int i = j + 1; i < n; ++i) {
      real s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      a[static_cast<size_t>(i) * n + j] = s / dj;
    }
  }
  // Solve L y = b, then L^T x = y, column by column.
  for (int col = 0; col < m; ++col) {
    for (int i = 0; i < n; ++i) {
      real s = b[static_cast<size_t>(i) * m + col];
      for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * m + col];
      b[static_cast<size_t>(i) * m + col] = s / a[static_cast<size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
      real s = b[static_cast<size_t>(i) * m + col];
      for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k) * m + col];
      b[static_cast<size_t>(i) * m + col] = s / a[static_cast<size_t>(i) * n + i];
    }
  }
  return b;
}

}  // namespace linalg

Tensor closed_form_predictor(const Tensor& z, const Tensor& z_prime) {
  if (z.ndim() != 2 || z_prime.ndim() != 2 || z.shape() != z_prime.shape())
    throw std::invalid_argument("closed_form_predictor: want matching (B,F) matrices");
  if (!all_finite(z.data()) || !all_finite(z_prime.data()))
    throw std::runtime_error("closed_form_predictor: non-finite inputs");
  int B = z.dim(0), F = z.dim(1);
  if (B < 1) throw std::invalid_argument("closed_form_predictor: empty batch");
  std::vector<real> gram(static_cast<size_t>(F) * F, 0.0);
  kernels::matmul_tn_acc(z.data().data(), z.data().data(), gram.data(), F, B, F);
  std::vector<real> rhs(static_cast<size_t>(F) * F, 0.0);
  kernels::matmul_tn_acc(z.data().data(), z_prime.data().data(), rhs.data(), F, B, F);
  real trace = 0.0;
  for (int i = 0; i < F; ++i) trace += gram[static_cast<size_t>(i) * F + i];
  real ridge = std::max<real>(1e-6 * trace / static_cast<real>(F), 1e-12);
  for (int i = 0; i < F; ++i) gram[static_cast<size_t>(i) * F + i] += ridge;
  std::vector<real> q = linalg::cholesky_solve(std::move(gram), std::move(rhs), F, F);
  return Tensor::from_data({F, F}, std::move(q));  // constant w.r.t. theta
}

Tensor closed_form_pair_loss(const Tensor& z, const Tensor& z_prime) {
  Tensor q = closed_form_predictor(z, z_prime);
  Tensor d = sub(matmul(z, q), z_prime);
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<real>(z.dim(0)));
}

Tensor training_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                     const LossSpec& spec, BnMode mode) {
  if (spec.family == LossFamily::kInfoNce) return infonce_loss(v, v_prime, pair, spec, mode);
  return byol_symmetrized_loss(v, v_prime, pair, spec, mode);
}

std::string to_string(LossFamily f) { return f == LossFamily::kByol ? "byol" : "infonce"; }

std::string to_string(LossNormalization n) {
  switch (n) {
    case LossNormalization::kL2: return "l2";
    case LossNormalization::kLayerNorm: return "layernorm";
    case LossNormalization::kBatchNorm: return "batchnorm";
    default: return "none";
  }
}

std::string to_string(TargetMode m) {
  switch (m) {
    case TargetMode::kTheta: return "theta";
    case TargetMode::kSgTheta: return "sg_theta";
    default: return "xi";
  }
}

}  // namespace ssrl
