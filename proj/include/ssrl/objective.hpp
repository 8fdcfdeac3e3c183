#pragma once

#include <string>

#include "ssrl/model.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

enum class LossFamily { kByol, kInfoNce };
enum class LossNormalization { kL2, kLayerNorm, kBatchNorm, kNone };

struct LossSpec {
  LossFamily family = LossFamily::kByol;
  real alpha = 0.1;             // temperature, infonce only
  real beta = 0.0;              // negative-pair weight in [0,1]
  bool use_predictor = true;
  bool closed_form_predictor = false;  // replaces q by the per-batch optimal linear map
  TargetMode target_mode = TargetMode::kXi;
  LossNormalization normalization = LossNormalization::kL2;
  real loss_scale = 1.0;        // multiplies the final loss (optimizer-scale knob)

  void validate() const;
};

// Applies the selected normalization to a (B,P) matrix of row vectors:
//   l2        -> rows scaled to unit norm
//   layernorm -> rows centered, then divided by rowstd*sqrt(d) (== unit norm of centered row)
//   batchnorm -> columns standardized with batch statistics, divided by sqrt(d)
//   none      -> identity
Tensor loss_normalize(const Tensor& x, LossNormalization kind);

// Mean over the batch of ||n(p_i) - n(z'_i)||^2. For l2 normalization this
// equals 2 - 2*cos(p_i, z'_i) averaged over the batch. z' is expected to be
// detached by the caller.
Tensor byol_pair_loss(const Tensor& p, const Tensor& z_prime, LossNormalization norm);

// L(p(v), z'(v')) + L(p(v'), z'(v)): the second term feeds v' to the online
// network and v to the target. Gradients reach theta only.
Tensor byol_symmetrized_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                             const LossSpec& spec, BnMode mode = BnMode::kTrain);

// Negated InfoNCE^{alpha,beta} objective (minimization form):
//   -(2/B) sum_i S(v_i,v'_i)
//   + beta*(2*alpha/B) sum_i ln( sum_{j!=i} exp(S(v_i,v_j)/alpha)
//                              + sum_j exp(S(v_i,v'_j)/alpha) )
// S is the normalized dot product of phi(.) and psi(.), wired from
// use_predictor and target_mode. Log-sum-exp uses max subtraction.
Tensor infonce_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                    const LossSpec& spec, BnMode mode = BnMode::kTrain);

// The same objective on precomputed similarity matrices: s_vv[i][j] = S(v_i, v_j),
// s_vvp[i][j] = S(v_i, v'_j); the positive terms are the diagonal of s_vvp.
Tensor infonce_from_similarities(const Tensor& s_vv, const Tensor& s_vvp, real alpha, real beta);

// Row-normalized feature views for the similarity wiring: phi of the anchors
// and psi of both view batches.
struct InfoNceFeatures {
  Tensor phi_v;   // (B,P), l2-normalized rows
  Tensor psi_v;   // (B,P)
  Tensor psi_vp;  // (B,P)
};
InfoNceFeatures infonce_features(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                                 const LossSpec& spec, BnMode mode = BnMode::kTrain);

// Q = (Z^T Z + ridge*I)^{-1} Z^T Z' via Cholesky; ridge = 1e-6*trace(Z^T Z)/F.
// The result is a constant: back-propagating ||ZQ - Z'||^2 sends gradients
// through Z only.
Tensor closed_form_predictor(const Tensor& z, const Tensor& z_prime);

// Mean over the batch of ||z_i Q - z'_i||^2 with Q recomputed per call.
Tensor closed_form_pair_loss(const Tensor& z, const Tensor& z_prime);

// Dispatches to the family/wiring selected by spec; the value minimized by
// the trainer for one (v, v') pair of augmented batches.
Tensor training_loss(const Tensor& v, const Tensor& v_prime, const NetworkPair& pair,
                     const LossSpec& spec, BnMode mode = BnMode::kTrain);

// Dense symmetric-positive-definite solve helpers (shared with tests).
namespace linalg {
// Solves A X = B for X, A (n,n) SPD, B (n,m); Cholesky factorization.
std::vector<real> cholesky_solve(std::vector<real> a, std::vector<real> b, int n, int m);
}  // namespace linalg

std::string to_string(LossFamily f);
std::string to_string(LossNormalization n);
std::string to_string(TargetMode m);

}  // namespace ssrl
