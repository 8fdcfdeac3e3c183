#pragma once

#include <string>
#include <vector>

#include "ssrl/model.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

// One optimizer-managed parameter. Biases and batch-norm parameters are
// excluded from both LARS adaptation and weight decay.
struct ParamGroup {
  std::string name;
  Tensor param;
  ParamRole role = ParamRole::kWeight;
  Subnet subnet = Subnet::kEncoder;
  real lr_multiplier = 1.0;
  bool lars_adapt = true;
  bool weight_decay = true;
  std::vector<real> momentum;  // same length as param
};

std::vector<ParamGroup> make_param_groups(const std::vector<ParamRef>& params);

// Sets lr_multiplier on predictor (lambda) and projector (mu) groups; encoder
// groups stay at 1.
void group_multipliers(std::vector<ParamGroup>& groups, real lambda_pred, real mu_proj);

// Cosine learning-rate schedule with linear warmup and the cosine target
// decay schedule tau(k) = 1 - (1 - tau_base) * (cos(pi*k/K) + 1)/2.
struct Schedule {
  real base_lr = 0.3;
  int batch_size = 256;
  int batch_size_ref = 256;  // peak lr = base_lr * batch_size / batch_size_ref
  int warmup_steps = 0;
  int total_steps = 1000;  // K
  real tau_base = 0.99;
  bool tau_constant = false;  // tau == tau_base at every step

  real peak_lr() const { return base_lr * static_cast<real>(batch_size) / batch_size_ref; }
  void validate() const;
};

real lr_at(int step, const Schedule& s);
real tau_at(int step, const Schedule& s);

inline constexpr real kEpsLars = 1e-9;

struct LarsConfig {
  real momentum = 0.9;
  real weight_decay = 1e-6;
  real eta_trust = 1e-3;
};

// One LARS step. Adapted groups use the layerwise trust ratio
// eta_trust*||w|| / (||g + wd*w|| + eps) when both norms are positive (1
// otherwise); excluded groups take plain momentum SGD without weight decay.
void lars_step(std::vector<ParamGroup>& groups, real lr, const LarsConfig& cfg);

// Standard Nesterov-momentum SGD step on (param, grad, buffer) triples.
void sgd_nesterov_step(Tensor& param, std::vector<real>& momentum_buf, real lr, real momentum);

// Nesterov step over groups (ignores LARS flags; respects lr_multiplier).
void sgd_nesterov_step(std::vector<ParamGroup>& groups, real lr, real momentum);

}  // namespace ssrl
