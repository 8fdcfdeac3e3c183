#include "ssrl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace {
constexpr double kPi = 3.14159265358979323846;
}

namespace ssrl {

std::vector<ParamGroup> make_param_groups(const std::vector<ParamRef>& params) {
  std::vector<ParamGroup> groups;
  groups.reserve(params.size());
  for (const ParamRef& p : params) {
    ParamGroup g;
    g.name = p.name;
    g.param = p.tensor;
    g.role = p.role;
    g.subnet = p.subnet;
    bool is_weight = p.role == ParamRole::kWeight;
    g.lars_adapt = is_weight;
    g.weight_decay = is_weight;
    g.momentum.assign(p.tensor.data().size(), 0.0);
    groups.push_back(std::move(g));
  }
  return groups;
}

void group_multipliers(std::vector<ParamGroup>& groups, real lambda_pred, real mu_proj) {
  if (lambda_pred < 0.0 || mu_proj < 0.0)
    throw std::invalid_argument("group_multipliers: multipliers must be nonnegative");
  for (ParamGroup& g : groups) {
    if (g.subnet == Subnet::kPredictor)
      g.lr_multiplier = lambda_pred;
    else if (g.subnet == Subnet::kProjector)
      g.lr_multiplier = mu_proj;
    else
      g.lr_multiplier = 1.0;
  }
}

void Schedule::validate() const {
  if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps)
    throw std::invalid_argument("Schedule: need 0 <= warmup_steps <= total_steps");
  if (tau_base < 0.0 || tau_base > 1.0)
    throw std::invalid_argument("Schedule: tau_base must lie in [0,1]");
  if (batch_size < 1 || batch_size_ref < 1)
    throw std::invalid_argument("Schedule: batch sizes must be positive");
}

real lr_at(int step, const Schedule& s) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, K=" +
                                std::to_string(s.total_steps) + "]");
  real peak = s.peak_lr();
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return peak * static_cast<real>(step) / s.warmup_steps;
  int t = step - s.warmup_steps;
  int t_decay = s.total_steps - s.warmup_steps;
  if (t_decay == 0) return peak;
  return peak * (std::cos(kPi * static_cast<real>(t) / t_decay) + 1.0) / 2.0;
}

real tau_at(int step, const Schedule& s) {
  s.validate();
  if (step < 0) throw std::invalid_argument("tau_at: negative step");
  if (s.tau_constant) return s.tau_base;
  if (s.total_steps == 0) return s.tau_base;
  return 1.0 - (1.0 - s.tau_base) *
                   (std::cos(kPi * static_cast<real>(step) / s.total_steps) + 1.0) / 2.0;
}

namespace {

real l2_norm(const std::vector<real>& v) {
  real s = 0.0;
  for (real x : v) s += x * x;
  return std::sqrt(s);
}

void check_grad_finite(const ParamGroup& g) {
  for (real x : g.param.grad())
    if (!std::isfinite(x))
      throw std::runtime_error("optimizer: non-finite gradient in parameter " + g.name);
}

}  // namespace

void lars_step(std::vector<ParamGroup>& groups, real lr, const LarsConfig& cfg) {
  for (ParamGroup& g : groups) {
    if (!g.param.has_grad()) continue;  // untouched parameters (e.g. frozen heads)
    check_grad_finite(g);
    auto& w = g.param.data();
    const auto& grad = g.param.grad();
    real eff_lr = lr * g.lr_multiplier;
    if (g.lars_adapt) {
      real wd = g.weight_decay ? cfg.weight_decay : 0.0;
      std::vector<real> upd(grad);
      if (wd != 0.0)
        for (size_t i = 0; i < upd.size(); ++i) upd[i] += wd * w[i];
      real wn = l2_norm(w);
      real gn = l2_norm(upd);
      real local_lr = (wn > 0.0 && gn > 0.0) ? cfg.eta_trust * wn / (gn + kEpsLars) : 1.0;
      for (size_t i = 0; i < w.size(); ++i) {
        g.momentum[i] = cfg.momentum * g.momentum[i] + local_lr * eff_lr * upd[i];
        w[i] -= g.momentum[i];
      }
    } else {
      // Plain momentum SGD, no weight decay, no trust ratio.
      for (size_t i = 0; i < w.size(); ++i) {
        g.momentum[i] = cfg.momentum * g.momentum[i] + eff_lr * grad[i];
        w[i] -= g.momentum[i];
      }
    }
  }
}

void sgd_nesterov_step(Tensor& param, std::vector<real>& momentum_buf, real lr, real momentum) {
  const auto& grad = param.grad();
  for (real x : grad)
    if (!std::isfinite(x)) throw std::runtime_error("sgd_nesterov_step: non-finite gradient");
  auto& w = param.data();
  if (momentum_buf.size() != w.size()) momentum_buf.assign(w.size(), 0.0);
  if (momentum == 0.0) {
    for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
    return;
  }
  for (size_t i = 0; i < w.size(); ++i) {
    momentum_buf[i] = momentum * momentum_buf[i] + grad[i];
    w[i] -= lr * (grad[i] + momentum * momentum_buf[i]);
  }
}

void sgd_nesterov_step(std::vector<ParamGroup>& groups, real lr, real momentum) {
  for (ParamGroup& g : groups) {
    if (!g.param.has_grad()) continue;
    check_grad_finite(g);
    Tensor p = g.param;
    sgd_nesterov_step(p, g.momentum, lr * g.lr_multiplier, momentum);
  }
}

}  // namespace ssrl
