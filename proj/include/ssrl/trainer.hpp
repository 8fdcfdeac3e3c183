#pragma once

#include <string>
#include <vector>

#include "ssrl/checkpoint.hpp"
#include "ssrl/config.hpp"
#include "ssrl/dataset.hpp"
#include "ssrl/model.hpp"
#include "ssrl/objective.hpp"
#include "ssrl/optim.hpp"

namespace ssrl {

struct StepMetrics {
  int step = 0;
  real loss = 0;
  real cos_sim = 0;       // mean cosine of the positive pairs, first branch
  real z_norm_mean = 0;   // mean l2 norm of online projections
  real zp_norm_mean = 0;  // mean l2 norm of target projections
  real tau = 0;
  real lr = 0;
};

inline constexpr const char* kMetricsHeader = "step,loss,cos_sim,z_norm_mean,zp_norm_mean,tau,lr";
std::string metrics_csv_row(const StepMetrics& m);

// Holds everything one training run mutates: the network pair, optimizer
// state, the step counter and the data order. The EMA update count always
// equals the optimizer update count.
class TrainState {
 public:
  explicit TrainState(const RunConfig& cfg);
  TrainState(const RunConfig& cfg, ImageBatch data);

  // One optimizer step on the images at `indices` (dataset indices): dual-view
  // augmentation, symmetrized loss, backward, optimizer step, EMA update.
  StepMetrics train_step(const std::vector<int64_t>& indices);

  // Forward/backward each sub-batch, average gradients, then a single
  // optimizer step and a single EMA update.
  StepMetrics accumulate_and_step(const std::vector<std::vector<int64_t>>& sub_batches);

  // Dataset indices for optimizer step k (accum_steps sub-batches of batch_size,
  // epoch-wise seeded shuffling).
  std::vector<std::vector<int64_t>> batches_for_step(int k);

  int step() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  NetworkPair& pair() { return pair_; }
  const NetworkPair& pair() const { return pair_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  const ImageBatch& data() const { return data_; }
  const ChannelStats& channel_stats() const { return stats_; }

  // Augmented views (v, v') for the given images, as (B,C,H,W) tensors.
  std::pair<Tensor, Tensor> make_views(const std::vector<int64_t>& indices);

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

 private:
  RunConfig cfg_;
  ImageBatch data_;
  ChannelStats stats_;
  NetworkPair pair_;
  std::vector<ParamGroup> groups_;
  int step_ = 0;
  int64_t cached_epoch_ = -1;
  std::vector<int64_t> cached_perm_;

  const std::vector<int64_t>& epoch_perm(int64_t epoch);
  std::string param_norm_summary() const;
  void assert_target_grad_free() const;
};

struct RunResult {
  std::string final_checkpoint;
  std::vector<StepMetrics> metrics;
};

// Executes the configured number of steps with schedules, periodic checkpoints
// and a metrics CSV (one row per optimizer step). With resume_from set, state
// is restored and training continues to the configured step count. stop_after
// simulates an interruption: the run halts (and checkpoints) at that step.
RunResult run_training(const RunConfig& cfg, const std::string& resume_from = "",
                       int stop_after = 0);

}  // namespace ssrl
