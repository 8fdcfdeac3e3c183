#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssrl/config.hpp"
#include "ssrl/dataset.hpp"
#include "ssrl/model.hpp"

namespace ssrl {

struct ProbeResult {
  real top1 = 0;                 // test accuracy of the best-validation learning rate
  real best_lr = 0;
  std::vector<real> per_class;   // test accuracy per class
  std::vector<real> train_curve; // training loss per epoch at the best learning rate
};

struct CollapseReport {
  std::vector<real> per_dim_std;  // std of each dimension of l2-normalized projections
  real mean_per_dim_std = 0;
  real mean_l2_norm = 0;          // of the raw projections
  real effective_rank = 0;        // exp(entropy of normalized squared singular values)
};

// mean per-dim std below this threshold declares a collapsed representation.
inline constexpr real kCollapseStdThreshold = 0.01;

// Frozen-encoder features: y = f(x) for every example, eval-mode batch norm,
// no statistics updates, deterministic. Images get eval preprocessing.
std::pair<Tensor, std::vector<int>> extract_representations(const Network& net,
                                                            const ImageBatch& data,
                                                            const ChannelStats& stats,
                                                            int target_h, int target_w,
                                                            int batch_size = 256);

// Same but through the augmentation pipeline (spatial-only augmentations are
// expressed via the params); used for augmented probe training copies.
std::pair<Tensor, std::vector<int>> extract_representations_augmented(
    const Network& net, const ImageBatch& data, const ChannelStats& stats,
    const AugmentationParams& params, uint64_t seed, int batch_size = 256);

// Trains a linear classifier on frozen features with Nesterov SGD, sweeping
// the configured learning rates on a held-out validation split; reports test
// accuracy of the best-validation learning rate.
ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& cfg, uint64_t seed);

// Per-dimension std of l2-normalized projections, mean raw projection norm,
// effective rank of the (uncentered) normalized-feature Gram matrix.
CollapseReport collapse_metrics(const Tensor& projections);

// Structured text records (key = value) for the metrics directory.
std::string to_text(const ProbeResult& r);
std::string to_text(const CollapseReport& r);

// Symmetric eigenvalues via cyclic Jacobi (ascending order).
std::vector<real> symmetric_eigenvalues(std::vector<real> a, int n);

}  // namespace ssrl
