#pragma once

#include <string>
#include <vector>

#include "ssrl/image.hpp"
#include "ssrl/rng.hpp"

namespace ssrl {

// Parameters of one augmentation distribution. Removing a primitive is a pure
// parameter change (probability / max intensity to zero), never a code change.
struct AugmentationParams {
  real crop_prob = 1.0;
  real flip_prob = 0.5;
  real jitter_prob = 0.8;
  real brightness_max = 0.4;
  real contrast_max = 0.4;
  real saturation_max = 0.2;
  real hue_max = 0.1;
  real grayscale_prob = 0.2;
  real blur_prob = 1.0;
  real solarize_prob = 0.0;
  int target_h = 32;
  int target_w = 32;
  real area_lo = 0.08;
  real area_hi = 1.0;
  real aspect_lo = 3.0 / 4.0;  // sampled log-uniformly
  real aspect_hi = 4.0 / 3.0;
  real blur_kernel_fraction = 0.1;  // kernel size = 2*round(fraction*H/2)+1
  real blur_sigma_lo = 0.1;
  real blur_sigma_hi = 2.0;

  void validate() const;
};

// Defaults for the two view distributions: the first view always blurs and
// never solarizes; the second blurs rarely and sometimes solarizes.
AugmentationParams default_view1_params(int target_h, int target_w);
AugmentationParams default_view2_params(int target_h, int target_w);

// --- primitives -------------------------------------------------------------

// Random patch with area fraction ~ U[area_lo, area_hi] and log-uniform aspect
// ratio, resized to (target_h, target_w) with bicubic interpolation. Falls
// back to a max-size center crop after 10 failed attempts.
Image random_resized_crop(const Image& img, const AugmentationParams& p, RngStream& rng);

struct CropWindow {
  int y = 0, x = 0, h = 0, w = 0;
};
CropWindow sample_crop_window(int img_h, int img_w, const AugmentationParams& p, RngStream& rng);

Image horizontal_flip(const Image& img);

// Brightness/contrast/saturation/hue adjusted by uniform random offsets, in a
// random per-image order; output clamped to [0,1].
Image color_jitter(const Image& img, const AugmentationParams& p, RngStream& rng);

// All three output channels carry the luma value 0.2989 r + 0.5870 g + 0.1140 b.
Image to_grayscale(const Image& img);

// Separable Gaussian filter with sigma ~ U[sigma_lo, sigma_hi], reflect
// padding, kernel normalized to sum 1.
Image gaussian_blur(const Image& img, const AugmentationParams& p, RngStream& rng);
int blur_kernel_size(real fraction, int image_h);

// x -> x for x < 0.5, 1 - x otherwise.
Image solarize(const Image& img);

Image resize_bicubic(const Image& img, int out_h, int out_w);
Image center_crop(const Image& img, int out_h, int out_w);

// --- pipeline ---------------------------------------------------------------

// Applies crop, flip, jitter, grayscale, blur, solarize in that order, each
// gated by its probability, then normalizes channels by dataset mean/std.
// Each primitive draws from its own split of `rng`, so disabling one never
// shifts the randomness of the others.
Image apply_pipeline(const Image& img, const AugmentationParams& p, const ChannelStats& stats,
                     RngStream rng);

// Deterministic evaluation-time preprocessing: resize shorter side to 8/7 of
// the target, center-crop, normalize.
Image eval_preprocess(const Image& img, int target_h, int target_w, const ChannelStats& stats);

Image normalize_channels(const Image& img, const ChannelStats& stats);

// Channel mean/std over a set of images (population std, eps-guarded).
ChannelStats compute_channel_stats(const std::vector<Image>& images);

// HSV helpers exposed for tests.
void rgb_to_hsv(real r, real g, real b, real& h, real& s, real& v);
void hsv_to_rgb(real h, real s, real v, real& r, real& g, real& b);

}  // namespace ssrl
