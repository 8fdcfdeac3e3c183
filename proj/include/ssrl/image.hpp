#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ssrl/tensor.hpp"

namespace ssrl {

// CHW image with values in [0,1] (before dataset normalization).
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<real> data;  // c*h*w, row-major per channel

  Image() = default;
  Image(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  real& at(int ci, int y, int x) { return data[(static_cast<size_t>(ci) * h + y) * w + x]; }
  real at(int ci, int y, int x) const { return data[(static_cast<size_t>(ci) * h + y) * w + x]; }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Batch of images plus labels (labels used for evaluation only).
struct ImageBatch {
  int c = 0, h = 0, w = 0;
  std::vector<Image> images;
  std::vector<int> labels;

  int64_t count() const { return static_cast<int64_t>(images.size()); }

  // Stacks into a (B,C,H,W) tensor (constant, no grad).
  Tensor to_tensor() const {
    if (images.empty()) return Tensor::zeros({0, c, h, w});
    std::vector<real> buf;
    buf.reserve(images.size() * images[0].data.size());
    for (const Image& im : images) {
      if (im.c != c || im.h != h || im.w != w)
        throw std::runtime_error("ImageBatch: inconsistent image shapes");
      buf.insert(buf.end(), im.data.begin(), im.data.end());
    }
    return Tensor::from_data({static_cast<int>(images.size()), c, h, w}, std::move(buf));
  }
};

// Per-channel statistics used for the final normalization step.
struct ChannelStats {
  std::vector<real> mean;  // per channel
  std::vector<real> stddev;
};

// Writes a binary PPM (P6). Values clamped to [0,1]; 3-channel input only.
void write_ppm(const Image& img, const std::string& path);

}  // namespace ssrl
