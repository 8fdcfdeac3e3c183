#include "ssrl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ssrl {

void AugmentationParams::validate() const {
  auto prob = [](real p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(crop_prob) || !prob(flip_prob) || !prob(jitter_prob) || !prob(grayscale_prob) ||
      !prob(blur_prob) || !prob(solarize_prob))
    throw std::invalid_argument("AugmentationParams: probabilities must lie in [0,1]");
  if (brightness_max < 0 || contrast_max < 0 || saturation_max < 0 || hue_max < 0)
    throw std::invalid_argument("AugmentationParams: intensities must be nonnegative");
  if (!(area_lo > 0.0 && area_lo <= area_hi && area_hi <= 1.0))
    throw std::invalid_argument("AugmentationParams: area range must lie within (0,1]");
  if (!(aspect_lo > 0.0 && aspect_lo <= aspect_hi))
    throw std::invalid_argument("AugmentationParams: aspect range must be positive with lo <= hi");
  if (target_h < 1 || target_w < 1)
    throw std::invalid_argument("AugmentationParams: target size must be positive");
}

AugmentationParams default_view1_params(int target_h, int target_w) {
  AugmentationParams p;
  p.target_h = target_h;
  p.target_w = target_w;
  p.blur_prob = 1.0;
  p.solarize_prob = 0.0;
  return p;
}

AugmentationParams default_view2_params(int target_h, int target_w) {
  AugmentationParams p;
  p.target_h = target_h;
  p.target_w = target_w;
  p.blur_prob = 0.1;
  p.solarize_prob = 0.2;
  return p;
}

namespace {

inline real clamp01(real v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Cubic convolution weight, a = -0.5 (Catmull-Rom style).
inline real cubic_weight(real t) {
  constexpr real a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

constexpr real kLumaR = 0.2989, kLumaG = 0.5870, kLumaB = 0.1140;

real mean_luma(const Image& img) {
  real s = 0.0;
  int64_t n = static_cast<int64_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      s += kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
  return s / static_cast<real>(n);
}

}  // namespace

Image resize_bicubic(const Image& img, int out_h, int out_w) {
  Image out(img.c, out_h, out_w);
  real sy = static_cast<real>(img.h) / out_h;
  real sx = static_cast<real>(img.w) / out_w;
  for (int c = 0; c < img.c; ++c)
    for (int i = 0; i < out_h; ++i) {
      real fy = (i + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      for (int j = 0; j < out_w; ++j) {
        real fx = (j + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        real acc = 0.0;
        for (int dy = -1; dy <= 2; ++dy) {
          real wy = cubic_weight(fy - (y0 + dy));
          if (wy == 0.0) continue;
          int yy = std::clamp(y0 + dy, 0, img.h - 1);
          for (int dx = -1; dx <= 2; ++dx) {
            real wx = cubic_weight(fx - (x0 + dx));
            if (wx == 0.0) continue;
            int xx = std::clamp(x0 + dx, 0, img.w - 1);
            acc += wy * wx * img.at(c, yy, xx);
          }
        }
        out.at(c, i, j) = clamp01(acc);
      }
    }
  return out;
}

Image center_crop(const Image& img, int out_h, int out_w) {
  if (out_h > img.h || out_w > img.w)
    throw std::invalid_argument("center_crop: crop larger than image");
  Image out(img.c, out_h, out_w);
  int y0 = (img.h - out_h) / 2;
  int x0 = (img.w - out_w) / 2;
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

CropWindow sample_crop_window(int img_h, int img_w, const AugmentationParams& p, RngStream& rng) {
  real area = static_cast<real>(img_h) * img_w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    real target_area = area * rng.uniform(p.area_lo, p.area_hi);
    real log_ratio = rng.uniform(std::log(p.aspect_lo), std::log(p.aspect_hi));
    // Keep the drawn area exact: clamp the ratio into the window where both
    // dimensions fit. Rejecting instead would skew the area distribution
    // toward small crops. The window is empty only when the image is too
    // elongated for the configured ratio range; then the attempt fails.
    real lo = std::max(std::log(p.aspect_lo), std::log(target_area / (static_cast<real>(img_h) * img_h)));
    real hi = std::min(std::log(p.aspect_hi), std::log(static_cast<real>(img_w) * img_w / target_area));
    if (lo > hi) continue;
    real ratio = std::exp(std::clamp(log_ratio, lo, hi));
    int w = std::clamp(static_cast<int>(std::lround(std::sqrt(target_area * ratio))), 1, img_w);
    int h = std::clamp(static_cast<int>(std::lround(std::sqrt(target_area / ratio))), 1, img_h);
    CropWindow win;
    win.h = h;
    win.w = w;
    win.y = static_cast<int>(rng.next_index(img_h - h + 1));
    win.x = static_cast<int>(rng.next_index(img_w - w + 1));
    return win;
  }
  // Fallback: largest window with an in-range aspect ratio, centered.
  CropWindow win;
  real ratio = std::clamp<real>(1.0, p.aspect_lo, p.aspect_hi);
  win.w = std::max(1, std::min<int>(img_w, static_cast<int>(std::lround(img_h * ratio))));
  win.h = std::max(1, std::min<int>(img_h, static_cast<int>(std::lround(win.w / ratio))));
  win.y = (img_h - win.h) / 2;
  win.x = (img_w - win.w) / 2;
  return win;
}

Image random_resized_crop(const Image& img, const AugmentationParams& p, RngStream& rng) {
  if (img.h < 1 || img.w < 1) throw std::invalid_argument("random_resized_crop: empty image");
  CropWindow win = sample_crop_window(img.h, img.w, p, rng);
  Image patch(img.c, win.h, win.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < win.h; ++y)
      for (int x = 0; x < win.w; ++x) patch.at(c, y, x) = img.at(c, win.y + y, win.x + x);
  if (win.h == p.target_h && win.w == p.target_w) return patch;
  return resize_bicubic(patch, p.target_h, p.target_w);
}

Image horizontal_flip(const Image& img) {
  Image out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(c, y, x) = img.at(c, y, img.w - 1 - x);
  return out;
}

void rgb_to_hsv(real r, real g, real b, real& h, real& s, real& v) {
  real mx = std::max({r, g, b});
  real mn = std::min({r, g, b});
  v = mx;
  real d = mx - mn;
  s = mx <= 0.0 ? 0.0 : d / mx;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0 + (b - r) / d;
  else
    h = 4.0 + (r - g) / d;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(real h, real s, real v, real& r, real& g, real& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  h -= std::floor(h);
  real hh = h * 6.0;
  int sector = std::min(5, static_cast<int>(hh));
  real f = hh - sector;
  real p = v * (1.0 - s);
  real q = v * (1.0 - s * f);
  real t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

namespace {

Image adjust_brightness(const Image& img, real offset) {
  Image out = img;
  for (real& v : out.data) v = clamp01(v + offset);
  return out;
}

Image adjust_contrast(const Image& img, real factor) {
  real m = mean_luma(img);
  Image out = img;
  for (real& v : out.data) v = clamp01(m + (v - m) * factor);
  return out;
}

Image adjust_saturation(const Image& img, real factor) {
  Image out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      real l = kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = clamp01(l + (img.at(c, y, x) - l) * factor);
    }
  return out;
}

Image adjust_hue(const Image& img, real offset) {
  Image out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      real h, s, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
      real r, g, b;
      hsv_to_rgb(h + offset, s, v, r, g, b);
      out.at(0, y, x) = clamp01(r);
      out.at(1, y, x) = clamp01(g);
      out.at(2, y, x) = clamp01(b);
    }
  return out;
}

}  // namespace

Image color_jitter(const Image& img, const AugmentationParams& p, RngStream& rng) {
  if (img.c != 3) throw std::invalid_argument("color_jitter: want 3 channels");
  real d_bright = rng.uniform(-p.brightness_max, p.brightness_max);
  real f_contrast = 1.0 + rng.uniform(-p.contrast_max, p.contrast_max);
  real f_sat = 1.0 + rng.uniform(-p.saturation_max, p.saturation_max);
  real d_hue = rng.uniform(-p.hue_max, p.hue_max);
  // Order of the four shifts is randomly selected per image.
  int order[4] = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) {
    int j = static_cast<int>(rng.next_index(i + 1));
    std::swap(order[i], order[j]);
  }
  Image out = img;
  for (int k : order) {
    switch (k) {
      case 0: out = adjust_brightness(out, d_bright); break;
      case 1: out = adjust_contrast(out, f_contrast); break;
      case 2: out = adjust_saturation(out, f_sat); break;
      default: out = adjust_hue(out, d_hue); break;
    }
  }
  return out;
}

Image to_grayscale(const Image& img) {
  if (img.c != 3) throw std::invalid_argument("to_grayscale: want 3 channels, got " +
                                              std::to_string(img.c));
  Image out(img.c, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      real l = kLumaR * img.at(0, y, x) + kLumaG * img.at(1, y, x) + kLumaB * img.at(2, y, x);
      out.at(0, y, x) = l;
      out.at(1, y, x) = l;
      out.at(2, y, x) = l;
    }
  return out;
}

// Largest odd size not exceeding fraction*H (so 224 maps to 23 at the default
// fraction), floored at 3 so small images still get a usable kernel.
int blur_kernel_size(real fraction, int image_h) {
  int k = 2 * static_cast<int>(std::floor(fraction * image_h / 2.0)) + 1;
  return std::max(k, 3);
}

Image gaussian_blur(const Image& img, const AugmentationParams& p, RngStream& rng) {
  real sigma = rng.uniform(p.blur_sigma_lo, p.blur_sigma_hi);
  int ksize = blur_kernel_size(p.blur_kernel_fraction, img.h);
  int r = ksize / 2;
  std::vector<real> kernel(static_cast<size_t>(ksize));
  real sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    real v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    kernel[static_cast<size_t>(i + r)] = v;
    sum += v;
  }
  for (real& v : kernel) v /= sum;
  // Horizontal pass then vertical pass, reflect padding.
  Image tmp(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        real acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] * img.at(c, y, reflect_index(x + i, img.w));
        tmp.at(c, y, x) = acc;
      }
  Image out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        real acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kernel[static_cast<size_t>(i + r)] * tmp.at(c, reflect_index(y + i, img.h), x);
        out.at(c, y, x) = clamp01(acc);
      }
  return out;
}

Image solarize(const Image& img) {
  Image out = img;
  for (real& v : out.data) v = v < 0.5 ? v : 1.0 - v;
  return out;
}

Image normalize_channels(const Image& img, const ChannelStats& stats) {
  if (static_cast<int>(stats.mean.size()) != img.c ||
      static_cast<int>(stats.stddev.size()) != img.c)
    throw std::invalid_argument("normalize_channels: stats channel count mismatch");
  Image out = img;
  for (int c = 0; c < img.c; ++c) {
    real m = stats.mean[static_cast<size_t>(c)];
    real s = stats.stddev[static_cast<size_t>(c)];
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(c, y, x) = (img.at(c, y, x) - m) / s;
  }
  return out;
}

Image apply_pipeline(const Image& img, const AugmentationParams& p, const ChannelStats& stats,
                     RngStream rng) {
  p.validate();
  RngStream r_crop = rng.split(0), r_flip = rng.split(1), r_jit = rng.split(2),
            r_gray = rng.split(3), r_blur = rng.split(4), r_sol = rng.split(5);
  Image out = img;
  if (r_crop.bernoulli(p.crop_prob)) {
    out = random_resized_crop(out, p, r_crop);
  } else if (out.h != p.target_h || out.w != p.target_w) {
    out = resize_bicubic(out, p.target_h, p.target_w);
  }
  if (r_flip.bernoulli(p.flip_prob)) out = horizontal_flip(out);
  if (r_jit.bernoulli(p.jitter_prob)) out = color_jitter(out, p, r_jit);
  if (r_gray.bernoulli(p.grayscale_prob)) out = to_grayscale(out);
  if (r_blur.bernoulli(p.blur_prob)) out = gaussian_blur(out, p, r_blur);
  if (r_sol.bernoulli(p.solarize_prob)) out = solarize(out);
  return normalize_channels(out, stats);
}

Image eval_preprocess(const Image& img, int target_h, int target_w, const ChannelStats& stats) {
  int short_target = std::min(target_h, target_w);
  int resized_short = static_cast<int>(std::lround(short_target * 8.0 / 7.0));
  real s = static_cast<real>(resized_short) / std::min(img.h, img.w);
  int nh = std::max(target_h, static_cast<int>(std::lround(img.h * s)));
  int nw = std::max(target_w, static_cast<int>(std::lround(img.w * s)));
  Image out = (nh == img.h && nw == img.w) ? img : resize_bicubic(img, nh, nw);
  out = center_crop(out, target_h, target_w);
  return normalize_channels(out, stats);
}

ChannelStats compute_channel_stats(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("compute_channel_stats: empty image set");
  int c = images[0].c;
  ChannelStats st;
  st.mean.assign(static_cast<size_t>(c), 0.0);
  st.stddev.assign(static_cast<size_t>(c), 0.0);
  std::vector<real> sq(static_cast<size_t>(c), 0.0);
  int64_t n = 0;
  for (const Image& im : images) {
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
          real v = im.at(ci, y, x);
          st.mean[static_cast<size_t>(ci)] += v;
          sq[static_cast<size_t>(ci)] += v * v;
        }
    n += static_cast<int64_t>(im.h) * im.w;
  }
  for (int ci = 0; ci < c; ++ci) {
    real m = st.mean[static_cast<size_t>(ci)] / static_cast<real>(n);
    real var = sq[static_cast<size_t>(ci)] / static_cast<real>(n) - m * m;
    st.mean[static_cast<size_t>(ci)] = m;
    st.stddev[static_cast<size_t>(ci)] = std::sqrt(std::max<real>(var, 0.0) + 1e-8);
  }
  return st;
}

void write_ppm(const Image& img, const std::string& path) {
  if (img.c != 3) throw std::invalid_argument("write_ppm: want 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        int v = static_cast<int>(std::lround(clamp01(img.at(c, y, x)) * 255.0));
        os.put(static_cast<char>(v));
      }
}

}  // namespace ssrl
