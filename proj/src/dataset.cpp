#include "ssrl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ssrl/augment.hpp"
#include "ssrl/rng.hpp"

namespace ssrl {

ImageBatch load_cifar10(const std::string& path, int limit) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_cifar10: cannot open " + path);
  constexpr int kSide = 32;
  constexpr int kPixels = kSide * kSide;
  constexpr int kRecord = 1 + 3 * kPixels;
  ImageBatch batch;
  batch.c = 3;
  batch.h = kSide;
  batch.w = kSide;
  std::vector<unsigned char> rec(kRecord);
  int64_t offset = 0;
  while (limit == 0 || static_cast<int>(batch.images.size()) < limit) {
    is.read(reinterpret_cast<char*>(rec.data()), kRecord);
    std::streamsize got = is.gcount();
    if (got == 0) break;
    if (got < kRecord)
      throw std::runtime_error("load_cifar10: truncated record at byte offset " +
                               std::to_string(offset) + " in " + path + " (got " +
                               std::to_string(got) + " of " + std::to_string(kRecord) + " bytes)");
    int label = rec[0];
    if (label < 0 || label > 9)
      throw std::runtime_error("load_cifar10: invalid label byte " + std::to_string(label) +
                               " at offset " + std::to_string(offset));
    Image img(3, kSide, kSide);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < kPixels; ++i)
        img.data[static_cast<size_t>(c) * kPixels + i] =
            static_cast<real>(rec[1 + c * kPixels + i]) / 255.0;
    batch.images.push_back(std::move(img));
    batch.labels.push_back(label);
    offset += kRecord;
  }
  return batch;
}

ImageBatch synth_clusters(int n_classes, int n_per_class, int image_size, uint64_t seed) {
  if (n_classes < 1 || image_size < 1)
    throw std::invalid_argument("synth_clusters: sizes must be positive");
  ImageBatch batch;
  batch.c = 3;
  batch.h = image_size;
  batch.w = image_size;
  RngStream root(seed);
  int S = image_size;
  constexpr real kTwoPi = 6.283185307179586;
  constexpr real kHalfPi = 1.5707963267948966;
  // Class identity is the elevation angle between an anchor blob and a
  // satellite blob: a translation- and flip-invariant spatial relation.
  // Everything pooling-visible to an untrained network (color, stripe
  // orientation, texture energy) is pure per-image nuisance, so only features
  // that bind the two blob positions together can separate the classes.
  for (int cls = 0; cls < n_classes; ++cls) {
    RngStream cls_rng = root.split(static_cast<uint64_t>(cls));
    for (int n = 0; n < n_per_class; ++n) {
      RngStream rng = cls_rng.split(static_cast<uint64_t>(n));
      // elevation band of this class, with in-band jitter (instances stay
      // distinguishable, which contrastive objectives rely on). Elevation is
      // measured from the horizontal axis and the quadrant is randomized, so
      // flips cannot relabel and absolute positions stay class-symmetric.
      real elev = kHalfPi * (cls + rng.uniform(0.2, 0.8)) / n_classes;
      real radius = rng.uniform(0.36, 0.44);  // pair distance is nuisance
      real sx = rng.bernoulli(0.5) ? 1.0 : -1.0;
      real sy = rng.bernoulli(0.5) ? 1.0 : -1.0;
      real cx = 0.5 + rng.uniform(-0.05, 0.05);
      real cy = 0.5 + rng.uniform(-0.05, 0.05);
      real ax = cx - 0.5 * radius * std::cos(elev) * sx;
      real ay = cy - 0.5 * radius * std::sin(elev) * sy;
      real bx = cx + 0.5 * radius * std::cos(elev) * sx;
      real by = cy + 0.5 * radius * std::sin(elev) * sy;

      // Independent per-channel gains: a ~unique 3-d color identity per image
      // (a crop-stable shortcut for instance discrimination), class-independent.
      real base_r = rng.uniform(0.25, 0.9);
      real base_g = rng.uniform(0.25, 0.9);
      real base_b = rng.uniform(0.25, 0.9);
      real stripe_angle = rng.uniform(0.0, kTwoPi);  // orientation decoy
      real freq = rng.uniform(2.5, 4.5);
      real phase = rng.uniform(0.0, kTwoPi);
      // blobs: fixed bright colors (no class or instance information) so the
      // expected-pixel template per class stays sharp
      real anchor_rc = 0.95, anchor_gc = 0.9, anchor_bc = 0.2;
      real sat_rc = 0.2, sat_gc = 0.9, sat_bc = 0.95;
      real anchor_r2 = 0.11 * 0.11;
      real sat_r2 = 0.11 * 0.11;

      Image img(3, S, S);
      real ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          real u = (x + 0.5) / S, v = (y + 0.5) / S;
          real stripe = 0.5 + 0.5 * std::sin(kTwoPi * freq * (u * ca + v * sa) + phase);
          real m = 0.55 + 0.25 * stripe;
          real r = base_r * m, g = base_g * m, b = base_b * m;
          real dax = u - ax, day = v - ay;
          if (dax * dax + day * day < anchor_r2) {
            real w = 1.0 - (dax * dax + day * day) / anchor_r2;
            r = (1.0 - w) * r + w * anchor_rc;
            g = (1.0 - w) * g + w * anchor_gc;
            b = (1.0 - w) * b + w * anchor_bc;
          }
          real dbx = u - bx, dby = v - by;
          if (dbx * dbx + dby * dby < sat_r2) {
            real w = 1.0 - (dbx * dbx + dby * dby) / sat_r2;
            r = (1.0 - w) * r + w * sat_rc;
            g = (1.0 - w) * g + w * sat_gc;
            b = (1.0 - w) * b + w * sat_bc;
          }
          real noise = rng.uniform(-0.03, 0.03);
          img.at(0, y, x) = std::clamp<real>(r + noise, 0.0, 1.0);
          img.at(1, y, x) = std::clamp<real>(g + noise, 0.0, 1.0);
          img.at(2, y, x) = std::clamp<real>(b + noise, 0.0, 1.0);
        }
      batch.images.push_back(std::move(img));
      batch.labels.push_back(cls);
    }
  }
  return batch;
}

ImageBatch load_dataset(const DataSpec& spec) {
  if (spec.kind == DataSpec::Kind::kCifar10) {
    if (spec.path.empty()) throw std::invalid_argument("data.path required for cifar10");
    return load_cifar10(spec.path, spec.limit);
  }
  ImageBatch b = synth_clusters(spec.classes, spec.per_class, spec.image_size, 0x5EED);
  if (spec.limit > 0 && spec.limit < static_cast<int>(b.images.size())) {
    b.images.resize(static_cast<size_t>(spec.limit));
    b.labels.resize(static_cast<size_t>(spec.limit));
  }
  return b;
}

ChannelStats resolve_channel_stats(const DataSpec& spec, const ImageBatch& batch) {
  if (!spec.channel_mean.empty() && !spec.channel_std.empty()) {
    if (static_cast<int>(spec.channel_mean.size()) != batch.c ||
        static_cast<int>(spec.channel_std.size()) != batch.c)
      throw std::invalid_argument("configured channel stats have wrong channel count");
    return ChannelStats{spec.channel_mean, spec.channel_std};
  }
  return compute_channel_stats(batch.images);
}

}  // namespace ssrl
