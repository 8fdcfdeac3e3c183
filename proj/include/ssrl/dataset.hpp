#pragma once

#include <string>
#include <vector>

#include "ssrl/config.hpp"
#include "ssrl/image.hpp"

namespace ssrl {

// Parses the standard binary record layout: 1 label byte + 3072 pixel bytes
// per record (R plane, then G, then B), pixels scaled to [0,1].
// limit = 0 loads every record.
ImageBatch load_cifar10(const std::string& path, int limit = 0);

// Class-conditional images: each class owns a color family, a stripe texture
// orientation/frequency and a blob position; each image adds a random global
// tint, blob jitter and pixel noise. Classes are recoverable under the
// augmentation pipeline, and a linear probe on raw pixels separates them.
ImageBatch synth_clusters(int n_classes, int n_per_class, int image_size, uint64_t seed);

// Materializes the dataset described by a DataSpec.
ImageBatch load_dataset(const DataSpec& spec);

// Channel statistics: configured values if present, else computed.
ChannelStats resolve_channel_stats(const DataSpec& spec, const ImageBatch& batch);

}  // namespace ssrl
