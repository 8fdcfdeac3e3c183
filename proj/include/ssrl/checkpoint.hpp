#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssrl/model.hpp"
#include "ssrl/optim.hpp"

namespace ssrl {

// Little-endian checkpoint container. Layout:
//   magic "SSRLCKP1"
//   u64 step
//   u64 config length, config text bytes (canonical key=value serialization)
//   u32 entry count
//   per entry: u16 name length, name bytes; u8 dtype (1 = f64); u8 ndim;
//              u32 dims[ndim]; f64 values (little-endian), row-major.
// Round-trips bit-exactly.
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<real> data;
  };

  uint64_t step = 0;
  std::string config_text;
  std::vector<Entry> entries;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Entry* find(const std::string& name) const;
  int64_t total_values() const;
};

// Parameters, batch-norm running statistics and optimizer momentum buffers.
Checkpoint make_checkpoint(const NetworkPair& pair, const std::vector<ParamGroup>& opt_groups,
                           uint64_t step, const std::string& config_text);

// Restores in place; shape mismatch or missing entry -> error.
void restore_checkpoint(const Checkpoint& ck, NetworkPair& pair,
                        std::vector<ParamGroup>& opt_groups);

}  // namespace ssrl
