#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssrl/augment.hpp"
#include "ssrl/model.hpp"
#include "ssrl/objective.hpp"
#include "ssrl/optim.hpp"

namespace ssrl {

// Line-oriented `key = value` store with dotted paths. `#` starts a comment.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load_file(const std::string& path);
  std::string serialize() const;  // canonical: sorted keys, full precision

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void erase(const std::string& key) { kv_.erase(key); }

  std::string get_string(const std::string& key, const std::string& dflt) const;
  real get_real(const std::string& key, real dflt) const;
  int get_int(const std::string& key, int dflt) const;
  uint64_t get_u64(const std::string& key, uint64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) const;
  std::vector<real> get_real_list(const std::string& key, std::vector<real> dflt) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

std::string format_real(real v);  // round-trip exact

struct DataSpec {
  enum class Kind { kCifar10, kSynth };
  Kind kind = Kind::kSynth;
  std::string path;
  int limit = 0;  // 0 = all records
  int classes = 4;
  int per_class = 400;
  int image_size = 16;
  int batch_size = 32;
  std::vector<real> channel_mean;  // empty = computed from the data
  std::vector<real> channel_std;
};

struct ProbeConfig {
  int epochs = 40;
  int batch_size = 256;
  real momentum = 0.9;
  std::vector<real> lr_sweep = {0.4, 0.3, 0.2, 0.1, 0.05};
  real val_fraction = 0.1;
  real test_fraction = 0.2;
  int augment_copies = 1;  // >1 adds crop+flip augmented passes over the train split
};

// Full experiment description. With a fixed build and single-threaded mode a
// RunConfig determines the run byte for byte.
struct RunConfig {
  std::string preset = "ablation";
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware default
  std::string out_dir = "runs/run";

  ArchitectureSpec arch;
  LossSpec loss;
  Schedule schedule;
  LarsConfig optim;
  real lambda_pred = 1.0;
  real mu_proj = 1.0;
  DataSpec data;
  AugmentationParams aug1;  // view distribution T
  AugmentationParams aug2;  // view distribution T'
  ProbeConfig probe;
  int accum_steps = 1;       // N sub-batches per optimizer step
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int norm_hist_every = 50;

  static RunConfig with_preset(const std::string& name);  // full | ablation | small-batch
  static RunConfig from_config(const Config& c);
  Config to_config() const;
  void validate() const;

  // All recognized config keys (for error messages and `--set` validation).
  static std::vector<std::string> known_keys();
};

}  // namespace ssrl
