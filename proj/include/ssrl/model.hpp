#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

enum class ParamRole { kWeight, kBias, kBnGamma, kBnBeta };
enum class Subnet { kEncoder, kProjector, kPredictor };

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamRole role;
  Subnet subnet;
};

struct BufferRef {
  std::string name;
  std::vector<real>* data;
};

struct ArchitectureSpec {
  enum class EncoderKind { kSmallConv, kMlp };
  EncoderKind encoder = EncoderKind::kSmallConv;
  std::vector<int> conv_channels = {32, 64, 128, 128};
  std::vector<int> mlp_widths = {256, 128};
  int repr_dim = 128;    // R; equals last conv width for the conv encoder
  int proj_hidden = 512; // shared by projector and predictor
  int proj_dim = 64;     // P
  bool use_bn = true;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, BnMode mode) = 0;
  virtual void collect_params(const std::string&, Subnet, std::vector<ParamRef>&) {}
  virtual void collect_buffers(const std::string&, std::vector<BufferRef>&) {}
};

class Sequential : public Module {
 public:
  void add(const std::string& name, std::unique_ptr<Module> m);
  Tensor forward(const Tensor& x, BnMode mode) override;
  void collect_params(const std::string& prefix, Subnet subnet,
                      std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  int module_count() const { return static_cast<int>(children_.size()); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

class Linear : public Module {
 public:
  Linear(int in, int out, RngStream& rng, bool trainable);
  Tensor forward(const Tensor& x, BnMode mode) override;
  void collect_params(const std::string& prefix, Subnet subnet,
                      std::vector<ParamRef>& out) override;
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
};

class Conv : public Module {
 public:
  Conv(int cin, int cout, int k, int stride, int pad, RngStream& rng, bool trainable);
  Tensor forward(const Tensor& x, BnMode mode) override;
  void collect_params(const std::string& prefix, Subnet subnet,
                      std::vector<ParamRef>& out) override;
  Tensor weight;  // (cout, cin, k, k)
  int stride, pad;
};

class BatchNorm : public Module {
 public:
  BatchNorm(int features, bool trainable, bool track_stats);
  Tensor forward(const Tensor& x, BnMode mode) override;
  void collect_params(const std::string& prefix, Subnet subnet,
                      std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  Tensor gamma, beta;
  RunningStats stats;
  bool track_stats;
};

class Relu : public Module {
 public:
  Tensor forward(const Tensor& x, BnMode) override { return relu(x); }
};

class MaxPool : public Module {
 public:
  Tensor forward(const Tensor& x, BnMode) override {
    // Blocks on inputs too small to pool pass through unchanged.
    if (x.dim(2) < 2 || x.dim(3) < 2) return x;
    return max_pool2d(x, 2, 2);
  }
};

class AvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, BnMode) override {
    if (x.dim(2) < 2 || x.dim(3) < 2) return x;
    return avg_pool2d(x, 2, 2);
  }
};

class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, BnMode) override { return global_avg_pool(x); }
};

class Flatten : public Module {
 public:
  Tensor forward(const Tensor& x, BnMode) override {
    return reshape(x, {x.dim(0), static_cast<int>(x.size() / x.dim(0))});
  }
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

// Encoder f, projector g and (online only) predictor q.
struct Network {
  std::unique_ptr<Sequential> encoder;
  std::unique_ptr<Sequential> projector;
  std::unique_ptr<Sequential> predictor;  // null on the target network
  int in_c = 0, in_h = 0, in_w = 0;       // expected input shape

  Tensor encode(const Tensor& x, BnMode mode) const {
    if (x.ndim() != 4 || x.dim(1) != in_c || x.dim(2) != in_h || x.dim(3) != in_w)
      throw std::invalid_argument("Network: input " + shape_str(x.shape()) +
                                  " does not match the configured shape (*," +
                                  std::to_string(in_c) + "," + std::to_string(in_h) + "," +
                                  std::to_string(in_w) + ")");
    return encoder->forward(x, mode);
  }
  Tensor project(const Tensor& y, BnMode mode) const { return projector->forward(y, mode); }
  Tensor predict(const Tensor& z, BnMode mode) const;

  std::vector<ParamRef> params(const std::string& prefix) const;
  std::vector<BufferRef> buffers(const std::string& prefix) const;
};

enum class TargetMode { kTheta, kSgTheta, kXi };

// Online parameters (theta: encoder f, projector g, predictor q) and target
// parameters (xi: encoder, projector; no predictor). At initialization xi is a
// copy of the matching subset of theta; xi never carries gradients.
struct NetworkPair {
  Network online;
  Network target;

  // (y, z, p) = (f(v), g(y), q(z)), all on the gradient tape.
  struct OnlineOut {
    Tensor y, z, p;
  };
  OnlineOut forward_online(const Tensor& v, BnMode mode = BnMode::kTrain) const;

  // z' = g(f(v')) through the branch selected by `mode`:
  //   kXi      -> EMA target network, detached (default)
  //   kSgTheta -> online parameters, detached
  //   kTheta   -> online parameters, gradients flow
  Tensor forward_target(const Tensor& v, TargetMode mode, BnMode bn_mode = BnMode::kTrain) const;

  // xi <- tau*xi + (1-tau)*theta over matching parameters; batch-norm running
  // statistics follow the same moving average.
  void ema_update(real tau);

  std::vector<ParamRef> all_params() const;     // online/... then target/...
  std::vector<BufferRef> all_buffers() const;
  std::vector<ParamRef> online_params() const { return online.params("online"); }
  std::vector<ParamRef> target_params() const { return target.params("target"); }
};

// Builds the online network from the spec and seeds the target with a copy of
// the encoder+projector subset. input_channels/height/width describe the data.
NetworkPair build_network_pair(const ArchitectureSpec& spec, int input_c, int input_h,
                               int input_w, uint64_t seed);

}  // namespace ssrl
