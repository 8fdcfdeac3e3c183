#include "ssrl/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ssrl {

void ArchitectureSpec::validate() const {
  if (repr_dim < 1 || proj_hidden < 1 || proj_dim < 1)
    throw std::invalid_argument("ArchitectureSpec: dimensions must be positive");
  if (encoder == EncoderKind::kSmallConv) {
    if (conv_channels.empty())
      throw std::invalid_argument("ArchitectureSpec: conv encoder needs channel widths");
    if (conv_channels.back() != repr_dim)
      throw std::invalid_argument(
          "ArchitectureSpec: repr_dim must equal the last conv width (global average pooling), got " +
          std::to_string(repr_dim) + " vs " + std::to_string(conv_channels.back()));
  }
}

// ---------------------------------------------------------------------------

void Sequential::add(const std::string& name, std::unique_ptr<Module> m) {
  children_.emplace_back(name, std::move(m));
}

Tensor Sequential::forward(const Tensor& x, BnMode mode) {
  Tensor t = x;
  for (auto& [name, m] : children_) t = m->forward(t, mode);
  return t;
}

void Sequential::collect_params(const std::string& prefix, Subnet subnet,
                                std::vector<ParamRef>& out) {
  for (auto& [name, m] : children_) m->collect_params(prefix + "/" + name, subnet, out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (auto& [name, m] : children_) m->collect_buffers(prefix + "/" + name, out);
}

namespace {
// Fan-in scaled uniform init, zero biases.
Tensor init_uniform(Shape shape, int fan_in, RngStream& rng, bool trainable) {
  real bound = 1.0 / std::sqrt(static_cast<real>(fan_in));
  std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
  for (real& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(v), trainable);
}
}  // namespace

Linear::Linear(int in, int out, RngStream& rng, bool trainable) {
  weight = init_uniform({in, out}, in, rng, trainable);
  bias = Tensor::zeros({out}, trainable);
}

Tensor Linear::forward(const Tensor& x, BnMode) {
  if (x.ndim() != 2 || x.dim(1) != weight.dim(0))
    throw std::invalid_argument("Linear: input " + shape_str(x.shape()) +
                                " does not match weight " + shape_str(weight.shape()));
  return add_bias(matmul(x, weight), bias);
}

void Linear::collect_params(const std::string& prefix, Subnet subnet,
                            std::vector<ParamRef>& out) {
  out.push_back({prefix + "/weight", weight, ParamRole::kWeight, subnet});
  out.push_back({prefix + "/bias", bias, ParamRole::kBias, subnet});
}

Conv::Conv(int cin, int cout, int k, int stride_, int pad_, RngStream& rng, bool trainable)
    : stride(stride_), pad(pad_) {
  weight = init_uniform({cout, cin, k, k}, cin * k * k, rng, trainable);
}

Tensor Conv::forward(const Tensor& x, BnMode) { return conv2d(x, weight, stride, pad); }

void Conv::collect_params(const std::string& prefix, Subnet subnet, std::vector<ParamRef>& out) {
  out.push_back({prefix + "/weight", weight, ParamRole::kWeight, subnet});
}

BatchNorm::BatchNorm(int features, bool trainable, bool track)
    : track_stats(track) {
  gamma = Tensor::full({features}, 1.0, trainable);
  beta = Tensor::zeros({features}, trainable);
  stats.mean.assign(static_cast<size_t>(features), 0.0);
  stats.var.assign(static_cast<size_t>(features), 1.0);
}

Tensor BatchNorm::forward(const Tensor& x, BnMode mode) {
  RunningStats* s = &stats;
  if (mode == BnMode::kTrain && !track_stats) s = nullptr;
  if (mode == BnMode::kEval) s = &stats;
  return batch_norm(x, gamma, beta, s, mode);
}

void BatchNorm::collect_params(const std::string& prefix, Subnet subnet,
                               std::vector<ParamRef>& out) {
  out.push_back({prefix + "/gamma", gamma, ParamRole::kBnGamma, subnet});
  out.push_back({prefix + "/beta", beta, ParamRole::kBnBeta, subnet});
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  out.push_back({prefix + "/running_mean", &stats.mean});
  out.push_back({prefix + "/running_var", &stats.var});
}

// ---------------------------------------------------------------------------

Tensor Network::predict(const Tensor& z, BnMode mode) const {
  if (!predictor) throw std::runtime_error("Network: no predictor on this branch");
  return predictor->forward(z, mode);
}

std::vector<ParamRef> Network::params(const std::string& prefix) const {
  std::vector<ParamRef> out;
  encoder->collect_params(prefix + "/encoder", Subnet::kEncoder, out);
  projector->collect_params(prefix + "/projector", Subnet::kProjector, out);
  if (predictor) predictor->collect_params(prefix + "/predictor", Subnet::kPredictor, out);
  return out;
}

std::vector<BufferRef> Network::buffers(const std::string& prefix) const {
  std::vector<BufferRef> out;
  encoder->collect_buffers(prefix + "/encoder", out);
  projector->collect_buffers(prefix + "/projector", out);
  if (predictor) predictor->collect_buffers(prefix + "/predictor", out);
  return out;
}

namespace {

std::unique_ptr<Sequential> build_conv_encoder(const ArchitectureSpec& spec, int input_c,
                                               RngStream& rng, bool trainable, bool track_stats) {
  auto seq = std::make_unique<Sequential>();
  int cin = input_c;
  for (size_t i = 0; i < spec.conv_channels.size(); ++i) {
    int cout = spec.conv_channels[i];
    std::string n = std::to_string(i + 1);
    seq->add("conv" + n, std::make_unique<Conv>(cin, cout, 3, 1, 1, rng, trainable));
    if (spec.use_bn) seq->add("bn" + n, std::make_unique<BatchNorm>(cout, trainable, track_stats));
    seq->add("relu" + n, std::make_unique<Relu>());
    if (i + 1 < spec.conv_channels.size())
      seq->add("pool" + n, std::make_unique<AvgPool>());
    cin = cout;
  }
  seq->add("gap", std::make_unique<GlobalAvgPool>());
  return seq;
}

std::unique_ptr<Sequential> build_mlp_encoder(const ArchitectureSpec& spec, int input_dim,
                                              RngStream& rng, bool trainable, bool track_stats) {
  auto seq = std::make_unique<Sequential>();
  seq->add("flatten", std::make_unique<Flatten>());
  int din = input_dim;
  for (size_t i = 0; i < spec.mlp_widths.size(); ++i) {
    int w = spec.mlp_widths[i];
    std::string n = std::to_string(i + 1);
    seq->add("fc" + n, std::make_unique<Linear>(din, w, rng, trainable));
    if (spec.use_bn) seq->add("bn" + n, std::make_unique<BatchNorm>(w, trainable, track_stats));
    seq->add("relu" + n, std::make_unique<Relu>());
    din = w;
  }
  seq->add("fc_out", std::make_unique<Linear>(din, spec.repr_dim, rng, trainable));
  return seq;
}

// Two-layer MLP: linear -> BN -> ReLU -> linear. The final linear layer has no
// activation and no batch normalization.
std::unique_ptr<Sequential> build_projection_mlp(int in, int hidden, int out, bool use_bn,
                                                 RngStream& rng, bool trainable,
                                                 bool track_stats) {
  auto seq = std::make_unique<Sequential>();
  seq->add("fc1", std::make_unique<Linear>(in, hidden, rng, trainable));
  if (use_bn) seq->add("bn1", std::make_unique<BatchNorm>(hidden, trainable, track_stats));
  seq->add("relu1", std::make_unique<Relu>());
  seq->add("fc2", std::make_unique<Linear>(hidden, out, rng, trainable));
  return seq;
}

Network build_network(const ArchitectureSpec& spec, int input_c, int input_h, int input_w,
                      RngStream& rng, bool trainable, bool with_predictor, bool track_stats) {
  Network net;
  net.in_c = input_c;
  net.in_h = input_h;
  net.in_w = input_w;
  if (spec.encoder == ArchitectureSpec::EncoderKind::kSmallConv) {
    net.encoder = build_conv_encoder(spec, input_c, rng, trainable, track_stats);
  } else {
    net.encoder = build_mlp_encoder(spec, input_c * input_h * input_w, rng, trainable, track_stats);
  }
  net.projector = build_projection_mlp(spec.repr_dim, spec.proj_hidden, spec.proj_dim,
                                       spec.use_bn, rng, trainable, track_stats);
  if (with_predictor)
    net.predictor = build_projection_mlp(spec.proj_dim, spec.proj_hidden, spec.proj_dim,
                                         spec.use_bn, rng, trainable, track_stats);
  return net;
}

}  // namespace

NetworkPair::OnlineOut NetworkPair::forward_online(const Tensor& v, BnMode mode) const {
  OnlineOut o;
  o.y = online.encode(v, mode);
  o.z = online.project(o.y, mode);
  o.p = online.predict(o.z, mode);
  return o;
}

Tensor NetworkPair::forward_target(const Tensor& v, TargetMode mode, BnMode bn_mode) const {
  switch (mode) {
    case TargetMode::kXi: {
      NoGradGuard ng;
      return target.project(target.encode(v, bn_mode), bn_mode);
    }
    case TargetMode::kSgTheta: {
      NoGradGuard ng;
      return online.project(online.encode(v, bn_mode), bn_mode);
    }
    case TargetMode::kTheta:
    default:
      return online.project(online.encode(v, bn_mode), bn_mode);
  }
}

void NetworkPair::ema_update(real tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("ema_update: tau must lie in [0,1], got " + std::to_string(tau));
  auto theta = online_params();
  auto xi = target_params();
  // The target holds the encoder+projector subset of theta, in the same order.
  for (size_t i = 0; i < xi.size(); ++i) {
    auto& tv = theta[i].tensor.data();
    auto& xv = xi[i].tensor.data();
    if (tv.size() != xv.size())
      throw std::runtime_error("ema_update: parameter shape mismatch at " + xi[i].name);
    for (size_t j = 0; j < xv.size(); ++j) xv[j] = tau * xv[j] + (1.0 - tau) * tv[j];
  }
  auto ob = online.buffers("online");
  auto tb = target.buffers("target");
  for (size_t i = 0; i < tb.size(); ++i) {
    auto& ov = *ob[i].data;
    auto& tv = *tb[i].data;
    for (size_t j = 0; j < tv.size(); ++j) tv[j] = tau * tv[j] + (1.0 - tau) * ov[j];
  }
}

std::vector<ParamRef> NetworkPair::all_params() const {
  auto out = online.params("online");
  auto t = target.params("target");
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

std::vector<BufferRef> NetworkPair::all_buffers() const {
  auto out = online.buffers("online");
  auto t = target.buffers("target");
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

NetworkPair build_network_pair(const ArchitectureSpec& spec, int input_c, int input_h,
                               int input_w, uint64_t seed) {
  spec.validate();
  NetworkPair pair;
  RngStream rng = RngStream(seed).split(0xA11);
  pair.online = build_network(spec, input_c, input_h, input_w, rng, /*trainable=*/true,
                              /*with_predictor=*/true, /*track_stats=*/true);
  RngStream dummy(0);  // target weights are overwritten by the copy below
  pair.target = build_network(spec, input_c, input_h, input_w, dummy, /*trainable=*/false,
                              /*with_predictor=*/false, /*track_stats=*/false);
  auto theta = pair.online_params();
  auto xi = pair.target_params();
  for (size_t i = 0; i < xi.size(); ++i) xi[i].tensor.data() = theta[i].tensor.data();
  auto ob = pair.online.buffers("online");
  auto tb = pair.target.buffers("target");
  for (size_t i = 0; i < tb.size(); ++i) *tb[i].data = *ob[i].data;
  return pair;
}

}  // namespace ssrl
