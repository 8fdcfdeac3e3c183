#include "ssrl/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssrl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace

std::string format_real(real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected `key = value`, got: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    c.kv_[key] = value;
  }
  return c;
}

Config Config::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

std::string Config::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
  return os.str();
}

std::string Config::get_string(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

real Config::get_real(const std::string& key, real dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not a number: " + it->second);
  }
}

int Config::get_int(const std::string& key, int dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not an integer: " + it->second);
  }
}

uint64_t Config::get_u64(const std::string& key, uint64_t dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + key + " is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: key " + key + " is not a boolean: " + it->second);
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::vector<int> out;
  for (const std::string& tok : split_commas(it->second)) out.push_back(std::stoi(tok));
  return out;
}

std::vector<real> Config::get_real_list(const std::string& key, std::vector<real> dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::vector<real> out;
  for (const std::string& tok : split_commas(it->second)) out.push_back(std::stod(tok));
  return out;
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_reals(const std::vector<real>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

void put_augment(Config& c, const std::string& prefix, const AugmentationParams& p) {
  c.set(prefix + ".crop_prob", format_real(p.crop_prob));
  c.set(prefix + ".flip_prob", format_real(p.flip_prob));
  c.set(prefix + ".jitter_prob", format_real(p.jitter_prob));
  c.set(prefix + ".brightness_max", format_real(p.brightness_max));
  c.set(prefix + ".contrast_max", format_real(p.contrast_max));
  c.set(prefix + ".saturation_max", format_real(p.saturation_max));
  c.set(prefix + ".hue_max", format_real(p.hue_max));
  c.set(prefix + ".grayscale_prob", format_real(p.grayscale_prob));
  c.set(prefix + ".blur_prob", format_real(p.blur_prob));
  c.set(prefix + ".solarize_prob", format_real(p.solarize_prob));
  c.set(prefix + ".area_lo", format_real(p.area_lo));
  c.set(prefix + ".area_hi", format_real(p.area_hi));
  c.set(prefix + ".aspect_lo", format_real(p.aspect_lo));
  c.set(prefix + ".aspect_hi", format_real(p.aspect_hi));
  c.set(prefix + ".blur_kernel_fraction", format_real(p.blur_kernel_fraction));
  c.set(prefix + ".blur_sigma_lo", format_real(p.blur_sigma_lo));
  c.set(prefix + ".blur_sigma_hi", format_real(p.blur_sigma_hi));
}

AugmentationParams read_augment(const Config& c, const std::string& prefix,
                                const AugmentationParams& base) {
  AugmentationParams p = base;
  p.crop_prob = c.get_real(prefix + ".crop_prob", p.crop_prob);
  p.flip_prob = c.get_real(prefix + ".flip_prob", p.flip_prob);
  p.jitter_prob = c.get_real(prefix + ".jitter_prob", p.jitter_prob);
  p.brightness_max = c.get_real(prefix + ".brightness_max", p.brightness_max);
  p.contrast_max = c.get_real(prefix + ".contrast_max", p.contrast_max);
  p.saturation_max = c.get_real(prefix + ".saturation_max", p.saturation_max);
  p.hue_max = c.get_real(prefix + ".hue_max", p.hue_max);
  p.grayscale_prob = c.get_real(prefix + ".grayscale_prob", p.grayscale_prob);
  p.blur_prob = c.get_real(prefix + ".blur_prob", p.blur_prob);
  p.solarize_prob = c.get_real(prefix + ".solarize_prob", p.solarize_prob);
  p.area_lo = c.get_real(prefix + ".area_lo", p.area_lo);
  p.area_hi = c.get_real(prefix + ".area_hi", p.area_hi);
  p.aspect_lo = c.get_real(prefix + ".aspect_lo", p.aspect_lo);
  p.aspect_hi = c.get_real(prefix + ".aspect_hi", p.aspect_hi);
  p.blur_kernel_fraction = c.get_real(prefix + ".blur_kernel_fraction", p.blur_kernel_fraction);
  p.blur_sigma_lo = c.get_real(prefix + ".blur_sigma_lo", p.blur_sigma_lo);
  p.blur_sigma_hi = c.get_real(prefix + ".blur_sigma_hi", p.blur_sigma_hi);
  return p;
}

const char* kAugmentFields[] = {
    "crop_prob", "flip_prob", "jitter_prob", "brightness_max", "contrast_max",
    "saturation_max", "hue_max", "grayscale_prob", "blur_prob", "solarize_prob",
    "area_lo", "area_hi", "aspect_lo", "aspect_hi", "blur_kernel_fraction",
    "blur_sigma_lo", "blur_sigma_hi"};

}  // namespace

RunConfig RunConfig::with_preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  if (name == "full") {
    // Long-run recipe: lr 0.2, weight decay 1.5e-6, tau_base 0.996.
    rc.schedule.base_lr = 0.2;
    rc.schedule.tau_base = 0.996;
    rc.optim.weight_decay = 1.5e-6;
    rc.schedule.total_steps = 10000;
    rc.schedule.warmup_steps = 100;  // 1% of steps, mirroring 10/1000 epochs
  } else if (name == "ablation") {
    // Ablation recipe: lr 0.3, weight decay 1e-6, tau_base 0.99.
    rc.schedule.base_lr = 0.3;
    rc.schedule.tau_base = 0.99;
    rc.optim.weight_decay = 1e-6;
    rc.schedule.total_steps = 2000;
    rc.schedule.warmup_steps = 20;
  } else if (name == "small-batch") {
    // Reduced-batch recipe: lr 0.4 (scaled by batch), tau_base 0.9995.
    rc.schedule.base_lr = 0.4;
    rc.schedule.tau_base = 0.9995;
    rc.optim.weight_decay = 1.5e-6;
    rc.schedule.total_steps = 2000;
    rc.schedule.warmup_steps = 20;
  } else {
    throw std::invalid_argument("unknown preset `" + name +
                                "` (valid: full, ablation, small-batch)");
  }
  rc.aug1 = default_view1_params(rc.data.image_size, rc.data.image_size);
  rc.aug2 = default_view2_params(rc.data.image_size, rc.data.image_size);
  return rc;
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys = {
      "preset", "seed", "threads", "out_dir",
      "arch.encoder", "arch.conv_channels", "arch.mlp_widths", "arch.repr_dim",
      "arch.proj_hidden", "arch.proj_dim", "arch.use_bn",
      "loss.family", "loss.alpha", "loss.beta", "loss.use_predictor",
      "loss.closed_form_predictor", "loss.target_mode", "loss.normalization", "loss.scale",
      "optim.momentum", "optim.weight_decay", "optim.eta_trust",
      "optim.lambda_pred", "optim.mu_proj",
      "schedule.base_lr", "schedule.total_steps", "schedule.warmup_steps",
      "schedule.tau_base", "schedule.tau_constant", "schedule.batch_size_ref",
      "data.kind", "data.path", "data.limit", "data.classes", "data.per_class",
      "data.image_size", "data.batch_size", "data.channel_mean", "data.channel_std",
      "probe.epochs", "probe.batch_size", "probe.momentum", "probe.lr_sweep",
      "probe.val_fraction", "probe.test_fraction", "probe.augment_copies",
      "train.accum_steps", "train.checkpoint_every", "train.norm_hist_every"};
  for (const char* f : kAugmentFields) {
    keys.push_back(std::string("augment.") + f);
    keys.push_back(std::string("augment2.") + f);
  }
  return keys;
}

RunConfig RunConfig::from_config(const Config& c) {
  auto known = known_keys();
  for (const auto& [k, v] : c.entries()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      std::string msg = "unknown config key `" + k + "`. Valid keys:";
      for (const auto& kk : known) msg += "\n  " + kk;
      throw std::invalid_argument(msg);
    }
  }
  RunConfig rc = with_preset(c.get_string("preset", "ablation"));
  rc.seed = c.get_u64("seed", rc.seed);
  rc.threads = c.get_int("threads", rc.threads);
  rc.out_dir = c.get_string("out_dir", rc.out_dir);

  std::string enc = c.get_string("arch.encoder", "small_conv");
  if (enc == "small_conv")
    rc.arch.encoder = ArchitectureSpec::EncoderKind::kSmallConv;
  else if (enc == "mlp")
    rc.arch.encoder = ArchitectureSpec::EncoderKind::kMlp;
  else
    throw std::invalid_argument("arch.encoder must be small_conv or mlp, got " + enc);
  rc.arch.conv_channels = c.get_int_list("arch.conv_channels", rc.arch.conv_channels);
  rc.arch.mlp_widths = c.get_int_list("arch.mlp_widths", rc.arch.mlp_widths);
  rc.arch.repr_dim = c.get_int("arch.repr_dim", rc.arch.repr_dim);
  rc.arch.proj_hidden = c.get_int("arch.proj_hidden", rc.arch.proj_hidden);
  rc.arch.proj_dim = c.get_int("arch.proj_dim", rc.arch.proj_dim);
  rc.arch.use_bn = c.get_bool("arch.use_bn", rc.arch.use_bn);

  std::string fam = c.get_string("loss.family", "byol");
  if (fam == "byol")
    rc.loss.family = LossFamily::kByol;
  else if (fam == "infonce")
    rc.loss.family = LossFamily::kInfoNce;
  else
    throw std::invalid_argument("loss.family must be byol or infonce, got " + fam);
  rc.loss.alpha = c.get_real("loss.alpha", rc.loss.alpha);
  rc.loss.beta = c.get_real("loss.beta", rc.loss.beta);
  rc.loss.use_predictor = c.get_bool("loss.use_predictor", rc.loss.use_predictor);
  rc.loss.closed_form_predictor =
      c.get_bool("loss.closed_form_predictor", rc.loss.closed_form_predictor);
  std::string tm = c.get_string("loss.target_mode", "xi");
  if (tm == "xi")
    rc.loss.target_mode = TargetMode::kXi;
  else if (tm == "theta")
    rc.loss.target_mode = TargetMode::kTheta;
  else if (tm == "sg_theta")
    rc.loss.target_mode = TargetMode::kSgTheta;
  else
    throw std::invalid_argument("loss.target_mode must be xi, theta or sg_theta, got " + tm);
  std::string nm = c.get_string("loss.normalization", "l2");
  if (nm == "l2")
    rc.loss.normalization = LossNormalization::kL2;
  else if (nm == "layernorm")
    rc.loss.normalization = LossNormalization::kLayerNorm;
  else if (nm == "batchnorm")
    rc.loss.normalization = LossNormalization::kBatchNorm;
  else if (nm == "none")
    rc.loss.normalization = LossNormalization::kNone;
  else
    throw std::invalid_argument("loss.normalization must be l2|layernorm|batchnorm|none, got " + nm);
  rc.loss.loss_scale = c.get_real("loss.scale", rc.loss.loss_scale);

  rc.optim.momentum = c.get_real("optim.momentum", rc.optim.momentum);
  rc.optim.weight_decay = c.get_real("optim.weight_decay", rc.optim.weight_decay);
  rc.optim.eta_trust = c.get_real("optim.eta_trust", rc.optim.eta_trust);
  rc.lambda_pred = c.get_real("optim.lambda_pred", rc.lambda_pred);
  rc.mu_proj = c.get_real("optim.mu_proj", rc.mu_proj);

  rc.schedule.base_lr = c.get_real("schedule.base_lr", rc.schedule.base_lr);
  rc.schedule.total_steps = c.get_int("schedule.total_steps", rc.schedule.total_steps);
  rc.schedule.warmup_steps = c.get_int("schedule.warmup_steps", rc.schedule.warmup_steps);
  rc.schedule.tau_base = c.get_real("schedule.tau_base", rc.schedule.tau_base);
  rc.schedule.tau_constant = c.get_bool("schedule.tau_constant", rc.schedule.tau_constant);
  rc.schedule.batch_size_ref = c.get_int("schedule.batch_size_ref", rc.schedule.batch_size_ref);

  std::string dk = c.get_string("data.kind", "synth");
  if (dk == "synth")
    rc.data.kind = DataSpec::Kind::kSynth;
  else if (dk == "cifar10")
    rc.data.kind = DataSpec::Kind::kCifar10;
  else
    throw std::invalid_argument("data.kind must be synth or cifar10, got " + dk);
  rc.data.path = c.get_string("data.path", rc.data.path);
  rc.data.limit = c.get_int("data.limit", rc.data.limit);
  rc.data.classes = c.get_int("data.classes", rc.data.classes);
  rc.data.per_class = c.get_int("data.per_class", rc.data.per_class);
  rc.data.image_size = c.get_int("data.image_size", rc.data.image_size);
  rc.data.batch_size = c.get_int("data.batch_size", rc.data.batch_size);
  rc.data.channel_mean = c.get_real_list("data.channel_mean", rc.data.channel_mean);
  rc.data.channel_std = c.get_real_list("data.channel_std", rc.data.channel_std);

  int ts = rc.data.kind == DataSpec::Kind::kCifar10 ? 32 : rc.data.image_size;
  rc.aug1 = read_augment(c, "augment", default_view1_params(ts, ts));
  rc.aug2 = read_augment(c, "augment2", default_view2_params(ts, ts));

  rc.probe.epochs = c.get_int("probe.epochs", rc.probe.epochs);
  rc.probe.batch_size = c.get_int("probe.batch_size", rc.probe.batch_size);
  rc.probe.momentum = c.get_real("probe.momentum", rc.probe.momentum);
  rc.probe.lr_sweep = c.get_real_list("probe.lr_sweep", rc.probe.lr_sweep);
  rc.probe.val_fraction = c.get_real("probe.val_fraction", rc.probe.val_fraction);
  rc.probe.test_fraction = c.get_real("probe.test_fraction", rc.probe.test_fraction);
  rc.probe.augment_copies = c.get_int("probe.augment_copies", rc.probe.augment_copies);

  rc.accum_steps = c.get_int("train.accum_steps", rc.accum_steps);
  rc.checkpoint_every = c.get_int("train.checkpoint_every", rc.checkpoint_every);
  rc.norm_hist_every = c.get_int("train.norm_hist_every", rc.norm_hist_every);
  rc.validate();
  return rc;
}

Config RunConfig::to_config() const {
  Config c;
  c.set("preset", preset);
  c.set("seed", std::to_string(seed));
  c.set("threads", std::to_string(threads));
  c.set("out_dir", out_dir);
  c.set("arch.encoder",
        arch.encoder == ArchitectureSpec::EncoderKind::kSmallConv ? "small_conv" : "mlp");
  c.set("arch.conv_channels", join_ints(arch.conv_channels));
  c.set("arch.mlp_widths", join_ints(arch.mlp_widths));
  c.set("arch.repr_dim", std::to_string(arch.repr_dim));
  c.set("arch.proj_hidden", std::to_string(arch.proj_hidden));
  c.set("arch.proj_dim", std::to_string(arch.proj_dim));
  c.set("arch.use_bn", arch.use_bn ? "true" : "false");
  c.set("loss.family", to_string(loss.family));
  c.set("loss.alpha", format_real(loss.alpha));
  c.set("loss.beta", format_real(loss.beta));
  c.set("loss.use_predictor", loss.use_predictor ? "true" : "false");
  c.set("loss.closed_form_predictor", loss.closed_form_predictor ? "true" : "false");
  c.set("loss.target_mode", to_string(loss.target_mode));
  c.set("loss.normalization", to_string(loss.normalization));
  c.set("loss.scale", format_real(loss.loss_scale));
  c.set("optim.momentum", format_real(optim.momentum));
  c.set("optim.weight_decay", format_real(optim.weight_decay));
  c.set("optim.eta_trust", format_real(optim.eta_trust));
  c.set("optim.lambda_pred", format_real(lambda_pred));
  c.set("optim.mu_proj", format_real(mu_proj));
  c.set("schedule.base_lr", format_real(schedule.base_lr));
  c.set("schedule.total_steps", std::to_string(schedule.total_steps));
  c.set("schedule.warmup_steps", std::to_string(schedule.warmup_steps));
  c.set("schedule.tau_base", format_real(schedule.tau_base));
  c.set("schedule.tau_constant", schedule.tau_constant ? "true" : "false");
  c.set("schedule.batch_size_ref", std::to_string(schedule.batch_size_ref));
  c.set("data.kind", data.kind == DataSpec::Kind::kSynth ? "synth" : "cifar10");
  c.set("data.path", data.path);
  c.set("data.limit", std::to_string(data.limit));
  c.set("data.classes", std::to_string(data.classes));
  c.set("data.per_class", std::to_string(data.per_class));
  c.set("data.image_size", std::to_string(data.image_size));
  c.set("data.batch_size", std::to_string(data.batch_size));
  if (!data.channel_mean.empty()) c.set("data.channel_mean", join_reals(data.channel_mean));
  if (!data.channel_std.empty()) c.set("data.channel_std", join_reals(data.channel_std));
  put_augment(c, "augment", aug1);
  put_augment(c, "augment2", aug2);
  c.set("probe.epochs", std::to_string(probe.epochs));
  c.set("probe.batch_size", std::to_string(probe.batch_size));
  c.set("probe.momentum", format_real(probe.momentum));
  c.set("probe.lr_sweep", join_reals(probe.lr_sweep));
  c.set("probe.val_fraction", format_real(probe.val_fraction));
  c.set("probe.test_fraction", format_real(probe.test_fraction));
  c.set("probe.augment_copies", std::to_string(probe.augment_copies));
  c.set("train.accum_steps", std::to_string(accum_steps));
  c.set("train.checkpoint_every", std::to_string(checkpoint_every));
  c.set("train.norm_hist_every", std::to_string(norm_hist_every));
  return c;
}

void RunConfig::validate() const {
  arch.validate();
  loss.validate();
  schedule.validate();
  aug1.validate();
  aug2.validate();
  if (accum_steps < 1) throw std::invalid_argument("train.accum_steps must be >= 1");
  if (data.batch_size < 2)
    throw std::invalid_argument("data.batch_size must be >= 2 (batch norm)");
  if (lambda_pred < 0 || mu_proj < 0)
    throw std::invalid_argument("optim multipliers must be nonnegative");
  if (probe.val_fraction <= 0 || probe.test_fraction <= 0 ||
      probe.val_fraction + probe.test_fraction >= 1.0)
    throw std::invalid_argument("probe split fractions must be positive and sum below 1");
}

}  // namespace ssrl
