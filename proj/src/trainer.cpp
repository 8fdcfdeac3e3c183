#include "ssrl/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssrl/augment.hpp"
#include "ssrl/parallel.hpp"

namespace ssrl {

std::string metrics_csv_row(const StepMetrics& m) {
  std::ostringstream os;
  os << m.step << "," << format_real(m.loss) << "," << format_real(m.cos_sim) << ","
     << format_real(m.z_norm_mean) << "," << format_real(m.zp_norm_mean) << ","
     << format_real(m.tau) << "," << format_real(m.lr);
  return os.str();
}

TrainState::TrainState(const RunConfig& cfg) : TrainState(cfg, load_dataset(cfg.data)) {}

TrainState::TrainState(const RunConfig& cfg, ImageBatch data)
    : cfg_(cfg), data_(std::move(data)) {
  cfg_.validate();
  // The lr scaling rule sees the effective batch: accumulation emulates a
  // batch of size B*N without re-tuning the schedule.
  cfg_.schedule.batch_size = cfg_.data.batch_size * cfg_.accum_steps;
  if (data_.images.empty()) throw std::runtime_error("TrainState: empty dataset");
  stats_ = resolve_channel_stats(cfg_.data, data_);
  int h = cfg_.aug1.target_h, w = cfg_.aug1.target_w;
  pair_ = build_network_pair(cfg_.arch, data_.c, h, w, cfg_.seed);
  groups_ = make_param_groups(pair_.online_params());
  group_multipliers(groups_, cfg_.lambda_pred, cfg_.mu_proj);
}

const std::vector<int64_t>& TrainState::epoch_perm(int64_t epoch) {
  if (epoch != cached_epoch_) {
    cached_perm_ = RngStream(cfg_.seed).split(0x0DDE).split(static_cast<uint64_t>(epoch))
                       .permutation(data_.count());
    cached_epoch_ = epoch;
  }
  return cached_perm_;
}

std::vector<std::vector<int64_t>> TrainState::batches_for_step(int k) {
  int B = cfg_.data.batch_size;
  int N = cfg_.accum_steps;
  int64_t n = data_.count();
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(N));
  int64_t pos = static_cast<int64_t>(k) * N * B;
  for (int j = 0; j < N; ++j) {
    auto& batch = out[static_cast<size_t>(j)];
    batch.reserve(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
      int64_t p = pos + static_cast<int64_t>(j) * B + i;
      batch.push_back(epoch_perm(p / n)[static_cast<size_t>(p % n)]);
    }
  }
  return out;
}

std::pair<Tensor, Tensor> TrainState::make_views(const std::vector<int64_t>& indices) {
  int B = static_cast<int>(indices.size());
  int h = cfg_.aug1.target_h, w = cfg_.aug1.target_w;
  std::vector<real> v1(static_cast<size_t>(B) * data_.c * h * w);
  std::vector<real> v2(v1.size());
  // Augmentation randomness is keyed on (seed, step, dataset index, view):
  // batch composition and thread count never change an image's transformation.
  RngStream step_rng = RngStream(cfg_.seed).split(0xA06).split(static_cast<uint64_t>(step_));
  int64_t per_img = static_cast<int64_t>(data_.c) * h * w;
  parallel_for(B, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      int64_t idx = indices[static_cast<size_t>(b)];
      RngStream img_rng = step_rng.split(static_cast<uint64_t>(idx));
      Image a = apply_pipeline(data_.images[static_cast<size_t>(idx)], cfg_.aug1, stats_,
                               img_rng.split(1));
      Image c = apply_pipeline(data_.images[static_cast<size_t>(idx)], cfg_.aug2, stats_,
                               img_rng.split(2));
      std::copy(a.data.begin(), a.data.end(), v1.begin() + b * per_img);
      std::copy(c.data.begin(), c.data.end(), v2.begin() + b * per_img);
    }
  });
  return {Tensor::from_data({B, data_.c, h, w}, std::move(v1)),
          Tensor::from_data({B, data_.c, h, w}, std::move(v2))};
}

std::string TrainState::param_norm_summary() const {
  real max_abs = 0;
  std::string worst;
  for (const ParamRef& p : pair_.online_params())
    for (real x : p.tensor.data())
      if (!(std::fabs(x) <= max_abs)) {  // also catches NaN
        max_abs = std::fabs(x);
        worst = p.name;
      }
  return "max |param| = " + format_real(max_abs) + " at " + worst;
}

void TrainState::assert_target_grad_free() const {
  for (const ParamRef& p : pair_.target_params())
    if (p.tensor.has_grad() || p.tensor.requires_grad())
      throw std::runtime_error("invariant violation: target parameter " + p.name +
                               " carries gradient state");
}

namespace {

// Mean cosine of matched rows plus mean row norms, from raw values.
void pair_stats(const Tensor& p, const Tensor& t, real& cos_mean, real& p_norm, real& t_norm) {
  int B = p.dim(0), F = p.dim(1);
  cos_mean = p_norm = t_norm = 0;
  for (int i = 0; i < B; ++i) {
    real dot = 0, np = 0, nt = 0;
    for (int j = 0; j < F; ++j) {
      real a = p.data()[static_cast<size_t>(i) * F + j];
      real b = t.data()[static_cast<size_t>(i) * F + j];
      dot += a * b;
      np += a * a;
      nt += b * b;
    }
    np = std::sqrt(np);
    nt = std::sqrt(nt);
    cos_mean += dot / std::max(np * nt, kEpsNorm);
    p_norm += np;
    t_norm += nt;
  }
  cos_mean /= B;
  p_norm /= B;
  t_norm /= B;
}

}  // namespace

StepMetrics TrainState::train_step(const std::vector<int64_t>& indices) {
  return accumulate_and_step({indices});
}

StepMetrics TrainState::accumulate_and_step(const std::vector<std::vector<int64_t>>& sub_batches) {
  if (sub_batches.empty()) throw std::invalid_argument("accumulate_and_step: need N >= 1");
  size_t expect = sub_batches.front().size();
  if (expect < 2) throw std::invalid_argument("train step: batch size must be >= 2 (batch norm)");
  for (const auto& sb : sub_batches)
    if (sb.size() != expect)
      throw std::invalid_argument("accumulate_and_step: inconsistent sub-batch sizes");

  for (ParamGroup& g : groups_) g.param.zero_grad();

  int N = static_cast<int>(sub_batches.size());
  real loss_sum = 0;
  StepMetrics m;
  m.step = step_;
  for (int j = 0; j < N; ++j) {
    auto [v1, v2] = make_views(sub_batches[static_cast<size_t>(j)]);
    Tensor loss;
    try {
      loss = training_loss(v1, v2, pair_, cfg_.loss, BnMode::kTrain);
    } catch (const std::exception& e) {
      throw std::runtime_error("train step " + std::to_string(step_) +
                               ": non-finite loss (forward failed: " + e.what() + "); " +
                               param_norm_summary());
    }
    if (!std::isfinite(loss.item())) {
      // Diagnostic dump: projection norms of the offending sub-batch.
      NoGradGuard ng;
      Tensor z = pair_.online.project(pair_.online.encode(v1, BnMode::kTrain), BnMode::kTrain);
      Tensor zp = pair_.forward_target(v2, cfg_.loss.target_mode, BnMode::kTrain);
      real cm, zn, zpn;
      pair_stats(z, zp, cm, zn, zpn);
      throw std::runtime_error("train step " + std::to_string(step_) +
                               ": non-finite loss; |z|=" + format_real(zn) +
                               " |z'|=" + format_real(zpn) + " cos=" + format_real(cm));
    }
    loss_sum += loss.item();
    if (j == 0) {
      // Metrics from the first sub-batch, recomputed without the tape.
      NoGradGuard ng;
      Tensor z = pair_.online.project(pair_.online.encode(v1, BnMode::kTrain), BnMode::kTrain);
      Tensor p = cfg_.loss.use_predictor ? pair_.online.predict(z, BnMode::kTrain) : z;
      Tensor zp = pair_.forward_target(v2, cfg_.loss.target_mode, BnMode::kTrain);
      real zn, dummy;
      pair_stats(p, zp, m.cos_sim, dummy, m.zp_norm_mean);
      real cm2, zpn2;
      pair_stats(z, zp, cm2, zn, zpn2);
      m.z_norm_mean = zn;
    }
    backward(loss);  // gradients accumulate across sub-batches
  }
  if (N > 1) {
    real inv = 1.0 / static_cast<real>(N);
    for (ParamGroup& g : groups_)
      if (g.param.has_grad())
        for (real& x : g.param.grad_mut()) x *= inv;
  }
  m.loss = loss_sum / N;
  m.lr = lr_at(step_, cfg_.schedule);
  m.tau = tau_at(step_, cfg_.schedule);
  lars_step(groups_, m.lr, cfg_.optim);
  pair_.ema_update(m.tau);
  assert_target_grad_free();
  ++step_;
  return m;
}

Checkpoint TrainState::snapshot() const {
  return make_checkpoint(pair_, groups_, static_cast<uint64_t>(step_),
                         cfg_.to_config().serialize());
}

void TrainState::restore(const Checkpoint& ck) {
  restore_checkpoint(ck, pair_, groups_);
  step_ = static_cast<int>(ck.step);
}

RunResult run_training(const RunConfig& cfg, const std::string& resume_from, int stop_after) {
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  TrainState state(cfg);
  std::vector<StepMetrics> metrics;
  if (!resume_from.empty()) {
    state.restore(Checkpoint::load(resume_from));
    // Rebuild the metrics rows already covered by the resumed checkpoint so the
    // CSV keeps exactly one row per step.
    std::ifstream prev(cfg.out_dir + "/metrics.csv");
    if (prev) {
      std::string line;
      std::getline(prev, line);  // header
      while (std::getline(prev, line) && !line.empty()) {
        StepMetrics m;
        std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &m.step, &m.loss, &m.cos_sim,
                    &m.z_norm_mean, &m.zp_norm_mean, &m.tau, &m.lr);
        if (m.step < state.step()) metrics.push_back(m);
      }
    }
  }

  std::ofstream hist(cfg.out_dir + "/norm_hist.csv",
                     resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (resume_from.empty()) hist << "step,min,max,bins16\n";

  int K = cfg.schedule.total_steps;
  int stop = stop_after > 0 ? std::min(K, stop_after) : K;
  for (int k = state.step(); k < stop; ++k) {
    StepMetrics m = state.accumulate_and_step(state.batches_for_step(k));
    metrics.push_back(m);
    if (cfg.norm_hist_every > 0 && k % cfg.norm_hist_every == 0) {
      NoGradGuard ng;
      auto idxs = state.batches_for_step(k).front();
      auto [v1, v2] = state.make_views(idxs);
      Tensor z = state.pair().online.project(state.pair().online.encode(v1, BnMode::kTrain),
                                             BnMode::kTrain);
      int B = z.dim(0), F = z.dim(1);
      std::vector<real> norms(static_cast<size_t>(B));
      real lo = 1e300, hi = -1e300;
      for (int i = 0; i < B; ++i) {
        real s = 0;
        for (int j = 0; j < F; ++j) {
          real x = z.data()[static_cast<size_t>(i) * F + j];
          s += x * x;
        }
        norms[static_cast<size_t>(i)] = std::sqrt(s);
        lo = std::min(lo, norms[static_cast<size_t>(i)]);
        hi = std::max(hi, norms[static_cast<size_t>(i)]);
      }
      int bins[16] = {0};
      real span = std::max(hi - lo, 1e-12);
      for (real n : norms)
        ++bins[std::min(15, static_cast<int>((n - lo) / span * 16.0))];
      hist << k << "," << format_real(lo) << "," << format_real(hi);
      for (int b : bins) hist << "," << b;
      hist << "\n";
    }
    if (cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 && k + 1 < K)
      state.snapshot().save(cfg.out_dir + "/ckpt_" + std::to_string(k + 1) + ".bin");
  }

  std::ofstream mcsv(cfg.out_dir + "/metrics.csv", std::ios::trunc);
  mcsv << kMetricsHeader << "\n";
  for (const StepMetrics& m : metrics) mcsv << metrics_csv_row(m) << "\n";

  RunResult res;
  res.final_checkpoint = cfg.out_dir + "/ckpt_final.bin";
  state.snapshot().save(res.final_checkpoint);
  res.metrics = std::move(metrics);
  return res;
}

}  // namespace ssrl
