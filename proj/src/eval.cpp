#include "ssrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ssrl/augment.hpp"
#include "ssrl/optim.hpp"
#include "ssrl/rng.hpp"

namespace ssrl {

namespace {

std::pair<Tensor, std::vector<int>> extract_impl(const Network& net, const ImageBatch& data,
                                                 std::vector<Image> processed, int batch_size) {
  NoGradGuard ng;
  int64_t n = static_cast<int64_t>(processed.size());
  std::vector<real> features;
  int repr = -1;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t end = std::min(n, start + batch_size);
    int B = static_cast<int>(end - start);
    int c = processed[static_cast<size_t>(start)].c;
    int h = processed[static_cast<size_t>(start)].h;
    int w = processed[static_cast<size_t>(start)].w;
    std::vector<real> buf;
    buf.reserve(static_cast<size_t>(B) * c * h * w);
    for (int64_t i = start; i < end; ++i)
      buf.insert(buf.end(), processed[static_cast<size_t>(i)].data.begin(),
                 processed[static_cast<size_t>(i)].data.end());
    Tensor x = Tensor::from_data({B, c, h, w}, std::move(buf));
    Tensor y = net.encode(x, BnMode::kEval);
    if (repr < 0) {
      repr = y.dim(1);
      features.reserve(static_cast<size_t>(n) * repr);
    }
    features.insert(features.end(), y.data().begin(), y.data().end());
  }
  Tensor f = Tensor::from_data({static_cast<int>(n), repr}, std::move(features));
  return {f, data.labels};
}

}  // namespace

std::pair<Tensor, std::vector<int>> extract_representations(const Network& net,
                                                            const ImageBatch& data,
                                                            const ChannelStats& stats,
                                                            int target_h, int target_w,
                                                            int batch_size) {
  std::vector<Image> processed;
  processed.reserve(data.images.size());
  for (const Image& im : data.images)
    processed.push_back(eval_preprocess(im, target_h, target_w, stats));
  return extract_impl(net, data, std::move(processed), batch_size);
}

std::pair<Tensor, std::vector<int>> extract_representations_augmented(
    const Network& net, const ImageBatch& data, const ChannelStats& stats,
    const AugmentationParams& params, uint64_t seed, int batch_size) {
  std::vector<Image> processed;
  processed.reserve(data.images.size());
  RngStream root = RngStream(seed).split(0xEA7);
  for (size_t i = 0; i < data.images.size(); ++i)
    processed.push_back(apply_pipeline(data.images[i], params, stats, root.split(i)));
  return extract_impl(net, data, std::move(processed), batch_size);
}

namespace {

real accuracy(const Tensor& w, const Tensor& b, const Tensor& x, const std::vector<int>& labels,
              const std::vector<int64_t>& subset, std::vector<real>* per_class, int n_classes) {
  NoGradGuard ng;
  int F = x.dim(1), C = w.dim(1);
  std::vector<int> class_total(static_cast<size_t>(n_classes), 0);
  std::vector<int> class_hit(static_cast<size_t>(n_classes), 0);
  int64_t hits = 0;
  for (int64_t idx : subset) {
    const real* row = x.data().data() + idx * F;
    int best = 0;
    real bestv = -1e300;
    for (int c = 0; c < C; ++c) {
      real s = b.data()[static_cast<size_t>(c)];
      for (int f = 0; f < F; ++f) s += row[f] * w.data()[static_cast<size_t>(f) * C + c];
      if (s > bestv) {
        bestv = s;
        best = c;
      }
    }
    int y = labels[static_cast<size_t>(idx)];
    ++class_total[static_cast<size_t>(y)];
    if (best == y) {
      ++hits;
      ++class_hit[static_cast<size_t>(y)];
    }
  }
  if (per_class != nullptr) {
    per_class->assign(static_cast<size_t>(n_classes), 0.0);
    for (int c = 0; c < n_classes; ++c)
      if (class_total[static_cast<size_t>(c)] > 0)
        (*per_class)[static_cast<size_t>(c)] =
            static_cast<real>(class_hit[static_cast<size_t>(c)]) / class_total[static_cast<size_t>(c)];
  }
  return subset.empty() ? 0.0 : static_cast<real>(hits) / subset.size();
}

struct TrainedHead {
  Tensor w, b;
  std::vector<real> curve;
};

TrainedHead train_head(const Tensor& x, const std::vector<int>& labels,
                       const std::vector<int64_t>& train_idx, int n_classes, real lr,
                       const ProbeConfig& cfg, uint64_t seed) {
  int F = x.dim(1);
  TrainedHead head;
  head.w = Tensor::zeros({F, n_classes}, true);
  head.b = Tensor::zeros({n_classes}, true);
  std::vector<real> mw, mb;
  RngStream shuffle_rng = RngStream(seed).split(0x9A0B);
  int B = cfg.batch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // seeded reshuffle of the train split each epoch
    std::vector<int64_t> order(train_idx);
    RngStream er = shuffle_rng.split(static_cast<uint64_t>(epoch));
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(er.next_index(i + 1))]);
    real epoch_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(B)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(B));
      int nb = static_cast<int>(end - start);
      std::vector<real> buf(static_cast<size_t>(nb) * F);
      std::vector<int> yb(static_cast<size_t>(nb));
      for (size_t i = start; i < end; ++i) {
        std::copy_n(x.data().data() + order[i] * F, F, buf.begin() + (i - start) * F);
        yb[i - start] = labels[static_cast<size_t>(order[i])];
      }
      Tensor xb = Tensor::from_data({nb, F}, std::move(buf));
      Tensor logits = add_bias(matmul(xb, head.w), head.b);
      Tensor loss = softmax_cross_entropy(logits, yb);
      epoch_loss += loss.item();
      ++batches;
      head.w.zero_grad();
      head.b.zero_grad();
      backward(loss);
      sgd_nesterov_step(head.w, mw, lr, cfg.momentum);
      sgd_nesterov_step(head.b, mb, lr, cfg.momentum);
    }
    head.curve.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return head;
}

}  // namespace

ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& cfg, uint64_t seed) {
  if (features.ndim() != 2) throw std::invalid_argument("linear_probe: want (N,F) features");
  int64_t n = features.dim(0);
  if (n != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("linear_probe: label count mismatch");
  int n_classes = 0;
  for (int y : labels) n_classes = std::max(n_classes, y + 1);
  if (n_classes < 2) throw std::invalid_argument("linear_probe: need at least 2 classes");

  // Deterministic test/val/train split.
  std::vector<int64_t> perm = RngStream(seed).split(0x57111).permutation(n);
  int64_t n_test = std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.test_fraction * n)));
  int64_t n_val = std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.val_fraction * n)));
  if (n_test + n_val >= n) throw std::invalid_argument("linear_probe: dataset too small to split");
  std::vector<int64_t> test_idx(perm.begin(), perm.begin() + n_test);
  std::vector<int64_t> val_idx(perm.begin() + n_test, perm.begin() + n_test + n_val);
  std::vector<int64_t> train_idx(perm.begin() + n_test + n_val, perm.end());

  ProbeResult best;
  real best_val = -1.0;
  for (real lr : cfg.lr_sweep) {
    TrainedHead head = train_head(features, labels, train_idx, n_classes, lr, cfg, seed);
    real val_acc = accuracy(head.w, head.b, features, labels, val_idx, nullptr, n_classes);
    if (val_acc > best_val) {
      best_val = val_acc;
      best.best_lr = lr;
      best.train_curve = head.curve;
      best.top1 = accuracy(head.w, head.b, features, labels, test_idx, &best.per_class, n_classes);
    }
  }
  return best;
}

std::vector<real> symmetric_eigenvalues(std::vector<real> a, int n) {
  // Cyclic Jacobi; a is (n,n) symmetric, row-major.
  auto at = [&](int i, int j) -> real& { return a[static_cast<size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    real off = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(at(p, q)) < 1e-300) continue;
        real theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        real t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        real c = 1.0 / std::sqrt(t * t + 1.0);
        real s = t * c;
        for (int k = 0; k < n; ++k) {
          real akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          real apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<real> eig(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

CollapseReport collapse_metrics(const Tensor& projections) {
  if (projections.ndim() != 2 || projections.dim(0) < 2)
    throw std::invalid_argument("collapse_metrics: want (N>=2, P) projections");
  int64_t n = projections.dim(0);
  int P = projections.dim(1);
  CollapseReport rep;
  // l2-normalize rows (eps-guarded) and track raw norms.
  std::vector<real> normed(projections.data().size());
  real norm_sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real* row = projections.data().data() + i * P;
    real s = 0;
    for (int j = 0; j < P; ++j) s += row[j] * row[j];
    real nr = std::sqrt(s);
    norm_sum += nr;
    real denom = nr < kEpsNorm ? kEpsNorm : nr;
    for (int j = 0; j < P; ++j) normed[static_cast<size_t>(i * P + j)] = row[j] / denom;
  }
  rep.mean_l2_norm = norm_sum / n;
  rep.per_dim_std.assign(static_cast<size_t>(P), 0.0);
  for (int j = 0; j < P; ++j) {
    real mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += normed[static_cast<size_t>(i * P + j)];
    mean /= n;
    real var = 0;
    for (int64_t i = 0; i < n; ++i) {
      real d = normed[static_cast<size_t>(i * P + j)] - mean;
      var += d * d;
    }
    rep.per_dim_std[static_cast<size_t>(j)] = std::sqrt(var / n);
    rep.mean_per_dim_std += rep.per_dim_std[static_cast<size_t>(j)];
  }
  rep.mean_per_dim_std /= P;
  // Effective rank from the Gram matrix of normalized rows.
  std::vector<real> gram(static_cast<size_t>(P) * P, 0.0);
  kernels::matmul_tn_acc(normed.data(), normed.data(), gram.data(), P, static_cast<int>(n), P);
  std::vector<real> eig = symmetric_eigenvalues(std::move(gram), P);
  real total = 0;
  for (real e : eig) total += std::max<real>(e, 0.0);
  real entropy = 0;
  if (total > 0)
    for (real e : eig) {
      real p = std::max<real>(e, 0.0) / total;
      if (p > 0) entropy -= p * std::log(p);
    }
  rep.effective_rank = std::exp(entropy);
  return rep;
}

std::string to_text(const ProbeResult& r) {
  std::ostringstream os;
  os << "top1 = " << format_real(r.top1) << "\n";
  os << "best_lr = " << format_real(r.best_lr) << "\n";
  for (size_t c = 0; c < r.per_class.size(); ++c)
    os << "class" << c << "_acc = " << format_real(r.per_class[c]) << "\n";
  os << "train_curve =";
  for (real v : r.train_curve) os << " " << format_real(v);
  os << "\n";
  return os.str();
}

std::string to_text(const CollapseReport& r) {
  std::ostringstream os;
  os << "mean_per_dim_std = " << format_real(r.mean_per_dim_std) << "\n";
  os << "mean_l2_norm = " << format_real(r.mean_l2_norm) << "\n";
  os << "effective_rank = " << format_real(r.effective_rank) << "\n";
  os << "per_dim_std =";
  for (real v : r.per_dim_std) os << " " << format_real(v);
  os << "\n";
  return os.str();
}

}  // namespace ssrl
