#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ssrl/dataset.hpp"
#include "ssrl/eval.hpp"
#include "ssrl/grid.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/trainer.hpp"

using namespace ssrl;

namespace {

RunConfig tiny_cfg() {
  RunConfig rc = RunConfig::with_preset("ablation");
  rc.seed = 9;
  rc.arch.encoder = ArchitectureSpec::EncoderKind::kMlp;
  rc.arch.mlp_widths = {12};
  rc.arch.repr_dim = 8;
  rc.arch.proj_hidden = 8;
  rc.arch.proj_dim = 4;
  rc.data.kind = DataSpec::Kind::kSynth;
  rc.data.classes = 2;
  rc.data.per_class = 32;
  rc.data.image_size = 8;
  rc.data.batch_size = 8;
  rc.schedule.total_steps = 10;
  rc.schedule.warmup_steps = 2;
  rc.aug1 = default_view1_params(8, 8);
  rc.aug2 = default_view2_params(8, 8);
  rc.probe.epochs = 6;
  rc.probe.batch_size = 16;
  return rc;
}

Tensor one_hot_features(const std::vector<int>& labels, int classes) {
  std::vector<real> f(labels.size() * classes, 0.0);
  for (size_t i = 0; i < labels.size(); ++i) f[i * classes + labels[i]] = 1.0;
  return Tensor::from_data({static_cast<int>(labels.size()), classes}, std::move(f));
}

}  // namespace

TEST_CASE("extract_representations: deterministic, frozen stats, feature dim R") {
  RunConfig cfg = tiny_cfg();
  TrainState state(cfg);
  for (int k = 0; k < 5; ++k) state.accumulate_and_step(state.batches_for_step(k));

  auto stats_of = [&] {
    std::vector<real> all;
    for (auto& b : state.pair().all_buffers()) all.insert(all.end(), b.data->begin(), b.data->end());
    return all;
  };
  auto stats_before = stats_of();
  auto [f1, l1] = extract_representations(state.pair().online, state.data(),
                                          state.channel_stats(), 8, 8);
  auto [f2, l2] = extract_representations(state.pair().online, state.data(),
                                          state.channel_stats(), 8, 8);
  CHECK(f1.dim(1) == cfg.arch.repr_dim);
  CHECK(f1.dim(0) == state.data().count());
  for (size_t i = 0; i < f1.data().size(); ++i) CHECK(f1.data()[i] == f2.data()[i]);
  CHECK(stats_of() == stats_before);  // running stats untouched
}

TEST_CASE("linear probe: one-hot features reach accuracy 1.0") {
  RngStream rng(2);
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(static_cast<int>(rng.next_index(4)));
  ProbeConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  ProbeResult r = linear_probe(one_hot_features(labels, 4), labels, cfg, 3);
  CHECK(r.top1 == doctest::Approx(1.0));
  CHECK(r.per_class.size() == 4);
  CHECK_FALSE(r.train_curve.empty());
}

TEST_CASE("linear probe: shuffled labels land at chance (10 classes)") {
  // Chance-level Monte-Carlo oracle: features carry no label information.
  RngStream rng(7);
  int n = 2000;
  std::vector<real> feats(static_cast<size_t>(n) * 8);
  for (auto& x : feats) x = rng.uniform(-1, 1);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.next_index(10)));
  ProbeConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 128;
  ProbeResult r = linear_probe(Tensor::from_data({n, 8}, std::move(feats)), labels, cfg, 11);
  CHECK(r.top1 == doctest::Approx(0.10).epsilon(0.3));  // 0.10 +- 0.03
}

TEST_CASE("linear probe: constant features give majority-class accuracy") {
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);  // class 0 majority
  Tensor feats = Tensor::full({300, 4}, 0.5);
  ProbeConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 64;
  ProbeResult r = linear_probe(feats, labels, cfg, 5);
  CHECK(r.top1 == doctest::Approx(2.0 / 3.0).epsilon(0.12));
}

TEST_CASE("linear probe rejects single-class labels") {
  std::vector<int> labels(50, 0);
  ProbeConfig cfg;
  CHECK_THROWS(linear_probe(Tensor::full({50, 3}, 1.0), labels, cfg, 1));
}

TEST_CASE("collapse metrics: identical rows") {
  std::vector<real> rows;
  for (int i = 0; i < 6; ++i)
    for (real v : {0.3, -0.4, 0.1, 0.2}) rows.push_back(v);
  CollapseReport rep = collapse_metrics(Tensor::from_data({6, 4}, std::move(rows)));
  CHECK(rep.mean_per_dim_std == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.effective_rank == doctest::Approx(1.0).epsilon(1e-9));
  for (real s : rep.per_dim_std) CHECK(s == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("collapse metrics: orthonormal rows have effective rank P") {
  int P = 6;
  std::vector<real> rows(static_cast<size_t>(P) * P, 0.0);
  for (int i = 0; i < P; ++i) rows[static_cast<size_t>(i) * P + i] = 1.0;
  CollapseReport rep = collapse_metrics(Tensor::from_data({P, P}, std::move(rows)));
  CHECK(rep.effective_rank == doctest::Approx(static_cast<real>(P)).epsilon(1e-9));
  CHECK(rep.mean_l2_norm == doctest::Approx(1.0));
}

TEST_CASE("collapse metrics: isotropic gaussian rows score effective rank >= 14 of 16") {
  // Sampling oracle for the high-rank regime.
  RngStream rng(13);
  int n = 4096, P = 16;
  std::vector<real> rows(static_cast<size_t>(n) * P);
  for (auto& x : rows) x = rng.normal();
  CollapseReport rep = collapse_metrics(Tensor::from_data({n, P}, std::move(rows)));
  CHECK(rep.effective_rank >= 14.0);
  CHECK(rep.mean_per_dim_std > kCollapseStdThreshold);
}

TEST_CASE("collapse metrics: permutation invariance and feature equivariance") {
  RngStream rng(17);
  int n = 32, P = 5;
  std::vector<real> rows(static_cast<size_t>(n) * P);
  for (auto& x : rows) x = rng.uniform(-1, 1);
  Tensor base = Tensor::from_data({n, P}, rows);
  CollapseReport a = collapse_metrics(base);

  // permute samples
  std::vector<int64_t> perm = RngStream(3).permutation(n);
  std::vector<real> shuffled(rows.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < P; ++j) shuffled[static_cast<size_t>(i) * P + j] = rows[perm[i] * P + j];
  CollapseReport b = collapse_metrics(Tensor::from_data({n, P}, std::move(shuffled)));
  CHECK(a.mean_per_dim_std == doctest::Approx(b.mean_per_dim_std).epsilon(1e-12));
  CHECK(a.effective_rank == doctest::Approx(b.effective_rank).epsilon(1e-9));

  // permute features: per-dim stds permute along
  std::vector<real> swapped(rows.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < P; ++j)
      swapped[static_cast<size_t>(i) * P + j] = rows[static_cast<size_t>(i) * P + (P - 1 - j)];
  CollapseReport c = collapse_metrics(Tensor::from_data({n, P}, std::move(swapped)));
  for (int j = 0; j < P; ++j)
    CHECK(c.per_dim_std[j] == doctest::Approx(a.per_dim_std[P - 1 - j]).epsilon(1e-10));
  CHECK(c.effective_rank == doctest::Approx(a.effective_rank).epsilon(1e-9));

  CHECK_THROWS(collapse_metrics(Tensor::full({1, 4}, 1.0)));  // needs >= 2 samples
}

TEST_CASE("probe pipeline never mutates encoder parameters or statistics") {
  RunConfig cfg = tiny_cfg();
  TrainState state(cfg);
  for (int k = 0; k < 5; ++k) state.accumulate_and_step(state.batches_for_step(k));
  auto checksum = [&] {
    real s = 0;
    for (auto& p : state.pair().all_params())
      for (real x : p.tensor.data()) s += x;
    for (auto& b : state.pair().all_buffers())
      for (real x : *b.data) s += x;
    return s;
  };
  real before = checksum();
  evaluate_state(state);
  CHECK(checksum() == before);
}

TEST_CASE("eigenvalue helper agrees with hand values") {
  // [[2,1],[1,2]] has eigenvalues 1 and 3
  std::vector<real> m{2, 1, 1, 2};
  auto eig = symmetric_eigenvalues(m, 2);
  CHECK(eig[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(eig[1] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("report serialization") {
  ProbeResult r;
  r.top1 = 0.75;
  r.best_lr = 0.1;
  r.per_class = {0.5, 1.0};
  r.train_curve = {1.0, 0.5};
  std::string t = to_text(r);
  CHECK(t.find("top1 = 0.75") != std::string::npos);
  CollapseReport c;
  c.mean_per_dim_std = 0.02;
  c.mean_l2_norm = 3.5;
  c.effective_rank = 7.0;
  c.per_dim_std = {0.01, 0.03};
  std::string s = to_text(c);
  CHECK(s.find("effective_rank = 7") != std::string::npos);
}
