#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ssrl/checkpoint.hpp"
#include "ssrl/config.hpp"
#include "ssrl/dataset.hpp"
#include "ssrl/eval.hpp"
#include "ssrl/grid.hpp"
#include "ssrl/trainer.hpp"

using namespace ssrl;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir() {
  static int counter = 0;
  std::string d = (fs::temp_directory_path() / ("ssrl_test_" + std::to_string(::getpid()) + "_" +
                                                std::to_string(counter++)))
                      .string();
  fs::create_directories(d);
  return d;
}

// Tiny fast config for end-to-end paths.
Config tiny_config(const std::string& out) {
  Config c;
  c.set("preset", "ablation");
  c.set("seed", "3");
  c.set("out_dir", out);
  c.set("arch.encoder", "mlp");
  c.set("arch.mlp_widths", "12");
  c.set("arch.repr_dim", "8");
  c.set("arch.proj_hidden", "8");
  c.set("arch.proj_dim", "4");
  c.set("data.kind", "synth");
  c.set("data.classes", "2");
  c.set("data.per_class", "24");
  c.set("data.image_size", "8");
  c.set("data.batch_size", "8");
  c.set("schedule.total_steps", "12");
  c.set("schedule.warmup_steps", "2");
  c.set("probe.epochs", "4");
  c.set("probe.batch_size", "16");
  return c;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  std::string cmd = std::string(SSRL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) out += buf;
  int rc = pclose(pipe);
  if (output != nullptr) *output = out;
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("config parse/serialize round trip is idempotent") {
  std::string text = "# comment\nseed = 42\nloss.beta =0.5\n\ndata.kind= synth # inline\n";
  Config c = Config::parse(text);
  CHECK(c.get_int("seed", 0) == 42);
  CHECK(c.get_real("loss.beta", 0) == doctest::Approx(0.5));
  std::string once = c.serialize();
  std::string twice = Config::parse(once).serialize();
  CHECK(once == twice);

  CHECK_THROWS(Config::parse("not a key value line\n"));
}

TEST_CASE("run config round trips through text with full precision") {
  RunConfig rc = RunConfig::with_preset("ablation");
  rc.seed = 123;
  rc.loss.alpha = 0.30000000000000004;  // full-precision real
  rc.aug1.blur_sigma_hi = 1.7;
  Config c = rc.to_config();
  RunConfig back = RunConfig::from_config(Config::parse(c.serialize()));
  CHECK(back.seed == rc.seed);
  CHECK(back.loss.alpha == rc.loss.alpha);
  CHECK(back.aug1.blur_sigma_hi == rc.aug1.blur_sigma_hi);
  CHECK(back.to_config().serialize() == c.serialize());
}

TEST_CASE("unknown config key lists valid keys") {
  Config c;
  c.set("loss.betaa", "1");  // typo
  try {
    RunConfig::from_config(c);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("loss.betaa") != std::string::npos);
    CHECK(msg.find("loss.beta") != std::string::npos);  // valid keys are listed
  }
}

TEST_CASE("preset values") {
  RunConfig full = RunConfig::with_preset("full");
  CHECK(full.schedule.base_lr == doctest::Approx(0.2));
  CHECK(full.schedule.tau_base == doctest::Approx(0.996));
  CHECK(full.optim.weight_decay == doctest::Approx(1.5e-6));
  RunConfig abl = RunConfig::with_preset("ablation");
  CHECK(abl.schedule.base_lr == doctest::Approx(0.3));
  CHECK(abl.schedule.tau_base == doctest::Approx(0.99));
  CHECK(abl.optim.weight_decay == doctest::Approx(1e-6));
  RunConfig sb = RunConfig::with_preset("small-batch");
  CHECK(sb.schedule.base_lr == doctest::Approx(0.4));
  CHECK(sb.schedule.tau_base == doctest::Approx(0.9995));
  CHECK_THROWS(RunConfig::with_preset("nope"));
}

TEST_CASE("cifar10 loader parses the binary record layout") {
  std::string dir = tmp_dir();
  std::string path = dir + "/batch.bin";
  const int n = 10000;
  {
    std::ofstream os(path, std::ios::binary);
    for (int i = 0; i < n; ++i) {
      unsigned char label = static_cast<unsigned char>(i % 10);
      os.put(static_cast<char>(label));
      for (int b = 0; b < 3072; ++b)
        os.put(static_cast<char>((i + b) % 256));
    }
  }
  ImageBatch batch = load_cifar10(path);
  REQUIRE(batch.count() == n);
  CHECK(batch.c == 3);
  CHECK(batch.h == 32);
  CHECK(batch.w == 32);
  for (int i = 0; i < n; ++i) {
    CHECK(batch.labels[i] >= 0);
    CHECK(batch.labels[i] <= 9);
  }
  // R plane first: pixel (0,0,0) of record i is byte (i*3073 + 1)
  CHECK(batch.images[5].at(0, 0, 0) == doctest::Approx((5 % 256) / 255.0));
  // G plane starts 1024 bytes later
  CHECK(batch.images[5].at(1, 0, 0) == doctest::Approx(((5 + 1024) % 256) / 255.0));

  // limit
  CHECK(load_cifar10(path, 7).count() == 7);

  // empty file: zero-length stream, no error
  std::string empty = dir + "/empty.bin";
  std::ofstream(empty, std::ios::binary);
  CHECK(load_cifar10(empty).count() == 0);

  // truncated file errors with the byte offset
  std::string trunc = dir + "/trunc.bin";
  {
    std::ofstream os(trunc, std::ios::binary);
    for (int b = 0; b < 3073 + 100; ++b) os.put(static_cast<char>(b % 256));
  }
  try {
    load_cifar10(trunc);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
}

TEST_CASE("synth_clusters: determinism, emptiness, labels") {
  ImageBatch a = synth_clusters(4, 10, 12, 7);
  ImageBatch b = synth_clusters(4, 10, 12, 7);
  REQUIRE(a.count() == 40);
  for (int64_t i = 0; i < a.count(); ++i) {
    CHECK(a.labels[i] == b.labels[i]);
    for (size_t j = 0; j < a.images[i].data.size(); ++j)
      CHECK(a.images[i].data[j] == b.images[i].data[j]);
  }
  CHECK(synth_clusters(3, 0, 12, 7).count() == 0);
  ImageBatch c = synth_clusters(4, 10, 12, 8);
  real diff = 0;
  for (size_t j = 0; j < c.images[0].data.size(); ++j)
    diff += std::fabs(c.images[0].data[j] - a.images[0].data[j]);
  CHECK(diff > 0);  // different seed, different content
}

TEST_CASE("a linear probe on raw pixels separates 4 synth classes above 90%") {
  ImageBatch data = synth_clusters(4, 200, 24, 11);
  int64_t n = data.count();
  int dim = data.c * data.h * data.w;
  std::vector<real> feats;
  feats.reserve(n * dim);
  for (const Image& im : data.images) feats.insert(feats.end(), im.data.begin(), im.data.end());
  Tensor x = Tensor::from_data({static_cast<int>(n), dim}, std::move(feats));
  ProbeConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 64;
  ProbeResult r = linear_probe(x, data.labels, cfg, 5);
  CHECK(r.top1 > 0.90);
}

TEST_CASE("checkpoint bit-exact round trip") {
  RunConfig cfg = RunConfig::from_config(tiny_config(tmp_dir()));
  TrainState state(cfg);
  state.train_step(state.batches_for_step(0).front());
  Checkpoint ck = state.snapshot();
  std::string path = tmp_dir() + "/ck.bin";
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  CHECK(back.step == ck.step);
  CHECK(back.config_text == ck.config_text);
  REQUIRE(back.entries.size() == ck.entries.size());
  for (size_t i = 0; i < ck.entries.size(); ++i) {
    CHECK(back.entries[i].name == ck.entries[i].name);
    CHECK(back.entries[i].shape == ck.entries[i].shape);
    REQUIRE(back.entries[i].data.size() == ck.entries[i].data.size());
    for (size_t j = 0; j < ck.entries[i].data.size(); ++j)
      CHECK(back.entries[i].data[j] == ck.entries[i].data[j]);  // bit exact
  }

  // restore into a fresh state: parameters identical
  TrainState other(cfg);
  other.restore(back);
  auto pa = state.pair().all_params();
  auto pb = other.pair().all_params();
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].tensor.data().size(); ++j)
      CHECK(pa[i].tensor.data()[j] == pb[i].tensor.data()[j]);

  // shape mismatch on restore errors
  RunConfig bigger = cfg;
  bigger.arch.mlp_widths = {16};
  TrainState wrong(bigger);
  CHECK_THROWS(wrong.restore(back));
}

TEST_CASE("every ablation axis is reachable through config alone") {
  // One delta per published ablation axis; each must be grid-whitelisted and
  // must produce a valid config.
  std::vector<std::pair<std::string, std::string>> axes = {
      {"loss.family", "infonce"},          // loss-family table
      {"loss.alpha", "0.3"},               // temperature sweep
      {"loss.beta", "0.5"},                // negative-weight sweep
      {"loss.use_predictor", "false"},     // predictor column
      {"loss.target_mode", "sg_theta"},    // target-parameter column
      {"loss.normalization", "batchnorm"}, // normalization table
      {"schedule.tau_base", "0.9"},        // bootstrap table
      {"schedule.tau_constant", "true"},   // hard-copy regimes
      {"data.batch_size", "16"},           // batch-size figure
      {"optim.lambda_pred", "10"},         // predictor-lr table
      {"optim.mu_proj", "2"},              // projector-lr table
      {"loss.closed_form_predictor", "true"},  // closed-form regime
      {"augment.jitter_prob", "0"},        // transformation-removal figure
      {"augment.grayscale_prob", "0"},
      {"augment.blur_prob", "0"},
      {"augment2.solarize_prob", "0"},
      {"augment.flip_prob", "0"},
  };
  for (const auto& [k, v] : axes) {
    CHECK(grid_key_allowed(k));
    Config c = tiny_config("x");
    if (k == "loss.closed_form_predictor") c.set("loss.use_predictor", "false");
    c.set(k, v);
    CHECK_NOTHROW(RunConfig::from_config(c));
  }
  CHECK_FALSE(grid_key_allowed("arch.repr_dim"));  // not an ablation axis
}

TEST_CASE("grid parsing and whitelist enforcement") {
  AblationGrid g = AblationGrid::parse(
      "# the loss-family rows\n"
      "byol: loss.family=byol loss.use_predictor=true loss.target_mode=xi\n"
      "simclr: loss.family=infonce loss.beta=1 loss.use_predictor=false "
      "loss.target_mode=theta\n");
  REQUIRE(g.rows.size() == 2);
  CHECK(g.rows[0].name == "byol");
  CHECK(g.rows[1].deltas.size() == 4);

  RunConfig base = RunConfig::from_config(tiny_config(tmp_dir()));
  GridRow bad{"bad", {{"arch.repr_dim", "4"}}};
  CHECK_THROWS(apply_grid_row(base, bad, "out"));

  CHECK_THROWS(AblationGrid::parse("no colon here\n"));
}

TEST_CASE("grid executes rows, continues past failures, reruns identically") {
  std::string out = tmp_dir();
  RunConfig base = RunConfig::from_config(tiny_config(out + "/base"));
  AblationGrid g = AblationGrid::parse(
      "row_a: loss.family=byol\n"
      "row_bad: loss.alpha=-1 loss.family=infonce\n"  // invalid: alpha must be > 0
      "row_b: loss.family=infonce loss.beta=1 loss.use_predictor=false "
      "loss.target_mode=theta\n");
  auto results = run_grid(base, g, out + "/g1");
  REQUIRE(results.size() == 3);
  CHECK(results[0].ok);
  CHECK_FALSE(results[1].ok);  // recorded, grid continues
  CHECK(results[2].ok);
  CHECK(fs::exists(out + "/g1/results.csv"));
  CHECK(fs::exists(out + "/g1/results.txt"));

  auto rerun = run_grid(base, g, out + "/g2");
  for (size_t i = 0; i < results.size(); ++i) {
    CHECK(rerun[i].ok == results[i].ok);
    CHECK(rerun[i].top1 == results[i].top1);  // deterministic
    CHECK(rerun[i].mean_per_dim_std == results[i].mean_per_dim_std);
  }

  // empty grid -> empty table
  auto empty = run_grid(base, AblationGrid{}, out + "/g3");
  CHECK(empty.empty());
  CHECK(render_table(empty).find("name") != std::string::npos);
}

TEST_CASE("grid rows run process-isolated under --jobs") {
  std::string out = tmp_dir();
  RunConfig base = RunConfig::from_config(tiny_config(out + "/base"));
  AblationGrid g = AblationGrid::parse(
      "row_x: loss.family=byol\n"
      "row_y: loss.family=infonce loss.beta=1 loss.use_predictor=false "
      "loss.target_mode=theta\n");
  auto seq = run_grid(base, g, out + "/seq");
  auto par = run_grid(base, g, out + "/par", /*jobs=*/2, SSRL_CLI_PATH);
  REQUIRE(par.size() == seq.size());
  for (size_t i = 0; i < par.size(); ++i) {
    CHECK(par[i].ok);
    CHECK(par[i].top1 == seq[i].top1);  //识 determinism independent of siblings
    CHECK(par[i].mean_per_dim_std == seq[i].mean_per_dim_std);
  }
}

TEST_CASE("cli: --set typo exits nonzero without a partial run") {
  std::string out = tmp_dir();
  std::string msg;
  int rc = run_cli("train --preset ablation --set loss.betaa=1 --out " + out, &msg);
  CHECK(rc != 0);
  CHECK(msg.find("loss.betaa") != std::string::npos);
  CHECK(msg.find("loss.beta") != std::string::npos);
  CHECK_FALSE(fs::exists(out + "/ckpt_final.bin"));  // nothing was written
}

TEST_CASE("cli: train, inspect-checkpoint parameter-count oracle, wiring flags") {
  std::string out = tmp_dir();
  std::string cfg_path = out + "/c.cfg";
  std::ofstream(cfg_path) << tiny_config(out).serialize();
  std::string msg;
  int rc = run_cli("train --config " + cfg_path +
                       " --set loss.beta=1 --set loss.use_predictor=false"
                       " --set loss.target_mode=theta --set loss.family=infonce",
                   &msg);
  CHECK(rc == 0);
  REQUIRE(fs::exists(out + "/ckpt_final.bin"));

  // Closed-form parameter count for the tiny mlp architecture:
  // encoder: flatten(192) -> fc(192*12+12) -> bn(2*12) -> fc_out(12*8+8)
  // projector: fc(8*8+8) -> bn(16) -> fc(8*4+4); predictor: fc(4*8+8) -> bn(16) -> fc(8*4+4)
  int64_t enc = 192 * 12 + 12 + 2 * 12 + 12 * 8 + 8;
  int64_t proj = 8 * 8 + 8 + 16 + 8 * 4 + 4;
  int64_t pred = 4 * 8 + 8 + 16 + 8 * 4 + 4;
  int64_t online = enc + proj + pred;
  int64_t target = enc + proj;
  rc = run_cli("inspect-checkpoint " + out + "/ckpt_final.bin", &msg);
  CHECK(rc == 0);
  CHECK(msg.find("online parameters: " + std::to_string(online)) != std::string::npos);
  CHECK(msg.find("target parameters: " + std::to_string(target)) != std::string::npos);
  // the config echo records the requested wiring
  CHECK(msg.find("loss.target_mode = theta") != std::string::npos);
  CHECK(msg.find("loss.use_predictor = false") != std::string::npos);
  CHECK(msg.find("loss.beta = 1") != std::string::npos);
}

TEST_CASE("cli: augment-preview writes image files") {
  std::string out = tmp_dir();
  std::string cfg_path = out + "/c.cfg";
  std::ofstream(cfg_path) << tiny_config(out).serialize();
  int rc = run_cli("augment-preview --config " + cfg_path + " --count 2 --out " + out + "/prev");
  CHECK(rc == 0);
  CHECK(fs::exists(out + "/prev/img0_orig.ppm"));
  CHECK(fs::exists(out + "/prev/img0_view1.ppm"));
  CHECK(fs::exists(out + "/prev/img1_view2.ppm"));
}

TEST_CASE("cli: probe subcommand evaluates a checkpoint") {
  std::string out = tmp_dir();
  std::string cfg_path = out + "/c.cfg";
  std::ofstream(cfg_path) << tiny_config(out).serialize();
  REQUIRE(run_cli("train --config " + cfg_path) == 0);
  std::string msg;
  int rc = run_cli("probe " + out + "/ckpt_final.bin", &msg);
  CHECK(rc == 0);
  CHECK(msg.find("probe top1:") != std::string::npos);
  CHECK(fs::exists(out + "/probe.txt"));
  CHECK(fs::exists(out + "/collapse.txt"));
}
