#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ssrl/augment.hpp"
#include "ssrl/checkpoint.hpp"
#include "ssrl/config.hpp"
#include "ssrl/dataset.hpp"
#include "ssrl/grid.hpp"
#include "ssrl/parallel.hpp"
#include "ssrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssrl;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset = "ablation";
  std::vector<std::string> sets;
  int64_t seed = -1;
  int threads = 0;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "config file (key = value lines)");
  cmd->add_option("--preset", o.preset, "preset: full, ablation, small-batch")
      ->check(CLI::IsMember({"full", "ablation", "small-batch"}));
  cmd->add_option("--set", o.sets, "override: key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--threads", o.threads, "worker threads (1 = strict single-threaded)");
  cmd->add_option("--out", o.out_dir, "output directory");
}

RunConfig resolve_config(const CommonOpts& o) {
  Config c;
  if (!o.config_path.empty()) {
    c = Config::load_file(o.config_path);
    if (!c.has("preset")) c.set("preset", o.preset);
  } else {
    c.set("preset", o.preset);
  }
  for (const std::string& kv : o.sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got: " + kv);
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed >= 0) c.set("seed", std::to_string(o.seed));
  if (o.threads > 0) c.set("threads", std::to_string(o.threads));
  if (!o.out_dir.empty()) c.set("out_dir", o.out_dir);
  return RunConfig::from_config(c);
}

std::string self_exe_path(const char* argv0) {
  std::error_code ec;
  fs::path p = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) return p.string();
  return argv0;
}

int cmd_train(const CommonOpts& o, const std::string& resume, bool with_eval) {
  RunConfig cfg = resolve_config(o);
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  if (with_eval) {
    RunEval ev = train_and_eval(cfg);
    std::cout << "final checkpoint: " << ev.train.final_checkpoint << "\n";
    std::cout << "probe top1: " << ev.probe.top1 << " (best lr " << ev.probe.best_lr << ")\n";
    std::cout << "mean per-dim std: " << ev.collapse.mean_per_dim_std
              << "  effective rank: " << ev.collapse.effective_rank << "\n";
  } else {
    RunResult res = run_training(cfg, resume);
    std::cout << "final checkpoint: " << res.final_checkpoint << "\n";
    if (!res.metrics.empty())
      std::cout << "final loss: " << res.metrics.back().loss << " after "
                << res.metrics.back().step + 1 << " steps\n";
  }
  return 0;
}

int cmd_probe(const std::string& ckpt_path, std::string out_dir) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  RunConfig cfg = RunConfig::from_config(Config::parse(ck.config_text));
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  if (out_dir.empty()) out_dir = fs::path(ckpt_path).parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  TrainState state(cfg);
  state.restore(ck);
  auto [probe, collapse] = evaluate_state(state);
  fs::create_directories(out_dir);
  std::ofstream(out_dir + "/probe.txt") << to_text(probe);
  std::ofstream(out_dir + "/collapse.txt") << to_text(collapse);
  std::cout << "probe top1: " << probe.top1 << " (best lr " << probe.best_lr << ")\n"
            << "mean per-dim std: " << collapse.mean_per_dim_std
            << "  effective rank: " << collapse.effective_rank << "\n";
  return 0;
}

int cmd_grid(const CommonOpts& o, const std::string& grid_path, int jobs, const char* argv0) {
  RunConfig base = resolve_config(o);
  if (base.threads > 0) set_num_threads(base.threads);
  AblationGrid grid = AblationGrid::load_file(grid_path);
  std::string out = o.out_dir.empty() ? "grid_out" : o.out_dir;
  auto results = run_grid(base, grid, out, jobs, self_exe_path(argv0));
  std::cout << render_table(results);
  return 0;
}

int cmd_inspect(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  std::cout << "step: " << ck.step << "\n";
  int64_t online_n = 0, target_n = 0, buffer_n = 0, opt_n = 0;
  for (const auto& e : ck.entries) {
    std::cout << "  " << e.name << " " << shape_str(e.shape) << " [" << e.data.size() << "]\n";
    bool buffer = e.name.find("running_") != std::string::npos;
    if (e.name.rfind("opt/", 0) == 0)
      opt_n += static_cast<int64_t>(e.data.size());
    else if (buffer)
      buffer_n += static_cast<int64_t>(e.data.size());
    else if (e.name.rfind("online/", 0) == 0)
      online_n += static_cast<int64_t>(e.data.size());
    else if (e.name.rfind("target/", 0) == 0)
      target_n += static_cast<int64_t>(e.data.size());
  }
  std::cout << "online parameters: " << online_n << "\n";
  std::cout << "target parameters: " << target_n << "\n";
  std::cout << "bn running-stat values: " << buffer_n << "\n";
  std::cout << "optimizer state values: " << opt_n << "\n";
  std::cout << "config echo:\n" << ck.config_text;
  return 0;
}

int cmd_augment_preview(const CommonOpts& o, int count) {
  RunConfig cfg = resolve_config(o);
  std::string out = o.out_dir.empty() ? "augment_preview" : o.out_dir;
  fs::create_directories(out);
  ImageBatch data = load_dataset(cfg.data);
  // Identity stats keep pixel values in [0,1] for the image files.
  ChannelStats id{std::vector<real>(3, 0.0), std::vector<real>(3, 1.0)};
  RngStream rng = RngStream(cfg.seed).split(0xA06).split(0);
  count = std::min<int>(count, static_cast<int>(data.images.size()));
  for (int i = 0; i < count; ++i) {
    RngStream img_rng = rng.split(static_cast<uint64_t>(i));
    write_ppm(data.images[static_cast<size_t>(i)], out + "/img" + std::to_string(i) + "_orig.ppm");
    write_ppm(apply_pipeline(data.images[static_cast<size_t>(i)], cfg.aug1, id, img_rng.split(1)),
              out + "/img" + std::to_string(i) + "_view1.ppm");
    write_ppm(apply_pipeline(data.images[static_cast<size_t>(i)], cfg.aug2, id, img_rng.split(2)),
              out + "/img" + std::to_string(i) + "_view2.ppm");
  }
  std::cout << "wrote " << count << " augmented sample pairs to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bootstrap representation learning: training, probing and ablation grids"};
  app.require_subcommand(1);

  CommonOpts train_o, grid_o, prev_o;
  std::string resume, ckpt_path, grid_path, probe_out;
  bool with_eval = false;
  int jobs = 1, preview_count = 8;

  CLI::App* train = app.add_subcommand("train", "run self-supervised training");
  add_common(train, train_o);
  train->add_option("--resume", resume, "resume from checkpoint");
  train->add_flag("--with-eval", with_eval, "probe + collapse diagnostics after training");

  CLI::App* probe = app.add_subcommand("probe", "linear evaluation of a checkpoint");
  probe->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  probe->add_option("--out", probe_out, "output directory");

  CLI::App* grid = app.add_subcommand("grid", "run an ablation grid");
  add_common(grid, grid_o);
  grid->add_option("--grid", grid_path, "grid file (name: key=value ...)")->required();
  grid->add_option("--jobs", jobs, "parallel runs (process-isolated)");

  CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint contents");
  std::string inspect_path;
  inspect->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  CLI::App* preview = app.add_subcommand("augment-preview", "write augmented samples to disk");
  add_common(preview, prev_o);
  preview->add_option("--count", preview_count, "number of images");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_o, resume, with_eval);
    if (probe->parsed()) return cmd_probe(ckpt_path, probe_out);
    if (grid->parsed()) return cmd_grid(grid_o, grid_path, jobs, argv[0]);
    if (inspect->parsed()) return cmd_inspect(inspect_path);
    if (preview->parsed()) return cmd_augment_preview(prev_o, preview_count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
