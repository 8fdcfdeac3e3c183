#include "ssrl/grid.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ssrl {

namespace fs = std::filesystem;

std::pair<ProbeResult, CollapseReport> evaluate_state(TrainState& state) {
  const RunConfig& cfg = state.config();
  int th = cfg.aug1.target_h, tw = cfg.aug1.target_w;
  auto [features, labels] =
      extract_representations(state.pair().online, state.data(), state.channel_stats(), th, tw);
  Tensor probe_features = features;
  std::vector<int> probe_labels = labels;
  if (cfg.probe.augment_copies > 1) {
    // Extra augmented passes over the data enlarge the probe training pool;
    // the split below keeps test/val indices inside the clean copy.
    AugmentationParams spatial = cfg.aug1;
    spatial.jitter_prob = 0;
    spatial.grayscale_prob = 0;
    spatial.blur_prob = 0;
    spatial.solarize_prob = 0;
    for (int copy = 1; copy < cfg.probe.augment_copies; ++copy) {
      auto [af, al] = extract_representations_augmented(
          state.pair().online, state.data(), state.channel_stats(), spatial,
          cfg.seed + static_cast<uint64_t>(copy) * 0x100, cfg.probe.batch_size);
      std::vector<real> merged = probe_features.data();
      merged.insert(merged.end(), af.data().begin(), af.data().end());
      probe_labels.insert(probe_labels.end(), al.begin(), al.end());
      probe_features = Tensor::from_data(
          {probe_features.dim(0) + af.dim(0), probe_features.dim(1)}, std::move(merged));
    }
  }
  ProbeResult probe = linear_probe(probe_features, probe_labels, cfg.probe, cfg.seed);
  // Collapse diagnostics on the projections of the clean evaluation views.
  NoGradGuard ng;
  Tensor z = state.pair().online.project(features, BnMode::kEval);
  return {probe, collapse_metrics(z)};
}

RunEval train_and_eval(const RunConfig& cfg) {
  RunEval ev;
  ev.train = run_training(cfg);
  TrainState state(cfg);
  state.restore(Checkpoint::load(ev.train.final_checkpoint));
  auto [probe, collapse] = evaluate_state(state);
  ev.probe = probe;
  ev.collapse = collapse;
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir + "/probe.txt") << to_text(ev.probe);
  std::ofstream(cfg.out_dir + "/collapse.txt") << to_text(ev.collapse);
  std::ofstream res(cfg.out_dir + "/result.txt");
  res << "top1 = " << format_real(ev.probe.top1) << "\n";
  res << "mean_per_dim_std = " << format_real(ev.collapse.mean_per_dim_std) << "\n";
  res << "effective_rank = " << format_real(ev.collapse.effective_rank) << "\n";
  res << "collapsed = " << (ev.collapse.mean_per_dim_std < kCollapseStdThreshold ? "true" : "false")
      << "\n";
  return ev;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

AblationGrid AblationGrid::parse(const std::string& text) {
  AblationGrid g;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("grid line " + std::to_string(lineno) +
                                  ": expected `name: key=value ...`");
    GridRow row;
    row.name = trim(line.substr(0, colon));
    std::istringstream rest(line.substr(colon + 1));
    std::string tok;
    while (rest >> tok) {
      size_t eq = tok.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("grid line " + std::to_string(lineno) + ": bad delta " + tok);
      row.deltas.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    g.rows.push_back(std::move(row));
  }
  return g;
}

AblationGrid AblationGrid::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("grid: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

bool grid_key_allowed(const std::string& key) {
  static const char* exact[] = {
      "loss.family", "loss.alpha", "loss.beta", "loss.use_predictor",
      "loss.closed_form_predictor", "loss.target_mode", "loss.normalization", "loss.scale",
      "schedule.tau_base", "schedule.tau_constant", "data.batch_size",
      "optim.lambda_pred", "optim.mu_proj", "seed"};
  for (const char* k : exact)
    if (key == k) return true;
  return key.rfind("augment.", 0) == 0 || key.rfind("augment2.", 0) == 0;
}

RunConfig apply_grid_row(const RunConfig& base, const GridRow& row, const std::string& out_dir) {
  Config c = base.to_config();
  for (const auto& [k, v] : row.deltas) {
    if (!grid_key_allowed(k))
      throw std::invalid_argument("grid row `" + row.name + "`: key " + k +
                                  " is not an ablation axis");
    c.set(k, v);
  }
  c.set("out_dir", out_dir + "/" + row.name);
  return RunConfig::from_config(c);
}

namespace {

GridRowResult tag_row(const GridRow& row, const RunConfig& cfg) {
  GridRowResult r;
  r.name = row.name;
  r.predictor = cfg.loss.use_predictor || cfg.loss.closed_form_predictor;
  r.target_mode = to_string(cfg.loss.target_mode);
  r.beta = cfg.loss.family == LossFamily::kByol ? 0.0 : cfg.loss.beta;
  return r;
}

GridRowResult parse_result_file(GridRowResult r, const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    r.ok = false;
    r.error = "missing result file " + path;
    return r;
  }
  Config c = Config::parse(std::string((std::istreambuf_iterator<char>(is)),
                                       std::istreambuf_iterator<char>()));
  r.top1 = c.get_real("top1", 0);
  r.mean_per_dim_std = c.get_real("mean_per_dim_std", 0);
  r.effective_rank = c.get_real("effective_rank", 0);
  r.collapsed = c.get_bool("collapsed", false);
  r.ok = true;
  return r;
}

}  // namespace

std::vector<GridRowResult> run_grid(const RunConfig& base, const AblationGrid& grid,
                                    const std::string& out_dir, int jobs,
                                    const std::string& self_exe) {
  fs::create_directories(out_dir);
  std::vector<GridRowResult> results(grid.rows.size());
  if (jobs > 1 && !self_exe.empty()) {
    // Process isolation: each row runs in its own subprocess.
    std::vector<std::string> cfg_paths(grid.rows.size());
    for (size_t i = 0; i < grid.rows.size(); ++i) {
      RunConfig rc = apply_grid_row(base, grid.rows[i], out_dir);
      results[i] = tag_row(grid.rows[i], rc);
      fs::create_directories(rc.out_dir);
      cfg_paths[i] = rc.out_dir + "/config.cfg";
      std::ofstream(cfg_paths[i]) << rc.to_config().serialize();
    }
    std::mutex mu;
    size_t next = 0;
    auto worker = [&]() {
      for (;;) {
        size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= grid.rows.size()) return;
          i = next++;
        }
        std::string cmd = self_exe + " train --config " + cfg_paths[i] + " --with-eval > " +
                          out_dir + "/" + grid.rows[i].name + "/log.txt 2>&1";
        int rc = std::system(cmd.c_str());
        std::lock_guard<std::mutex> lock(mu);
        if (rc != 0) {
          results[i].ok = false;
          results[i].error = "subprocess exited with " + std::to_string(rc);
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (size_t i = 0; i < grid.rows.size(); ++i)
      if (results[i].error.empty())
        results[i] = parse_result_file(results[i], out_dir + "/" + grid.rows[i].name + "/result.txt");
  } else {
    for (size_t i = 0; i < grid.rows.size(); ++i) {
      GridRowResult r;
      try {
        RunConfig rc = apply_grid_row(base, grid.rows[i], out_dir);
        r = tag_row(grid.rows[i], rc);
        RunEval ev = train_and_eval(rc);
        r.top1 = ev.probe.top1;
        r.mean_per_dim_std = ev.collapse.mean_per_dim_std;
        r.effective_rank = ev.collapse.effective_rank;
        r.collapsed = ev.collapse.mean_per_dim_std < kCollapseStdThreshold;
        r.ok = true;
      } catch (const std::exception& e) {
        r.name = grid.rows[i].name;
        r.ok = false;
        r.error = e.what();
      }
      results[i] = r;
    }
  }
  std::ofstream(out_dir + "/results.csv") << render_csv(results);
  std::ofstream(out_dir + "/results.txt") << render_table(results);
  return results;
}

std::string render_table(std::vector<GridRowResult> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const GridRowResult& a, const GridRowResult& b) {
    if (a.ok != b.ok) return a.ok;
    return a.top1 > b.top1;
  });
  std::ostringstream os;
  os << std::left << std::setw(24) << "name" << std::setw(11) << "predictor" << std::setw(10)
     << "target" << std::setw(7) << "beta" << std::setw(9) << "top1" << std::setw(14)
     << "per_dim_std" << std::setw(10) << "eff_rank" << "status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(24) << r.name << std::setw(11) << (r.predictor ? "yes" : "no")
       << std::setw(10) << r.target_mode << std::setw(7) << std::setprecision(3) << r.beta;
    if (r.ok) {
      os << std::setw(9) << std::fixed << std::setprecision(4) << r.top1 << std::setw(14)
         << r.mean_per_dim_std << std::setw(10) << std::setprecision(2) << r.effective_rank
         << (r.collapsed ? "collapsed" : "ok");
      os.unsetf(std::ios::fixed);
    } else {
      os << "FAILED: " << r.error;
    }
    os << "\n";
  }
  return os.str();
}

std::string render_csv(const std::vector<GridRowResult>& rows) {
  std::ostringstream os;
  os << "name,predictor,target_mode,beta,top1,mean_per_dim_std,effective_rank,collapsed,status\n";
  for (const auto& r : rows) {
    os << r.name << "," << (r.predictor ? 1 : 0) << "," << r.target_mode << ","
       << format_real(r.beta) << "," << format_real(r.top1) << ","
       << format_real(r.mean_per_dim_std) << "," << format_real(r.effective_rank) << ","
       << (r.collapsed ? 1 : 0) << "," << (r.ok ? "ok" : r.error) << "\n";
  }
  return os.str();
}

}  // namespace ssrl
