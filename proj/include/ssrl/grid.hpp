#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssrl/config.hpp"
#include "ssrl/eval.hpp"
#include "ssrl/trainer.hpp"

namespace ssrl {

// Trains per the config, then probes the frozen online encoder and computes
// collapse diagnostics on the evaluation-set projections. Writes result.txt,
// probe.txt and collapse.txt next to the checkpoints.
struct RunEval {
  RunResult train;
  ProbeResult probe;
  CollapseReport collapse;
};
RunEval train_and_eval(const RunConfig& cfg);

// Probe + collapse diagnostics for an existing state (no training).
std::pair<ProbeResult, CollapseReport> evaluate_state(TrainState& state);

// Named RunConfig deltas over a base config. Deltas may touch only the
// whitelisted ablation axes.
struct GridRow {
  std::string name;
  std::vector<std::pair<std::string, std::string>> deltas;
};

struct AblationGrid {
  std::vector<GridRow> rows;
  // One row per line: `name: key=value key=value ...`; `#` comments.
  static AblationGrid parse(const std::string& text);
  static AblationGrid load_file(const std::string& path);
};

bool grid_key_allowed(const std::string& key);

struct GridRowResult {
  std::string name;
  bool ok = false;
  std::string error;
  // wiring tags
  bool predictor = false;
  std::string target_mode;
  real beta = 0;
  // outcomes
  real top1 = 0;
  real mean_per_dim_std = 0;
  real effective_rank = 0;
  bool collapsed = false;
};

// Executes every row (sequentially when jobs <= 1, otherwise in `jobs`
// subprocesses of self_exe); per-row failures are recorded and the grid
// continues. Rows land in out_dir/<row name>/.
std::vector<GridRowResult> run_grid(const RunConfig& base, const AblationGrid& grid,
                                    const std::string& out_dir, int jobs = 1,
                                    const std::string& self_exe = "");

RunConfig apply_grid_row(const RunConfig& base, const GridRow& row, const std::string& out_dir);

// Ranked results table (descending accuracy), aligned text and CSV forms.
std::string render_table(std::vector<GridRowResult> rows);
std::string render_csv(const std::vector<GridRowResult>& rows);

}  // namespace ssrl
