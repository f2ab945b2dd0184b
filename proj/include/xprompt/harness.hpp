#pragma once

// Pipeline orchestration: backbone, stage-1 tuning, hierarchical pruning with
// rewinding, baselines and transfer, with per-stage checkpoints and
// deterministic metrics files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xprompt/config.hpp"
#include "xprompt/pruning.hpp"

namespace xprompt {

// ---------------------------------------------------------------------------
// Parameter accounting

struct ParamCount {
  std::size_t count = 0;
  std::size_t total = 0;
  std::string percentage;  // count / total * 100, rounded half-up to 4 decimals
};

// count = sum over kept tokens of kept pieces * (e / k). Throws DataError if
// the selection does not fit (m, e).
ParamCount param_count(std::size_t m, std::size_t e, const MaskSelection& selection);
// Exact count / total * 100 to 4 decimals using integer arithmetic.
std::string exact_percentage(std::size_t count, std::size_t total);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  std::string stage;
  std::uint64_t seed = 0;
  double token_ratio = 0.0;
  double piece_ratio = 0.0;
  double dev_acc = 0.0;
  std::size_t kept_tokens = 0;
  std::size_t kept_parameters = 0;
  std::string percentage;
};

// One "key=value" record per line; the human table is rendered separately.
std::string metrics_to_text(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> metrics_from_text(const std::string& text);
std::string metrics_table(const std::vector<MetricsRecord>& records);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Saliency export

// Per token: raw score, score scaled so the largest token score is 100, the
// pruned flag; per piece the same with each token row scaled to its own
// maximum. A row whose scores are all equal maps to 100 throughout.
std::string saliency_to_text(const ImportanceReport& report, const MaskSelection& selection);
void export_saliency(const ImportanceReport& report, const MaskSelection& selection,
                     const std::filesystem::path& path);

// Token scores and flags of the full-prompt report, with piece scores of the
// surviving tokens taken from the post-token-pruning report.
ImportanceReport merged_report(const ImportanceReport& token_report,
                               const ImportanceReport& piece_report);

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  std::filesystem::path out_dir = "xprompt-out";
  bool resume = false;
  std::size_t jobs = 1;
  // Stop cleanly after this stage ("backbone", "stage1", "prune"); used to
  // exercise resume.
  std::string stop_after;
};

// Thrown for a requested early stop; carries no failure.
struct StopRequested {
  std::string stage;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricsRecord stage1;
  std::vector<MetricsRecord> grid;
  MetricsRecord final;
};

// Backbone stage: load backbone.checkpoint, reuse out_dir/backbone when
// resuming, else pretrain and save.
FrozenBackbone prepare_backbone(const RunConfig& cfg, const RunOptions& opts);
Splits prepare_data(const RunConfig& cfg);

// Stage-1 tuning only, one checkpoint per seed.
std::vector<MetricsRecord> run_tune(const RunConfig& cfg, const RunOptions& opts);
// Pruning from existing stage-1 checkpoints (DependencyError if absent).
std::vector<SeedOutcome> run_prune(const RunConfig& cfg, const RunOptions& opts);
// Backbone, stage 1, pruning and rewinding for every seed; writes
// metrics.txt, metrics_table.txt and timings.txt under out_dir.
std::vector<SeedOutcome> run_pipeline(const RunConfig& cfg, const RunOptions& opts);

// Baselines over all seeds from the pipeline's checkpoints. `which` holds any
// of negative, random_mask, reversed, random, length, vanilla. Writes
// baselines.txt and baselines_table.txt.
std::vector<MetricsRecord> run_baselines(const RunConfig& cfg, const RunOptions& opts,
                                         const std::vector<std::string>& which);

// Initializes each seed's prompt from a source checkpoint directory (a
// prompt checkpoint or a run directory holding seed-N/final), then runs plain
// tuning (transfer_o) and the full pipeline (transfer).
std::vector<MetricsRecord> run_transfer(const RunConfig& cfg, const RunOptions& opts,
                                        const std::filesystem::path& source);

// Rebuilds the human tables from the machine-readable files in out_dir.
std::string run_report(const RunOptions& opts);

// Name of the stage most recently entered by a run, for error reports.
std::string last_stage();

// Maps library exceptions to process exit codes: 2 config, 3 data, 4 other.
int exit_code_for(const std::exception& e);

}  // namespace xprompt
