#pragma once

// Mask-gradient importance scores, token and piece selection, the
// hierarchical pruning grid, rewinding and the post-hoc masking baselines.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/backbone.hpp"
#include "xprompt/matrix.hpp"
#include "xprompt/prompt.hpp"
#include "xprompt/tasks.hpp"

namespace xprompt {

enum class Aggregation { PerBatchAbs, PerExampleAbs };
enum class SelectionRule { LowestScore, Random, Reversed };

const char* aggregation_name(Aggregation agg);
Aggregation parse_aggregation(const std::string& name);
const char* selection_rule_name(SelectionRule rule);
SelectionRule parse_selection_rule(const std::string& name);

// Mean absolute mask gradients. Structures that were already pruned when the
// report was made score 0 and are flagged.
struct ImportanceReport {
  std::vector<double> token_scores;        // m
  Matrix piece_scores;                     // m x k
  std::vector<unsigned char> token_pruned;  // m
  std::vector<unsigned char> piece_pruned;  // m * k, row-major
  std::size_t batches_seen = 0;
  Aggregation aggregation = Aggregation::PerBatchAbs;

  std::size_t length() const { return token_scores.size(); }
  std::size_t pieces() const { return piece_scores.cols(); }
};

struct ScoreOptions {
  Aggregation aggregation = Aggregation::PerBatchAbs;
  std::size_t batch_size = 16;
};

// Both levels come out of one pass; score_tokens and score_pieces are views
// that only differ in name. Batches follow dataset order. Throws DataError on
// an empty dataset.
ImportanceReport score_masks(const PromptBank& bank, const FrozenBackbone& bb,
                             const Dataset& train, const ScoreOptions& options = {});
inline ImportanceReport score_tokens(const PromptBank& bank, const FrozenBackbone& bb,
                                     const Dataset& train, const ScoreOptions& options = {}) {
  return score_masks(bank, bb, train, options);
}
inline ImportanceReport score_pieces(const PromptBank& bank, const FrozenBackbone& bb,
                                     const Dataset& train, const ScoreOptions& options = {}) {
  return score_masks(bank, bb, train, options);
}

// The surviving structure of a prompt as plain mask arrays.
struct MaskSelection {
  std::vector<unsigned char> token_mask;  // m
  std::vector<unsigned char> piece_mask;  // m * k
  std::size_t pieces = 1;
  double token_ratio = 0.0;
  double piece_ratio = 0.0;

  static MaskSelection keep_all(std::size_t m, std::size_t k);
  static MaskSelection from_bank(const PromptBank& bank);

  std::size_t length() const { return token_mask.size(); }
  bool piece_live(std::size_t i, std::size_t c) const {
    return token_mask[i] != 0 && piece_mask[i * pieces + c] != 0;
  }
  std::vector<std::size_t> kept_tokens() const;
  // Live piece indices of token i (empty for a pruned token).
  std::vector<std::size_t> kept_pieces(std::size_t i) const;
  std::size_t kept_cells() const;
  void apply_to(PromptBank& bank) const;
};

// floor(ratio * count), ignoring floating error just below an integer.
// Throws RangeError unless 0 <= ratio < 1.
std::size_t removal_count(double ratio, std::size_t count);

// Removes floor(ratio * live tokens) tokens from `base`. LowestScore removes
// the lowest scores, Reversed the highest; ties remove the lower index first.
// Random draws uniformly from the live tokens with the given seed.
MaskSelection select_tokens(const ImportanceReport& report, double ratio, SelectionRule rule,
                            std::uint64_t seed, const MaskSelection& base);
// Same over all live (token, piece) cells pooled together.
MaskSelection select_pieces(const ImportanceReport& report, double ratio, SelectionRule rule,
                            std::uint64_t seed, const MaskSelection& base);

// P_e <- snapshot, masks <- selection, optimizer state cleared. Throws
// StateError without a snapshot.
void rewind(PromptBank& bank, const MaskSelection& selection, PromptOptimizer& optimizer);

struct PruneSchedule {
  std::vector<double> token_ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> piece_ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  SelectionRule rule = SelectionRule::LowestScore;
  std::uint64_t seed = 0;
  void validate() const;
};

struct RetrainOptions {
  TuneOptions tune;
  OptimizerConfig optimizer;
  ScoreOptions scoring;
};

struct GridCell {
  MaskSelection selection;
  double dev_acc = 0.0;
  std::size_t kept_tokens = 0;
  std::size_t kept_parameters = 0;
  TuneResult retrain;
  Matrix final_embeddings;
};

struct PruneResult {
  ImportanceReport token_report;               // scores of the full stage-1 prompt
  std::vector<ImportanceReport> piece_reports;  // one per token ratio, after token pruning
  std::vector<GridCell> cells;                  // token-ratio major
  std::size_t best = 0;                         // index into cells
  const GridCell& best_cell() const { return cells.at(best); }
};

// Runs the (token ratio, piece ratio) grid from the snapshot: score tokens,
// select, rescore pieces on the survivors, select, rewind, retrain. The bank
// ends in the best cell (highest dev accuracy; ties prefer fewer kept
// parameters, then smaller ratios), retrained. Cells run on up to `jobs`
// threads with results identical to a serial run.
PruneResult hierarchical_prune(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                               const Dataset& dev, const PruneSchedule& schedule,
                               const RetrainOptions& options, std::size_t jobs = 1);

// Selection for a rule at fixed ratios, scored from the snapshot with
// all-ones masks. Used for the reversed and random companions of a grid
// winner.
MaskSelection selection_at(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                           double token_ratio, double piece_ratio, SelectionRule rule,
                           std::uint64_t seed, const ScoreOptions& scoring);

// Rewinds to `selection`, retrains and returns the dev accuracy. The bank is
// left retrained.
double retrain_selection(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                         const Dataset& dev, const MaskSelection& selection,
                         const RetrainOptions& options, TuneResult* log = nullptr);

// Masks floor(ratio * m) tokens of a tuned bank with no rewind or retrain and
// returns dev accuracy. The bank's masks are restored afterwards.
double post_hoc_masking(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                        const Dataset& dev, double ratio, SelectionRule rule, std::uint64_t seed,
                        const ScoreOptions& scoring = {});

// Fresh prompt of m_kept tokens tuned from scratch. Throws RangeError unless
// 1 <= m_kept <= m_full.
double length_prompt(std::size_t m_kept, std::size_t m_full, std::size_t pieces,
                     const InitStrategy& init, const FrozenBackbone& bb, const Dataset& train,
                     const Dataset& dev, const RetrainOptions& options);

// One line per token: index, pruned flag, score, then k piece scores and flags.
std::string report_to_text(const ImportanceReport& report);
ImportanceReport report_from_text(const std::string& text);

}  // namespace xprompt
