#pragma once

// Run configuration: flat "section.key = value" text with every default
// written out, plus the derived objects each stage needs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/backbone.hpp"
#include "xprompt/prompt.hpp"
#include "xprompt/pruning.hpp"
#include "xprompt/tasks.hpp"

namespace xprompt {

struct RunConfig {
  BackboneConfig backbone;
  // Load this backbone directory instead of pretraining (empty: pretrain).
  std::string backbone_checkpoint;

  PretrainOptions pretrain;
  std::size_t corpus_size = 2000;
  std::size_t corpus_min_len = 8;
  std::size_t corpus_max_len = 16;
  std::uint64_t corpus_seed = 3;
  std::vector<TaskKind> cued_tasks = {TaskKind::PatternDetect, TaskKind::MajorityClass,
                                      TaskKind::ParityOfMarkers};
  std::size_t cued_examples = 1024;
  std::uint64_t cued_seed = 99;

  TaskSpec task;
  std::string train_path;  // JSONL; when set, replaces the generated split
  std::string dev_path;
  std::size_t shots = 0;  // few-shot subsample of train; 0 keeps everything
  std::uint64_t shots_seed = 0;

  std::size_t prompt_length = 20;
  std::size_t pieces = 16;
  InitKind init = InitKind::SampledVocab;
  double uniform_bound = 0.5;

  OptimizerConfig optimizer;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;

  PruneSchedule schedule;
  Aggregation aggregation = Aggregation::PerBatchAbs;
  std::size_t retrain_epochs = 100;
  double mask_ratio = 0.3;  // post-hoc masking baselines

  std::vector<std::uint64_t> seeds = {0};

  // Cue token of cued task `i` (counting down from the top of the vocabulary).
  int cue_token(std::size_t i) const { return static_cast<int>(backbone.vocab_size - 1 - i); }
  // Cue of the target task if it is among the cued tasks, else -1.
  int target_cue() const;

  // Throws ConfigError (or RangeError) naming the offending key.
  void validate() const;

  // Canonical text with every key, in a fixed order.
  std::string to_text() const;
  // SHA-256 of the canonical text without the seed list, so per-seed
  // checkpoints survive a --seed override.
  std::string hash() const;

  // Unknown keys and malformed values throw ConfigError with origin:line.
  static RunConfig parse(const std::string& text, const std::string& origin = "<memory>");
  static RunConfig load(const std::filesystem::path& path);

  TuneOptions tune_options(std::uint64_t seed) const;
  RetrainOptions retrain_options(std::uint64_t seed) const;
  InitStrategy init_strategy(std::uint64_t seed) const;
};

// Commented template with every default spelled out.
std::string config_template();

}  // namespace xprompt
