#pragma once

// Synthetic classification tasks, JSONL ingestion, few-shot subsampling and
// accuracy. Datasets are plain values; nothing here mutates its inputs.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xprompt {

struct Example {
  std::vector<int> tokens;
  int label = 0;
  std::size_t source_line = 0;  // 1-based line in the originating file, 0 if generated

  bool operator==(const Example& o) const { return tokens == o.tokens && label == o.label; }
};

using Dataset = std::vector<Example>;

enum class TaskKind {
  PatternDetect,     // label 1 iff the marker bigram occurs
  MajorityClass,     // label = the class marker that occurs most often
  ParityOfMarkers,   // label = parity of the marker count
};

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::MajorityClass;
  std::size_t vocab_size = 64;
  std::size_t num_classes = 2;
  std::size_t min_len = 8;
  std::size_t max_len = 12;
  std::size_t train_size = 256;
  std::size_t dev_size = 128;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct Splits {
  Dataset train;
  Dataset dev;
};

// Token ids used by the generators. Id 0 is reserved for the backbone's
// mask token and never appears in task data.
inline constexpr int kPatternFirst = 1;
inline constexpr int kPatternSecond = 2;
inline constexpr int kParityMarker = 1;
// MajorityClass uses ids 1..C as the class markers.

Splits generate(const TaskSpec& spec);

// Independent relabelers used to audit generated data.
int pattern_label(std::span<const int> tokens);
int majority_label(std::span<const int> tokens, std::size_t num_classes);
int parity_label(std::span<const int> tokens);

// Each line: {"tokens": [int, ...], "label": int}. Blank lines are skipped.
// Throws ParseError (malformed line) or DataError (id/label out of range),
// both naming the line.
Dataset load_jsonl(const std::filesystem::path& path, std::size_t vocab_size,
                   std::size_t num_classes);
void save_jsonl(const std::filesystem::path& path, const Dataset& data);

// Seeded uniform sample without replacement, in sampling order.
Dataset fewshot_subsample(const Dataset& train, std::size_t shots, std::uint64_t seed);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Token sequences for masked-token pretraining, drawn from a seeded sparse
// Markov chain over ids 1..symbols.
std::vector<std::vector<int>> make_pretrain_corpus(std::size_t symbols, std::size_t count,
                                                   std::size_t min_len, std::size_t max_len,
                                                   std::uint64_t seed);

}  // namespace xprompt
