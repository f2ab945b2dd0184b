#include "xprompt/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "xprompt/errors.hpp"
#include "xprompt/rng.hpp"

namespace xprompt {

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::PatternDetect: return "pattern";
    case TaskKind::MajorityClass: return "majority";
    case TaskKind::ParityOfMarkers: return "parity";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "pattern") return TaskKind::PatternDetect;
  if (name == "majority") return TaskKind::MajorityClass;
  if (name == "parity") return TaskKind::ParityOfMarkers;
  throw ConfigError("unknown task kind '" + name + "' (expected pattern, majority or parity)");
}

void TaskSpec::validate() const {
  auto fail = [&](const std::string& msg) { throw ConfigError("task '" + name + "': " + msg); };
  if (train_size == 0 || dev_size == 0) fail("split sizes must be at least 1");
  if (min_len == 0 || min_len > max_len) fail("invalid length range");
  if (num_classes < 2) fail("num_classes must be at least 2");
  switch (kind) {
    case TaskKind::PatternDetect:
      if (num_classes != 2) fail("pattern detection is binary");
      if (min_len < 2) fail("marker bigram does not fit in sequences shorter than 2");
      if (vocab_size < 4) fail("vocabulary too small for pattern detection");
      break;
    case TaskKind::MajorityClass:
      if (vocab_size < num_classes + 2) fail("vocabulary too small for class markers and filler");
      // the winning marker needs one more occurrence than any other
      if (min_len < 3) fail("sequences shorter than 3 cannot hold a strict majority marker");
      break;
    case TaskKind::ParityOfMarkers:
      if (num_classes != 2) fail("parity is binary");
      if (vocab_size < 3) fail("vocabulary too small for parity");
      if (min_len < 2) fail("sequences shorter than 2 cannot express both parities with filler");
      break;
  }
}

int pattern_label(std::span<const int> tokens) {
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (tokens[i] == kPatternFirst && tokens[i + 1] == kPatternSecond) return 1;
  }
  return 0;
}

int majority_label(std::span<const int> tokens, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int t : tokens) {
    if (t >= 1 && static_cast<std::size_t>(t) <= num_classes) ++counts[static_cast<std::size_t>(t - 1)];
  }
  const auto it = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *it) > 1) return -1;  // no strict majority
  return static_cast<int>(it - counts.begin());
}

int parity_label(std::span<const int> tokens) {
  return static_cast<int>(std::count(tokens.begin(), tokens.end(), kParityMarker) % 2);
}

namespace {

int filler(Rng& rng, int lo, std::size_t vocab) {
  return lo + static_cast<int>(rng.below(vocab - static_cast<std::size_t>(lo)));
}

std::vector<int> make_pattern(Rng& rng, const TaskSpec& spec, std::size_t len, int label) {
  // Filler excludes the second marker so the bigram can only arise where we
  // place it; the first marker still appears as a distractor.
  std::vector<int> seq(len);
  for (int& t : seq) {
    t = filler(rng, 1, spec.vocab_size);
    if (t == kPatternSecond) t = kPatternFirst;
  }
  if (label == 1) {
    const std::size_t at = static_cast<std::size_t>(rng.below(len - 1));
    seq[at] = kPatternFirst;
    seq[at + 1] = kPatternSecond;
  } else if (rng.uniform01() < 0.5) {
    // unpaired second marker as a negative distractor
    const std::size_t at = static_cast<std::size_t>(rng.below(len));
    if (at == 0 || seq[at - 1] != kPatternFirst) seq[at] = kPatternSecond;
  }
  return seq;
}

std::vector<int> make_majority(Rng& rng, const TaskSpec& spec, std::size_t len, int label) {
  const std::size_t classes = spec.num_classes;
  const int first_filler = static_cast<int>(classes) + 1;
  std::vector<int> seq(len);
  for (int& t : seq) t = filler(rng, first_filler, spec.vocab_size);
  // Marker budget: at most half the sequence, at least enough for a winner.
  const std::size_t budget = std::max<std::size_t>(1, len / 2);
  std::vector<std::size_t> counts(classes, 0);
  const std::size_t win = 1 + static_cast<std::size_t>(rng.below(std::min<std::size_t>(budget, 3)));
  counts[static_cast<std::size_t>(label)] = win;
  std::size_t used = win;
  for (std::size_t c = 0; c < classes; ++c) {
    if (static_cast<int>(c) == label) continue;
    const std::size_t cap = std::min(win - 1, budget - std::min(budget, used));
    counts[c] = cap == 0 ? 0 : static_cast<std::size_t>(rng.below(cap + 1));
    used += counts[c];
  }
  auto positions = rng.sample_without_replacement(len, used);
  std::size_t p = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) seq[positions[p++]] = static_cast<int>(c) + 1;
  }
  return seq;
}

std::vector<int> make_parity(Rng& rng, const TaskSpec& spec, std::size_t len, int label) {
  std::vector<int> seq(len);
  for (int& t : seq) t = filler(rng, kParityMarker + 1, spec.vocab_size);
  const std::size_t max_markers = std::min<std::size_t>(len, 4);
  std::size_t count = static_cast<std::size_t>(rng.below(max_markers + 1));
  if (static_cast<int>(count % 2) != label) count = count == 0 ? 1 : count - 1;
  auto positions = rng.sample_without_replacement(len, count);
  for (std::size_t p : positions) seq[p] = kParityMarker;
  return seq;
}

Dataset make_split(const TaskSpec& spec, std::size_t size, std::uint64_t stream) {
  Rng rng(mix_seed(spec.seed, stream));
  std::vector<int> labels(size);
  for (std::size_t i = 0; i < size; ++i) labels[i] = static_cast<int>(i % spec.num_classes);
  rng.shuffle(labels);
  Dataset out;
  out.reserve(size);
  for (int label : labels) {
    const std::size_t len =
        spec.min_len + static_cast<std::size_t>(rng.below(spec.max_len - spec.min_len + 1));
    Example ex;
    ex.label = label;
    switch (spec.kind) {
      case TaskKind::PatternDetect: ex.tokens = make_pattern(rng, spec, len, label); break;
      case TaskKind::MajorityClass: ex.tokens = make_majority(rng, spec, len, label); break;
      case TaskKind::ParityOfMarkers: ex.tokens = make_parity(rng, spec, len, label); break;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

Splits generate(const TaskSpec& spec) {
  spec.validate();
  return Splits{make_split(spec, spec.train_size, 1), make_split(spec, spec.dev_size, 2)};
}

Dataset load_jsonl(const std::filesystem::path& path, std::size_t vocab_size,
                   std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!rec.is_object() || !rec.contains("tokens") || !rec.contains("label") ||
        !rec["tokens"].is_array() || !rec["label"].is_number_integer()) {
      throw ParseError(where + ": expected {\"tokens\": [int...], \"label\": int}");
    }
    Example ex;
    ex.source_line = line_no;
    for (const auto& t : rec["tokens"]) {
      if (!t.is_number_integer()) throw ParseError(where + ": non-integer token");
      const auto v = t.get<long long>();
      if (v < 0 || static_cast<unsigned long long>(v) >= vocab_size) {
        throw DataError(where + ": token " + std::to_string(v) + " outside vocabulary of " +
                        std::to_string(vocab_size));
      }
      ex.tokens.push_back(static_cast<int>(v));
    }
    if (ex.tokens.empty()) throw DataError(where + ": empty token sequence");
    const auto label = rec["label"].get<long long>();
    if (label < 0 || static_cast<unsigned long long>(label) >= num_classes) {
      throw DataError(where + ": label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    ex.label = static_cast<int>(label);
    out.push_back(std::move(ex));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const Example& ex : data) {
    nlohmann::json rec = {{"tokens", ex.tokens}, {"label", ex.label}};
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset fewshot_subsample(const Dataset& train, std::size_t shots, std::uint64_t seed) {
  if (shots > train.size()) {
    throw DataError("cannot draw " + std::to_string(shots) + " shots from " +
                    std::to_string(train.size()) + " training examples");
  }
  Rng rng(mix_seed(seed, 0x53484F5453ULL));
  const auto picks = rng.sample_without_replacement(train.size(), shots);
  Dataset out;
  out.reserve(shots);
  for (std::size_t i : picks) out.push_back(train[i]);
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw DataError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw DataError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::vector<int>> make_pretrain_corpus(std::size_t symbols, std::size_t count,
                                                   std::size_t min_len, std::size_t max_len,
                                                   std::uint64_t seed) {
  if (symbols < 2) throw ConfigError("pretraining corpus needs at least 2 symbols");
  if (min_len == 0 || min_len > max_len) throw ConfigError("invalid corpus length range");
  Rng rng(mix_seed(seed, 0x434F52505553ULL));
  // Each symbol prefers a handful of successors; the rest of the mass is uniform.
  constexpr std::size_t kFavored = 3;
  std::vector<std::vector<int>> successors(symbols);
  for (auto& s : successors) {
    for (std::size_t i = 0; i < kFavored; ++i) s.push_back(1 + static_cast<int>(rng.below(symbols)));
  }
  std::vector<std::vector<int>> corpus;
  corpus.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t len = min_len + static_cast<std::size_t>(rng.below(max_len - min_len + 1));
    std::vector<int> seq;
    seq.reserve(len);
    int cur = 1 + static_cast<int>(rng.below(symbols));
    seq.push_back(cur);
    while (seq.size() < len) {
      if (rng.uniform01() < 0.8) {
        const auto& s = successors[static_cast<std::size_t>(cur - 1)];
        cur = s[static_cast<std::size_t>(rng.below(s.size()))];
      } else {
        cur = 1 + static_cast<int>(rng.below(symbols));
      }
      seq.push_back(cur);
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace xprompt
