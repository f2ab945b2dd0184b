#include "xprompt/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "xprompt/errors.hpp"
#include "xprompt/storage.hpp"

namespace xprompt {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& each) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += each(items[i]);
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename M>
Key size_key(const char* name, M member) {
  return {name, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member](RunConfig& c, const std::string& v) {
            member(c) = static_cast<std::size_t>(to_u64(v));
          }};
}

template <typename M>
Key u64_key(const char* name, M member) {
  return {name, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = to_u64(v); }};
}

template <typename M>
Key double_key(const char* name, M member) {
  return {name, [member](const RunConfig& c) { return fmt_double(member(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = to_double(v); }};
}

template <typename M>
Key string_key(const char* name, M member) {
  return {name, [member](const RunConfig& c) { return member(c); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

template <typename M>
Key ratios_key(const char* name, M member) {
  return {name,
          [member](const RunConfig& c) {
            return join(member(c), [](double r) { return fmt_double(r); });
          },
          [member](RunConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(to_double(item));
            member(c) = std::move(out);
          }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      size_key("backbone.vocab_size", FIELD(backbone.vocab_size)),
      size_key("backbone.embed_dim", FIELD(backbone.embed_dim)),
      size_key("backbone.layers", FIELD(backbone.layers)),
      size_key("backbone.heads", FIELD(backbone.heads)),
      size_key("backbone.ffn_dim", FIELD(backbone.ffn_dim)),
      size_key("backbone.max_seq_len", FIELD(backbone.max_seq_len)),
      size_key("backbone.num_classes", FIELD(backbone.num_classes)),
      u64_key("backbone.seed", FIELD(backbone.seed)),
      double_key("backbone.init_std", FIELD(backbone.init_std)),
      string_key("backbone.checkpoint", FIELD(backbone_checkpoint)),

      size_key("pretrain.steps", FIELD(pretrain.steps)),
      double_key("pretrain.learning_rate", FIELD(pretrain.learning_rate)),
      size_key("pretrain.batch_size", FIELD(pretrain.batch_size)),
      double_key("pretrain.mask_probability", FIELD(pretrain.mask_probability)),
      double_key("pretrain.task_weight", FIELD(pretrain.task_weight)),
      size_key("pretrain.corpus_size", FIELD(corpus_size)),
      size_key("pretrain.corpus_min_len", FIELD(corpus_min_len)),
      size_key("pretrain.corpus_max_len", FIELD(corpus_max_len)),
      u64_key("pretrain.corpus_seed", FIELD(corpus_seed)),
      {"pretrain.cued_tasks",
       [](const RunConfig& c) {
         return join(c.cued_tasks, [](TaskKind k) { return std::string(task_kind_name(k)); });
       },
       [](RunConfig& c, const std::string& v) {
         c.cued_tasks.clear();
         for (const auto& item : split_list(v)) {
           if (item != "none") c.cued_tasks.push_back(parse_task_kind(item));
         }
       }},
      size_key("pretrain.cued_examples", FIELD(cued_examples)),
      u64_key("pretrain.cued_seed", FIELD(cued_seed)),

      string_key("task.name", FIELD(task.name)),
      {"task.kind", [](const RunConfig& c) { return std::string(task_kind_name(c.task.kind)); },
       [](RunConfig& c, const std::string& v) { c.task.kind = parse_task_kind(v); }},
      size_key("task.min_len", FIELD(task.min_len)),
      size_key("task.max_len", FIELD(task.max_len)),
      size_key("task.train_size", FIELD(task.train_size)),
      size_key("task.dev_size", FIELD(task.dev_size)),
      u64_key("task.seed", FIELD(task.seed)),
      string_key("task.train_path", FIELD(train_path)),
      string_key("task.dev_path", FIELD(dev_path)),
      size_key("task.shots", FIELD(shots)),
      u64_key("task.shots_seed", FIELD(shots_seed)),

      size_key("prompt.length", FIELD(prompt_length)),
      size_key("prompt.pieces", FIELD(pieces)),
      {"prompt.init", [](const RunConfig& c) { return std::string(init_kind_name(c.init)); },
       [](RunConfig& c, const std::string& v) { c.init = parse_init_kind(v); }},
      double_key("prompt.uniform_bound", FIELD(uniform_bound)),

      {"optimizer.kind",
       [](const RunConfig& c) { return std::string(optimizer_kind_name(c.optimizer.kind)); },
       [](RunConfig& c, const std::string& v) { c.optimizer.kind = parse_optimizer_kind(v); }},
      double_key("optimizer.learning_rate", FIELD(optimizer.learning_rate)),
      double_key("optimizer.weight_decay", FIELD(optimizer.weight_decay)),
      double_key("optimizer.clip_threshold", FIELD(optimizer.clip_threshold)),
      double_key("optimizer.decay_exponent", FIELD(optimizer.decay_exponent)),

      size_key("train.epochs", FIELD(epochs)),
      size_key("train.batch_size", FIELD(batch_size)),

      ratios_key("prune.token_ratios", FIELD(schedule.token_ratios)),
      ratios_key("prune.piece_ratios", FIELD(schedule.piece_ratios)),
      {"prune.rule", [](const RunConfig& c) { return std::string(selection_rule_name(c.schedule.rule)); },
       [](RunConfig& c, const std::string& v) { c.schedule.rule = parse_selection_rule(v); }},
      {"prune.aggregation",
       [](const RunConfig& c) { return std::string(aggregation_name(c.aggregation)); },
       [](RunConfig& c, const std::string& v) { c.aggregation = parse_aggregation(v); }},
      size_key("prune.retrain_epochs", FIELD(retrain_epochs)),
      double_key("baselines.mask_ratio", FIELD(mask_ratio)),

      {"run.seeds",
       [](const RunConfig& c) {
         return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
       },
       [](RunConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& item : split_list(v)) c.seeds.push_back(to_u64(item));
       }},
  };
  return table;
}

#undef FIELD

std::string render(const RunConfig& c, bool with_seeds) {
  std::string out;
  for (const Key& k : keys()) {
    if (!with_seeds && std::string_view(k.name) == "run.seeds") continue;
    out += fmt::format("{} = {}\n", k.name, k.get(c));
  }
  return out;
}

}  // namespace

int RunConfig::target_cue() const {
  for (std::size_t i = 0; i < cued_tasks.size(); ++i) {
    if (cued_tasks[i] == task.kind) return cue_token(i);
  }
  return -1;
}

void RunConfig::validate() const {
  backbone.validate(pieces);
  if (prompt_length == 0) throw ConfigError("prompt.length must be at least 1");
  if (pieces == 0 || backbone.embed_dim % pieces != 0) {
    throw ConfigError("prompt.pieces = " + std::to_string(pieces) +
                      " must divide backbone.embed_dim = " + std::to_string(backbone.embed_dim));
  }
  if (init == InitKind::RandomUniform && !(uniform_bound > 0.0)) {
    throw ConfigError("prompt.uniform_bound must be positive for random_uniform init");
  }
  if (init == InitKind::SampledVocab && prompt_length > backbone.vocab_size - 1) {
    throw CapacityError("prompt.length = " + std::to_string(prompt_length) +
                        " exceeds the " + std::to_string(backbone.vocab_size - 1) +
                        " sampleable vocabulary rows");
  }
  task.validate();
  if (prompt_length + task.max_len > backbone.max_seq_len) {
    throw ConfigError("prompt.length + task.max_len = " +
                      std::to_string(prompt_length + task.max_len) +
                      " exceeds backbone.max_seq_len = " + std::to_string(backbone.max_seq_len));
  }
  if (cued_tasks.size() >= backbone.vocab_size / 2) {
    throw ConfigError("pretrain.cued_tasks: too many cue tokens for the vocabulary");
  }
  if (!cued_tasks.empty() && cued_examples == 0) {
    throw ConfigError("pretrain.cued_examples must be positive when cued tasks are set");
  }
  std::set<TaskKind> seen;
  for (TaskKind k : cued_tasks) {
    if (!seen.insert(k).second) {
      throw ConfigError(std::string("pretrain.cued_tasks lists '") + task_kind_name(k) + "' twice");
    }
    TaskSpec s = task;
    s.kind = k;
    s.train_size = cued_examples;
    s.validate();
  }
  if (corpus_size == 0) throw ConfigError("pretrain.corpus_size must be positive");
  if (corpus_min_len == 0 || corpus_min_len > corpus_max_len ||
      corpus_max_len > backbone.max_seq_len) {
    throw ConfigError("pretrain.corpus_min_len/max_len must satisfy 1 <= min <= max <= max_seq_len");
  }
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be nonnegative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  schedule.validate();
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw RangeError("baselines.mask_ratio must lie in [0, 1)");
  }
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (train_path.empty() != dev_path.empty()) {
    throw ConfigError("task.train_path and task.dev_path must be set together");
  }
  for (const std::string* p : {&train_path, &dev_path}) {
    if (!p->empty() && !std::filesystem::exists(*p)) {
      throw ConfigError("dataset file '" + *p + "' does not exist");
    }
  }
  if (!backbone_checkpoint.empty() && !std::filesystem::exists(backbone_checkpoint)) {
    throw ConfigError("backbone.checkpoint '" + backbone_checkpoint + "' does not exist");
  }
}

std::string RunConfig::to_text() const { return render(*this, true); }

std::string RunConfig::hash() const { return sha256_hex(render(*this, false)); }

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> assigned;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    if (trim(line).empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Key* found = nullptr;
    for (const Key& k : keys()) {
      if (key == k.name) found = &k;
    }
    if (!found) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!assigned.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      found->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  c.task.vocab_size = c.backbone.vocab_size;
  c.task.num_classes = c.backbone.num_classes;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file '" + path.string() + "' does not exist");
  }
  return parse(read_text_file(path), path.string());
}

TuneOptions RunConfig::tune_options(std::uint64_t seed) const {
  TuneOptions t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  return t;
}

RetrainOptions RunConfig::retrain_options(std::uint64_t seed) const {
  RetrainOptions r;
  r.tune = tune_options(seed);
  r.tune.epochs = retrain_epochs;
  r.optimizer = optimizer;
  r.scoring.aggregation = aggregation;
  r.scoring.batch_size = batch_size;
  return r;
}

InitStrategy RunConfig::init_strategy(std::uint64_t seed) const {
  InitStrategy s;
  s.kind = init;
  s.uniform_bound = uniform_bound;
  s.seed = seed;
  return s;
}

std::string config_template() {
  return "# xprompt run configuration. Every key is listed with its default.\n"
         "# Lists are comma separated. Lines starting with '#' are comments.\n"
         "#\n"
         "# Defaults: 20 prompt tokens split into 16 pieces, token and\n"
         "# piece ratio grids 0.1 .. 0.9, 100 epochs per stage, batch size 16,\n"
         "# weight decay 1e-5. The learning rate 0.05 is tuned for the toy\n"
         "# backbone's embedding scale.\n\n" +
         RunConfig().to_text();
}

}  // namespace xprompt
