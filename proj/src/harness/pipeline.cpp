#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <map>
#include <mutex>

#include "xprompt/errors.hpp"
#include "xprompt/harness.hpp"
#include "xprompt/parallel.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/storage.hpp"

namespace fs = std::filesystem;

namespace xprompt {
namespace {

std::mutex stage_mutex;
std::string stage_name = "setup";

void enter_stage(std::string name) {
  std::lock_guard<std::mutex> lock(stage_mutex);
  stage_name = std::move(name);
}

// Wall-clock seconds per named step, written apart from the metrics so the
// metrics stay reproducible byte for byte.
class Timings {
 public:
  void add(const std::string& name, double seconds) { lines_ += fmt::format("{} {:.3f}\n", name, seconds); }
  const std::string& text() const { return lines_; }

 private:
  std::string lines_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path seed_dir(const RunOptions& opts, std::uint64_t seed) {
  return opts.out_dir / fmt::format("seed-{}", seed);
}

std::string num(double v) { return fmt::format("{}", v); }

// Stage state files share one layout: the config and backbone hashes they
// were produced under, plus stage-specific fields.
Manifest stage_state(const RunConfig& cfg, const FrozenBackbone& bb, const std::string& stage) {
  Manifest m;
  m.set("stage", stage);
  m.set("config_hash", cfg.hash());
  m.set("backbone_hash", bb.content_hash());
  return m;
}

// Returns the saved state if it exists and matches; a mismatch while
// resuming is fatal.
std::optional<Manifest> load_state(const fs::path& path, const RunConfig& cfg,
                                   const FrozenBackbone& bb, const RunOptions& opts) {
  if (!opts.resume || !fs::exists(path)) return std::nullopt;
  Manifest m = Manifest::load(path);
  if (m.get("config_hash") != cfg.hash()) {
    throw ConfigError("cannot resume from " + path.string() +
                      ": the configuration changed since it was written");
  }
  if (m.get("backbone_hash") != bb.content_hash()) {
    throw ConfigError("cannot resume from " + path.string() + ": backbone hash mismatch");
  }
  return m;
}

void set_record(Manifest& m, const std::string& prefix, const MetricsRecord& r) {
  m.set(prefix + ".stage", r.stage);
  m.set(prefix + ".token_ratio", num(r.token_ratio));
  m.set(prefix + ".piece_ratio", num(r.piece_ratio));
  m.set(prefix + ".dev_acc", num(r.dev_acc));
  m.set(prefix + ".kept_tokens", r.kept_tokens);
  m.set(prefix + ".kept_parameters", r.kept_parameters);
  m.set(prefix + ".percentage", r.percentage);
}

MetricsRecord get_record(const Manifest& m, const std::string& prefix, std::uint64_t seed) {
  MetricsRecord r;
  r.stage = m.get(prefix + ".stage");
  r.seed = seed;
  r.token_ratio = std::stod(m.get(prefix + ".token_ratio"));
  r.piece_ratio = std::stod(m.get(prefix + ".piece_ratio"));
  r.dev_acc = std::stod(m.get(prefix + ".dev_acc"));
  r.kept_tokens = m.get_count(prefix + ".kept_tokens");
  r.kept_parameters = m.get_count(prefix + ".kept_parameters");
  r.percentage = m.get(prefix + ".percentage");
  return r;
}

MetricsRecord make_record(const std::string& stage, std::uint64_t seed, const PromptBank& bank,
                          double dev_acc, double token_ratio = 0.0, double piece_ratio = 0.0) {
  MetricsRecord r;
  r.stage = stage;
  r.seed = seed;
  r.token_ratio = token_ratio;
  r.piece_ratio = piece_ratio;
  r.dev_acc = dev_acc;
  r.kept_tokens = bank.live_tokens();
  const ParamCount pc = param_count(bank.length(), bank.width(), MaskSelection::from_bank(bank));
  r.kept_parameters = pc.count;
  r.percentage = pc.percentage;
  return r;
}

void maybe_stop(const RunOptions& opts, const std::string& stage) {
  if (opts.stop_after == stage) throw StopRequested{stage};
}

// ---------------------------------------------------------------------------
// Stage 1

struct Stage1 {
  PromptBank bank;  // tuned, snapshot taken
  MetricsRecord record;
};

Stage1 stage1_for_seed(const RunConfig& cfg, const RunOptions& opts, const FrozenBackbone& bb,
                       const Splits& data, std::uint64_t seed, Timings& timings,
                       std::optional<PromptBank> init = std::nullopt,
                       const std::string& subdir = "stage1", const std::string& tag = "vanilla") {
  enter_stage(fmt::format("{} (seed {})", subdir, seed));
  const fs::path dir = seed_dir(opts, seed) / subdir;
  if (auto state = load_state(dir / "state.txt", cfg, bb, opts)) {
    spdlog::info("seed {}: reusing {} checkpoint", seed, subdir);
    Stage1 s{load_prompt(dir).bank, get_record(*state, "result", seed)};
    return s;
  }
  Stopwatch sw;
  PromptBank bank = init ? std::move(*init)
                         : init_prompt(cfg.prompt_length, cfg.backbone.embed_dim, cfg.pieces,
                                       cfg.init_strategy(seed), bb);
  PromptOptimizer optimizer(cfg.optimizer, bank.length(), bank.width(), bank.pieces());
  const TuneResult r = tune(bank, bb, data.train, data.dev, cfg.tune_options(seed), optimizer);
  bank.take_snapshot();
  Stage1 s{std::move(bank), {}};
  s.record = make_record(tag, seed, s.bank, r.best_dev_acc);
  spdlog::info("seed {}: {} dev accuracy {:.4f} (best epoch {})", seed, subdir, r.best_dev_acc,
               r.best_epoch);

  save_prompt(s.bank, subdir, dir);
  std::string losses;
  for (double l : r.losses) losses += num(l) + "\n";
  write_text_file(dir / "losses.txt", losses);
  Manifest state = stage_state(cfg, bb, subdir);
  set_record(state, "result", s.record);
  state.set("best_epoch", r.best_epoch);
  state.save(dir / "state.txt");
  timings.add(fmt::format("seed-{}.{}", seed, subdir), sw.seconds());
  return s;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruneOutcome {
  std::vector<MetricsRecord> grid;
  MetricsRecord final;
  PromptBank bank;
};

PruneOutcome prune_for_seed(const RunConfig& cfg, const RunOptions& opts, const FrozenBackbone& bb,
                            const Splits& data, std::uint64_t seed, const PromptBank& tuned,
                            Timings& timings, const std::string& subdir = "prune",
                            const std::string& final_subdir = "final",
                            const std::string& tag = "xprompt") {
  enter_stage(fmt::format("{} (seed {})", subdir, seed));
  const fs::path dir = seed_dir(opts, seed) / subdir;
  if (auto state = load_state(dir / "state.txt", cfg, bb, opts)) {
    spdlog::info("seed {}: reusing {} checkpoint", seed, subdir);
    PruneOutcome out;
    const std::size_t n = state->get_count("cells");
    for (std::size_t i = 0; i < n; ++i) out.grid.push_back(get_record(*state, fmt::format("cell.{}", i), seed));
    out.final = get_record(*state, "result", seed);
    out.bank = load_prompt(seed_dir(opts, seed) / final_subdir).bank;
    return out;
  }
  Stopwatch sw;
  PromptBank bank = tuned;
  PruneSchedule schedule = cfg.schedule;
  schedule.seed = seed;
  const PruneResult pr =
      hierarchical_prune(bank, bb, data.train, data.dev, schedule, cfg.retrain_options(seed), opts.jobs);

  PruneOutcome out;
  for (const GridCell& cell : pr.cells) {
    MetricsRecord r;
    r.stage = "grid";
    r.seed = seed;
    r.token_ratio = cell.selection.token_ratio;
    r.piece_ratio = cell.selection.piece_ratio;
    r.dev_acc = cell.dev_acc;
    r.kept_tokens = cell.kept_tokens;
    const ParamCount pc = param_count(bank.length(), bank.width(), cell.selection);
    r.kept_parameters = pc.count;
    r.percentage = pc.percentage;
    out.grid.push_back(r);
  }
  const GridCell& best = pr.best_cell();
  out.final = make_record(tag, seed, bank, best.dev_acc, best.selection.token_ratio,
                          best.selection.piece_ratio);
  spdlog::info("seed {}: {} best cell token {} piece {} dev accuracy {:.4f}, {}% of parameters",
               seed, subdir, best.selection.token_ratio, best.selection.piece_ratio, best.dev_acc,
               out.final.percentage);

  // Importance reports and the saliency export for the winning cell.
  write_text_file(dir / "importance_tokens.txt", report_to_text(pr.token_report));
  std::size_t best_t = 0;
  for (std::size_t t = 0; t < schedule.token_ratios.size(); ++t) {
    write_text_file(dir / fmt::format("importance_pieces_{}.txt", t),
                    report_to_text(pr.piece_reports[t]));
    if (schedule.token_ratios[t] == best.selection.token_ratio) best_t = t;
  }
  export_saliency(merged_report(pr.token_report, pr.piece_reports[best_t]), best.selection,
                  dir / "saliency.txt");

  save_prompt(bank, final_subdir, seed_dir(opts, seed) / final_subdir);
  Manifest state = stage_state(cfg, bb, subdir);
  state.set("cells", out.grid.size());
  for (std::size_t i = 0; i < out.grid.size(); ++i) set_record(state, fmt::format("cell.{}", i), out.grid[i]);
  set_record(state, "result", out.final);
  state.save(dir / "state.txt");
  timings.add(fmt::format("seed-{}.{}", seed, subdir), sw.seconds());
  out.bank = std::move(bank);
  return out;
}

void write_outputs(const RunOptions& opts, const std::string& stem,
                   const std::vector<MetricsRecord>& records, const std::string& extra_table = {}) {
  write_text_file(opts.out_dir / (stem + ".txt"), metrics_to_text(records));
  write_text_file(opts.out_dir / (stem + "_table.txt"), metrics_table(records) + extra_table);
}

void append_timings(const RunOptions& opts, const Timings& t) {
  const fs::path path = opts.out_dir / "timings.txt";
  std::string prior = fs::exists(path) ? read_text_file(path) : std::string();
  write_text_file(path, prior + t.text());
}

std::string medians_table(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> by_stage;
  for (const MetricsRecord& r : records) {
    if (r.stage == "grid") continue;
    if (!by_stage.count(r.stage)) order.push_back(r.stage);
    by_stage[r.stage].push_back(r.dev_acc);
  }
  std::string out = fmt::format("\n{:<12} {:>6} {:>14}\n", "stage", "seeds", "median_dev_acc");
  for (const auto& s : order) {
    out += fmt::format("{:<12} {:>6} {:>14.4f}\n", s, by_stage[s].size(), median(by_stage[s]));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string last_stage() {
  std::lock_guard<std::mutex> lock(stage_mutex);
  return stage_name;
}

FrozenBackbone prepare_backbone(const RunConfig& cfg, const RunOptions& opts) {
  enter_stage("backbone");
  if (!cfg.backbone_checkpoint.empty()) {
    FrozenBackbone bb = FrozenBackbone::load(cfg.backbone_checkpoint);
    const BackboneConfig& c = bb.config();
    if (c.vocab_size != cfg.backbone.vocab_size || c.embed_dim != cfg.backbone.embed_dim ||
        c.num_classes != cfg.backbone.num_classes || c.max_seq_len != cfg.backbone.max_seq_len) {
      throw ConfigError("backbone checkpoint " + cfg.backbone_checkpoint +
                        " does not match the configured backbone shape");
    }
    return bb;
  }
  const fs::path dir = opts.out_dir / "backbone";
  if (opts.resume && fs::exists(dir / "state.txt")) {
    const Manifest state = Manifest::load(dir / "state.txt");
    if (state.get("config_hash") != cfg.hash()) {
      throw ConfigError("cannot resume from " + dir.string() +
                        ": the configuration changed since it was written");
    }
    spdlog::info("reusing pretrained backbone in {}", dir.string());
    return FrozenBackbone::load(dir);
  }
  Stopwatch sw;
  FrozenBackbone bb = FrozenBackbone::init(cfg.backbone);
  const auto corpus = make_pretrain_corpus(cfg.backbone.vocab_size - 1, cfg.corpus_size,
                                           cfg.corpus_min_len, cfg.corpus_max_len, cfg.corpus_seed);
  std::vector<CuedTask> cued;
  for (std::size_t i = 0; i < cfg.cued_tasks.size(); ++i) {
    TaskSpec spec = cfg.task;
    spec.name = task_kind_name(cfg.cued_tasks[i]);
    spec.kind = cfg.cued_tasks[i];
    spec.train_size = cfg.cued_examples;
    spec.dev_size = 1;
    spec.seed = mix_seed(cfg.cued_seed, i);
    cued.push_back({cfg.cue_token(i), generate(spec).train});
  }
  spdlog::info("pretraining backbone: {} steps, {} cued tasks", cfg.pretrain.steps, cued.size());
  const PretrainLog log = pretrain(bb, corpus, cfg.pretrain, cued);
  if (!log.losses.empty()) {
    spdlog::info("pretraining loss {:.4f} -> {:.4f}", log.losses.front(), log.losses.back());
  }
  bb.save(dir);
  std::string losses;
  for (double l : log.losses) losses += num(l) + "\n";
  write_text_file(dir / "pretrain_losses.txt", losses);
  Manifest state;
  state.set("stage", "backbone");
  state.set("config_hash", cfg.hash());
  state.set("backbone_hash", bb.content_hash());
  state.save(dir / "state.txt");
  Timings t;
  t.add("backbone", sw.seconds());
  append_timings(opts, t);
  return bb;
}

Splits prepare_data(const RunConfig& cfg) {
  enter_stage("data");
  Splits s;
  if (!cfg.train_path.empty()) {
    s.train = load_jsonl(cfg.train_path, cfg.backbone.vocab_size, cfg.backbone.num_classes);
    s.dev = load_jsonl(cfg.dev_path, cfg.backbone.vocab_size, cfg.backbone.num_classes);
    if (s.train.empty()) throw DataError("training file " + cfg.train_path + " has no examples");
    if (s.dev.empty()) throw DataError("dev file " + cfg.dev_path + " has no examples");
  } else {
    s = generate(cfg.task);
  }
  for (const Dataset* d : {&s.train, &s.dev}) {
    for (const Example& ex : *d) {
      if (cfg.prompt_length + ex.tokens.size() > cfg.backbone.max_seq_len) {
        throw LengthError("example of length " + std::to_string(ex.tokens.size()) +
                          (ex.source_line ? " (line " + std::to_string(ex.source_line) + ")" : "") +
                          " does not fit beside " + std::to_string(cfg.prompt_length) +
                          " prompt tokens in max_seq_len " +
                          std::to_string(cfg.backbone.max_seq_len));
      }
    }
  }
  if (cfg.shots > 0) s.train = fewshot_subsample(s.train, cfg.shots, cfg.shots_seed);
  return s;
}

std::vector<MetricsRecord> run_tune(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const Splits data = prepare_data(cfg);
  const FrozenBackbone bb = prepare_backbone(cfg, opts);
  maybe_stop(opts, "backbone");
  Timings timings;
  std::vector<MetricsRecord> records;
  for (std::uint64_t seed : cfg.seeds) {
    records.push_back(stage1_for_seed(cfg, opts, bb, data, seed, timings).record);
  }
  append_timings(opts, timings);
  write_outputs(opts, "tune_metrics", records);
  return records;
}

std::vector<SeedOutcome> run_prune(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const Splits data = prepare_data(cfg);
  const fs::path bdir = cfg.backbone_checkpoint.empty() ? opts.out_dir / "backbone"
                                                        : fs::path(cfg.backbone_checkpoint);
  if (!fs::exists(bdir / "manifest.txt")) {
    throw DependencyError("prune needs a backbone checkpoint in " + bdir.string() +
                          "; run 'tune' or 'pipeline' first");
  }
  const FrozenBackbone bb = FrozenBackbone::load(bdir);
  Timings timings;
  std::vector<SeedOutcome> out;
  std::vector<MetricsRecord> records;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path s1 = seed_dir(opts, seed) / "stage1";
    if (!fs::exists(s1 / "state.txt")) {
      throw DependencyError("no stage-1 checkpoint for seed " + std::to_string(seed) + " in " +
                            s1.string());
    }
    RunOptions resume_opts = opts;
    resume_opts.resume = true;
    Stage1 st = stage1_for_seed(cfg, resume_opts, bb, data, seed, timings);
    PruneOutcome p = prune_for_seed(cfg, opts, bb, data, seed, st.bank, timings);
    SeedOutcome o{seed, st.record, p.grid, p.final};
    records.push_back(o.stage1);
    records.insert(records.end(), o.grid.begin(), o.grid.end());
    records.push_back(o.final);
    out.push_back(std::move(o));
  }
  append_timings(opts, timings);
  write_outputs(opts, "metrics", records, medians_table(records));
  return out;
}

std::vector<SeedOutcome> run_pipeline(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const Splits data = prepare_data(cfg);
  write_text_file(opts.out_dir / "config.txt", cfg.to_text());
  const FrozenBackbone bb = prepare_backbone(cfg, opts);
  maybe_stop(opts, "backbone");
  Timings timings;
  std::vector<SeedOutcome> out;
  std::vector<MetricsRecord> records;
  try {
    for (std::uint64_t seed : cfg.seeds) {
      Stage1 st = stage1_for_seed(cfg, opts, bb, data, seed, timings);
      maybe_stop(opts, "stage1");
      PruneOutcome p = prune_for_seed(cfg, opts, bb, data, seed, st.bank, timings);
      maybe_stop(opts, "prune");
      SeedOutcome o{seed, st.record, p.grid, p.final};
      records.push_back(o.stage1);
      records.insert(records.end(), o.grid.begin(), o.grid.end());
      records.push_back(o.final);
      out.push_back(std::move(o));
    }
  } catch (const StopRequested&) {
    append_timings(opts, timings);
    throw;
  }
  append_timings(opts, timings);
  write_outputs(opts, "metrics", records, medians_table(records));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<MetricsRecord> run_baselines(const RunConfig& cfg, const RunOptions& opts,
                                         const std::vector<std::string>& which) {
  cfg.validate();
  static const std::vector<std::string> known = {"vanilla", "negative", "random_mask",
                                                 "reversed", "random", "length"};
  for (const auto& w : which) {
    if (std::find(known.begin(), known.end(), w) == known.end()) {
      throw ConfigError("unknown baseline '" + w +
                        "' (expected vanilla, negative, random_mask, reversed, random or length)");
    }
  }
  auto wants = [&](const char* name) {
    return std::find(which.begin(), which.end(), name) != which.end();
  };
  const Splits data = prepare_data(cfg);
  enter_stage("baselines");
  const fs::path bdir = cfg.backbone_checkpoint.empty() ? opts.out_dir / "backbone"
                                                        : fs::path(cfg.backbone_checkpoint);
  if (!fs::exists(bdir / "manifest.txt")) {
    throw DependencyError("baselines need a backbone checkpoint in " + bdir.string() +
                          "; run 'pipeline' first");
  }
  const FrozenBackbone bb = FrozenBackbone::load(bdir);
  const bool needs_prune = wants("reversed") || wants("random") || wants("length");

  // Check every prerequisite before spending time on any seed.
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path sd = seed_dir(opts, seed);
    if (!fs::exists(sd / "stage1" / "state.txt")) {
      throw DependencyError("baselines need the stage-1 checkpoint " +
                            (sd / "stage1").string() + "; run 'pipeline' or 'tune' first");
    }
    if (needs_prune && !fs::exists(sd / "prune" / "state.txt")) {
      throw DependencyError("reversed, random and length baselines need the pruning result " +
                            (sd / "prune").string() + "; run 'pipeline' or 'prune' first");
    }
  }

  std::vector<std::vector<MetricsRecord>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), opts.jobs, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    const fs::path sd = seed_dir(opts, seed);
    const Manifest s1_state = Manifest::load(sd / "stage1" / "state.txt");
    if (s1_state.get("config_hash") != cfg.hash()) {
      throw ConfigError("stage-1 checkpoint " + (sd / "stage1").string() +
                        " was written under a different configuration");
    }
    PromptBank tuned = load_prompt(sd / "stage1").bank;
    const RetrainOptions ro = cfg.retrain_options(seed);
    auto& recs = per_seed[si];
    if (wants("vanilla")) recs.push_back(get_record(s1_state, "result", seed));
    for (const char* name : {"negative", "random_mask"}) {
      if (!wants(name)) continue;
      const SelectionRule rule =
          std::string_view(name) == "negative" ? SelectionRule::LowestScore : SelectionRule::Random;
      PromptBank work = tuned;
      const double acc =
          post_hoc_masking(work, bb, data.train, data.dev, cfg.mask_ratio, rule, seed, ro.scoring);
      MaskSelection sel = MaskSelection::keep_all(work.length(), work.pieces());
      sel = select_tokens(score_masks(work, bb, data.train, ro.scoring), cfg.mask_ratio, rule, seed,
                          sel);
      sel.apply_to(work);
      recs.push_back(make_record(name, seed, work, acc, cfg.mask_ratio, 0.0));
    }
    if (needs_prune) {
      const Manifest p_state = Manifest::load(sd / "prune" / "state.txt");
      const MetricsRecord best = get_record(p_state, "result", seed);
      for (const char* name : {"reversed", "random"}) {
        if (!wants(name)) continue;
        const SelectionRule rule =
            std::string_view(name) == "reversed" ? SelectionRule::Reversed : SelectionRule::Random;
        PromptBank work = tuned;
        const MaskSelection sel = selection_at(work, bb, data.train, best.token_ratio,
                                               best.piece_ratio, rule, seed, ro.scoring);
        const double acc = retrain_selection(work, bb, data.train, data.dev, sel, ro);
        recs.push_back(make_record(name, seed, work, acc, best.token_ratio, best.piece_ratio));
      }
      if (wants("length")) {
        const double acc = length_prompt(best.kept_tokens, cfg.prompt_length, cfg.pieces,
                                         cfg.init_strategy(seed), bb, data.train, data.dev, ro);
        MetricsRecord r;
        r.stage = "length";
        r.seed = seed;
        r.dev_acc = acc;
        r.kept_tokens = best.kept_tokens;
        r.kept_parameters = best.kept_tokens * cfg.backbone.embed_dim;
        r.percentage = exact_percentage(r.kept_parameters, cfg.prompt_length * cfg.backbone.embed_dim);
        recs.push_back(r);
      }
      recs.push_back(best);
    }
    spdlog::info("seed {}: baselines done", seed);
  });

  std::vector<MetricsRecord> records;
  for (const auto& recs : per_seed) records.insert(records.end(), recs.begin(), recs.end());
  write_outputs(opts, "baselines", records, medians_table(records));
  return records;
}

// ---------------------------------------------------------------------------

std::vector<MetricsRecord> run_transfer(const RunConfig& cfg, const RunOptions& opts,
                                        const fs::path& source) {
  cfg.validate();
  const Splits data = prepare_data(cfg);
  const FrozenBackbone bb = prepare_backbone(cfg, opts);
  Timings timings;
  std::vector<MetricsRecord> records;
  for (std::uint64_t seed : cfg.seeds) {
    fs::path src = source;
    if (!fs::exists(src / "manifest.txt")) src = source / fmt::format("seed-{}", seed) / "final";
    if (!fs::exists(src / "manifest.txt")) {
      throw DependencyError("no source prompt checkpoint at " + source.string() + " or " +
                            src.string());
    }
    PromptBank init = load_prompt(src).bank;
    if (init.length() != cfg.prompt_length || init.width() != cfg.backbone.embed_dim ||
        init.pieces() != cfg.pieces) {
      throw ConfigError(fmt::format(
          "source prompt is {}x{} with {} pieces but the target expects {}x{} with {} pieces",
          init.length(), init.width(), init.pieces(), cfg.prompt_length, cfg.backbone.embed_dim,
          cfg.pieces));
    }
    init.set_snapshot(std::nullopt);

    // Transfer_o: plain tuning from the source prompt and masks.
    Stage1 plain = stage1_for_seed(cfg, opts, bb, data, seed, timings, init, "transfer_o",
                                   "transfer_o");
    records.push_back(plain.record);
    // Transfer: the full pipeline starting from the source prompt.
    Stage1 st = stage1_for_seed(cfg, opts, bb, data, seed, timings, init, "transfer_stage1",
                                "transfer_s1");
    PruneOutcome p = prune_for_seed(cfg, opts, bb, data, seed, st.bank, timings, "transfer_prune",
                                    "transfer_final", "transfer");
    records.push_back(st.record);
    records.insert(records.end(), p.grid.begin(), p.grid.end());
    records.push_back(p.final);
  }
  append_timings(opts, timings);
  write_outputs(opts, "transfer", records, medians_table(records));
  return records;
}

std::string run_report(const RunOptions& opts) {
  enter_stage("report");
  std::string out;
  bool any = false;
  for (const char* stem : {"tune_metrics", "metrics", "baselines", "transfer"}) {
    const fs::path path = opts.out_dir / (std::string(stem) + ".txt");
    if (!fs::exists(path)) continue;
    any = true;
    const auto records = metrics_from_text(read_text_file(path));
    const std::string table = metrics_table(records) + medians_table(records);
    write_text_file(opts.out_dir / (std::string(stem) + "_table.txt"), table);
    out += fmt::format("== {}\n{}\n", stem, table);
  }
  if (!any) throw DependencyError("no metrics files in " + opts.out_dir.string());
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  return 4;
}

}  // namespace xprompt
