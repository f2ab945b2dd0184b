#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "xprompt/config.hpp"
#include "xprompt/errors.hpp"
#include "xprompt/harness.hpp"
#include "xprompt/storage.hpp"

using namespace xprompt;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
backbone.vocab_size = 16
backbone.embed_dim = 8
backbone.layers = 1
backbone.heads = 2
backbone.ffn_dim = 16
backbone.max_seq_len = 24
pretrain.steps = 30
pretrain.corpus_size = 64
pretrain.cued_examples = 32
task.kind = pattern
task.min_len = 4
task.max_len = 8
task.train_size = 32
task.dev_size = 16
prompt.length = 4
prompt.pieces = 2
train.epochs = 2
prune.token_ratios = 0, 0.5
prune.piece_ratios = 0.5
prune.retrain_epochs = 2
run.seeds = 0, 1
)";

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("xprompt-test-harness-" + name);
  fs::remove_all(dir);
  return dir;
}

RunOptions options_for(const fs::path& dir) {
  RunOptions o;
  o.out_dir = dir;
  return o;
}

MaskSelection prune_tokens(std::size_t m, std::size_t k, std::size_t kept_tokens,
                           std::size_t kept_pieces_per_token) {
  MaskSelection s = MaskSelection::keep_all(m, k);
  for (std::size_t i = kept_tokens; i < m; ++i) s.token_mask[i] = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = kept_pieces_per_token; c < k; ++c) s.piece_mask[i * k + c] = 0;
  }
  return s;
}

}  // namespace

TEST_CASE("config parsing, defaults and errors") {
  const RunConfig d;
  CHECK(d.prompt_length == 20);
  CHECK(d.pieces == 16);
  CHECK(d.schedule.token_ratios.size() == 9);
  CHECK(d.optimizer.weight_decay == 1e-5);

  const RunConfig c = RunConfig::parse(kTiny, "tiny");
  CHECK(c.backbone.embed_dim == 8);
  CHECK(c.task.vocab_size == 16);
  CHECK(c.task.kind == TaskKind::PatternDetect);
  CHECK(c.schedule.token_ratios == std::vector<double>{0, 0.5});
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK_NOTHROW(c.validate());

  // The canonical text parses back to the same configuration.
  CHECK(RunConfig::parse(c.to_text()).to_text() == c.to_text());
  CHECK(RunConfig::parse(config_template()).to_text() == RunConfig().to_text());

  auto error_of = [](const std::string& text) {
    try {
      RunConfig::parse(text, "f.cfg").validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(error_of("prompt.length = 4\nnope = 1\n").find("f.cfg:2") != std::string::npos);
  CHECK(error_of("prompt.length = 4\nprompt.length = 5\n").find("f.cfg:2") != std::string::npos);
  CHECK(error_of("prompt.length = four\n").find("prompt.length") != std::string::npos);
  CHECK(error_of("prompt.length\n").find("f.cfg:1") != std::string::npos);
  CHECK(error_of("prune.token_ratios = 0.5, 1.0\n").find("1") != std::string::npos);
  CHECK_THROWS_AS(RunConfig::parse("prune.token_ratios = 1.0\n").validate(), RangeError);
  CHECK_THROWS_AS(RunConfig::parse("prompt.pieces = 3\n").validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("backbone.vocab_size = 16\nbackbone.embed_dim = 16\n"
                                   "prompt.length = 16\nprompt.pieces = 4\n")
                      .validate(),
                  CapacityError);
  CHECK_THROWS_AS(RunConfig::parse("task.train_path = /nonexistent.jsonl\n"
                                   "task.dev_path = /nonexistent.jsonl\n")
                      .validate(),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/xprompt.cfg"), ConfigError);
}

TEST_CASE("config hash ignores only the seed list") {
  const RunConfig a = RunConfig::parse(kTiny);
  RunConfig b = a;
  b.seeds = {7};
  CHECK(a.hash() == b.hash());
  b.epochs = 3;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("parameter accounting") {
  // m = 20, e = 2048, k = 16: pruning both levels down to the listed sizes.
  struct Row {
    std::size_t tokens, pieces, count;
    const char* percentage;
  };
  for (const Row& row : {Row{20, 16, 40960, "100.0000"}, Row{6, 8, 6144, "15.0000"},
                         Row{5, 4, 2560, "6.2500"}, Row{2, 2, 512, "1.2500"}}) {
    const ParamCount pc = param_count(20, 2048, prune_tokens(20, 16, row.tokens, row.pieces));
    CHECK(pc.count == row.count);
    CHECK(pc.total == 40960);
    CHECK(pc.percentage == row.percentage);
  }
  CHECK(exact_percentage(1, 3) == "33.3333");
  CHECK(exact_percentage(2, 3) == "66.6667");
  CHECK(exact_percentage(1, 80000) == "0.0013");  // 0.00125 rounds half up
  CHECK(exact_percentage(0, 5) == "0.0000");
  CHECK_THROWS_AS(exact_percentage(1, 0), DataError);
  CHECK_THROWS_AS(param_count(20, 2048, MaskSelection::keep_all(19, 16)), DataError);
  CHECK_THROWS_AS(param_count(20, 2050, MaskSelection::keep_all(20, 16)), DataError);
}

TEST_CASE("metrics records round trip") {
  MetricsRecord r;
  r.stage = "grid";
  r.seed = 3;
  r.token_ratio = 0.3;
  r.piece_ratio = 0.1;
  r.dev_acc = 0.1 + 0.2;
  r.kept_tokens = 14;
  r.kept_parameters = 1234;
  r.percentage = "42.0000";
  const auto back = metrics_from_text(metrics_to_text({r, r}));
  REQUIRE(back.size() == 2);
  CHECK(back[1].dev_acc == r.dev_acc);
  CHECK(back[1].token_ratio == r.token_ratio);
  CHECK(back[1].stage == "grid");
  CHECK(back[1].percentage == "42.0000");
  CHECK(metrics_to_text(back) == metrics_to_text({r, r}));
  CHECK(metrics_table({r}).find("grid") != std::string::npos);
  CHECK_THROWS_AS(metrics_from_text("stage=x seed=1\n"), ParseError);
  CHECK_THROWS_AS(metrics_from_text("garbage\n"), ParseError);

  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS_AS(median({}), DataError);
}

TEST_CASE("saliency export conventions") {
  ImportanceReport r;
  r.token_scores = {2.0, 4.0, 1.0};
  r.piece_scores = Matrix::from_rows({{1, 3}, {5, 5}, {0, 0}});
  r.token_pruned = {0, 0, 0};
  r.piece_pruned.assign(6, 0);
  MaskSelection s = MaskSelection::keep_all(3, 2);
  s.token_mask[2] = 0;
  s.piece_mask[0] = 0;
  const std::string text = saliency_to_text(r, s);
  CHECK(text.find("token 1 pruned=false score=4 norm=100.00") != std::string::npos);
  CHECK(text.find("token 0 pruned=false score=2 norm=50.00") != std::string::npos);
  // Pruned structures keep their pre-prune score.
  CHECK(text.find("token 2 pruned=true score=1 norm=25.00") != std::string::npos);
  CHECK(text.find("piece 0 0 pruned=true score=1 norm=33.33") != std::string::npos);
  CHECK(text.find("piece 0 1 pruned=false score=3 norm=100.00") != std::string::npos);
  // Rows with equal scores map to 100 throughout.
  CHECK(text.find("piece 1 0 pruned=false score=5 norm=100.00") != std::string::npos);
  CHECK(text.find("piece 2 1 pruned=true score=0 norm=100.00") != std::string::npos);
  MaskSelection wrong = MaskSelection::keep_all(2, 2);
  CHECK_THROWS_AS(saliency_to_text(r, wrong), DimensionError);

  ImportanceReport later = r;
  later.piece_scores = Matrix::from_rows({{9, 9}, {7, 8}, {6, 6}});
  later.token_pruned = {0, 0, 1};
  const ImportanceReport merged = merged_report(r, later);
  CHECK(merged.token_scores == r.token_scores);
  CHECK(merged.piece_scores(1, 1) == 8);
  CHECK(merged.piece_scores(2, 0) == 0);
}

TEST_CASE("pipeline is deterministic, resumable and thread-count independent") {
  const RunConfig cfg = RunConfig::parse(kTiny);
  const fs::path a = fresh_dir("a"), b = fresh_dir("b"), c = fresh_dir("c");
  const auto outcomes = run_pipeline(cfg, options_for(a));
  REQUIRE(outcomes.size() == 2);
  CHECK(outcomes[0].grid.size() == 2);
  CHECK(fs::exists(a / "seed-0" / "stage1" / "state.txt"));
  CHECK(fs::exists(a / "seed-0" / "final" / "manifest.txt"));
  CHECK(fs::exists(a / "seed-1" / "prune" / "saliency.txt"));
  CHECK(fs::exists(a / "timings.txt"));

  // Interrupted after stage 1, then resumed.
  RunOptions stop = options_for(b);
  stop.stop_after = "stage1";
  CHECK_THROWS_AS(run_pipeline(cfg, stop), StopRequested);
  CHECK(!fs::exists(b / "metrics.txt"));
  RunOptions resume = options_for(b);
  resume.resume = true;
  run_pipeline(cfg, resume);
  CHECK(read_text_file(a / "metrics.txt") == read_text_file(b / "metrics.txt"));

  RunOptions threads = options_for(c);
  threads.jobs = 3;
  run_pipeline(cfg, threads);
  CHECK(read_text_file(a / "metrics.txt") == read_text_file(c / "metrics.txt"));

  // Resuming under a different configuration is refused.
  RunConfig changed = cfg;
  changed.epochs = 3;
  CHECK_THROWS_AS(run_pipeline(changed, resume), ConfigError);

  // The final checkpoint reproduces the recorded accuracy.
  const FrozenBackbone bb = FrozenBackbone::load(a / "backbone");
  const Splits data = prepare_data(cfg);
  const PromptBank final_bank = load_prompt(a / "seed-0" / "final").bank;
  CHECK(evaluate(final_bank, bb, data.dev) == outcomes[0].final.dev_acc);
  CHECK(final_bank.live_tokens() == outcomes[0].final.kept_tokens);

  // Rebuilding tables from the metrics file.
  fs::remove(a / "metrics_table.txt");
  CHECK(run_report(options_for(a)).find("xprompt") != std::string::npos);
  CHECK(fs::exists(a / "metrics_table.txt"));
  CHECK_THROWS_AS(run_report(options_for(fresh_dir("empty"))), DataError);

  // Baselines and transfer reuse the run.
  const auto base = run_baselines(cfg, options_for(a), {"negative", "random_mask", "reversed", "random", "length"});
  std::size_t reversed = 0;
  for (const auto& r : base) reversed += r.stage == "reversed";
  CHECK(reversed == 2);
  CHECK(fs::exists(a / "baselines.txt"));
  CHECK_THROWS_AS(run_baselines(cfg, options_for(a), {"bogus"}), ConfigError);

  RunOptions tr = options_for(fresh_dir("transfer"));
  const auto transfer = run_transfer(cfg, tr, a);
  REQUIRE(!transfer.empty());
  CHECK(transfer[0].stage == "transfer_o");
  // Tuning never ends below its starting point, which is the source prompt.
  CHECK(transfer[0].dev_acc >= outcomes[0].final.dev_acc);
  CHECK(transfer[0].kept_tokens == outcomes[0].final.kept_tokens);
  RunConfig other = cfg;
  other.prompt_length = 6;
  CHECK_THROWS_AS(run_transfer(other, tr, a), ConfigError);
}

TEST_CASE("stages report missing prerequisites") {
  const RunConfig cfg = RunConfig::parse(kTiny);
  const fs::path dir = fresh_dir("deps");
  CHECK_THROWS_AS(run_prune(cfg, options_for(dir)), DependencyError);
  CHECK_THROWS_AS(run_baselines(cfg, options_for(dir), {"negative"}), DependencyError);
  CHECK_THROWS_AS(run_transfer(cfg, options_for(dir), fresh_dir("nosource")), DependencyError);

  run_tune(cfg, options_for(dir));
  CHECK(fs::exists(dir / "tune_metrics.txt"));
  RunOptions resume = options_for(dir);
  resume.resume = true;
  const auto pruned = run_prune(cfg, resume);
  CHECK(pruned.size() == 2);
}

TEST_CASE("few-shot and file-backed data") {
  RunConfig cfg = RunConfig::parse(kTiny);
  cfg.shots = 8;
  cfg.shots_seed = 4;
  const Splits a = prepare_data(cfg);
  CHECK(a.train.size() == 8);
  CHECK(a.train == prepare_data(cfg).train);
  cfg.shots = 33;
  CHECK_THROWS_AS(prepare_data(cfg), DataError);

  const fs::path dir = fresh_dir("jsonl");
  fs::create_directories(dir);
  std::ofstream(dir / "train.jsonl") << "{\"tokens\":[3,4,5],\"label\":1}\n";
  std::ofstream(dir / "dev.jsonl") << "{\"tokens\":[3,4,5,6,7,8,9,10,11,12,13,14,15,3,4,5,6,7,8,9,10,11],\"label\":0}\n";
  cfg = RunConfig::parse(kTiny);
  cfg.train_path = (dir / "train.jsonl").string();
  cfg.dev_path = (dir / "dev.jsonl").string();
  CHECK_THROWS_AS(prepare_data(cfg), LengthError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(RangeError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(DependencyError("x")) == 3);
  CHECK(exit_code_for(StateError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 4);
}

#ifdef XPROMPT_CLI
TEST_CASE("command line exit codes") {
  const fs::path dir = fresh_dir("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "tiny.cfg") << kTiny;
  std::ofstream(dir / "bad.cfg") << "bogus = 1\n";
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(XPROMPT_CLI) + " " + args + " > " + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  const std::string out = " --out " + (dir / "run").string();
  CHECK(run("tune --config " + (dir / "tiny.cfg").string() + out) == 0);
  CHECK(run("tune --config " + (dir / "bad.cfg").string() + out) == 2);
  CHECK(read_text_file(dir / "log.txt").find("bogus") != std::string::npos);
  CHECK(run("tune") == 2);
  CHECK(run("tune --config " + (dir / "tiny.cfg").string() + " --jobs 0" + out) == 2);
  CHECK(run("baselines --config " + (dir / "tiny.cfg").string() + " --out " + (dir / "none").string()) == 3);
  CHECK(read_text_file(dir / "log.txt").find("baselines") != std::string::npos);
  CHECK(run("report --out " + (dir / "run").string()) == 0);
  CHECK(run("template " + (dir / "t.cfg").string()) == 0);
  CHECK(RunConfig::load(dir / "t.cfg").to_text() == RunConfig().to_text());
}
#endif
