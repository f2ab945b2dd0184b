// Command-line front end for the prompt tuning and pruning pipeline.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "xprompt/config.hpp"
#include "xprompt/errors.hpp"
#include "xprompt/harness.hpp"
#include "xprompt/storage.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("xprompt");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("XPROMPT_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honour an explicit "off".
    if (level != spdlog::level::off || std::string_view(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Soft prompt tuning with hierarchical structured pruning and rewinding"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::uint64_t> seeds;
  bool resume = false;
  std::size_t jobs = 1;
  std::string out_dir = "xprompt-out";
  std::string stop_after;
  std::vector<std::string> which = {"vanilla", "negative", "random_mask", "reversed", "random",
                                    "length"};
  std::string source;
  std::string template_path;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "Run configuration file");
    if (needs_config) opt->required();
    sub->add_option("--seed", seeds, "Override the configured seed list (repeatable)");
    sub->add_flag("--resume", resume, "Reuse matching checkpoints in the output directory");
    sub->add_option("--jobs", jobs, "Worker threads for grid cells and seeds")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and freeze the backbone");
  auto* tune = app.add_subcommand("tune", "Stage-1 prompt tuning for every seed");
  auto* prune = app.add_subcommand("prune", "Hierarchical pruning from stage-1 checkpoints");
  auto* pipeline = app.add_subcommand("pipeline", "Backbone, tuning, pruning and rewinding");
  auto* baselines = app.add_subcommand("baselines", "Masking and retraining baselines");
  auto* transfer = app.add_subcommand("transfer", "Initialize from a source prompt and retune");
  auto* report = app.add_subcommand("report", "Rebuild summary tables from metrics files");
  auto* tmpl = app.add_subcommand("template", "Write a configuration template");
  for (auto* sub : {pretrain, tune, prune, pipeline, baselines, transfer}) add_common(sub, true);
  report->add_option("--out", out_dir, "Output directory");
  pipeline->add_option("--stop-after", stop_after)->group("");
  baselines->add_option("--which", which, "Baselines to run")->delimiter(',');
  transfer->add_option("--source", source, "Source run directory or prompt checkpoint")->required();
  tmpl->add_option("path", template_path, "Destination (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (tmpl->parsed()) {
      const std::string text = xprompt::config_template();
      if (template_path.empty()) std::cout << text;
      else xprompt::write_text_file(template_path, text);
      return 0;
    }
    xprompt::RunOptions opts;
    opts.out_dir = out_dir;
    opts.resume = resume;
    opts.jobs = jobs;
    opts.stop_after = stop_after;
    if (report->parsed()) {
      std::cout << xprompt::run_report(opts);
      return 0;
    }

    xprompt::RunConfig cfg = xprompt::RunConfig::load(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    cfg.validate();

    if (pretrain->parsed()) {
      const auto bb = xprompt::prepare_backbone(cfg, opts);
      std::cout << "backbone " << bb.content_hash() << "\n";
    } else if (tune->parsed()) {
      std::cout << xprompt::metrics_table(xprompt::run_tune(cfg, opts));
    } else if (prune->parsed()) {
      xprompt::run_prune(cfg, opts);
      std::cout << xprompt::read_text_file(opts.out_dir / "metrics_table.txt");
    } else if (pipeline->parsed()) {
      xprompt::run_pipeline(cfg, opts);
      std::cout << xprompt::read_text_file(opts.out_dir / "metrics_table.txt");
    } else if (baselines->parsed()) {
      xprompt::run_baselines(cfg, opts, which);
      std::cout << xprompt::read_text_file(opts.out_dir / "baselines_table.txt");
    } else if (transfer->parsed()) {
      xprompt::run_transfer(cfg, opts, source);
      std::cout << xprompt::read_text_file(opts.out_dir / "transfer_table.txt");
    }
    return 0;
  } catch (const xprompt::StopRequested& s) {
    spdlog::info("stopped after stage '{}'", s.stage);
    return 0;
  } catch (const std::exception& e) {
    const int code = xprompt::exit_code_for(e);
    const char* kind = code == 2 ? "configuration error" : code == 3 ? "data error" : "stage failure";
    spdlog::error("{} in stage '{}': {}", kind, xprompt::last_stage(), e.what());
    return code;
  }
}
