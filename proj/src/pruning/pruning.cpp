#include "xprompt/pruning.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xprompt/errors.hpp"
#include "xprompt/parallel.hpp"
#include "xprompt/rng.hpp"

namespace xprompt {

const char* aggregation_name(Aggregation agg) {
  return agg == Aggregation::PerBatchAbs ? "per_batch_abs" : "per_example_abs";
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "per_batch_abs") return Aggregation::PerBatchAbs;
  if (name == "per_example_abs") return Aggregation::PerExampleAbs;
  throw ConfigError("unknown aggregation '" + name + "' (expected per_batch_abs or per_example_abs)");
}

const char* selection_rule_name(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::LowestScore: return "lowest";
    case SelectionRule::Random: return "random";
    case SelectionRule::Reversed: return "reversed";
  }
  return "unknown";
}

SelectionRule parse_selection_rule(const std::string& name) {
  if (name == "lowest") return SelectionRule::LowestScore;
  if (name == "random") return SelectionRule::Random;
  if (name == "reversed") return SelectionRule::Reversed;
  throw ConfigError("unknown selection rule '" + name + "' (expected lowest, random or reversed)");
}

// ---------------------------------------------------------------------------
// Scoring

ImportanceReport score_masks(const PromptBank& bank, const FrozenBackbone& bb,
                             const Dataset& train, const ScoreOptions& options) {
  if (train.empty()) throw DataError("importance scoring: empty dataset");
  if (options.batch_size == 0) throw ConfigError("importance scoring: batch size must be positive");
  const std::size_t m = bank.length(), k = bank.pieces();
  const std::size_t chunk =
      options.aggregation == Aggregation::PerExampleAbs ? 1 : options.batch_size;

  ImportanceReport report;
  report.aggregation = options.aggregation;
  report.token_scores.assign(m, 0.0);
  report.piece_scores = Matrix(m, k);
  std::vector<double> token_sum(m, 0.0);
  Matrix piece_sum(m, k);

  for (std::size_t begin = 0; begin < train.size(); begin += chunk) {
    const std::size_t end = std::min(train.size(), begin + chunk);
    std::vector<std::vector<int>> inputs;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      inputs.push_back(train[i].tokens);
      labels.push_back(train[i].label);
    }
    nk::Graph graph;
    BoundBackbone bound = bind(graph, bb);
    PromptNodes nodes = effective_prompt(graph, bank, {.embeddings = false, .masks = true});
    nk::LossScalar loss =
        nk::softmax_cross_entropy(forward_batch(bound, &nodes.effective, inputs), labels);
    graph.backward(loss);
    const Matrix& gt = nodes.token_mask.grad();
    const Matrix& gp = nodes.piece_mask.grad();
    for (std::size_t i = 0; i < m; ++i) {
      token_sum[i] += std::abs(gt(i, 0));
      for (std::size_t c = 0; c < k; ++c) piece_sum(i, c) += std::abs(gp(i, c));
    }
    ++report.batches_seen;
  }

  const double n = static_cast<double>(report.batches_seen);
  report.token_pruned.assign(m, 0);
  report.piece_pruned.assign(m * k, 0);
  for (std::size_t i = 0; i < m; ++i) {
    if (bank.token_live(i)) {
      report.token_scores[i] = token_sum[i] / n;
    } else {
      report.token_pruned[i] = 1;
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (bank.piece_live(i, c)) {
        report.piece_scores(i, c) = piece_sum(i, c) / n;
      } else {
        report.piece_pruned[i * k + c] = 1;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Selections

MaskSelection MaskSelection::keep_all(std::size_t m, std::size_t k) {
  MaskSelection s;
  s.token_mask.assign(m, 1);
  s.piece_mask.assign(m * k, 1);
  s.pieces = k;
  return s;
}

MaskSelection MaskSelection::from_bank(const PromptBank& bank) {
  MaskSelection s;
  s.token_mask = bank.token_mask();
  s.piece_mask = bank.piece_mask();
  s.pieces = bank.pieces();
  return s;
}

std::vector<std::size_t> MaskSelection::kept_tokens() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < token_mask.size(); ++i) {
    if (token_mask[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> MaskSelection::kept_pieces(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < pieces; ++c) {
    if (piece_live(i, c)) out.push_back(c);
  }
  return out;
}

std::size_t MaskSelection::kept_cells() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < length(); ++i) n += kept_pieces(i).size();
  return n;
}

void MaskSelection::apply_to(PromptBank& bank) const {
  if (pieces != bank.pieces()) {
    throw DimensionError("selection has " + std::to_string(pieces) + " pieces per token, bank has " +
                         std::to_string(bank.pieces()));
  }
  bank.set_masks(token_mask, piece_mask);
}

std::size_t removal_count(double ratio, std::size_t count) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw RangeError("pruning ratio " + fmt::format("{}", ratio) + " outside [0, 1)");
  }
  const double x = ratio * static_cast<double>(count);
  // 0.29 * 100 evaluates to 28.999999999999996; treat that as 29.
  return static_cast<std::size_t>(std::floor(x + 1e-9));
}

namespace {

// Picks `p` of the candidate indices to remove according to the rule.
std::vector<std::size_t> pick_removals(const std::vector<std::size_t>& candidates,
                                       const std::vector<double>& scores, std::size_t p,
                                       SelectionRule rule, std::uint64_t seed) {
  if (p == 0) return {};
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  switch (rule) {
    case SelectionRule::LowestScore:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
      break;
    case SelectionRule::Reversed:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      break;
    case SelectionRule::Random: {
      Rng rng(seed);
      order = rng.sample_without_replacement(candidates.size(), p);
      break;
    }
  }
  std::vector<std::size_t> out;
  out.reserve(p);
  for (std::size_t i = 0; i < p; ++i) out.push_back(candidates[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

void check_report(const ImportanceReport& report, const MaskSelection& base) {
  if (report.length() != base.length() || report.pieces() != base.pieces) {
    throw DimensionError("importance report (" + std::to_string(report.length()) + " tokens, " +
                         std::to_string(report.pieces()) + " pieces) does not match selection (" +
                         std::to_string(base.length()) + ", " + std::to_string(base.pieces) + ")");
  }
}

}  // namespace

MaskSelection select_tokens(const ImportanceReport& report, double ratio, SelectionRule rule,
                            std::uint64_t seed, const MaskSelection& base) {
  check_report(report, base);
  std::vector<std::size_t> live;
  std::vector<double> scores;
  for (std::size_t i = 0; i < base.length(); ++i) {
    if (!base.token_mask[i]) continue;
    live.push_back(i);
    scores.push_back(report.token_scores[i]);
  }
  const std::size_t p = removal_count(ratio, live.size());
  MaskSelection out = base;
  out.token_ratio = ratio;
  for (std::size_t i : pick_removals(live, scores, p, rule, mix_seed(seed, 0x544F4BULL))) {
    out.token_mask[i] = 0;
  }
  return out;
}

MaskSelection select_pieces(const ImportanceReport& report, double ratio, SelectionRule rule,
                            std::uint64_t seed, const MaskSelection& base) {
  check_report(report, base);
  const std::size_t k = base.pieces;
  std::vector<std::size_t> live;  // flat cell index i * k + c
  std::vector<double> scores;
  for (std::size_t i = 0; i < base.length(); ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      if (!base.piece_live(i, c)) continue;
      live.push_back(i * k + c);
      scores.push_back(report.piece_scores(i, c));
    }
  }
  const std::size_t p = removal_count(ratio, live.size());
  MaskSelection out = base;
  out.piece_ratio = ratio;
  for (std::size_t cell : pick_removals(live, scores, p, rule, mix_seed(seed, 0x504345ULL))) {
    out.piece_mask[cell] = 0;
  }
  return out;
}

void rewind(PromptBank& bank, const MaskSelection& selection, PromptOptimizer& optimizer) {
  bank.restore_snapshot();
  selection.apply_to(bank);
  optimizer.reset();
}

// ---------------------------------------------------------------------------
// Grid search

void PruneSchedule::validate() const {
  if (token_ratios.empty() || piece_ratios.empty()) {
    throw ConfigError("pruning schedule: ratio grids must be non-empty");
  }
  for (const auto* grid : {&token_ratios, &piece_ratios}) {
    for (double r : *grid) {
      if (!(r >= 0.0 && r < 1.0)) {
        throw RangeError("pruning schedule: ratio " + fmt::format("{}", r) + " outside [0, 1)");
      }
    }
  }
}

double retrain_selection(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                         const Dataset& dev, const MaskSelection& selection,
                         const RetrainOptions& options, TuneResult* log) {
  PromptOptimizer optimizer(options.optimizer, bank.length(), bank.width(), bank.pieces());
  rewind(bank, selection, optimizer);
  TuneResult r = tune(bank, bb, train, dev, options.tune, optimizer);
  const double acc = r.best_dev_acc;
  if (log) *log = std::move(r);
  return acc;
}

namespace {

PromptBank fresh_from_snapshot(const PromptBank& bank) {
  PromptBank work = bank;
  work.restore_snapshot();
  work.reset_masks();
  return work;
}

bool better_cell(const GridCell& a, const GridCell& b) {
  if (a.dev_acc != b.dev_acc) return a.dev_acc > b.dev_acc;
  if (a.kept_parameters != b.kept_parameters) return a.kept_parameters < b.kept_parameters;
  if (a.selection.token_ratio != b.selection.token_ratio) {
    return a.selection.token_ratio < b.selection.token_ratio;
  }
  return a.selection.piece_ratio < b.selection.piece_ratio;
}

}  // namespace

PruneResult hierarchical_prune(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                               const Dataset& dev, const PruneSchedule& schedule,
                               const RetrainOptions& options, std::size_t jobs) {
  schedule.validate();
  if (!bank.has_snapshot()) throw StateError("hierarchical_prune: bank has no snapshot");
  const std::size_t m = bank.length(), k = bank.pieces();
  const std::size_t nt = schedule.token_ratios.size(), np = schedule.piece_ratios.size();

  PruneResult result;
  // Token scores depend only on the snapshot, so one pass serves every cell.
  const PromptBank base_bank = fresh_from_snapshot(bank);
  result.token_report = score_masks(base_bank, bb, train, options.scoring);

  std::vector<MaskSelection> token_sel(nt);
  result.piece_reports.resize(nt);
  parallel_for(nt, jobs, [&](std::size_t t) {
    token_sel[t] = select_tokens(result.token_report, schedule.token_ratios[t], schedule.rule,
                                 schedule.seed, MaskSelection::keep_all(m, k));
    PromptBank scored = base_bank;
    token_sel[t].apply_to(scored);
    result.piece_reports[t] = score_masks(scored, bb, train, options.scoring);
  });

  result.cells.resize(nt * np);
  parallel_for(nt * np, jobs, [&](std::size_t idx) {
    const std::size_t t = idx / np, p = idx % np;
    GridCell& cell = result.cells[idx];
    cell.selection = select_pieces(result.piece_reports[t], schedule.piece_ratios[p],
                                   schedule.rule, schedule.seed, token_sel[t]);
    PromptBank work = bank;
    cell.dev_acc = retrain_selection(work, bb, train, dev, cell.selection, options, &cell.retrain);
    cell.kept_tokens = work.live_tokens();
    cell.kept_parameters = work.live_parameters();
    cell.final_embeddings = work.embeddings();
  });

  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    if (better_cell(result.cells[i], result.cells[result.best])) result.best = i;
  }
  const GridCell& best = result.best_cell();
  best.selection.apply_to(bank);
  bank.embeddings() = best.final_embeddings;
  return result;
}

MaskSelection selection_at(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                           double token_ratio, double piece_ratio, SelectionRule rule,
                           std::uint64_t seed, const ScoreOptions& scoring) {
  if (!bank.has_snapshot()) throw StateError("selection_at: bank has no snapshot");
  const PromptBank base_bank = fresh_from_snapshot(bank);
  const std::size_t m = bank.length(), k = bank.pieces();
  // Random selection never looks at scores; skip the scoring passes.
  ImportanceReport tokens, pieces;
  if (rule != SelectionRule::Random) tokens = score_masks(base_bank, bb, train, scoring);
  else tokens = ImportanceReport{std::vector<double>(m, 0.0), Matrix(m, k),
                                 std::vector<unsigned char>(m, 0),
                                 std::vector<unsigned char>(m * k, 0), 1, scoring.aggregation};
  MaskSelection sel =
      select_tokens(tokens, token_ratio, rule, seed, MaskSelection::keep_all(m, k));
  if (rule != SelectionRule::Random) {
    PromptBank scored = base_bank;
    sel.apply_to(scored);
    pieces = score_masks(scored, bb, train, scoring);
  } else {
    pieces = tokens;
  }
  return select_pieces(pieces, piece_ratio, rule, seed, sel);
}

// ---------------------------------------------------------------------------
// Baselines

double post_hoc_masking(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                        const Dataset& dev, double ratio, SelectionRule rule, std::uint64_t seed,
                        const ScoreOptions& scoring) {
  const MaskSelection original = MaskSelection::from_bank(bank);
  const ImportanceReport report = score_masks(bank, bb, train, scoring);
  const MaskSelection sel = select_tokens(report, ratio, rule, seed, original);
  sel.apply_to(bank);
  double acc = 0.0;
  try {
    acc = evaluate(bank, bb, dev);
  } catch (...) {
    original.apply_to(bank);
    throw;
  }
  original.apply_to(bank);
  return acc;
}

double length_prompt(std::size_t m_kept, std::size_t m_full, std::size_t pieces,
                     const InitStrategy& init, const FrozenBackbone& bb, const Dataset& train,
                     const Dataset& dev, const RetrainOptions& options) {
  if (m_kept < 1 || m_kept > m_full) {
    throw RangeError("length prompt: kept token count " + std::to_string(m_kept) +
                     " outside [1, " + std::to_string(m_full) + "]");
  }
  PromptBank bank = init_prompt(m_kept, bb.config().embed_dim, pieces, init, bb);
  PromptOptimizer optimizer(options.optimizer, bank.length(), bank.width(), bank.pieces());
  return tune(bank, bb, train, dev, options.tune, optimizer).best_dev_acc;
}

// ---------------------------------------------------------------------------
// Text export

std::string report_to_text(const ImportanceReport& report) {
  std::string out = fmt::format("# importance m={} k={} batches={} aggregation={}\n",
                                report.length(), report.pieces(), report.batches_seen,
                                aggregation_name(report.aggregation));
  for (std::size_t i = 0; i < report.length(); ++i) {
    out += fmt::format("token {} pruned={} score={}", i, report.token_pruned[i] ? 1 : 0,
                       report.token_scores[i]);
    for (std::size_t c = 0; c < report.pieces(); ++c) {
      out += fmt::format(" {}:{}", report.piece_pruned[i * report.pieces() + c] ? 1 : 0,
                         report.piece_scores(i, c));
    }
    out += '\n';
  }
  return out;
}

ImportanceReport report_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("importance report: empty input");
  std::size_t m = 0, k = 0, batches = 0;
  char agg[32] = {};
  if (std::sscanf(line.c_str(), "# importance m=%zu k=%zu batches=%zu aggregation=%31s", &m, &k,
                  &batches, agg) != 4) {
    throw ParseError("importance report: bad header '" + line + "'");
  }
  ImportanceReport r;
  r.batches_seen = batches;
  r.aggregation = parse_aggregation(agg);
  r.token_scores.assign(m, 0.0);
  r.token_pruned.assign(m, 0);
  r.piece_scores = Matrix(m, k);
  r.piece_pruned.assign(m * k, 0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::getline(in, line)) throw ParseError("importance report: missing token " + std::to_string(i));
    std::istringstream row(line);
    std::string word, pruned, score;
    std::size_t idx = 0;
    row >> word >> idx >> pruned >> score;
    if (word != "token" || idx != i || pruned.rfind("pruned=", 0) != 0 ||
        score.rfind("score=", 0) != 0) {
      throw ParseError("importance report: bad token line '" + line + "'");
    }
    r.token_pruned[i] = pruned.substr(7) == "1";
    r.token_scores[i] = std::stod(score.substr(6));
    for (std::size_t c = 0; c < k; ++c) {
      std::string cell;
      if (!(row >> cell) || cell.size() < 3 || cell[1] != ':') {
        throw ParseError("importance report: bad piece entry in '" + line + "'");
      }
      r.piece_pruned[i * k + c] = cell[0] == '1';
      r.piece_scores(i, c) = std::stod(cell.substr(2));
    }
  }
  return r;
}

}  // namespace xprompt
