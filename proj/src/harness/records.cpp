#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "xprompt/errors.hpp"
#include "xprompt/harness.hpp"
#include "xprompt/storage.hpp"

namespace xprompt {

std::string exact_percentage(std::size_t count, std::size_t total) {
  if (total == 0) throw DataError("percentage of an empty parameter budget");
  // count * 100 / total in units of 1e-4 percent, rounded half-up.
  using u128 = unsigned __int128;
  const u128 scaled = static_cast<u128>(count) * 1000000u;
  const u128 units = (2 * scaled + total) / (2 * static_cast<u128>(total));
  const auto whole = static_cast<unsigned long long>(units / 10000);
  const auto frac = static_cast<unsigned long long>(units % 10000);
  return fmt::format("{}.{:04d}", whole, frac);
}

ParamCount param_count(std::size_t m, std::size_t e, const MaskSelection& selection) {
  const std::size_t k = selection.pieces;
  if (k == 0 || e % k != 0) {
    throw DataError("selection with " + std::to_string(k) + " pieces does not split width " +
                    std::to_string(e));
  }
  if (selection.token_mask.size() != m || selection.piece_mask.size() != m * k) {
    throw DataError("selection covers " + std::to_string(selection.token_mask.size()) +
                    " tokens and " + std::to_string(selection.piece_mask.size()) +
                    " pieces; expected " + std::to_string(m) + " and " + std::to_string(m * k));
  }
  ParamCount out;
  out.count = selection.kept_cells() * (e / k);
  out.total = m * e;
  out.percentage = exact_percentage(out.count, out.total);
  return out;
}

// ---------------------------------------------------------------------------

std::string metrics_to_text(const std::vector<MetricsRecord>& records) {
  std::string out;
  for (const MetricsRecord& r : records) {
    out += fmt::format(
        "stage={} seed={} token_ratio={} piece_ratio={} dev_acc={} kept_tokens={} "
        "kept_parameters={} percentage={}\n",
        r.stage, r.seed, r.token_ratio, r.piece_ratio, r.dev_acc, r.kept_tokens,
        r.kept_parameters, r.percentage);
  }
  return out;
}

std::vector<MetricsRecord> metrics_from_text(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::map<std::string, std::string> fields;
    std::istringstream words(line);
    std::string word;
    while (words >> word) {
      const auto eq = word.find('=');
      if (eq == std::string::npos) {
        throw ParseError("metrics line " + std::to_string(line_no) + ": bad field '" + word + "'");
      }
      fields[word.substr(0, eq)] = word.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
      auto it = fields.find(key);
      if (it == fields.end()) {
        throw ParseError("metrics line " + std::to_string(line_no) + ": missing " + key);
      }
      return it->second;
    };
    MetricsRecord r;
    try {
      r.stage = get("stage");
      r.seed = std::stoull(get("seed"));
      r.token_ratio = std::stod(get("token_ratio"));
      r.piece_ratio = std::stod(get("piece_ratio"));
      r.dev_acc = std::stod(get("dev_acc"));
      r.kept_tokens = std::stoull(get("kept_tokens"));
      r.kept_parameters = std::stoull(get("kept_parameters"));
      r.percentage = get("percentage");
    } catch (const std::invalid_argument&) {
      throw ParseError("metrics line " + std::to_string(line_no) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string metrics_table(const std::vector<MetricsRecord>& records) {
  std::string out = fmt::format("{:<12} {:>6} {:>7} {:>7} {:>8} {:>7} {:>10} {:>10}\n", "stage",
                                "seed", "tok_r", "pc_r", "dev_acc", "tokens", "params", "percent");
  for (const MetricsRecord& r : records) {
    out += fmt::format("{:<12} {:>6} {:>7.2f} {:>7.2f} {:>8.4f} {:>7} {:>10} {:>10}\n", r.stage,
                       r.seed, r.token_ratio, r.piece_ratio, r.dev_acc, r.kept_tokens,
                       r.kept_parameters, r.percentage);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> scale_to_max(const std::vector<double>& row) {
  const double hi = *std::max_element(row.begin(), row.end());
  const double lo = *std::min_element(row.begin(), row.end());
  std::vector<double> out(row.size(), 100.0);
  if (hi == lo) return out;
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] == hi ? 100.0 : 100.0 * row[i] / hi;
  return out;
}

}  // namespace

std::string saliency_to_text(const ImportanceReport& report, const MaskSelection& selection) {
  const std::size_t m = report.length(), k = report.pieces();
  if (selection.length() != m || selection.pieces != k) {
    throw DimensionError("saliency export: report and selection shapes differ");
  }
  std::string out = fmt::format("# saliency m={} k={} token_ratio={} piece_ratio={}\n", m, k,
                                selection.token_ratio, selection.piece_ratio);
  const auto token_norm = scale_to_max(report.token_scores);
  for (std::size_t i = 0; i < m; ++i) {
    const bool token_pruned = selection.token_mask[i] == 0;
    out += fmt::format("token {} pruned={} score={} norm={:.2f}\n", i, token_pruned ? "true" : "false",
                       report.token_scores[i], token_norm[i]);
    std::vector<double> row(k);
    for (std::size_t c = 0; c < k; ++c) row[c] = report.piece_scores(i, c);
    const auto piece_norm = scale_to_max(row);
    for (std::size_t c = 0; c < k; ++c) {
      out += fmt::format("piece {} {} pruned={} score={} norm={:.2f}\n", i, c,
                         selection.piece_live(i, c) ? "false" : "true", row[c], piece_norm[c]);
    }
  }
  return out;
}

void export_saliency(const ImportanceReport& report, const MaskSelection& selection,
                     const std::filesystem::path& path) {
  write_text_file(path, saliency_to_text(report, selection));
}

ImportanceReport merged_report(const ImportanceReport& token_report,
                               const ImportanceReport& piece_report) {
  if (token_report.length() != piece_report.length() ||
      token_report.pieces() != piece_report.pieces()) {
    throw DimensionError("merged_report: report shapes differ");
  }
  ImportanceReport out = token_report;
  const std::size_t k = out.pieces();
  for (std::size_t i = 0; i < out.length(); ++i) {
    if (piece_report.token_pruned[i]) continue;  // keep the pre-prune piece scores
    for (std::size_t c = 0; c < k; ++c) {
      out.piece_scores(i, c) = piece_report.piece_scores(i, c);
      out.piece_pruned[i * k + c] = piece_report.piece_pruned[i * k + c];
    }
  }
  return out;
}

}  // namespace xprompt
