#include <algorithm>

#include "xprompt/errors.hpp"
#include "xprompt/prompt.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/storage.hpp"

namespace xprompt {

PromptBank::PromptBank(Matrix embeddings, std::size_t pieces)
    : embeddings_(std::move(embeddings)), pieces_(pieces) {
  if (pieces_ == 0 || embeddings_.cols() % pieces_ != 0) {
    throw ConfigError("prompt width " + std::to_string(embeddings_.cols()) +
                      " is not divisible by piece count " + std::to_string(pieces_));
  }
  token_mask_.assign(embeddings_.rows(), 1);
  piece_mask_.assign(embeddings_.rows() * pieces_, 1);
}

void PromptBank::set_token(std::size_t i, bool live) {
  if (i >= length()) {
    throw IndexError("token " + std::to_string(i) + " outside a prompt of " +
                     std::to_string(length()));
  }
  token_mask_[i] = live ? 1 : 0;
}

void PromptBank::set_piece(std::size_t i, std::size_t c, bool live) {
  if (i >= length() || c >= pieces_) {
    throw IndexError("piece (" + std::to_string(i) + ", " + std::to_string(c) + ") outside " +
                     std::to_string(length()) + "x" + std::to_string(pieces_));
  }
  piece_mask_[i * pieces_ + c] = live ? 1 : 0;
}

void PromptBank::reset_masks() {
  std::fill(token_mask_.begin(), token_mask_.end(), 1);
  std::fill(piece_mask_.begin(), piece_mask_.end(), 1);
}

void PromptBank::set_masks(std::vector<unsigned char> token_mask,
                           std::vector<unsigned char> piece_mask) {
  if (token_mask.size() != length() || piece_mask.size() != length() * pieces_) {
    throw DimensionError("mask sizes " + std::to_string(token_mask.size()) + "/" +
                         std::to_string(piece_mask.size()) + " do not match a " +
                         std::to_string(length()) + "-token bank with " + std::to_string(pieces_) +
                         " pieces");
  }
  for (auto& f : token_mask) f = f ? 1 : 0;
  for (auto& f : piece_mask) f = f ? 1 : 0;
  token_mask_ = std::move(token_mask);
  piece_mask_ = std::move(piece_mask);
}

std::size_t PromptBank::live_tokens() const {
  return static_cast<std::size_t>(std::count(token_mask_.begin(), token_mask_.end(), 1));
}

std::size_t PromptBank::live_parameters() const {
  std::size_t pieces_live = 0;
  for (std::size_t i = 0; i < length(); ++i) {
    for (std::size_t c = 0; c < pieces_; ++c) pieces_live += piece_live(i, c);
  }
  return pieces_live * piece_width();
}

Matrix PromptBank::token_mask_matrix() const {
  Matrix m(length(), 1);
  for (std::size_t i = 0; i < length(); ++i) m(i, 0) = token_mask_[i];
  return m;
}

Matrix PromptBank::piece_mask_matrix() const {
  Matrix m(length(), pieces_);
  for (std::size_t i = 0; i < length(); ++i) {
    for (std::size_t c = 0; c < pieces_; ++c) m(i, c) = piece_mask_[i * pieces_ + c];
  }
  return m;
}

Matrix PromptBank::entry_mask() const {
  Matrix m(length(), width());
  const std::size_t w = piece_width();
  for (std::size_t i = 0; i < length(); ++i) {
    for (std::size_t j = 0; j < width(); ++j) m(i, j) = piece_live(i, j / w) ? 1.0 : 0.0;
  }
  return m;
}

void PromptBank::restore_snapshot() {
  if (!snapshot_) throw StateError("restore_snapshot: no snapshot has been taken");
  embeddings_ = *snapshot_;
}

void PromptBank::set_snapshot(std::optional<Matrix> snapshot) {
  if (snapshot && !snapshot->same_shape(embeddings_)) {
    throw DimensionError("snapshot shape " + snapshot->shape_string() + " does not match prompt " +
                         embeddings_.shape_string());
  }
  snapshot_ = std::move(snapshot);
}

const char* init_kind_name(InitKind kind) {
  return kind == InitKind::SampledVocab ? "sampled_vocab" : "random_uniform";
}

InitKind parse_init_kind(const std::string& name) {
  if (name == "sampled_vocab") return InitKind::SampledVocab;
  if (name == "random_uniform") return InitKind::RandomUniform;
  throw ConfigError("unknown prompt init '" + name + "' (expected sampled_vocab or random_uniform)");
}

PromptBank init_prompt(std::size_t m, std::size_t e, std::size_t k, const InitStrategy& strat,
                       const FrozenBackbone& bb) {
  if (m == 0) throw ConfigError("prompt length must be at least 1");
  if (k == 0 || e % k != 0) {
    throw ConfigError("prompt width " + std::to_string(e) + " is not divisible by piece count " +
                      std::to_string(k));
  }
  if (e != bb.config().embed_dim) {
    throw ConfigError("prompt width " + std::to_string(e) + " does not match backbone embed_dim " +
                      std::to_string(bb.config().embed_dim));
  }
  Rng rng(mix_seed(strat.seed, 0x50524F4D5054ULL));
  Matrix p(m, e);
  if (strat.kind == InitKind::SampledVocab) {
    const std::size_t usable = bb.config().vocab_size - 1;  // skip the mask token row
    if (m > usable) {
      throw CapacityError("cannot sample " + std::to_string(m) + " distinct rows from " +
                          std::to_string(usable) + " vocabulary embeddings");
    }
    const auto rows = rng.sample_without_replacement(usable, m);
    const Matrix& table = bb.token_embeddings();
    for (std::size_t i = 0; i < m; ++i) {
      auto src = table.row(rows[i] + 1);
      std::copy(src.begin(), src.end(), p.row(i).begin());
    }
  } else {
    if (!(strat.uniform_bound > 0.0)) {
      throw ConfigError("random_uniform init needs a positive bound, got " +
                        std::to_string(strat.uniform_bound));
    }
    for (double& v : p.values()) v = rng.uniform(-strat.uniform_bound, strat.uniform_bound);
  }
  return PromptBank(std::move(p), k);
}

PromptNodes effective_prompt(nk::Graph& graph, const PromptBank& bank, PromptGradients track) {
  PromptNodes n;
  n.embeddings = graph.borrow(bank.embeddings(), track.embeddings);
  n.token_mask = graph.leaf(bank.token_mask_matrix(), track.masks);
  n.piece_mask = graph.leaf(bank.piece_mask_matrix(), track.masks);
  n.effective = nk::blockwise_scale(nk::rowwise_scale(n.embeddings, n.token_mask), n.piece_mask);
  return n;
}

void save_prompt(const PromptBank& bank, const std::string& stage,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.set("format", "xprompt-prompt-v1");
  m.set("m", bank.length());
  m.set("e", bank.width());
  m.set("k", bank.pieces());
  m.set("stage", stage);
  m.set("token_mask", flags_to_string(bank.token_mask()));
  std::string pieces;
  for (std::size_t i = 0; i < bank.length(); ++i) {
    if (i) pieces += ',';
    for (std::size_t c = 0; c < bank.pieces(); ++c) pieces += bank.piece_flag(i, c) ? '1' : '0';
  }
  m.set("piece_mask", pieces);
  write_blob(dir / "embeddings.f64", bank.embeddings());
  m.set("embeddings.sha256", matrix_hash(bank.embeddings()));
  m.set("has_snapshot", bank.has_snapshot());
  if (bank.has_snapshot()) {
    write_blob(dir / "snapshot.f64", *bank.snapshot());
    m.set("snapshot.sha256", matrix_hash(*bank.snapshot()));
  }
  m.save(dir / "manifest.txt");
}

LoadedPrompt load_prompt(const std::filesystem::path& dir) {
  const Manifest m = Manifest::load(dir / "manifest.txt");
  if (m.get("format") != "xprompt-prompt-v1") {
    throw ParseError(dir.string() + ": unsupported prompt format '" + m.get("format") + "'");
  }
  const std::size_t rows = m.get_count("m"), cols = m.get_count("e"), k = m.get_count("k");
  Matrix p = read_blob(dir / "embeddings.f64", rows, cols);
  if (matrix_hash(p) != m.get("embeddings.sha256")) {
    throw ParseError(dir.string() + ": prompt embeddings hash mismatch");
  }
  PromptBank bank(std::move(p), k);
  const std::string& tm = m.get("token_mask");
  const std::string& pm = m.get("piece_mask");
  if (tm.size() != rows) throw ParseError(dir.string() + ": token_mask length mismatch");
  std::vector<unsigned char> token_mask(rows), piece_mask;
  for (std::size_t i = 0; i < rows; ++i) {
    if (tm[i] != '0' && tm[i] != '1') throw ParseError(dir.string() + ": bad token_mask flag");
    token_mask[i] = tm[i] == '1';
  }
  for (char ch : pm) {
    if (ch == ',') continue;
    if (ch != '0' && ch != '1') throw ParseError(dir.string() + ": bad piece_mask flag");
    piece_mask.push_back(ch == '1');
  }
  if (piece_mask.size() != rows * k) throw ParseError(dir.string() + ": piece_mask length mismatch");
  bank.set_masks(std::move(token_mask), std::move(piece_mask));
  if (m.get_bool("has_snapshot")) {
    Matrix snap = read_blob(dir / "snapshot.f64", rows, cols);
    if (matrix_hash(snap) != m.get("snapshot.sha256")) {
      throw ParseError(dir.string() + ": prompt snapshot hash mismatch");
    }
    bank.set_snapshot(std::move(snap));
  }
  return LoadedPrompt{std::move(bank), m.get("stage")};
}

}  // namespace xprompt
