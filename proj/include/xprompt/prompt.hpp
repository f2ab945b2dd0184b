#pragma once

// Soft prompt bank with two-level masks, its initialization strategies, the
// masked optimizers and the prompt tuning loop.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xprompt/backbone.hpp"
#include "xprompt/graph.hpp"
#include "xprompt/matrix.hpp"
#include "xprompt/tasks.hpp"

namespace xprompt {

class PromptBank {
 public:
  PromptBank() = default;
  // All masks start at 1, no snapshot.
  PromptBank(Matrix embeddings, std::size_t pieces);

  std::size_t length() const { return embeddings_.rows(); }
  std::size_t width() const { return embeddings_.cols(); }
  std::size_t pieces() const { return pieces_; }
  std::size_t piece_width() const { return embeddings_.cols() / pieces_; }

  const Matrix& embeddings() const { return embeddings_; }
  Matrix& embeddings() { return embeddings_; }

  bool token_live(std::size_t i) const { return token_mask_[i] != 0; }
  bool piece_flag(std::size_t i, std::size_t c) const { return piece_mask_[i * pieces_ + c] != 0; }
  // A piece counts only if its token is live too.
  bool piece_live(std::size_t i, std::size_t c) const { return token_live(i) && piece_flag(i, c); }
  void set_token(std::size_t i, bool live);
  void set_piece(std::size_t i, std::size_t c, bool live);
  void reset_masks();

  const std::vector<unsigned char>& token_mask() const { return token_mask_; }
  const std::vector<unsigned char>& piece_mask() const { return piece_mask_; }
  void set_masks(std::vector<unsigned char> token_mask, std::vector<unsigned char> piece_mask);

  std::size_t live_tokens() const;
  // Entries of P_e that are not masked at either level.
  std::size_t live_parameters() const;

  // m x 1 and m x k masks as doubles (raw flags, not combined).
  Matrix token_mask_matrix() const;
  Matrix piece_mask_matrix() const;
  // m x e, 1 where both the token and its piece are live.
  Matrix entry_mask() const;

  bool has_snapshot() const { return snapshot_.has_value(); }
  const std::optional<Matrix>& snapshot() const { return snapshot_; }
  void take_snapshot() { snapshot_ = embeddings_; }
  // Copies the snapshot into P_e, leaving masks untouched. Throws StateError
  // without a snapshot.
  void restore_snapshot();
  void set_snapshot(std::optional<Matrix> snapshot);

 private:
  Matrix embeddings_;
  std::size_t pieces_ = 1;
  std::vector<unsigned char> token_mask_;
  std::vector<unsigned char> piece_mask_;  // m * k, row-major
  std::optional<Matrix> snapshot_;
};

enum class InitKind { SampledVocab, RandomUniform };

struct InitStrategy {
  InitKind kind = InitKind::SampledVocab;
  double uniform_bound = 0.5;
  std::uint64_t seed = 0;
};

const char* init_kind_name(InitKind kind);
InitKind parse_init_kind(const std::string& name);

// SampledVocab copies m distinct rows of the backbone token table (never the
// mask token row); RandomUniform draws from U(-bound, bound).
PromptBank init_prompt(std::size_t m, std::size_t e, std::size_t k, const InitStrategy& strat,
                       const FrozenBackbone& bb);

// Graph nodes for one bank: the raw leaves and the masked prompt.
struct PromptNodes {
  nk::Var embeddings;  // m x e
  nk::Var token_mask;  // m x 1
  nk::Var piece_mask;  // m x k
  nk::Var effective;   // blockwise_scale(rowwise_scale(P_e, gamma), zeta)
};

struct PromptGradients {
  bool embeddings = false;
  bool masks = false;
};

PromptNodes effective_prompt(nk::Graph& graph, const PromptBank& bank, PromptGradients track);

// ---------------------------------------------------------------------------

enum class OptimizerKind { AdafactorLite, Adam, Sgd };

const char* optimizer_kind_name(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdafactorLite;
  double learning_rate = 0.05;
  double weight_decay = 1e-5;
  double clip_threshold = 1.0;   // AdafactorLite update clipping
  double decay_exponent = -0.8;  // AdafactorLite beta2_t = 1 - t^exponent
};

// Optimizer over the prompt matrix. Entries under a zero entry mask are never
// updated and never enter the statistics.
//
// AdafactorLite keeps no first moment and factors each prompt row's second
// moment over its (piece, offset-within-piece) grid: one accumulator per
// piece and one per offset. Statistics never mix rows, so masking in one row
// cannot change the update of another. Each row's update is clipped to RMS
// clip_threshold. Weight decay is decoupled: p -= lr * wd * p.
class PromptOptimizer {
 public:
  PromptOptimizer(OptimizerConfig config, std::size_t rows, std::size_t cols, std::size_t pieces);

  const OptimizerConfig& config() const { return config_; }
  std::size_t step_count() const { return steps_; }
  void reset();

  void step(Matrix& params, const Matrix& grad, const Matrix& entry_mask);

  // Accumulators for inspection: rows x pieces and rows x piece_width.
  const Matrix& piece_accumulator() const { return piece_acc_; }
  const Matrix& offset_accumulator() const { return offset_acc_; }

 private:
  void step_adafactor(Matrix& params, const Matrix& grad, const Matrix& mask);
  void step_adam(Matrix& params, const Matrix& grad, const Matrix& mask);
  void step_sgd(Matrix& params, const Matrix& grad, const Matrix& mask);

  OptimizerConfig config_;
  std::size_t rows_, cols_, pieces_;
  std::size_t steps_ = 0;
  Matrix piece_acc_, offset_acc_;
  Matrix first_moment_, second_moment_;
};

// ---------------------------------------------------------------------------

struct TuneOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct TuneResult {
  double initial_dev_acc = 0.0;
  double best_dev_acc = 0.0;
  std::size_t best_epoch = 0;  // 0 = the untuned bank won
  std::size_t steps = 0;
  std::vector<double> losses;       // one per optimizer step
  std::vector<double> dev_curve;    // accuracy after each epoch, epoch 0 first
};

// Prompt tuning with early stopping on dev accuracy. Only live entries of P_e
// move; the bank ends at its best-dev state (earliest on ties). Throws
// DataError for an empty training or dev set.
TuneResult tune(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                const Dataset& dev, const TuneOptions& options, PromptOptimizer& optimizer);

std::vector<int> predict(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& data);
double evaluate(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& data);
// Mean cross-entropy of the masked prompt model over the examples.
double batch_loss(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& batch);

// ---------------------------------------------------------------------------
// Prompt checkpoint: manifest.txt (m, e, k, stage tag, masks as 0/1 strings,
// blob hashes) plus embeddings.f64 and, when present, snapshot.f64.

void save_prompt(const PromptBank& bank, const std::string& stage,
                 const std::filesystem::path& dir);
struct LoadedPrompt {
  PromptBank bank;
  std::string stage;
};
LoadedPrompt load_prompt(const std::filesystem::path& dir);

}  // namespace xprompt
