#pragma once

// Small pre-LN transformer encoder with a classification head. It plays the
// role of the frozen pretrained model that soft prompts condition: after
// pretrain() (or freeze()) no operation mutates its weights.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xprompt/graph.hpp"
#include "xprompt/matrix.hpp"
#include "xprompt/tasks.hpp"

namespace xprompt {

// Token id reserved for masked-token pretraining; task data never uses it.
inline constexpr int kMaskToken = 0;

struct BackboneConfig {
  std::size_t vocab_size = 64;
  std::size_t embed_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_seq_len = 64;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  // Throws ConfigError. pieces is the downstream piece count k that must
  // divide the embedding width.
  void validate(std::size_t pieces = 1) const;
  std::size_t head_dim() const { return embed_dim / heads; }
};

struct EncoderLayer {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix ln2_gain, ln2_bias;
  Matrix ffn_in, ffn_in_bias;
  Matrix ffn_out, ffn_out_bias;
};

class FrozenBackbone {
 public:
  // Seeded scaled-normal initialization; the result is not frozen yet.
  static FrozenBackbone init(const BackboneConfig& cfg);

  const BackboneConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  const Matrix& token_embeddings() const { return token_embeddings_; }
  const Matrix& position_embeddings() const { return position_embeddings_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }
  const Matrix& final_ln_gain() const { return final_ln_gain_; }
  const Matrix& final_ln_bias() const { return final_ln_bias_; }
  const Matrix& head() const { return head_; }
  const Matrix& head_bias() const { return head_bias_; }

  // Visits every weight matrix with a stable name, in a fixed order.
  void for_each_weight(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  // Mutable visit; throws StateError once frozen.
  void for_each_weight_mut(const std::function<void(const std::string&, Matrix&)>& fn);

  // SHA-256 over all weight hashes in visiting order.
  std::string content_hash() const;

  void save(const std::filesystem::path& dir) const;
  static FrozenBackbone load(const std::filesystem::path& dir);

 private:
  BackboneConfig cfg_;
  bool frozen_ = false;
  Matrix token_embeddings_;     // V x e
  Matrix position_embeddings_;  // max_seq_len x e, input positions only
  std::vector<EncoderLayer> layers_;
  Matrix final_ln_gain_, final_ln_bias_;
  Matrix head_;       // e x C
  Matrix head_bias_;  // 1 x C
};

// The backbone's weights as leaves of one graph. Leaves borrow the backbone
// storage, so the backbone must outlive the graph.
struct BoundBackbone {
  const FrozenBackbone* backbone = nullptr;
  nk::Graph* graph = nullptr;
  nk::Var token_embeddings, position_embeddings;
  struct Layer {
    nk::Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, ffn_in, ffn_in_bias, ffn_out,
        ffn_out_bias;
  };
  std::vector<Layer> layers;
  nk::Var final_ln_gain, final_ln_bias, head, head_bias;
};

BoundBackbone bind(nk::Graph& graph, const FrozenBackbone& bb, bool track_gradients = false);

// Encoder output rows (after the final layer norm) for [prompt; embed(ids)].
// A prompt with zero rows is skipped. Input positions are numbered from 0
// regardless of the prompt length; prompt rows carry no position signal.
nk::Var encode(const BoundBackbone& bound, const nk::Var* prompt, std::span<const int> ids);

// Mean-pools the non-prompt rows and applies the classifier head: 1 x C.
nk::Var classify_pooled(const BoundBackbone& bound, nk::Var pooled);

// Logits (1 x C) for one input sequence conditioned on prompt rows (m x e).
// Requires a frozen backbone and m + n <= max_seq_len.
nk::Var forward_with_prompt(const BoundBackbone& bound, nk::Var prompt_rows,
                            std::span<const int> input_ids);

// Logits (b x C) for a batch of sequences sharing one prompt node. prompt may
// be null for the plain encoder.
nk::Var forward_batch(const BoundBackbone& bound, const nk::Var* prompt,
                      std::span<const std::vector<int>> inputs);

struct PretrainLog {
  std::vector<double> losses;  // one per step
};

struct PretrainOptions {
  std::size_t steps = 500;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  double mask_probability = 0.15;
  double task_weight = 1.0;  // weight of the cued classification loss
};

// A labeled task whose inputs are preceded by one cue token in the prompt
// slot during pretraining.
struct CuedTask {
  int cue = 1;
  Dataset examples;
};

// Masked-token pretraining over the corpus (tied output embeddings), plus a
// cued classification loss through the head when tasks are given; then
// freezes the backbone. The logged loss is the combined objective. Throws
// StateError if already frozen.
PretrainLog pretrain(FrozenBackbone& bb, std::span<const std::vector<int>> corpus,
                     const PretrainOptions& options, std::span<const CuedTask> tasks = {});

}  // namespace xprompt
