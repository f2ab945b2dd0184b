#pragma once

// Small backbones, tasks and prompts shared by the unit and acceptance tests.

#include <vector>

#include "xprompt/backbone.hpp"
#include "xprompt/graph.hpp"
#include "xprompt/prompt.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/tasks.hpp"

namespace xprompt::testing {

inline BackboneConfig micro_config(std::size_t e = 8, std::size_t layers = 1, std::uint64_t seed = 1) {
  BackboneConfig cfg;
  cfg.vocab_size = 16;
  cfg.embed_dim = e;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.ffn_dim = 2 * e;
  cfg.max_seq_len = 16;
  cfg.num_classes = 2;
  cfg.seed = seed;
  // Larger weights than the training default so that gradients through the
  // masks are well above rounding noise.
  cfg.init_std = 0.3;
  return cfg;
}

inline FrozenBackbone micro_backbone(std::size_t e = 8, std::size_t layers = 1,
                                     std::uint64_t seed = 1) {
  FrozenBackbone bb = FrozenBackbone::init(micro_config(e, layers, seed));
  bb.freeze();
  return bb;
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

inline PromptBank random_bank(std::size_t m, std::size_t e, std::size_t k, std::uint64_t seed,
                              double scale = 1.0) {
  Rng rng(seed);
  return PromptBank(random_matrix(rng, m, e, scale), k);
}

inline Dataset micro_batch(std::size_t n, std::size_t vocab, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    for (std::size_t t = 0; t < len; ++t) ex.tokens.push_back(1 + static_cast<int>(rng.below(vocab - 1)));
    ex.label = static_cast<int>(i % 2);
    out.push_back(ex);
  }
  return out;
}

struct MaskLoss {
  double value = 0.0;
  Matrix token_grad;  // m x 1
  Matrix piece_grad;  // m x k
};

// Batch loss with real-valued masks, built from the same operations as the
// effective prompt.
inline MaskLoss mask_loss(const FrozenBackbone& bb, const Matrix& embeddings, const Matrix& gamma,
                          const Matrix& zeta, const Dataset& batch, bool with_grad = true) {
  nk::Graph g;
  BoundBackbone bound = bind(g, bb);
  nk::Var e = g.leaf(embeddings);
  nk::Var gm = g.leaf(gamma, with_grad);
  nk::Var zt = g.leaf(zeta, with_grad);
  nk::Var prompt = nk::blockwise_scale(nk::rowwise_scale(e, gm), zt);
  std::vector<std::vector<int>> inputs;
  std::vector<int> labels;
  for (const Example& ex : batch) {
    inputs.push_back(ex.tokens);
    labels.push_back(ex.label);
  }
  nk::Var logits = forward_batch(bound, &prompt, inputs);
  nk::LossScalar loss = nk::softmax_cross_entropy(logits, labels);
  MaskLoss out;
  out.value = loss.value;
  if (with_grad) {
    g.backward(loss);
    out.token_grad = gm.grad();
    out.piece_grad = zt.grad();
  }
  return out;
}

// Pretrained toy backbone with a cued pattern task, small enough for tests
// that need prompt tuning to move dev accuracy.
struct ToySetup {
  FrozenBackbone bb;
  Splits data;
};

inline ToySetup toy_setup(std::size_t pretrain_steps = 300, std::uint64_t seed = 7) {
  BackboneConfig cfg;
  cfg.vocab_size = 24;
  cfg.embed_dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_seq_len = 32;
  cfg.seed = seed;
  FrozenBackbone bb = FrozenBackbone::init(cfg);
  const auto corpus = make_pretrain_corpus(cfg.vocab_size - 1, 400, 6, 10, 3);
  TaskSpec spec;
  spec.kind = TaskKind::PatternDetect;
  spec.vocab_size = cfg.vocab_size;
  spec.min_len = 6;
  spec.max_len = 10;
  spec.train_size = 256;
  spec.dev_size = 64;
  spec.seed = 99;
  std::vector<CuedTask> cued{{static_cast<int>(cfg.vocab_size) - 1, generate(spec).train}};
  PretrainOptions opts;
  opts.steps = pretrain_steps;
  opts.learning_rate = 3e-3;
  pretrain(bb, corpus, opts, cued);
  bb.freeze();
  spec.train_size = 64;
  spec.dev_size = 64;
  spec.seed = 11;
  return {std::move(bb), generate(spec)};
}

}  // namespace xprompt::testing
