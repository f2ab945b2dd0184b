#include <algorithm>
#include <numeric>

#include "xprompt/errors.hpp"
#include "xprompt/prompt.hpp"
#include "xprompt/rng.hpp"

namespace xprompt {
namespace {

constexpr std::size_t kEvalChunk = 32;

std::vector<std::vector<int>> gather_tokens(const Dataset& data, std::size_t begin,
                                            std::size_t end) {
  std::vector<std::vector<int>> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(data[i].tokens);
  return out;
}

int argmax_row(const Matrix& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits(r, c) > logits(r, best)) best = c;
  }
  return static_cast<int>(best);
}

}  // namespace

std::vector<int> predict(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(data.size(), begin + kEvalChunk);
    nk::Graph graph;
    BoundBackbone bound = bind(graph, bb);
    PromptNodes nodes = effective_prompt(graph, bank, {});
    const auto inputs = gather_tokens(data, begin, end);
    nk::Var logits = forward_batch(bound, &nodes.effective, inputs);
    for (std::size_t r = 0; r < logits.rows(); ++r) out.push_back(argmax_row(logits.value(), r));
  }
  return out;
}

double evaluate(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& data) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  const auto preds = predict(bank, bb, data);
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const Example& ex : data) labels.push_back(ex.label);
  return accuracy(preds, labels);
}

double batch_loss(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& batch) {
  if (batch.empty()) throw DataError("batch_loss: empty batch");
  nk::Graph graph;
  BoundBackbone bound = bind(graph, bb);
  PromptNodes nodes = effective_prompt(graph, bank, {});
  const auto inputs = gather_tokens(batch, 0, batch.size());
  std::vector<int> labels;
  for (const Example& ex : batch) labels.push_back(ex.label);
  nk::Var logits = forward_batch(bound, &nodes.effective, inputs);
  return nk::softmax_cross_entropy(logits, labels).value;
}

TuneResult tune(PromptBank& bank, const FrozenBackbone& bb, const Dataset& train,
                const Dataset& dev, const TuneOptions& options, PromptOptimizer& optimizer) {
  if (train.empty()) throw DataError("tune: empty training set");
  if (dev.empty()) throw DataError("tune: empty dev set");
  if (options.batch_size == 0) throw ConfigError("tune: batch size must be positive");
  if (bank.width() != bb.config().embed_dim) {
    throw ConfigError("tune: prompt width " + std::to_string(bank.width()) +
                      " does not match backbone embed_dim " +
                      std::to_string(bb.config().embed_dim));
  }

  TuneResult result;
  result.initial_dev_acc = evaluate(bank, bb, dev);
  result.best_dev_acc = result.initial_dev_acc;
  result.dev_curve.push_back(result.initial_dev_acc);
  Matrix best = bank.embeddings();
  const Matrix entry_mask = bank.entry_mask();

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(options.seed, epoch));
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      std::vector<std::vector<int>> inputs;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        inputs.push_back(train[order[i]].tokens);
        labels.push_back(train[order[i]].label);
      }
      nk::Graph graph;
      BoundBackbone bound = bind(graph, bb);
      PromptNodes nodes = effective_prompt(graph, bank, {.embeddings = true, .masks = false});
      nk::Var logits = forward_batch(bound, &nodes.effective, inputs);
      nk::LossScalar loss = nk::softmax_cross_entropy(logits, labels);
      graph.backward(loss);
      optimizer.step(bank.embeddings(), nodes.embeddings.grad(), entry_mask);
      result.losses.push_back(loss.value);
      ++result.steps;
    }
    const double acc = evaluate(bank, bb, dev);
    result.dev_curve.push_back(acc);
    if (acc > result.best_dev_acc) {
      result.best_dev_acc = acc;
      result.best_epoch = epoch;
      best = bank.embeddings();
    }
  }
  bank.embeddings() = std::move(best);
  return result;
}

}  // namespace xprompt
