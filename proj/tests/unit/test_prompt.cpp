#include <doctest.h>

#include <filesystem>

#include "support/fixtures.hpp"
#include "xprompt/errors.hpp"
#include "xprompt/prompt.hpp"

using namespace xprompt;
using namespace xprompt::testing;

namespace {

double effective_loss(const PromptBank& bank, const FrozenBackbone& bb, const Dataset& batch) {
  return batch_loss(bank, bb, batch);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xprompt-test-prompt-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("init_prompt shapes and strategies") {
  const FrozenBackbone bb = micro_backbone();
  InitStrategy vocab;
  vocab.seed = 4;
  const PromptBank a = init_prompt(5, 8, 4, vocab, bb);
  CHECK(a.length() == 5);
  CHECK(a.width() == 8);
  CHECK(a.piece_width() == 2);
  CHECK(a.live_tokens() == 5);
  CHECK(a.live_parameters() == 40);
  // Sampled rows are copies of vocabulary embeddings.
  for (std::size_t i = 0; i < 5; ++i) {
    bool found = false;
    for (std::size_t v = 0; v < bb.config().vocab_size && !found; ++v) {
      bool same = true;
      for (std::size_t j = 0; j < 8; ++j) same = same && a.embeddings()(i, j) == bb.token_embeddings()(v, j);
      found = same;
    }
    CHECK(found);
  }
  CHECK(init_prompt(5, 8, 4, vocab, bb).embeddings().bitwise_equal(a.embeddings()));

  InitStrategy uniform;
  uniform.kind = InitKind::RandomUniform;
  uniform.uniform_bound = 0.25;
  const PromptBank u = init_prompt(3, 8, 2, uniform, bb);
  for (double v : u.embeddings().values()) CHECK(std::abs(v) <= 0.25);

  CHECK_THROWS_AS(init_prompt(3, 8, 3, vocab, bb), ConfigError);
  CHECK_THROWS_AS(init_prompt(3, 6, 2, vocab, bb), ConfigError);
  CHECK_THROWS_AS(init_prompt(0, 8, 2, vocab, bb), ConfigError);
  CHECK(parse_init_kind(init_kind_name(InitKind::RandomUniform)) == InitKind::RandomUniform);
  CHECK_THROWS_AS(parse_init_kind("zeros"), ConfigError);
}

TEST_CASE("all-ones masks leave the prompt untouched") {
  const FrozenBackbone bb = micro_backbone();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const PromptBank bank = random_bank(4, 8, 4, s);
    const Dataset batch = micro_batch(3, 16, 5, 100 + s);
    nk::Graph g;
    PromptNodes n = effective_prompt(g, bank, {});
    CHECK(n.effective.value().bitwise_equal(bank.embeddings()));

    nk::Graph g2;
    BoundBackbone bound = bind(g2, bb);
    nk::Var raw = g2.borrow(bank.embeddings());
    std::vector<std::vector<int>> inputs;
    for (const Example& ex : batch) inputs.push_back(ex.tokens);
    const Matrix plain = forward_batch(bound, &raw, inputs).value();
    nk::Graph g3;
    BoundBackbone bound3 = bind(g3, bb);
    PromptNodes n3 = effective_prompt(g3, bank, {});
    CHECK(forward_batch(bound3, &n3.effective, inputs).value().bitwise_equal(plain));
  }
}

TEST_CASE("masked prompt matches a literally zeroed prompt") {
  const FrozenBackbone bb = micro_backbone();
  PromptBank bank = random_bank(4, 8, 4, 3);
  bank.set_token(1, false);
  bank.set_piece(2, 3, false);
  bank.set_piece(0, 0, false);
  PromptBank zeroed(bank.embeddings(), 4);
  for (std::size_t j = 0; j < 8; ++j) zeroed.embeddings()(1, j) = 0.0;
  for (std::size_t j = 6; j < 8; ++j) zeroed.embeddings()(2, j) = 0.0;
  for (std::size_t j = 0; j < 2; ++j) zeroed.embeddings()(0, j) = 0.0;
  const Dataset batch = micro_batch(4, 16, 6, 9);
  CHECK(std::abs(effective_loss(bank, bb, batch) - effective_loss(zeroed, bb, batch)) <= 1e-12);
  CHECK(bank.live_tokens() == 3);
  CHECK(bank.live_parameters() == 32 - 8 - 2 - 2);
}

TEST_CASE("effective prompt equals the mask composition with continuous masks") {
  const FrozenBackbone bb = micro_backbone();
  PromptBank bank = random_bank(3, 8, 2, 5);
  bank.set_piece(1, 0, false);
  const Dataset batch = micro_batch(2, 16, 4, 2);
  const MaskLoss ref = mask_loss(bb, bank.embeddings(), bank.token_mask_matrix(),
                                 bank.piece_mask_matrix(), batch, false);
  CHECK(ref.value == effective_loss(bank, bb, batch));
}

TEST_CASE("mask gradient agrees with a finite difference of the mask") {
  const FrozenBackbone bb = micro_backbone();
  const PromptBank bank = random_bank(4, 8, 4, 12);
  const Dataset batch = micro_batch(4, 16, 6, 13);
  const Matrix gamma(4, 1, 1.0), zeta(4, 4, 1.0);
  const MaskLoss base = mask_loss(bb, bank.embeddings(), gamma, zeta, batch);
  const double eps = 1e-4;
  for (std::size_t i = 0; i < 4; ++i) {
    Matrix g = gamma;
    g(i, 0) -= eps;
    const double delta = base.value - mask_loss(bb, bank.embeddings(), g, zeta, batch, false).value;
    const double predicted = eps * base.token_grad(i, 0);
    CHECK(std::abs(delta - predicted) <= 0.02 * std::abs(predicted) + 1e-12);
  }
}

TEST_CASE("mask setters and validation") {
  PromptBank bank = random_bank(3, 4, 2, 1);
  CHECK_THROWS_AS(bank.set_token(3, false), IndexError);
  CHECK_THROWS_AS(bank.set_piece(0, 2, false), IndexError);
  CHECK_THROWS_AS(bank.set_masks({1, 1}, {1, 1, 1, 1, 1, 1}), DimensionError);
  bank.set_token(0, false);
  CHECK(!bank.piece_live(0, 1));
  CHECK(bank.piece_flag(0, 1));
  bank.reset_masks();
  CHECK(bank.live_tokens() == 3);
  CHECK_THROWS_AS(PromptBank(Matrix(2, 5), 2), ConfigError);
}

TEST_CASE("optimizer never moves masked entries and rows do not interact") {
  for (OptimizerKind kind : {OptimizerKind::AdafactorLite, OptimizerKind::Adam, OptimizerKind::Sgd}) {
    CAPTURE(optimizer_kind_name(kind));
    OptimizerConfig cfg;
    cfg.kind = kind;
    Rng rng(3);
    Matrix params = random_matrix(rng, 4, 6);
    const Matrix start = params;
    Matrix mask(4, 6, 1.0);
    for (std::size_t j = 0; j < 6; ++j) mask(1, j) = 0.0;
    mask(2, 4) = mask(2, 5) = 0.0;
    PromptOptimizer opt(cfg, 4, 6, 3);

    // Same rows with row 3's gradients replaced: other rows must be unaffected.
    Matrix params_b = params;
    PromptOptimizer opt_b(cfg, 4, 6, 3);
    for (int step = 0; step < 5; ++step) {
      Matrix grad = random_matrix(rng, 4, 6);
      Matrix grad_b = grad;
      for (std::size_t j = 0; j < 6; ++j) grad_b(3, j) *= -7.0;
      opt.step(params, grad, mask);
      opt_b.step(params_b, grad_b, mask);
    }
    for (std::size_t j = 0; j < 6; ++j) CHECK(params(1, j) == start(1, j));
    CHECK(params(2, 4) == start(2, 4));
    CHECK(params(2, 5) == start(2, 5));
    CHECK(params(0, 0) != start(0, 0));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 6; ++j) CHECK(params(i, j) == params_b(i, j));
    }
    CHECK(opt.step_count() == 5);
    opt.reset();
    CHECK(opt.step_count() == 0);
  }
  CHECK(parse_optimizer_kind("adam") == OptimizerKind::Adam);
  CHECK_THROWS_AS(parse_optimizer_kind("lion"), ConfigError);
}

TEST_CASE("optimizer steps are deterministic") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  Rng rng(8);
  Matrix a = random_matrix(rng, 3, 4), b = a;
  PromptOptimizer oa(cfg, 3, 4, 2), ob(cfg, 3, 4, 2);
  const Matrix ones(3, 4, 1.0);
  for (int s = 0; s < 4; ++s) {
    const Matrix g = random_matrix(rng, 3, 4);
    oa.step(a, g, ones);
    ob.step(b, g, ones);
  }
  CHECK(a.bitwise_equal(b));
}

TEST_CASE("tuning with zero epochs changes nothing") {
  ToySetup toy = toy_setup(20);
  InitStrategy init;
  init.seed = 2;
  PromptBank bank = init_prompt(4, 16, 4, init, toy.bb);
  const Matrix before = bank.embeddings();
  PromptOptimizer opt({}, 4, 16, 4);
  TuneOptions options;
  options.epochs = 0;
  const TuneResult r = tune(bank, toy.bb, toy.data.train, toy.data.dev, options, opt);
  CHECK(bank.embeddings().bitwise_equal(before));
  CHECK(r.steps == 0);
  CHECK(r.best_epoch == 0);
  CHECK(r.best_dev_acc == r.initial_dev_acc);
  CHECK(r.dev_curve.size() == 1);
}

TEST_CASE("tuning is deterministic, leaves the backbone alone and keeps pruned rows") {
  ToySetup toy = toy_setup(20);
  const std::string hash = toy.bb.content_hash();
  InitStrategy init;
  init.seed = 5;
  PromptBank a = init_prompt(4, 16, 4, init, toy.bb);
  a.set_token(2, false);
  a.set_piece(0, 1, false);
  PromptBank b = a;
  const Matrix start = a.embeddings();
  TuneOptions options;
  options.epochs = 2;
  options.seed = 3;
  PromptOptimizer oa({}, 4, 16, 4), ob({}, 4, 16, 4);
  const TuneResult ra = tune(a, toy.bb, toy.data.train, toy.data.dev, options, oa);
  const TuneResult rb = tune(b, toy.bb, toy.data.train, toy.data.dev, options, ob);
  CHECK(a.embeddings().bitwise_equal(b.embeddings()));
  CHECK(ra.losses == rb.losses);
  CHECK(ra.losses.size() == 2 * 4);
  CHECK(ra.dev_curve.size() == 3);
  CHECK(toy.bb.content_hash() == hash);
  for (std::size_t j = 0; j < 16; ++j) CHECK(a.embeddings()(2, j) == start(2, j));
  for (std::size_t j = 4; j < 8; ++j) CHECK(a.embeddings()(0, j) == start(0, j));

  PromptBank wrong = random_bank(4, 8, 4, 1);
  PromptOptimizer ow({}, 4, 8, 4);
  CHECK_THROWS_AS(tune(wrong, toy.bb, toy.data.train, toy.data.dev, options, ow), ConfigError);
  CHECK_THROWS_AS(tune(a, toy.bb, {}, toy.data.dev, options, oa), DataError);
}

TEST_CASE("snapshots restore embeddings") {
  PromptBank bank = random_bank(3, 4, 2, 6);
  CHECK_THROWS_AS(bank.restore_snapshot(), StateError);
  bank.take_snapshot();
  const Matrix saved = bank.embeddings();
  bank.embeddings()(0, 0) += 1.0;
  bank.restore_snapshot();
  CHECK(bank.embeddings().bitwise_equal(saved));
}

TEST_CASE("prompt checkpoints round trip") {
  PromptBank bank = random_bank(3, 4, 2, 7);
  bank.set_token(1, false);
  bank.set_piece(2, 0, false);
  bank.take_snapshot();
  bank.embeddings()(0, 0) = 42.0;
  const auto dir = temp_dir("roundtrip");
  save_prompt(bank, "stage1", dir);
  const LoadedPrompt loaded = load_prompt(dir);
  CHECK(loaded.stage == "stage1");
  CHECK(loaded.bank.embeddings().bitwise_equal(bank.embeddings()));
  CHECK(loaded.bank.token_mask() == bank.token_mask());
  CHECK(loaded.bank.piece_mask() == bank.piece_mask());
  REQUIRE(loaded.bank.has_snapshot());
  CHECK(loaded.bank.snapshot()->bitwise_equal(*bank.snapshot()));
  CHECK_THROWS_AS(load_prompt(temp_dir("missing")), IoError);
  std::filesystem::remove_all(dir);
}
