#include <doctest.h>

#include <filesystem>

#include "support/finite_difference.hpp"
#include "support/fixtures.hpp"
#include "xprompt/errors.hpp"
#include "xprompt/storage.hpp"

using namespace xprompt;
using namespace xprompt::testing;

TEST_CASE("config validation") {
  BackboneConfig cfg = micro_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = micro_config();
  CHECK_THROWS_AS(cfg.validate(3), ConfigError);  // 8 is not a multiple of 3
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("initialization is seeded") {
  const FrozenBackbone a = micro_backbone(8, 1, 3);
  CHECK(a.content_hash() == micro_backbone(8, 1, 3).content_hash());
  CHECK(a.content_hash() != micro_backbone(8, 1, 4).content_hash());
  CHECK(a.content_hash().size() == 64);
}

TEST_CASE("forward shapes and errors") {
  const FrozenBackbone bb = micro_backbone();
  nk::Graph g;
  BoundBackbone bound = bind(g, bb);
  nk::Var prompt = g.leaf(Matrix(3, 8, 0.1));
  const std::vector<int> ids = {1, 2, 3, 4};
  CHECK(forward_with_prompt(bound, prompt, ids).cols() == 2);
  const std::vector<std::vector<int>> batch = {{1, 2}, {3, 4, 5}};
  CHECK(forward_batch(bound, &prompt, batch).rows() == 2);
  CHECK(forward_batch(bound, nullptr, batch).rows() == 2);

  CHECK_THROWS_AS(forward_batch(bound, &prompt, {}), DataError);
  CHECK_THROWS_AS(forward_with_prompt(bound, prompt, std::vector<int>{}), LengthError);
  CHECK_THROWS_AS(forward_with_prompt(bound, prompt, std::vector<int>(14, 1)), LengthError);
  CHECK_THROWS_AS(forward_with_prompt(bound, prompt, std::vector<int>{16}), IndexError);
  nk::Var narrow = g.leaf(Matrix(2, 4));
  CHECK_THROWS_AS(forward_with_prompt(bound, narrow, ids), DimensionError);

  FrozenBackbone thawed = FrozenBackbone::init(micro_config());
  nk::Graph g2;
  BoundBackbone b2 = bind(g2, thawed);
  nk::Var p2 = g2.leaf(Matrix(1, 8));
  CHECK_THROWS_AS(forward_with_prompt(b2, p2, ids), StateError);
}

TEST_CASE("prompt rows carry no position embedding") {
  // Swapping two prompt rows permutes nothing the head can see after mean
  // pooling over input rows, because attention is permutation equivariant
  // in its keys and the prompt rows have no positions.
  const FrozenBackbone bb = micro_backbone();
  Rng rng(4);
  const Matrix p = random_matrix(rng, 3, 8);
  Matrix swapped = p;
  for (std::size_t j = 0; j < 8; ++j) std::swap(swapped(0, j), swapped(2, j));
  const std::vector<int> ids = {5, 6, 7};
  nk::Graph g;
  BoundBackbone bound = bind(g, bb);
  const Matrix a = forward_with_prompt(bound, g.leaf(p), ids).value();
  const Matrix b = forward_with_prompt(bound, g.leaf(swapped), ids).value();
  for (std::size_t c = 0; c < 2; ++c) CHECK(a(0, c) == doctest::Approx(b(0, c)).epsilon(1e-12));
}

TEST_CASE("prompt gradient through the full encoder matches finite differences") {
  const FrozenBackbone bb = micro_backbone(8, 2);
  Rng rng(9);
  const std::vector<Matrix> vals = {random_matrix(rng, 2, 8)};
  LossBuilder f = [&bb](nk::Graph& g, const std::vector<nk::Var>& v) {
    BoundBackbone bound = bind(g, bb);
    const std::vector<std::vector<int>> batch = {{1, 4, 2}, {7, 3, 3, 9}};
    const std::vector<int> labels = {0, 1};
    return nk::softmax_cross_entropy(forward_batch(bound, &v[0], batch), labels);
  };
  CHECK(gradient_check(f, vals) <= 1e-6);
}

TEST_CASE("frozen weights cannot be mutated") {
  FrozenBackbone bb = micro_backbone();
  CHECK_THROWS_AS(bb.for_each_weight_mut([](const std::string&, Matrix&) {}), StateError);
  std::size_t count = 0;
  bb.for_each_weight([&](const std::string&, const Matrix&) { ++count; });
  CHECK(count == 2 + 12 + 4);
}

TEST_CASE("pretraining reduces the loss and validates cued tasks") {
  FrozenBackbone bb = FrozenBackbone::init(micro_config(8, 1, 2));
  const auto corpus = make_pretrain_corpus(14, 200, 4, 8, 1);
  TaskSpec spec;
  spec.kind = TaskKind::PatternDetect;
  spec.vocab_size = 16;
  spec.min_len = 4;
  spec.max_len = 8;
  spec.train_size = 64;
  spec.dev_size = 8;
  const std::vector<CuedTask> cued = {{15, generate(spec).train}};
  PretrainOptions opts;
  opts.steps = 150;
  opts.learning_rate = 5e-3;
  const PretrainLog log = pretrain(bb, corpus, opts, cued);
  REQUIRE(log.losses.size() == 150);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += log.losses[i];
    last += log.losses[130 + i];
  }
  CHECK(last < first);
  CHECK(bb.frozen());
  CHECK_THROWS_AS(pretrain(bb, corpus, opts, cued), StateError);

  FrozenBackbone again = FrozenBackbone::init(micro_config(8, 1, 2));
  const PretrainLog log2 = pretrain(again, corpus, opts, cued);
  CHECK(log2.losses == log.losses);
  CHECK(again.content_hash() == bb.content_hash());

  FrozenBackbone bad = FrozenBackbone::init(micro_config());
  const std::vector<CuedTask> bad_cue = {{16, generate(spec).train}};
  CHECK_THROWS_AS(pretrain(bad, corpus, opts, bad_cue), ConfigError);
  const std::vector<CuedTask> empty_task = {{15, {}}};
  CHECK_THROWS_AS(pretrain(bad, corpus, opts, empty_task), DataError);
  CHECK_THROWS_AS(pretrain(bad, {}, opts), DataError);
}

TEST_CASE("checkpoints round trip and detect corruption") {
  const FrozenBackbone bb = micro_backbone(8, 2, 5);
  const auto dir = std::filesystem::temp_directory_path() / "xprompt-test-backbone";
  std::filesystem::remove_all(dir);
  bb.save(dir);
  const FrozenBackbone back = FrozenBackbone::load(dir);
  CHECK(back.frozen());
  CHECK(back.content_hash() == bb.content_hash());
  CHECK(back.config().layers == 2);

  Matrix head = read_blob(dir / "head.f64", 8, 2);
  head(0, 0) += 1.0;
  write_blob(dir / "head.f64", head);
  CHECK_THROWS_AS(FrozenBackbone::load(dir), ParseError);
  std::filesystem::remove_all(dir);
}
