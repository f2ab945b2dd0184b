#include <doctest.h>

#include <cmath>

#include "support/finite_difference.hpp"
#include "xprompt/errors.hpp"
#include "xprompt/graph.hpp"
#include "xprompt/rng.hpp"

using namespace xprompt;
using xprompt::testing::gradient_check;
using xprompt::testing::LossBuilder;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

// Projects a node onto a fixed random direction so every output entry
// influences the scalar loss with a distinct weight.
nk::LossScalar project(nk::Graph& g, nk::Var x, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(x.cols(), 1);
  for (double& v : w.values()) v = rng.normal();
  nk::Var y = nk::matmul(x, g.leaf(w));  // rows x 1
  Matrix ones(1, x.rows(), 1.0);
  return nk::as_loss(nk::matmul(g.leaf(ones), y));
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
  nk::Graph g;
  auto a = g.leaf(Matrix::from_rows({{2}}));
  auto b = g.leaf(Matrix::from_rows({{3}}));
  CHECK(nk::matmul(a, b).value()(0, 0) == 6.0);

  Matrix m = Matrix::from_rows({{1.5, -2}, {0.25, 4}});
  auto id = g.leaf(Matrix::identity(2));
  CHECK(nk::matmul(id, g.leaf(m)).value().bitwise_equal(m));

  auto bad = g.leaf(Matrix(3, 2));
  try {
    nk::matmul(g.leaf(Matrix(2, 2)), bad);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x2") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(1);
  const std::vector<Matrix> vals = {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)};
  LossBuilder f = [](nk::Graph& g, const std::vector<nk::Var>& v) {
    return project(g, nk::matmul(v[0], v[1]), 11);
  };
  CHECK(gradient_check(f, vals) <= 1e-6);
}

TEST_CASE("rowwise_scale identity, annihilation and gradient") {
  Rng rng(2);
  const Matrix x = random_matrix(rng, 4, 8);
  {
    nk::Graph g;
    auto out = nk::rowwise_scale(g.leaf(x), g.leaf(Matrix(4, 1, 1.0)));
    CHECK(out.value().bitwise_equal(x));
  }
  {
    nk::Graph g;
    auto xv = g.leaf(x, true);
    auto out = nk::rowwise_scale(xv, g.leaf(Matrix(4, 1, 0.0)));
    for (double v : out.value().values()) CHECK(v == 0.0);
    auto loss = project(g, out, 3);
    g.backward(loss);
    for (double v : xv.grad().values()) CHECK(v == 0.0);
  }
  const std::vector<Matrix> vals = {x, random_matrix(rng, 4, 1)};
  LossBuilder f = [](nk::Graph& g, const std::vector<nk::Var>& v) {
    return project(g, nk::gelu(nk::rowwise_scale(v[0], v[1])), 5);
  };
  CHECK(gradient_check(f, vals) <= 1e-6);

  nk::Graph g;
  CHECK_THROWS_AS(nk::rowwise_scale(g.leaf(Matrix(4, 8)), g.leaf(Matrix(3, 1))), DimensionError);
}

TEST_CASE("blockwise_scale substitution, identity, divisibility and gradient") {
  nk::Graph g;
  auto x = g.leaf(Matrix::from_rows({{1, 2, 3, 4}}));
  auto out = nk::blockwise_scale(x, g.leaf(Matrix::from_rows({{1, 0}})));
  CHECK(out.value().bitwise_equal(Matrix::from_rows({{1, 2, 0, 0}})));

  Rng rng(3);
  const Matrix xr = random_matrix(rng, 3, 16);
  CHECK(nk::blockwise_scale(g.leaf(xr), g.leaf(Matrix(3, 4, 1.0))).value().bitwise_equal(xr));

  try {
    nk::blockwise_scale(g.leaf(Matrix(2, 6)), g.leaf(Matrix(2, 4, 1.0)));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('6') != std::string::npos);
    CHECK(msg.find('4') != std::string::npos);
  }

  const std::vector<Matrix> vals = {xr, random_matrix(rng, 3, 4)};
  LossBuilder f = [](nk::Graph& gr, const std::vector<nk::Var>& v) {
    return project(gr, nk::gelu(nk::blockwise_scale(v[0], v[1])), 7);
  };
  CHECK(gradient_check(f, vals) <= 1e-6);
}

TEST_CASE("softmax_cross_entropy values, saturation and gradient") {
  nk::Graph g;
  auto uniform = nk::softmax_cross_entropy(g.leaf(Matrix(1, 4, 0.3)), std::vector<int>{2});
  CHECK(uniform.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(uniform.value == doctest::Approx(1.3863).epsilon(1e-4));

  double prev = INFINITY;
  for (double margin : {2.0, 5.0, 10.0}) {
    Matrix l(1, 3);
    l(0, 1) = margin;
    const double loss = nk::softmax_cross_entropy(g.leaf(l), std::vector<int>{1}).value;
    CHECK(loss < prev);
    CHECK(loss >= 0.0);
    prev = loss;
  }
  CHECK(prev < 1e-4);

  CHECK_THROWS_AS(nk::softmax_cross_entropy(g.leaf(Matrix(1, 3)), std::vector<int>{3}), IndexError);

  Rng rng(4);
  const std::vector<Matrix> vals = {random_matrix(rng, 2, 3)};
  LossBuilder f = [](nk::Graph&, const std::vector<nk::Var>& v) {
    return nk::softmax_cross_entropy(v[0], std::vector<int>{2, 0});
  };
  CHECK(gradient_check(f, vals) <= 1e-6);
}

TEST_CASE("transformer primitives") {
  Rng rng(5);
  SUBCASE("concat_rows keeps the prompt rows first") {
    nk::Graph g;
    Matrix p = random_matrix(rng, 2, 4), x = random_matrix(rng, 3, 4);
    auto out = nk::concat_rows(g.leaf(p), g.leaf(x)).value();
    REQUIRE(out.rows() == 5);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(out(0, c) == p(0, c));
      CHECK(out(1, c) == p(1, c));
      CHECK(out(4, c) == x(2, c));
    }
    CHECK_THROWS_AS(nk::concat_rows(g.leaf(p), g.leaf(Matrix(1, 3))), DimensionError);
  }
  SUBCASE("layer_norm maps a constant row to zero") {
    nk::Graph g;
    auto out = nk::layer_norm(g.leaf(Matrix(1, 6, 3.25)), g.leaf(Matrix(1, 6, 1.0)),
                              g.leaf(Matrix(1, 6, 0.0)));
    for (double v : out.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("attention rejects a head count that does not divide the width") {
    nk::Graph g;
    auto q = g.leaf(Matrix(3, 6));
    CHECK_THROWS_AS(nk::attention(q, q, q, 4), DimensionError);
  }
  SUBCASE("embedding_lookup rejects out-of-range ids") {
    nk::Graph g;
    CHECK_THROWS_AS(nk::embedding_lookup(g.leaf(Matrix(4, 2)), std::vector<int>{4}), IndexError);
  }
  SUBCASE("per-primitive gradients") {
    // 20 random instances per primitive at eps = 1e-5.
    for (int trial = 0; trial < 20; ++trial) {
      const std::uint64_t s = 100 + trial;
      const std::vector<Matrix> ln_vals = {random_matrix(rng, 3, 6), random_matrix(rng, 1, 6),
                                           random_matrix(rng, 1, 6)};
      LossBuilder ln = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::layer_norm(v[0], v[1], v[2]), s);
      };
      CHECK(gradient_check(ln, ln_vals) <= 1e-5);

      LossBuilder ge = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::gelu(v[0]), s);
      };
      CHECK(gradient_check(ge, {random_matrix(rng, 3, 5, 2.0)}) <= 1e-5);

      LossBuilder cat = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::gelu(nk::concat_rows(v[0], v[1])), s);
      };
      CHECK(gradient_check(cat, {random_matrix(rng, 2, 4), random_matrix(rng, 3, 4)}) <= 1e-5);

      LossBuilder emb = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        const std::vector<int> ids = {3, 0, 3, 1};
        return project(g, nk::gelu(nk::embedding_lookup(v[0], ids)), s);
      };
      CHECK(gradient_check(emb, {random_matrix(rng, 5, 3)}) <= 1e-5);

      LossBuilder pool = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::gelu(nk::mean_pool(v[0], 2)), s);
      };
      CHECK(gradient_check(pool, {random_matrix(rng, 5, 3)}) <= 1e-5);

      LossBuilder att = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::attention(v[0], v[1], v[2], 2), s);
      };
      CHECK(gradient_check(att, {random_matrix(rng, 4, 6), random_matrix(rng, 4, 6),
                                 random_matrix(rng, 4, 6)}) <= 1e-5);

      LossBuilder sel = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        const std::vector<std::size_t> rows = {2, 0, 2};
        return project(g, nk::gelu(nk::select_rows(v[0], rows)), s);
      };
      CHECK(gradient_check(sel, {random_matrix(rng, 3, 4)}) <= 1e-5);

      LossBuilder nt = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::matmul_nt(v[0], v[1]), s);
      };
      CHECK(gradient_check(nt, {random_matrix(rng, 3, 4), random_matrix(rng, 5, 4)}) <= 1e-5);

      LossBuilder bias = [s](nk::Graph& g, const std::vector<nk::Var>& v) {
        return project(g, nk::gelu(nk::add_row(v[0], v[1])), s);
      };
      CHECK(gradient_check(bias, {random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)}) <= 1e-5);
    }
  }
  SUBCASE("full attention block gradient") {
    const std::size_t e = 8;
    std::vector<Matrix> vals = {random_matrix(rng, 5, e),        // x
                                random_matrix(rng, e, e, 0.3),   // wq
                                random_matrix(rng, e, e, 0.3),   // wk
                                random_matrix(rng, e, e, 0.3),   // wv
                                random_matrix(rng, e, e, 0.3),   // wo
                                random_matrix(rng, 1, e, 0.2),   // ln gain offset
                                random_matrix(rng, 1, e, 0.2)};  // ln bias
    for (double& v : vals[5].values()) v += 1.0;
    LossBuilder block = [](nk::Graph&, const std::vector<nk::Var>& v) {
      nk::Var h = nk::layer_norm(v[0], v[5], v[6]);
      nk::Var a = nk::attention(nk::matmul(h, v[1]), nk::matmul(h, v[2]), nk::matmul(h, v[3]), 2);
      nk::Var out = nk::add(v[0], nk::matmul(a, v[4]));
      return nk::softmax_cross_entropy(nk::mean_pool(out, 1), std::vector<int>{3});
    };
    CHECK(gradient_check(block, vals) <= 1e-5);
  }
}

TEST_CASE("backward semantics") {
  SUBCASE("loss of a single leaf") {
    nk::Graph g;
    auto x = g.leaf(Matrix(1, 1, 4.0), true);
    g.backward(nk::as_loss(x));
    CHECK(x.grad()(0, 0) == 1.0);
  }
  SUBCASE("constant slope") {
    nk::Graph g;
    auto x = g.leaf(Matrix(1, 1, 2.0), true);
    auto y = nk::scale(x, 3.0);
    CHECK(y.value()(0, 0) == 6.0);
    g.backward(nk::as_loss(y));
    CHECK(x.grad()(0, 0) == 3.0);
  }
  SUBCASE("double backward is rejected until gradients are reset") {
    nk::Graph g;
    auto x = g.leaf(Matrix(1, 1, 2.0), true);
    auto loss = nk::as_loss(nk::scale(x, 3.0));
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), StateError);
    g.reset_gradients();
    g.backward(loss);
    CHECK(x.grad()(0, 0) == 3.0);
  }
  SUBCASE("untracked leaves expose no gradient") {
    nk::Graph g;
    auto w = g.leaf(Matrix(1, 1, 2.0));
    auto x = g.leaf(Matrix(1, 1, 1.0), true);
    auto loss = nk::as_loss(nk::matmul(x, w));
    g.backward(loss);
    CHECK(x.grad()(0, 0) == 2.0);
    CHECK_THROWS_AS(w.grad(), StateError);
  }
}

TEST_CASE("graph evaluation is deterministic") {
  auto run = [] {
    Rng rng(9);
    nk::Graph g;
    auto x = g.leaf(random_matrix(rng, 6, 8));
    auto w = g.leaf(random_matrix(rng, 8, 8));
    auto h = nk::attention(nk::matmul(x, w), x, x, 2);
    return nk::gelu(h).value();
  };
  CHECK(run().bitwise_equal(run()));
}
