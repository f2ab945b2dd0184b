#include <algorithm>
#include <cmath>
#include <memory>

#include "xprompt/errors.hpp"
#include "xprompt/graph.hpp"

namespace xprompt::nk {
namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw StateError("operation on a detached variable");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw StateError("operands belong to different graphs");
  return graph_of(a);
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                       b.shape_string());
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  const std::size_t ai = a.id, bi = b.id;
  return g.push(OpKind::MatMul, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Matrix& og = gr.grad_mut(self);
    if (gr.requires_grad(ai)) gemm_nt_acc(og, gr.value(bi), gr.grad_mut(ai));
    if (gr.requires_grad(bi)) gemm_tn_acc(gr.value(ai), og, gr.grad_mut(bi));
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av, bv);
  Matrix out(av.rows(), bv.rows());
  gemm_nt_acc(av, bv, out);
  const std::size_t ai = a.id, bi = b.id;
  return g.push(OpKind::MatMulNT, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    const Matrix& og = gr.grad_mut(self);
    // out = a b^T: da = og b, db = og^T a
    if (gr.requires_grad(ai)) gemm_acc(og, gr.value(bi), gr.grad_mut(ai));
    if (gr.requires_grad(bi)) gemm_tn_acc(og, gr.value(ai), gr.grad_mut(bi));
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Matrix out = av;
  auto ov = out.values();
  auto bvals = bv.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bvals[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.push(OpKind::Add, {ai, bi}, std::move(out), [ai, bi](Graph& gr, std::size_t self) {
    auto og = gr.grad_mut(self).values();
    for (std::size_t in : {ai, bi}) {
      if (!gr.requires_grad(in)) continue;
      auto ig = gr.grad_mut(in).values();
      for (std::size_t i = 0; i < og.size(); ++i) ig[i] += og[i];
    }
  });
}

Var add_row(Var x, Var bias) {
  Graph& g = graph_of(x, bias);
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_error("add_row", xv, bv);
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  const std::size_t xi = x.id, bi = bias.id;
  return g.push(OpKind::AddRow, {xi, bi}, std::move(out), [xi, bi](Graph& gr, std::size_t self) {
    const Matrix& og = gr.grad_mut(self);
    if (gr.requires_grad(xi)) {
      auto xg = gr.grad_mut(xi).values();
      auto o = og.values();
      for (std::size_t i = 0; i < o.size(); ++i) xg[i] += o[i];
    }
    if (gr.requires_grad(bi)) {
      Matrix& bg = gr.grad_mut(bi);
      for (std::size_t r = 0; r < og.rows(); ++r) {
        for (std::size_t c = 0; c < og.cols(); ++c) bg(0, c) += og(r, c);
      }
    }
  });
}

Var scale(Var x, double factor) {
  Graph& g = graph_of(x);
  Matrix out = x.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t xi = x.id;
  return g.push(OpKind::Scale, {xi}, std::move(out), [xi, factor](Graph& gr, std::size_t self) {
    auto og = gr.grad_mut(self).values();
    auto xg = gr.grad_mut(xi).values();
    for (std::size_t i = 0; i < og.size(); ++i) xg[i] += factor * og[i];
  });
}

Var rowwise_scale(Var x, Var s) {
  Graph& g = graph_of(x, s);
  const Matrix& xv = x.value();
  const Matrix& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != xv.rows()) shape_error("rowwise_scale", xv, sv);
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double si = sv(i, 0);
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = si * xv(i, j);
  }
  const std::size_t xi = x.id, sid = s.id;
  return g.push(OpKind::RowwiseScale, {xi, sid}, std::move(out),
                [xi, sid](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  const Matrix& xval = gr.value(xi);
                  const Matrix& sval = gr.value(sid);
                  if (gr.requires_grad(sid)) {
                    Matrix& sg = gr.grad_mut(sid);
                    for (std::size_t i = 0; i < og.rows(); ++i) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < og.cols(); ++j) acc += og(i, j) * xval(i, j);
                      sg(i, 0) += acc;
                    }
                  }
                  if (gr.requires_grad(xi)) {
                    Matrix& xg = gr.grad_mut(xi);
                    for (std::size_t i = 0; i < og.rows(); ++i) {
                      for (std::size_t j = 0; j < og.cols(); ++j) xg(i, j) += sval(i, 0) * og(i, j);
                    }
                  }
                });
}

Var blockwise_scale(Var x, Var z) {
  Graph& g = graph_of(x, z);
  const Matrix& xv = x.value();
  const Matrix& zv = z.value();
  if (zv.rows() != xv.rows() || zv.cols() == 0) shape_error("blockwise_scale", xv, zv);
  const std::size_t k = zv.cols();
  if (xv.cols() % k != 0) {
    throw DimensionError("blockwise_scale: embedding width " + std::to_string(xv.cols()) +
                         " is not divisible by piece count " + std::to_string(k));
  }
  const std::size_t w = xv.cols() / k;
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = zv(i, j / w) * xv(i, j);
  }
  const std::size_t xi = x.id, zi = z.id;
  return g.push(OpKind::BlockwiseScale, {xi, zi}, std::move(out),
                [xi, zi, w](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  const Matrix& xval = gr.value(xi);
                  const Matrix& zval = gr.value(zi);
                  if (gr.requires_grad(zi)) {
                    Matrix& zg = gr.grad_mut(zi);
                    for (std::size_t i = 0; i < og.rows(); ++i) {
                      for (std::size_t c = 0; c < zval.cols(); ++c) {
                        double acc = 0.0;
                        for (std::size_t j = c * w; j < (c + 1) * w; ++j) acc += og(i, j) * xval(i, j);
                        zg(i, c) += acc;
                      }
                    }
                  }
                  if (gr.requires_grad(xi)) {
                    Matrix& xg = gr.grad_mut(xi);
                    for (std::size_t i = 0; i < og.rows(); ++i) {
                      for (std::size_t j = 0; j < og.cols(); ++j) xg(i, j) += zval(i, j / w) * og(i, j);
                    }
                  }
                });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), e = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != e) shape_error("layer_norm", xv, gain.value());
  if (bias.value().rows() != 1 || bias.value().cols() != e) shape_error("layer_norm", xv, bias.value());
  auto xhat = std::make_shared<Matrix>(n, e);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Matrix out(n, e);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < e; ++j) mean += xv(i, j);
    mean /= static_cast<double>(e);
    double var = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      const double d = xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(e);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < e; ++j) {
      const double h = (xv(i, j) - mean) * inv;
      (*xhat)(i, j) = h;
      out(i, j) = h * gv(0, j) + bv(0, j);
    }
  }
  const std::size_t xi = x.id, gi = gain.id, bi = bias.id;
  return g.push(OpKind::LayerNorm, {xi, gi, bi}, std::move(out),
                [xi, gi, bi, xhat, inv_std](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  const Matrix& gv2 = gr.value(gi);
                  const std::size_t rows = og.rows(), cols = og.cols();
                  if (gr.requires_grad(gi)) {
                    Matrix& gg = gr.grad_mut(gi);
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < cols; ++j) gg(0, j) += og(i, j) * (*xhat)(i, j);
                    }
                  }
                  if (gr.requires_grad(bi)) {
                    Matrix& bg = gr.grad_mut(bi);
                    for (std::size_t i = 0; i < rows; ++i) {
                      for (std::size_t j = 0; j < cols; ++j) bg(0, j) += og(i, j);
                    }
                  }
                  if (gr.requires_grad(xi)) {
                    Matrix& xg = gr.grad_mut(xi);
                    std::vector<double> dh(cols);
                    for (std::size_t i = 0; i < rows; ++i) {
                      double mean_dh = 0.0, mean_dh_h = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) {
                        dh[j] = og(i, j) * gv2(0, j);
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * (*xhat)(i, j);
                      }
                      mean_dh /= static_cast<double>(cols);
                      mean_dh_h /= static_cast<double>(cols);
                      const double inv = (*inv_std)[i];
                      for (std::size_t j = 0; j < cols; ++j) {
                        xg(i, j) += inv * (dh[j] - mean_dh - (*xhat)(i, j) * mean_dh_h);
                      }
                    }
                  }
                });
}

Var gelu(Var x) {
  Graph& g = graph_of(x);
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  auto xs = xv.values();
  auto os = out.values();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = xs[i];
    os[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const std::size_t xi = x.id;
  return g.push(OpKind::Gelu, {xi}, std::move(out), [xi](Graph& gr, std::size_t self) {
    auto og = gr.grad_mut(self).values();
    auto xval = gr.value(xi).values();
    auto xg = gr.grad_mut(xi).values();
    for (std::size_t i = 0; i < og.size(); ++i) {
      const double v = xval[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      xg[i] += d * og[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      auto src = pv.row(r);
      std::copy(src.begin(), src.end(), out.row(r0 + r).begin());
    }
    r0 += pv.rows();
  }
  auto inputs = ids;
  return g.push(OpKind::ConcatRows, std::move(inputs), std::move(out),
                [ids](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  std::size_t offset = 0;
                  for (std::size_t in : ids) {
                    const std::size_t rows_in = gr.value(in).rows();
                    if (gr.requires_grad(in)) {
                      Matrix& ig = gr.grad_mut(in);
                      for (std::size_t r = 0; r < rows_in; ++r) {
                        auto src = og.row(offset + r);
                        auto dst = ig.row(r);
                        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                      }
                    }
                    offset += rows_in;
                  }
                });
}

Var concat_rows(Var top, Var bottom) {
  const Var parts[2] = {top, bottom};
  return concat_rows(std::span<const Var>(parts, 2));
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw IndexError("embedding_lookup: token id " + std::to_string(ids[r]) +
                       " outside table of " + std::to_string(tv.rows()) + " rows");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t ti = table.id;
  std::vector<int> idx(ids.begin(), ids.end());
  return g.push(OpKind::EmbeddingLookup, {ti}, std::move(out),
                [ti, idx = std::move(idx)](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  Matrix& tg = gr.grad_mut(ti);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto src = og.row(r);
                    auto dst = tg.row(static_cast<std::size_t>(idx[r]));
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

Var mean_pool(Var x, std::size_t first_row) {
  Graph& g = graph_of(x);
  const Matrix& xv = x.value();
  if (first_row >= xv.rows()) {
    throw DimensionError("mean_pool: first row " + std::to_string(first_row) +
                         " leaves no rows to pool in " + xv.shape_string());
  }
  const double count = static_cast<double>(xv.rows() - first_row);
  Matrix out(1, xv.cols());
  for (std::size_t r = first_row; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out(0, c) += xv(r, c);
  }
  for (double& v : out.values()) v /= count;
  const std::size_t xi = x.id;
  return g.push(OpKind::MeanPool, {xi}, std::move(out),
                [xi, first_row, count](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  Matrix& xg = gr.grad_mut(xi);
                  for (std::size_t r = first_row; r < xg.rows(); ++r) {
                    for (std::size_t c = 0; c < xg.cols(); ++c) xg(r, c) += og(0, c) / count;
                  }
                });
}

Var attention(Var q, Var k, Var v, std::size_t heads) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (!kv.same_shape(vv) || qv.cols() != kv.cols()) shape_error("attention", qv, kv);
  if (heads == 0 || qv.cols() % heads != 0) {
    throw DimensionError("attention: head count " + std::to_string(heads) +
                         " does not divide width " + std::to_string(qv.cols()));
  }
  const std::size_t nq = qv.rows(), nk = kv.rows(), d = qv.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  // probs[h][i][j]
  auto probs = std::make_shared<std::vector<double>>(heads * nq * nk);
  Matrix out(nq, qv.cols());
  std::vector<double> srow(nk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * d;
    for (std::size_t i = 0; i < nq; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += qv(i, off + t) * kv(j, off + t);
        s *= inv_sqrt_d;
        srow[j] = s;
        if (s > mx) mx = s;
      }
      double z = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        srow[j] = std::exp(srow[j] - mx);
        z += srow[j];
      }
      double* prow = probs->data() + (h * nq + i) * nk;
      for (std::size_t j = 0; j < nk; ++j) prow[j] = srow[j] / z;
      for (std::size_t j = 0; j < nk; ++j) {
        const double p = prow[j];
        for (std::size_t t = 0; t < d; ++t) out(i, off + t) += p * vv(j, off + t);
      }
    }
  }
  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  return g.push(
      OpKind::Attention, {qi, ki, vi}, std::move(out),
      [qi, ki, vi, heads, d, nq, nk, inv_sqrt_d, probs](Graph& gr, std::size_t self) {
        const Matrix& og = gr.grad_mut(self);
        const Matrix& qval = gr.value(qi);
        const Matrix& kval = gr.value(ki);
        const Matrix& vval = gr.value(vi);
        const bool need_q = gr.requires_grad(qi);
        const bool need_k = gr.requires_grad(ki);
        const bool need_v = gr.requires_grad(vi);
        std::vector<double> da(nk), ds(nk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * d;
          for (std::size_t i = 0; i < nq; ++i) {
            const double* prow = probs->data() + (h * nq + i) * nk;
            double dot = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
              double s = 0.0;
              for (std::size_t t = 0; t < d; ++t) s += og(i, off + t) * vval(j, off + t);
              da[j] = s;
              dot += prow[j] * s;
            }
            if (need_v) {
              Matrix& vg = gr.grad_mut(vi);
              for (std::size_t j = 0; j < nk; ++j) {
                for (std::size_t t = 0; t < d; ++t) vg(j, off + t) += prow[j] * og(i, off + t);
              }
            }
            if (!need_q && !need_k) continue;
            for (std::size_t j = 0; j < nk; ++j) ds[j] = prow[j] * (da[j] - dot) * inv_sqrt_d;
            if (need_q) {
              Matrix& qg = gr.grad_mut(qi);
              for (std::size_t j = 0; j < nk; ++j) {
                for (std::size_t t = 0; t < d; ++t) qg(i, off + t) += ds[j] * kval(j, off + t);
              }
            }
            if (need_k) {
              Matrix& kg = gr.grad_mut(ki);
              for (std::size_t j = 0; j < nk; ++j) {
                for (std::size_t t = 0; t < d; ++t) kg(j, off + t) += ds[j] * qval(i, off + t);
              }
            }
          }
        }
      });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  Graph& g = graph_of(x);
  const Matrix& xv = x.value();
  Matrix out(rows.size(), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.rows()) {
      throw IndexError("select_rows: row " + std::to_string(rows[r]) + " outside " +
                       xv.shape_string());
    }
    auto src = xv.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t xi = x.id;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.push(OpKind::SelectRows, {xi}, std::move(out),
                [xi, idx = std::move(idx)](Graph& gr, std::size_t self) {
                  const Matrix& og = gr.grad_mut(self);
                  Matrix& xg = gr.grad_mut(xi);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto src = og.row(r);
                    auto dst = xg.row(idx[r]);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

LossScalar softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = graph_of(logits);
  const Matrix& lv = logits.value();
  const std::size_t b = lv.rows(), classes = lv.cols();
  if (b == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(b) + " rows");
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto probs = std::make_shared<Matrix>(b, classes);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, lv(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(lv(i, c) - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t c = 0; c < classes; ++c) (*probs)(i, c) = std::exp(lv(i, c) - log_z);
    total += log_z - lv(i, static_cast<std::size_t>(labels[i]));
  }
  const double loss = total / static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t li = logits.id;
  Var node = g.push(OpKind::SoftmaxCrossEntropy, {li}, Matrix(1, 1, loss),
                    [li, probs, lab = std::move(lab)](Graph& gr, std::size_t self) {
                      const double up = gr.grad_mut(self)(0, 0);
                      Matrix& lg = gr.grad_mut(li);
                      const double inv_b = 1.0 / static_cast<double>(probs->rows());
                      for (std::size_t i = 0; i < probs->rows(); ++i) {
                        for (std::size_t c = 0; c < probs->cols(); ++c) {
                          double p = (*probs)(i, c);
                          if (static_cast<int>(c) == lab[i]) p -= 1.0;
                          lg(i, c) += up * p * inv_b;
                        }
                      }
                    });
  return LossScalar{loss, node};
}

LossScalar as_loss(Var scalar) {
  const Matrix& v = scalar.value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("as_loss: expected a 1x1 node, got " + v.shape_string());
  }
  return LossScalar{v(0, 0), scalar};
}

}  // namespace xprompt::nk
