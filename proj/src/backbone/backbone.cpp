#include "xprompt/backbone.hpp"

#include <cmath>

#include "xprompt/errors.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/storage.hpp"

namespace xprompt {

void BackboneConfig::validate(std::size_t pieces) const {
  auto fail = [](const std::string& msg) { throw ConfigError("backbone config: " + msg); };
  if (vocab_size < 8) fail("vocab_size must be at least 8, got " + std::to_string(vocab_size));
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (heads == 0 || embed_dim % heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
         std::to_string(heads));
  }
  if (pieces == 0 || embed_dim % pieces != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by piece count " +
         std::to_string(pieces));
  }
  if (layers == 0) fail("layers must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

FrozenBackbone FrozenBackbone::init(const BackboneConfig& cfg) {
  cfg.validate();
  FrozenBackbone bb;
  bb.cfg_ = cfg;
  const std::size_t e = cfg.embed_dim;
  bb.token_embeddings_ = Matrix(cfg.vocab_size, e);
  bb.position_embeddings_ = Matrix(cfg.max_seq_len, e);
  bb.layers_.resize(cfg.layers);
  for (EncoderLayer& l : bb.layers_) {
    l.ln1_gain = Matrix(1, e, 1.0);
    l.ln1_bias = Matrix(1, e);
    l.wq = Matrix(e, e);
    l.wk = Matrix(e, e);
    l.wv = Matrix(e, e);
    l.wo = Matrix(e, e);
    l.ln2_gain = Matrix(1, e, 1.0);
    l.ln2_bias = Matrix(1, e);
    l.ffn_in = Matrix(e, cfg.ffn_dim);
    l.ffn_in_bias = Matrix(1, cfg.ffn_dim);
    l.ffn_out = Matrix(cfg.ffn_dim, e);
    l.ffn_out_bias = Matrix(1, e);
  }
  bb.final_ln_gain_ = Matrix(1, e, 1.0);
  bb.final_ln_bias_ = Matrix(1, e);
  bb.head_ = Matrix(e, cfg.num_classes);
  bb.head_bias_ = Matrix(1, cfg.num_classes);

  // Gains stay at 1 and biases at 0; everything else is N(0, init_std).
  Rng rng(cfg.seed);
  bb.for_each_weight_mut([&](const std::string& name, Matrix& w) {
    if (name.ends_with("gain") || name.ends_with("bias")) return;
    for (double& v : w.values()) v = rng.normal(0.0, cfg.init_std);
  });
  return bb;
}

void FrozenBackbone::for_each_weight(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  fn("token_embeddings", token_embeddings_);
  fn("position_embeddings", position_embeddings_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const EncoderLayer& l = layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    fn(p + "ln1_gain", l.ln1_gain);
    fn(p + "ln1_bias", l.ln1_bias);
    fn(p + "wq", l.wq);
    fn(p + "wk", l.wk);
    fn(p + "wv", l.wv);
    fn(p + "wo", l.wo);
    fn(p + "ln2_gain", l.ln2_gain);
    fn(p + "ln2_bias", l.ln2_bias);
    fn(p + "ffn_in", l.ffn_in);
    fn(p + "ffn_in_bias", l.ffn_in_bias);
    fn(p + "ffn_out", l.ffn_out);
    fn(p + "ffn_out_bias", l.ffn_out_bias);
  }
  fn("final_ln_gain", final_ln_gain_);
  fn("final_ln_bias", final_ln_bias_);
  fn("head", head_);
  fn("head_bias", head_bias_);
}

void FrozenBackbone::for_each_weight_mut(
    const std::function<void(const std::string&, Matrix&)>& fn) {
  if (frozen_) throw StateError("backbone is frozen; weights cannot be modified");
  const FrozenBackbone& self = *this;
  self.for_each_weight(
      [&](const std::string& name, const Matrix& w) { fn(name, const_cast<Matrix&>(w)); });
}

std::string FrozenBackbone::content_hash() const {
  std::string acc;
  for_each_weight([&](const std::string& name, const Matrix& w) {
    acc += name + ":" + w.shape_string() + ":" + matrix_hash(w) + "\n";
  });
  return sha256_hex(acc);
}

void FrozenBackbone::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.set("format", "xprompt-backbone-v1");
  m.set("vocab_size", cfg_.vocab_size);
  m.set("embed_dim", cfg_.embed_dim);
  m.set("layers", cfg_.layers);
  m.set("heads", cfg_.heads);
  m.set("ffn_dim", cfg_.ffn_dim);
  m.set("max_seq_len", cfg_.max_seq_len);
  m.set("num_classes", cfg_.num_classes);
  m.set("seed", std::to_string(cfg_.seed));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", cfg_.init_std);
  m.set("init_std", std::string(buf));
  m.set("frozen", frozen_);
  m.set("content_hash", content_hash());
  for_each_weight([&](const std::string& name, const Matrix& w) {
    write_blob(dir / (name + ".f64"), w);
    m.set("weight." + name + ".shape", shape_token(w));
    m.set("weight." + name + ".sha256", matrix_hash(w));
  });
  m.save(dir / "manifest.txt");
}

FrozenBackbone FrozenBackbone::load(const std::filesystem::path& dir) {
  const Manifest m = Manifest::load(dir / "manifest.txt");
  if (m.get("format") != "xprompt-backbone-v1") {
    throw ParseError(dir.string() + ": unsupported backbone format '" + m.get("format") + "'");
  }
  BackboneConfig cfg;
  cfg.vocab_size = m.get_count("vocab_size");
  cfg.embed_dim = m.get_count("embed_dim");
  cfg.layers = m.get_count("layers");
  cfg.heads = m.get_count("heads");
  cfg.ffn_dim = m.get_count("ffn_dim");
  cfg.max_seq_len = m.get_count("max_seq_len");
  cfg.num_classes = m.get_count("num_classes");
  cfg.seed = std::stoull(m.get("seed"));
  cfg.init_std = std::stod(m.get("init_std"));
  FrozenBackbone bb = init(cfg);
  bb.for_each_weight_mut([&](const std::string& name, Matrix& w) {
    const auto [r, c] = parse_shape_token(m.get("weight." + name + ".shape"));
    if (r != w.rows() || c != w.cols()) {
      throw ParseError(dir.string() + ": weight " + name + " has shape " + std::to_string(r) +
                       "x" + std::to_string(c) + ", config implies " + w.shape_string());
    }
    w = read_blob(dir / (name + ".f64"), r, c);
    if (matrix_hash(w) != m.get("weight." + name + ".sha256")) {
      throw ParseError(dir.string() + ": content hash mismatch for weight " + name);
    }
  });
  bb.frozen_ = m.get_bool("frozen");
  if (bb.content_hash() != m.get("content_hash")) {
    throw ParseError(dir.string() + ": backbone content hash mismatch");
  }
  return bb;
}

BoundBackbone bind(nk::Graph& graph, const FrozenBackbone& bb, bool track_gradients) {
  BoundBackbone b;
  b.backbone = &bb;
  b.graph = &graph;
  auto leaf = [&](const Matrix& m) { return graph.borrow(m, track_gradients); };
  b.token_embeddings = leaf(bb.token_embeddings());
  b.position_embeddings = leaf(bb.position_embeddings());
  for (const EncoderLayer& l : bb.layers()) {
    b.layers.push_back({leaf(l.ln1_gain), leaf(l.ln1_bias), leaf(l.wq), leaf(l.wk), leaf(l.wv),
                        leaf(l.wo), leaf(l.ln2_gain), leaf(l.ln2_bias), leaf(l.ffn_in),
                        leaf(l.ffn_in_bias), leaf(l.ffn_out), leaf(l.ffn_out_bias)});
  }
  b.final_ln_gain = leaf(bb.final_ln_gain());
  b.final_ln_bias = leaf(bb.final_ln_bias());
  b.head = leaf(bb.head());
  b.head_bias = leaf(bb.head_bias());
  return b;
}

namespace {

std::vector<int> position_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

void check_length(const BackboneConfig& cfg, std::size_t prompt_rows, std::size_t n) {
  if (n == 0) throw LengthError("empty input sequence");
  if (prompt_rows + n > cfg.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(prompt_rows) + " prompt rows + " +
                      std::to_string(n) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
}

}  // namespace

nk::Var encode(const BoundBackbone& bound, const nk::Var* prompt, std::span<const int> ids) {
  const BackboneConfig& cfg = bound.backbone->config();
  const std::size_t m = prompt != nullptr ? prompt->rows() : 0;
  check_length(cfg, m, ids.size());
  if (prompt != nullptr && prompt->cols() != cfg.embed_dim) {
    throw DimensionError("prompt width " + std::to_string(prompt->cols()) +
                         " does not match embed_dim " + std::to_string(cfg.embed_dim));
  }
  const auto pos = position_ids(ids.size());
  nk::Var x = nk::add(nk::embedding_lookup(bound.token_embeddings, ids),
                      nk::embedding_lookup(bound.position_embeddings, pos));
  if (m > 0) x = nk::concat_rows(*prompt, x);
  for (const BoundBackbone::Layer& l : bound.layers) {
    nk::Var h = nk::layer_norm(x, l.ln1_gain, l.ln1_bias);
    nk::Var q = nk::matmul(h, l.wq);
    nk::Var k = nk::matmul(h, l.wk);
    nk::Var v = nk::matmul(h, l.wv);
    nk::Var a = nk::matmul(nk::attention(q, k, v, cfg.heads), l.wo);
    x = nk::add(x, a);
    h = nk::layer_norm(x, l.ln2_gain, l.ln2_bias);
    h = nk::gelu(nk::add_row(nk::matmul(h, l.ffn_in), l.ffn_in_bias));
    h = nk::add_row(nk::matmul(h, l.ffn_out), l.ffn_out_bias);
    x = nk::add(x, h);
  }
  return nk::layer_norm(x, bound.final_ln_gain, bound.final_ln_bias);
}

nk::Var classify_pooled(const BoundBackbone& bound, nk::Var pooled) {
  return nk::add_row(nk::matmul(pooled, bound.head), bound.head_bias);
}

nk::Var forward_with_prompt(const BoundBackbone& bound, nk::Var prompt_rows,
                            std::span<const int> input_ids) {
  const std::vector<int> ids(input_ids.begin(), input_ids.end());
  return forward_batch(bound, &prompt_rows, std::span<const std::vector<int>>(&ids, 1));
}

namespace {

nk::Var pooled_logits(const BoundBackbone& bound, const nk::Var* prompt,
                      std::span<const std::vector<int>> inputs) {
  if (inputs.empty()) throw DataError("forward_batch: empty batch");
  const std::size_t m = prompt != nullptr ? prompt->rows() : 0;
  std::vector<nk::Var> pooled;
  pooled.reserve(inputs.size());
  for (const auto& ids : inputs) {
    nk::Var h = encode(bound, prompt, ids);
    pooled.push_back(nk::mean_pool(h, m));
  }
  nk::Var stacked = pooled.size() == 1 ? pooled[0] : nk::concat_rows(pooled);
  return classify_pooled(bound, stacked);
}

}  // namespace

nk::Var forward_batch(const BoundBackbone& bound, const nk::Var* prompt,
                      std::span<const std::vector<int>> inputs) {
  if (!bound.backbone->frozen()) {
    throw StateError("forward with prompt requires a frozen backbone");
  }
  return pooled_logits(bound, prompt, inputs);
}

PretrainLog pretrain(FrozenBackbone& bb, std::span<const std::vector<int>> corpus,
                     const PretrainOptions& options, std::span<const CuedTask> tasks) {
  if (bb.frozen()) throw StateError("pretrain: backbone is already frozen");
  PretrainLog log;
  if (options.steps == 0) {
    bb.freeze();
    return log;
  }
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  const BackboneConfig& cfg = bb.config();
  for (const CuedTask& t : tasks) {
    if (t.examples.empty()) throw DataError("pretrain: cued task with no examples");
    if (t.cue <= kMaskToken || static_cast<std::size_t>(t.cue) >= cfg.vocab_size) {
      throw ConfigError("pretrain: cue token " + std::to_string(t.cue) + " outside [1, " +
                        std::to_string(cfg.vocab_size) + ")");
    }
  }
  std::vector<std::size_t> task_cursor(tasks.size(), 0);

  // Adam state, one pair of moment matrices per weight in visiting order.
  std::vector<Matrix> m1, m2;
  bb.for_each_weight([&](const std::string&, const Matrix& w) {
    m1.emplace_back(w.rows(), w.cols());
    m2.emplace_back(w.rows(), w.cols());
  });
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Rng rng(mix_seed(cfg.seed, 0x5052455452414EULL));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  for (std::size_t step = 0; step < options.steps; ++step) {
    nk::Graph graph;
    BoundBackbone bound = bind(graph, bb, /*track_gradients=*/true);
    std::vector<nk::Var> logits_parts;
    std::vector<int> targets;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const std::vector<int>& seq = corpus[order[cursor++]];
      std::vector<int> masked = seq;
      std::vector<std::size_t> positions;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (rng.uniform01() < options.mask_probability) positions.push_back(i);
      }
      if (positions.empty()) positions.push_back(static_cast<std::size_t>(rng.below(seq.size())));
      for (std::size_t p : positions) {
        masked[p] = kMaskToken;
        targets.push_back(seq[p]);
      }
      nk::Var h = encode(bound, nullptr, masked);
      nk::Var sel = nk::select_rows(h, positions);
      logits_parts.push_back(nk::matmul_nt(sel, bound.token_embeddings));
    }
    nk::Var logits = nk::concat_rows(logits_parts);
    nk::LossScalar loss = nk::softmax_cross_entropy(logits, targets);
    if (!tasks.empty()) {
      // One cued classification batch per step, cycling through the tasks.
      // The cue embedding occupies the prompt slot.
      const CuedTask& task = tasks[step % tasks.size()];
      std::size_t& tc = task_cursor[step % tasks.size()];
      std::vector<std::vector<int>> inputs;
      std::vector<int> labels;
      for (std::size_t b = 0; b < options.batch_size; ++b) {
        const Example& ex = task.examples[tc];
        tc = (tc + 1) % task.examples.size();
        inputs.push_back(ex.tokens);
        labels.push_back(ex.label);
      }
      const std::vector<int> cue = {task.cue};
      nk::Var cue_row = nk::embedding_lookup(bound.token_embeddings, cue);
      nk::LossScalar cls =
          nk::softmax_cross_entropy(pooled_logits(bound, &cue_row, inputs), labels);
      loss = nk::as_loss(nk::add(loss.node, nk::scale(cls.node, options.task_weight)));
    }
    graph.backward(loss);
    log.losses.push_back(loss.value);

    // Collect gradients by matching leaf addresses to weights.
    std::vector<const Matrix*> grads;
    auto collect = [&](nk::Var v) { grads.push_back(&v.grad()); };
    collect(bound.token_embeddings);
    collect(bound.position_embeddings);
    for (const auto& l : bound.layers) {
      for (nk::Var v : {l.ln1_gain, l.ln1_bias, l.wq, l.wk, l.wv, l.wo, l.ln2_gain, l.ln2_bias,
                        l.ffn_in, l.ffn_in_bias, l.ffn_out, l.ffn_out_bias}) {
        collect(v);
      }
    }
    collect(bound.final_ln_gain);
    collect(bound.final_ln_bias);
    collect(bound.head);
    collect(bound.head_bias);

    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t);
    const double c2 = 1.0 - std::pow(kBeta2, t);
    std::size_t wi = 0;
    bb.for_each_weight_mut([&](const std::string&, Matrix& w) {
      auto g = grads[wi]->values();
      auto a = m1[wi].values();
      auto s = m2[wi].values();
      auto p = w.values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        a[i] = kBeta1 * a[i] + (1.0 - kBeta1) * g[i];
        s[i] = kBeta2 * s[i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= options.learning_rate * (a[i] / c1) / (std::sqrt(s[i] / c2) + kEps);
      }
      ++wi;
    });
  }
  bb.freeze();
  return log;
}

}  // namespace xprompt
