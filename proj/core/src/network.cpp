#include "masm/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "masm/error.hpp"

namespace masm {

namespace {

constexpr double kNormEps = 1e-5;

Matrix random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal(0.0, stddev);
  return m;
}

LayerNorm unit_norm(std::size_t d) {
  return LayerNorm{std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

Matrix norm_forward(const Matrix& x, const LayerNorm& p, NormCache& cache) {
  const std::size_t t = x.rows();
  const std::size_t d = x.cols();
  cache.xhat = Matrix(t, d);
  cache.rstd.assign(t, 0.0);
  Matrix y(t, d);
  for (std::size_t r = 0; r < t; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kNormEps);
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (row[c] - mean) * rstd;
      cache.xhat(r, c) = xh;
      y(r, c) = xh * p.gain[c] + p.bias[c];
    }
  }
  return y;
}

// Returns dL/dx and accumulates dL/dgain, dL/dbias.
Matrix norm_backward(const Matrix& dy, const LayerNorm& p, const NormCache& cache,
                     std::vector<double>& dgain, std::vector<double>& dbias) {
  const std::size_t t = dy.rows();
  const std::size_t d = dy.cols();
  Matrix dx(t, d);
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < t; ++r) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dgain[c] += dy(r, c) * cache.xhat(r, c);
      dbias[c] += dy(r, c);
      dxhat[c] = dy(r, c) * p.gain[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * cache.xhat(r, c);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) = cache.rstd[r] * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
    }
  }
  return dx;
}

void softmax_rows(Matrix& s) {
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

struct BlockCache {
  Matrix x_in;
  NormCache n1;
  Matrix h1, q, k, v, attn, z;
  Matrix x_mid;
  NormCache n2;
  Matrix h2, pre, act;
};

struct SampleCache {
  std::vector<BlockCache> blocks;
  std::vector<double> pooled;
};

using BlockWeights = std::array<Matrix, 4>;

std::vector<BlockWeights> effective_weights(const Model& model) {
  std::vector<BlockWeights> out;
  out.reserve(model.blocks.size());
  for (const auto& b : model.blocks) {
    out.push_back({b.attn[0].effective_weight(), b.attn[1].effective_weight(),
                   b.attn[2].effective_weight(), b.attn[3].effective_weight()});
  }
  return out;
}

void check_input(const Model& model, const TrainBatch& batch) {
  if (batch.inputs.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  if (batch.labels.size() != batch.inputs.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch labels and inputs differ in length");
  }
  const auto& cfg = model.config;
  for (const auto& x : batch.inputs) {
    if (x.rows() != cfg.n_tokens || x.cols() != cfg.d_model) {
      throw Error(ErrorCode::kShapeMismatch, "sample shape " + x.shape_string() +
                                                 " does not match model " +
                                                 std::to_string(cfg.n_tokens) + "x" +
                                                 std::to_string(cfg.d_model));
    }
  }
  const std::size_t n_out = model.head.rows();
  for (int y : batch.labels) {
    const bool ok = n_out == 1 ? (y == 0 || y == 1) : (y >= 0 && static_cast<std::size_t>(y) < n_out);
    if (!ok) throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range");
  }
}

// Pooled features of one sample; fills `cache` when non-null.
std::vector<double> forward_sample(const Model& model, const std::vector<BlockWeights>& weights,
                                   const Matrix& input, SampleCache* cache) {
  const std::size_t d = model.config.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix x = input + model.token_embed;
  if (cache) cache->blocks.resize(model.blocks.size());
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const Block& blk = model.blocks[b];
    const BlockWeights& w = weights[b];
    BlockCache local;
    BlockCache& c = cache ? cache->blocks[b] : local;
    c.x_in = x;
    c.h1 = norm_forward(x, blk.norm1, c.n1);
    c.q = matmul_nt(c.h1, w[kQuery]);
    c.k = matmul_nt(c.h1, w[kKey]);
    c.v = matmul_nt(c.h1, w[kValue]);
    c.attn = scale * matmul_nt(c.q, c.k);
    softmax_rows(c.attn);
    c.z = matmul(c.attn, c.v);
    x = x + matmul_nt(c.z, w[kOutput]);
    c.x_mid = x;
    c.h2 = norm_forward(x, blk.norm2, c.n2);
    c.pre = matmul_nt(c.h2, blk.mlp_in);
    c.act = c.pre;
    for (double& v : c.act.data()) v = gelu(v);
    x = x + matmul_nt(c.act, blk.mlp_out);
    if (!all_finite(x.data())) {
      throw Error(ErrorCode::kNonFinite, "non-finite activation in block " + std::to_string(b));
    }
  }
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t c = 0; c < d; ++c) pooled[c] += x(t, c);
  for (double& v : pooled) v /= static_cast<double>(x.rows());
  if (cache) cache->pooled = pooled;
  return pooled;
}

std::vector<double> head_logits(const Matrix& head, std::span<const double> pooled) {
  const std::size_t d = pooled.size();
  std::vector<double> z(head.rows());
  for (std::size_t o = 0; o < head.rows(); ++o) {
    z[o] = head(o, d);
    for (std::size_t c = 0; c < d; ++c) z[o] += head(o, c) * pooled[c];
  }
  return z;
}

std::vector<double> output_probabilities(std::vector<double> z) {
  if (z.size() == 1) return {sigmoid(z[0])};
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

double multiclass_loss(std::span<const double> probs, std::size_t n_out,
                       std::span<const int> labels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sum += std::log(std::max(probs[i * n_out + labels[i]], kProbabilityClamp));
  }
  return -sum / static_cast<double>(labels.size());
}

struct BlockGrads {
  std::vector<double> gain1, bias1, gain2, bias2;
  std::array<Matrix, 4> attn;
  Matrix mlp_in, mlp_out;
};

struct ModelGrads {
  Matrix embed;
  std::vector<BlockGrads> blocks;
  Matrix head;
};

ModelGrads zero_grads(const Model& model) {
  const auto& cfg = model.config;
  ModelGrads g;
  g.embed = Matrix(cfg.n_tokens, cfg.d_model);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockGrads bg;
    bg.gain1.assign(cfg.d_model, 0.0);
    bg.bias1.assign(cfg.d_model, 0.0);
    bg.gain2.assign(cfg.d_model, 0.0);
    bg.bias2.assign(cfg.d_model, 0.0);
    for (auto& m : bg.attn) m = Matrix(cfg.d_model, cfg.d_model);
    bg.mlp_in = Matrix(model.blocks[b].mlp_in.rows(), model.blocks[b].mlp_in.cols());
    bg.mlp_out = Matrix(model.blocks[b].mlp_out.rows(), model.blocks[b].mlp_out.cols());
    g.blocks.push_back(std::move(bg));
  }
  g.head = Matrix(model.head.rows(), model.head.cols());
  return g;
}

void backward_sample(const Model& model, const std::vector<BlockWeights>& weights,
                     const SampleCache& cache, std::span<const double> dlogits, ModelGrads& g) {
  const std::size_t d = model.config.d_model;
  const std::size_t n_tok = model.config.n_tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> dpooled(d, 0.0);
  for (std::size_t o = 0; o < model.head.rows(); ++o) {
    for (std::size_t c = 0; c < d; ++c) {
      g.head(o, c) += dlogits[o] * cache.pooled[c];
      dpooled[c] += dlogits[o] * model.head(o, c);
    }
    g.head(o, d) += dlogits[o];
  }
  Matrix dx(n_tok, d);
  for (std::size_t t = 0; t < n_tok; ++t)
    for (std::size_t c = 0; c < d; ++c) dx(t, c) = dpooled[c] / static_cast<double>(n_tok);

  for (std::size_t b = model.blocks.size(); b-- > 0;) {
    const Block& blk = model.blocks[b];
    const BlockCache& c = cache.blocks[b];
    const BlockWeights& w = weights[b];
    BlockGrads& bg = g.blocks[b];

    // x_out = x_mid + gelu(h2 W1^T) W2^T
    axpy(bg.mlp_out, matmul_tn(dx, c.act));
    Matrix dpre = matmul(dx, blk.mlp_out);
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data()[i] *= gelu_grad(c.pre.data()[i]);
    axpy(bg.mlp_in, matmul_tn(dpre, c.h2));
    const Matrix dh2 = matmul(dpre, blk.mlp_in);
    dx = dx + norm_backward(dh2, blk.norm2, c.n2, bg.gain2, bg.bias2);

    // x_mid = x_in + (softmax(q k^T * scale) v) Wo^T
    axpy(bg.attn[kOutput], matmul_tn(dx, c.z));
    const Matrix dz = matmul(dx, w[kOutput]);
    const Matrix dattn = matmul_nt(dz, c.v);
    const Matrix dv = matmul_tn(c.attn, dz);
    Matrix ds(n_tok, n_tok);
    for (std::size_t r = 0; r < n_tok; ++r) {
      double inner = 0.0;
      for (std::size_t j = 0; j < n_tok; ++j) inner += dattn(r, j) * c.attn(r, j);
      for (std::size_t j = 0; j < n_tok; ++j) ds(r, j) = c.attn(r, j) * (dattn(r, j) - inner) * scale;
    }
    const Matrix dq = matmul(ds, c.k);
    const Matrix dk = matmul_tn(ds, c.q);
    axpy(bg.attn[kQuery], matmul_tn(dq, c.h1));
    axpy(bg.attn[kKey], matmul_tn(dk, c.h1));
    axpy(bg.attn[kValue], matmul_tn(dv, c.h1));
    Matrix dh1 = matmul(dq, w[kQuery]);
    axpy(dh1, matmul(dk, w[kKey]));
    axpy(dh1, matmul(dv, w[kValue]));
    dx = dx + norm_backward(dh1, blk.norm1, c.n1, bg.gain1, bg.bias1);
  }
  axpy(g.embed, dx);
}

std::vector<double> flatten(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

void append(std::vector<double>& out, std::span<const double> values) {
  out.insert(out.end(), values.begin(), values.end());
}

}  // namespace

Matrix Projection::effective_weight() const {
  if (decomposed()) return recompose(layer());
  return dense();
}

const char* projection_name(std::size_t slot) noexcept {
  static constexpr const char* kNames[] = {"q", "k", "v", "o"};
  return slot < 4 ? kNames[slot] : "?";
}

std::vector<const DecomposedLayer*> Model::decomposed_layers() const {
  std::vector<const DecomposedLayer*> out;
  for (const auto& b : blocks)
    for (const auto& p : b.attn)
      if (p.decomposed()) out.push_back(&p.layer());
  return out;
}

Model init_model(const ModelConfig& config, Rng& rng) {
  if (config.d_model == 0 || config.n_blocks == 0 || config.n_tokens == 0 ||
      config.d_hidden == 0 || config.n_classes_pretrain < 2) {
    throw Error(ErrorCode::kInvalidArgument, "model config has a zero dimension or < 2 classes");
  }
  const std::size_t d = config.d_model;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  // Projections that write into the residual stream are scaled down with depth.
  const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_blocks));
  Model model;
  model.config = config;
  model.token_embed = random_matrix(config.n_tokens, d, 0.02, rng);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    Block blk;
    blk.norm1 = unit_norm(d);
    for (std::size_t slot = 0; slot < blk.attn.size(); ++slot) {
      const double std = slot == kOutput ? proj_std * depth_scale : proj_std;
      blk.attn[slot] = Projection(random_matrix(d, d, std, rng));
    }
    blk.norm2 = unit_norm(d);
    blk.mlp_in = random_matrix(config.d_hidden, d, proj_std, rng);
    blk.mlp_out =
        random_matrix(d, config.d_hidden,
                      depth_scale / std::sqrt(static_cast<double>(config.d_hidden)), rng);
    model.blocks.push_back(std::move(blk));
  }
  model.head = random_matrix(config.n_classes_pretrain, d + 1, proj_std, rng);
  for (std::size_t o = 0; o < model.head.rows(); ++o) model.head(o, d) = 0.0;
  return model;
}

void decompose_attention(Model& model, const DecompositionConfig& config) {
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    for (std::size_t s = 0; s < 4; ++s) {
      Projection& p = model.blocks[b].attn[s];
      if (p.decomposed()) continue;
      p = Projection(decompose(p.dense(), config, 4 * b + s));
    }
  }
  model.config.decomposition = config;
}

void reset_binary_head(Model& model, Rng& rng, double scale) {
  const std::size_t d = model.config.d_model;
  model.head = random_matrix(1, d + 1, scale / std::sqrt(static_cast<double>(d)), rng);
  model.head(0, d) = 0.0;
}

ForwardResult forward(const Model& model, const TrainBatch& batch) {
  check_input(model, batch);
  const auto weights = effective_weights(model);
  ForwardResult out;
  out.n_outputs = model.head.rows();
  out.probabilities.reserve(batch.size() * out.n_outputs);
  for (const auto& x : batch.inputs) {
    const auto pooled = forward_sample(model, weights, x, nullptr);
    const auto p = output_probabilities(head_logits(model.head, pooled));
    out.probabilities.insert(out.probabilities.end(), p.begin(), p.end());
  }
  return out;
}

LossReport objective(const Model& model, const TrainBatch& batch, const LossWeights& weights) {
  const ForwardResult fwd = forward(model, batch);
  LossReport report;
  if (!model.binary()) {
    report.cls = multiclass_loss(fwd.probabilities, fwd.n_outputs, batch.labels);
    report.total = report.cls;
    return report;
  }
  const double cls = cls_loss(fwd.probabilities, batch.labels);
  const auto layers = model.decomposed_layers();
  if (layers.empty()) {
    report.cls = cls;
    report.total = cls;
    return report;
  }
  return total_loss(cls, layers, weights);
}

std::vector<ParameterGroup> parameter_groups(Model& model, TrainScope scope) {
  std::vector<ParameterGroup> groups;
  auto vec = [](std::vector<double>& v) { return std::span<double>(v); };
  if (scope == TrainScope::kFull) {
    groups.push_back({"embed", std::nullopt, {model.token_embed.data()}});
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      Block& blk = model.blocks[b];
      const std::string prefix = "block" + std::to_string(b) + ".";
      groups.push_back({prefix + "norm1", std::nullopt, {vec(blk.norm1.gain), vec(blk.norm1.bias)}});
      for (std::size_t s = 0; s < 4; ++s) {
        if (blk.attn[s].decomposed()) {
          throw Error(ErrorCode::kInvalidArgument, "full training requires dense projections");
        }
        groups.push_back({prefix + projection_name(s), std::nullopt, {blk.attn[s].dense().data()}});
      }
      groups.push_back({prefix + "norm2", std::nullopt, {vec(blk.norm2.gain), vec(blk.norm2.bias)}});
      groups.push_back({prefix + "mlp_in", std::nullopt, {blk.mlp_in.data()}});
      groups.push_back({prefix + "mlp_out", std::nullopt, {blk.mlp_out.data()}});
    }
  } else {
    const bool want_decomposed = scope == TrainScope::kArtifacts;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      for (std::size_t s = 0; s < 4; ++s) {
        Projection& p = model.blocks[b].attn[s];
        if (p.decomposed() != want_decomposed) {
          throw Error(ErrorCode::kInvalidArgument,
                      want_decomposed ? "artifact fine-tuning requires decomposed projections"
                                      : "dense fine-tuning requires dense projections");
        }
        ParameterGroup g;
        g.name = "block" + std::to_string(b) + "." + projection_name(s);
        g.layer = 4 * b + s;
        if (want_decomposed) {
          for (auto& a : p.layer().artifacts) {
            g.slices.push_back(a.u.data());
            g.slices.push_back(vec(a.s));
            g.slices.push_back(a.v.data());
          }
        } else {
          g.slices.push_back(p.dense().data());
        }
        groups.push_back(std::move(g));
      }
    }
  }
  groups.push_back({"head", std::nullopt, {model.head.data()}});
  return groups;
}

Gradients backward(const Model& model, const TrainBatch& batch, const LossWeights& weights,
                   TrainScope scope) {
  check_input(model, batch);
  const auto eff = effective_weights(model);
  const std::size_t n = batch.size();
  const std::size_t n_out = model.head.rows();
  ModelGrads g = zero_grads(model);

  std::vector<double> probs;
  probs.reserve(n * n_out);
  SampleCache cache;
  for (std::size_t i = 0; i < n; ++i) {
    forward_sample(model, eff, batch.inputs[i], &cache);
    auto p = output_probabilities(head_logits(model.head, cache.pooled));
    std::vector<double> dlogits(n_out);
    if (n_out == 1) {
      dlogits[0] = (p[0] - batch.labels[i]) / static_cast<double>(n);
    } else {
      for (std::size_t o = 0; o < n_out; ++o) {
        const double target = static_cast<int>(o) == batch.labels[i] ? 1.0 : 0.0;
        dlogits[o] = (p[o] - target) / static_cast<double>(n);
      }
    }
    backward_sample(model, eff, cache, dlogits, g);
    probs.insert(probs.end(), p.begin(), p.end());
  }

  Gradients out;
  const auto layers = model.decomposed_layers();
  if (!model.binary()) {
    out.loss.cls = multiclass_loss(probs, n_out, batch.labels);
    out.loss.total = out.loss.cls;
  } else if (layers.empty()) {
    out.loss.cls = cls_loss(probs, batch.labels);
    out.loss.total = out.loss.cls;
  } else {
    out.loss = total_loss(cls_loss(probs, batch.labels), layers, weights);
  }

  if (scope == TrainScope::kFull) {
    out.groups.push_back(flatten(g.embed));
    for (auto& bg : g.blocks) {
      std::vector<double> n1 = bg.gain1;
      append(n1, bg.bias1);
      out.groups.push_back(std::move(n1));
      for (auto& m : bg.attn) out.groups.push_back(flatten(m));
      std::vector<double> n2 = bg.gain2;
      append(n2, bg.bias2);
      out.groups.push_back(std::move(n2));
      out.groups.push_back(flatten(bg.mlp_in));
      out.groups.push_back(flatten(bg.mlp_out));
    }
  } else {
    const double n_layers = static_cast<double>(std::max<std::size_t>(layers.size(), 1));
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      for (std::size_t s = 0; s < 4; ++s) {
        const Projection& p = model.blocks[b].attn[s];
        const Matrix& dw = g.blocks[b].attn[s];
        if (scope == TrainScope::kAttentionDense) {
          out.groups.push_back(flatten(dw));
          continue;
        }
        const DecomposedLayer& layer = p.layer();
        Matrix total_dw = dw;
        if (model.binary() && weights.spec != 0.0) {
          axpy(total_dw, spec_loss_weight_gradient(layer, eff[b][s]), weights.spec / n_layers);
        }
        FactorGradient fg = FactorGradient::zeros_like(layer);
        accumulate_weight_gradient(layer, total_dw, fg);
        if (model.binary()) accumulate_orth_gradient(layer, weights.orth / n_layers, fg);
        std::vector<double> flat;
        flat.reserve(layer.trainable_count());
        for (std::size_t k = 0; k < layer.artifacts.size(); ++k) {
          append(flat, fg.du[k].data());
          append(flat, fg.ds[k]);
          append(flat, fg.dv[k].data());
        }
        out.groups.push_back(std::move(flat));
      }
    }
  }
  out.groups.push_back(flatten(g.head));
  return out;
}

}  // namespace masm
