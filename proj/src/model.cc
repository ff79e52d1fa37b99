// Copyright 2026 The dotresize Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dotresize/model.h"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "dotresize/error.h"

namespace dotresize::model {
namespace {

// Box-Muller over mt19937_64 so seeded weights do not depend on the standard
// library's distribution implementation.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u1 == 0.0);
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols, double scale) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * next();
    }
    return m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void round_matrix(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

}  // namespace

std::string precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw Error(ErrorCode::kInvalidConfig, "unknown precision '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || n_kv_heads < 1 || d_head < 1 ||
      d_ff < 1 || vocab_size < 1) {
    fail("all model dimensions must be >= 1");
  }
  if (n_kv_heads > n_heads || n_heads % n_kv_heads != 0) {
    fail("n_kv_heads must divide n_heads");
  }
  if (d_head % 2 != 0) fail("d_head must be even for rotary embeddings");
  if (!(rope_base > 0.0) || !(norm_eps >= 0.0)) fail("rope_base > 0 and norm_eps >= 0 required");
  if (residual_width) {
    if (*residual_width < 1 || *residual_width > d_model) {
      fail("residual_width must lie in [1, d_model]");
    }
    if (!norms_folded) fail("compressed models must have folded norms");
  }
}

int JunctionId::index() const {
  switch (kind) {
    case Kind::kEmbeddingOut: return 0;
    case Kind::kAttnOut: return 2 * layer + 1;
    case Kind::kFfnOut: return 2 * layer + 2;
  }
  return -1;
}

JunctionId JunctionId::from_index(int index) {
  if (index < 0) throw Error(ErrorCode::kInvalidJunction, "negative junction index");
  if (index == 0) return embedding_out();
  const int layer = (index - 1) / 2;
  return index % 2 == 1 ? attn_out(layer) : ffn_out(layer);
}

std::string JunctionId::name() const {
  switch (kind) {
    case Kind::kEmbeddingOut: return "embedding_out";
    case Kind::kAttnOut: return "attn_out." + std::to_string(layer);
    case Kind::kFfnOut: return "ffn_out." + std::to_string(layer);
  }
  return "?";
}

void apply_rope(Matrix& x, int n_heads, int d_head, double base) {
  const int half = d_head / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(base, -2.0 * i / static_cast<double>(d_head));
    for (Eigen::Index pos = 0; pos < x.rows(); ++pos) {
      const double angle = static_cast<double>(pos) * freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      for (int h = 0; h < n_heads; ++h) {
        const Eigen::Index lo = h * d_head + i;
        const Eigen::Index hi = lo + half;
        const double x1 = x(pos, lo);
        const double x2 = x(pos, hi);
        x(pos, lo) = x1 * c - x2 * s;
        x(pos, hi) = x1 * s + x2 * c;
      }
    }
  }
}

Matrix attention_block(const ModelConfig& config, const LayerWeights& layer, const Matrix& h) {
  const Eigen::Index seq = h.rows();
  const int d_head = config.d_head;
  const int group = config.n_heads / config.n_kv_heads;
  Matrix q = h * layer.wq;
  Matrix k = h * layer.wk;
  const Matrix v = h * layer.wv;
  apply_rope(q, config.n_heads, d_head, config.rope_base);
  apply_rope(k, config.n_kv_heads, d_head, config.rope_base);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  Matrix mixed(seq, config.attn_width());
  for (int head = 0; head < config.n_heads; ++head) {
    const int kv = head / group;
    Matrix scores = q.middleCols(head * d_head, d_head) *
                    k.middleCols(kv * d_head, d_head).transpose() * scale;
    for (Eigen::Index i = 0; i < seq; ++i) {
      // Causal: position i sees 0..i.
      const double peak = scores.row(i).head(i + 1).maxCoeff();
      double total = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        scores(i, j) = std::exp(scores(i, j) - peak);
        total += scores(i, j);
      }
      scores.row(i).head(i + 1) /= total;
      scores.row(i).tail(seq - i - 1).setZero();
    }
    mixed.middleCols(head * d_head, d_head) = scores * v.middleCols(kv * d_head, d_head);
  }
  return mixed * layer.wo;
}

Matrix ffn_block(const LayerWeights& layer, const Matrix& h) {
  const Eigen::ArrayXXd gate = (h * layer.wgate).array();
  const Eigen::ArrayXXd up = (h * layer.wup).array();
  const Eigen::ArrayXXd silu = gate / (1.0 + (-gate).exp());
  return (silu * up).matrix() * layer.wdown;
}

Matrix norm(const Matrix& x, const Vector& scale, double eps) {
  Matrix out = linalg::rmsnorm_rows(x, eps);
  if (scale.size() > 0) out = out * scale.asDiagonal();
  return out;
}

Matrix embed_tokens(const Model& model, TokenSpan tokens) {
  Matrix x(static_cast<Eigen::Index>(tokens.size()), model.embed.cols());
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    if (tokens[p] >= static_cast<std::uint32_t>(model.config.vocab_size)) {
      throw Error(ErrorCode::kTokenOutOfRange,
                  "token " + std::to_string(tokens[p]) + " >= vocab " +
                      std::to_string(model.config.vocab_size));
    }
    x.row(static_cast<Eigen::Index>(p)) = model.embed.row(tokens[p]);
  }
  return x;
}

Matrix advance(const Model& model, int junction_index, const Matrix& stream) {
  if (junction_index < 1 || junction_index >= model.config.n_junctions()) {
    throw Error(ErrorCode::kInvalidJunction,
                "cannot advance to junction " + std::to_string(junction_index));
  }
  const JunctionId junction = JunctionId::from_index(junction_index);
  const LayerWeights& layer = model.layers[static_cast<std::size_t>(junction.layer)];
  const double eps = model.config.norm_eps;
  if (junction.kind == JunctionId::Kind::kAttnOut) {
    Matrix out = attention_block(model.config, layer, norm(stream, layer.norm_attn, eps));
    if (layer.adapter_attn.size() > 0) return stream * layer.adapter_attn + out;
    return stream + out;
  }
  Matrix out = ffn_block(layer, norm(stream, layer.norm_ffn, eps));
  if (layer.adapter_ffn.size() > 0) return stream * layer.adapter_ffn + out;
  return stream + out;
}

Matrix logits_from_stream(const Model& model, const Matrix& stream) {
  return norm(stream, model.norm_final, model.config.norm_eps) * model.head;
}

Matrix forward(const Model& model, TokenSpan tokens) {
  if (tokens.empty()) throw Error(ErrorCode::kTokenOutOfRange, "empty token sequence");
  Matrix stream = embed_tokens(model, tokens);
  for (int j = 1; j < model.config.n_junctions(); ++j) stream = advance(model, j, stream);
  return logits_from_stream(model, stream);
}

ot::ActivationMatrix capture_activations(const Model& model,
                                         std::span<const std::vector<std::uint32_t>> sequences,
                                         JunctionId junction) {
  const int target = junction.index();
  if (junction.layer < 0 || junction.layer >= model.config.n_layers ||
      target >= model.config.n_junctions()) {
    throw Error(ErrorCode::kInvalidJunction, junction.name() + " not in model");
  }
  Eigen::Index total = 0;
  for (const auto& seq : sequences) total += static_cast<Eigen::Index>(seq.size());
  if (total < 1) throw Error(ErrorCode::kInvalidJunction, "no tokens to capture");

  ot::ActivationMatrix acts;
  acts.values.resize(model.config.width(), total);
  Eigen::Index column = 0;
  for (const auto& seq : sequences) {
    Matrix stream = embed_tokens(model, seq);
    for (int j = 1; j <= target; ++j) stream = advance(model, j, stream);
    acts.values.middleCols(column, stream.rows()) = stream.transpose();
    column += stream.rows();
  }
  return acts;
}

Model fold_rmsnorm(const Model& model) {
  if (model.config.norms_folded) {
    throw Error(ErrorCode::kAlreadyFolded, "RMSNorm scales are already folded");
  }
  Model out = model;
  for (LayerWeights& layer : out.layers) {
    const auto attn = layer.norm_attn.asDiagonal();
    layer.wq = attn * layer.wq;
    layer.wk = attn * layer.wk;
    layer.wv = attn * layer.wv;
    const auto ffn = layer.norm_ffn.asDiagonal();
    layer.wup = ffn * layer.wup;
    layer.wgate = ffn * layer.wgate;
    layer.norm_attn.resize(0);
    layer.norm_ffn.resize(0);
  }
  out.head = out.norm_final.asDiagonal() * out.head;
  out.norm_final.resize(0);
  out.config.norms_folded = true;
  round_to_precision(out);
  return out;
}

void round_to_precision(Model& model) {
  if (model.config.precision != Precision::kF32) return;
  round_matrix(model.embed);
  round_matrix(model.head);
  for (LayerWeights& layer : model.layers) {
    for (Matrix* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.wup, &layer.wgate,
                      &layer.wdown, &layer.adapter_attn, &layer.adapter_ffn}) {
      round_matrix(*m);
    }
    for (Vector* v : {&layer.norm_attn, &layer.norm_ffn}) {
      Matrix m = *v;
      round_matrix(m);
      *v = m;
    }
  }
  Matrix final_norm = model.norm_final;
  round_matrix(final_norm);
  model.norm_final = final_norm;
}

Model generate_toy(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.residual_width || config.norms_folded) {
    throw Error(ErrorCode::kInvalidConfig, "toy models start uncompressed and unfolded");
  }
  GaussianSource rng(seed);
  const int d = config.d_model;
  auto fan_in = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  auto norm_scale = [&](int n) {
    Vector g(n);
    for (int i = 0; i < n; ++i) g(i) = 1.0 + 0.1 * rng.next();
    return g;
  };

  Model m;
  m.config = config;
  m.embed = rng.matrix(config.vocab_size, d, 0.02);
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (LayerWeights& layer : m.layers) {
    layer.wq = rng.matrix(d, config.attn_width(), fan_in(d));
    layer.wk = rng.matrix(d, config.kv_width(), fan_in(d));
    layer.wv = rng.matrix(d, config.kv_width(), fan_in(d));
    layer.wo = rng.matrix(config.attn_width(), d, fan_in(config.attn_width()));
    layer.wup = rng.matrix(d, config.d_ff, fan_in(d));
    layer.wgate = rng.matrix(d, config.d_ff, fan_in(d));
    layer.wdown = rng.matrix(config.d_ff, d, fan_in(config.d_ff));
    layer.norm_attn = norm_scale(d);
    layer.norm_ffn = norm_scale(d);
  }
  m.norm_final = norm_scale(d);
  m.head = rng.matrix(d, config.vocab_size, fan_in(d));
  round_to_precision(m);
  return m;
}

}  // namespace dotresize::model
