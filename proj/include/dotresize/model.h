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

#ifndef DOTRESIZE_MODEL_H_
#define DOTRESIZE_MODEL_H_

// Minimal pre-norm decoder-only transformer: RMSNorm, rotary positions,
// grouped-query attention and a SiLU-gated feed-forward block.
//
// Row-vector convention throughout: a token's residual vector x is a row and
// every projection computes x * W, so W_Q is d_model x (n_heads * d_head),
// W_down is d_ff x d_model and the head is d_model x vocab.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dotresize/linalg.h"
#include "dotresize/transport.h"

namespace dotresize::model {

enum class Precision { kF32, kF64 };

std::string precision_name(Precision p);
Precision parse_precision(const std::string& name);

struct ModelConfig {
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int n_kv_heads = 0;
  int d_head = 0;
  int d_ff = 0;
  int vocab_size = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  Precision precision = Precision::kF32;
  bool norms_folded = false;
  // Set only for compressed models; the residual stream then carries this
  // width and every layer owns two residual adapters.
  std::optional<int> residual_width;

  int attn_width() const { return n_heads * d_head; }
  int kv_width() const { return n_kv_heads * d_head; }
  int width() const { return residual_width.value_or(d_model); }
  int n_junctions() const { return 2 * n_layers + 1; }

  // Throws kInvalidConfig.
  void validate() const;
};

struct LayerWeights {
  Matrix wq, wk, wv;   // width x attn/kv width
  Matrix wo;           // attn width x width
  Matrix wup, wgate;   // width x d_ff
  Matrix wdown;        // d_ff x width
  Vector norm_attn;    // empty once folded
  Vector norm_ffn;
  Matrix adapter_attn;  // width x width, compressed models only
  Matrix adapter_ffn;
};

struct Model {
  ModelConfig config;
  Matrix embed;  // vocab x width
  std::vector<LayerWeights> layers;
  Vector norm_final;  // empty once folded
  Matrix head;        // width x vocab

  bool compressed() const { return config.residual_width.has_value(); }
};

// Residual junctions in stream order: embedding_out, attn_out(0), ffn_out(0),
// attn_out(1), ...; index 0 .. 2 * n_layers.
struct JunctionId {
  enum class Kind { kEmbeddingOut, kAttnOut, kFfnOut };
  Kind kind = Kind::kEmbeddingOut;
  int layer = 0;

  int index() const;
  static JunctionId from_index(int index);
  static JunctionId embedding_out() { return {Kind::kEmbeddingOut, 0}; }
  static JunctionId attn_out(int layer) { return {Kind::kAttnOut, layer}; }
  static JunctionId ffn_out(int layer) { return {Kind::kFfnOut, layer}; }
  std::string name() const;

  auto operator<=>(const JunctionId& other) const { return index() <=> other.index(); }
  bool operator==(const JunctionId& other) const { return index() == other.index(); }
};

using TokenSpan = std::span<const std::uint32_t>;

// Rotary embedding applied in place to each head of a (seq x heads*d_head)
// block, rotating dimension pairs (i, i + d_head / 2).
void apply_rope(Matrix& x, int n_heads, int d_head, double base);

// Causal grouped-query attention on already normalized input h; returns the
// block output after W_O.
Matrix attention_block(const ModelConfig& config, const LayerWeights& layer, const Matrix& h);

// (silu(h W_gate) * (h W_up)) W_down.
Matrix ffn_block(const LayerWeights& layer, const Matrix& h);

// Applies the optional RMSNorm scale after unweighted normalization.
Matrix norm(const Matrix& x, const Vector& scale, double eps);

// Token embeddings for one sequence (seq x width). Throws kTokenOutOfRange.
Matrix embed_tokens(const Model& model, TokenSpan tokens);

// Advances the residual stream from junction index - 1 to junction index
// (index >= 1), including the residual adapter when present.
Matrix advance(const Model& model, int junction_index, const Matrix& stream);

// Final norm and head.
Matrix logits_from_stream(const Model& model, const Matrix& stream);

// Full forward pass, seq x vocab logits.
Matrix forward(const Model& model, TokenSpan tokens);

// Residual stream at the junction for every token of every sequence,
// transposed to neurons x tokens. Throws kInvalidJunction.
ot::ActivationMatrix capture_activations(const Model& model,
                                         std::span<const std::vector<std::uint32_t>> sequences,
                                         JunctionId junction);

// Absorbs every RMSNorm scale into the matrices that consume the norm output.
// Throws kAlreadyFolded.
Model fold_rmsnorm(const Model& model);

// Rounds all weights to the declared storage precision.
void round_to_precision(Model& model);

// Seeded Gaussian weights: matrices scaled by 1/sqrt(fan_in), embedding by
// 0.02, norm scales drawn around 1.
Model generate_toy(const ModelConfig& config, std::uint64_t seed);

// Weight container v1.
void save_container(const Model& model, const std::filesystem::path& path);
Model load_container(const std::filesystem::path& path);

}  // namespace dotresize::model

#endif  // DOTRESIZE_MODEL_H_
