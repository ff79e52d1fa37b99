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

#ifndef DOTRESIZE_EVAL_H_
#define DOTRESIZE_EVAL_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dotresize/compressor.h"
#include "dotresize/model.h"

namespace dotresize::eval {

inline constexpr int kReportSchemaVersion = 1;

// Anything that maps a token sequence to (seq x vocab) logits.
using LogitsFn = std::function<Matrix(model::TokenSpan)>;

LogitsFn logits_of(const model::Model& model);

// exp of the mean next-token NLL (natural log) over floor(n / seq_len)
// non-overlapping windows; each window predicts its positions 1..seq_len-1.
// Throws kStreamTooShort unless n >= seq_len + 1.
double perplexity(const LogitsFn& logits, std::span<const std::uint32_t> stream,
                  std::size_t seq_len);
double perplexity(const model::Model& model, std::span<const std::uint32_t> stream,
                  std::size_t seq_len);

struct Divergence {
  double mean_kl = 0.0;         // KL(softmax(a) || softmax(b)), nats
  double top1_agreement = 1.0;  // argmax ties go to the lower token id
  std::size_t positions = 0;
};

// Same windows and predicted positions as perplexity().
Divergence divergence(const LogitsFn& a, const LogitsFn& b,
                      std::span<const std::uint32_t> stream, std::size_t seq_len);
Divergence divergence(const model::Model& a, const model::Model& b,
                      std::span<const std::uint32_t> stream, std::size_t seq_len);

// Sum of stored tensor sizes.
std::uint64_t param_count(const model::Model& model);

// Closed form from the config alone: embedding and head, per-layer
// projections, RMSNorm scales while unfolded, and 2 * width^2 adapter
// entries per layer for compressed models.
std::uint64_t param_count_formula(const model::ModelConfig& config);

struct ParamReport {
  std::uint64_t original = 0;
  std::uint64_t compressed = 0;
  double ratio = 1.0;             // compressed / original
  std::int64_t savings = 0;       // original - compressed, may be negative
  bool negative_savings = false;  // adapter overhead outweighs the reduction
  std::int64_t per_layer_savings = 0;
  std::uint64_t adapter_params = 0;

  nlohmann::json to_json() const;
};

ParamReport compare_params(const model::Model& original, const model::Model& compressed);

// Single-threaded wall clock of full-sequence forward passes, ms per token.
double ms_per_token(const model::Model& model, std::span<const std::uint32_t> stream,
                    std::size_t seq_len, std::size_t max_windows = 4);

struct EvalReport {
  std::string original_id;
  std::string compressed_id;
  nlohmann::json spec;  // echo of the compression spec, null when absent
  std::optional<std::size_t> calib_budget;
  double original_perplexity = 0.0;
  double perplexity = 0.0;
  double mean_kl = 0.0;
  double top1_agreement = 1.0;
  ParamReport params;
  double ms_per_token = 0.0;
  double original_ms_per_token = 0.0;
  nlohmann::json junctions = nlohmann::json::array();

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // True when every numeric field is finite and within its range.
  bool valid() const;
};

struct EvalOptions {
  std::size_t seq_len = 128;
  bool timing = true;
};

// Compares a compressed model (or any second model) against the original.
EvalReport evaluate(const model::Model& original, const model::Model& candidate,
                    std::span<const std::uint32_t> stream, const EvalOptions& options);

// Writes `text` to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace dotresize::eval

#endif  // DOTRESIZE_EVAL_H_
