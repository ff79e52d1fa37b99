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

#ifndef DOTRESIZE_SWEEP_H_
#define DOTRESIZE_SWEEP_H_

// Grid runs over sparsity, Sinkhorn regularization and calibration budget.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dotresize/calib.h"
#include "dotresize/compressor.h"
#include "dotresize/eval.h"

namespace dotresize::eval {

struct SweepGrid {
  std::vector<double> sparsities = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> lambdas = {0.01, 0.1, 1.0, 5.0, 10.0};
  std::vector<std::size_t> budgets = {1u << 16, 1u << 17, 1u << 18, 1u << 19};
  std::vector<compress::Strategy> strategies = {compress::Strategy::kDotResize};
};

struct SweepOptions {
  std::filesystem::path out_dir;
  std::size_t seq_len = 128;       // calibration window length
  std::size_t eval_seq_len = 128;  // evaluation window length
  std::uint64_t seed = 0;
  int workers = 1;
  bool timing = true;
  // Everything in the spec except strategy, sparsity and lambda.
  compress::CompressionSpec base;
};

struct SweepCell {
  compress::CompressionSpec spec;
  std::size_t budget = 0;

  // File stem unique within a grid, e.g. "dotresize_s0.2_l0.1_b65536".
  std::string id() const;
};

struct SweepResult {
  SweepCell cell;
  std::optional<EvalReport> report;
  std::string error;     // empty on success
  bool resumed = false;  // loaded from an existing report file
};

std::vector<SweepCell> expand_grid(const SweepGrid& grid, const SweepOptions& options);

// Runs every cell (up to `workers` at once), writing one report JSON per cell
// into out_dir and skipping cells whose report already exists. Cell failures
// are recorded, not thrown.
std::vector<SweepResult> sweep(const model::Model& folded, const calib::TokenStream& calib,
                               std::span<const std::uint32_t> eval_stream,
                               const SweepGrid& grid, const SweepOptions& options);

// strategy,sparsity,lambda,budget,ppl,kl,top1,params,ms_per_token
std::string sweep_csv(const std::vector<SweepResult>& results);

}  // namespace dotresize::eval

#endif  // DOTRESIZE_SWEEP_H_
