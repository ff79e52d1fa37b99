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

#ifndef DOTRESIZE_COMPRESSOR_H_
#define DOTRESIZE_COMPRESSOR_H_

// Residual-width reduction. Every strategy produces one pair of maps per
// residual junction,
//
//   M     : d_orig x d_new, orthonormal columns (the transport side)
//   M_inv : d_new x d_orig                      (the untransport side)
//
// and all strategies share the same fusion into the weights: producers of a
// junction are post-multiplied by M, consumers pre-multiplied by M_inv, and
// each residual connection gets the adapter M_inv(previous) * M(next).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dotresize/model.h"
#include "dotresize/transport.h"

namespace dotresize::compress {

enum class Strategy { kDotResize, kMagnitudePrune, kPcaSlice, kPcaDotResize };
enum class NormKind { kL1, kL2 };
enum class PipelineMode { kSequential, kOneShot };
// How the l1 ground metric is scaled before the Sinkhorn solve.
enum class CostScaling { kMax, kNone };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
std::string pipeline_mode_name(PipelineMode m);
PipelineMode parse_pipeline_mode(const std::string& name);

struct MapOptions {
  double lambda = 0.1;
  NormKind support_norm = NormKind::kL2;
  CostScaling cost_scaling = CostScaling::kMax;
  bool center_costs = false;
  double sinkhorn_tol = 1e-9;
  int sinkhorn_max_iter = 10000;
  ot::SinkhornMode sinkhorn_mode = ot::SinkhornMode::kAuto;
};

struct JunctionMaps {
  Matrix m;
  Matrix m_inv;
  std::vector<std::size_t> support;  // empty for the PCA slice
  // Sinkhorn diagnostics, zero for strategies without a transport solve.
  double lambda = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

// d_new neurons with the largest mean per-token magnitude (l1: mean |x|,
// l2: root mean square), returned in ascending index order. Ties keep the
// lower index.
std::vector<std::size_t> select_support(const ot::ActivationMatrix& acts, std::size_t d_new,
                                        NormKind norm);

// l2 support, Sinkhorn plan on the l1 ground metric, rows rescaled, QR split:
// M = Q, M_inv = R * pinv(T). A solve that does not converge is retried once
// at 2 * lambda.
JunctionMaps build_dotresize_maps(const ot::ActivationMatrix& acts, std::size_t d_new,
                                  const MapOptions& options = {});

// Keeps the d_new highest-l2 neurons: M is the 0/1 selection matrix.
JunctionMaps build_prune_maps(const ot::ActivationMatrix& acts, std::size_t d_new);

// Leading eigenvectors of the uncentered second moment X X^T / t.
JunctionMaps build_pca_maps(const ot::ActivationMatrix& acts, std::size_t d_new);

// Transport in the PCA basis with l1 support selection: T_total = V * T.
JunctionMaps build_pca_dotresize_maps(const ot::ActivationMatrix& acts, std::size_t d_new,
                                      const MapOptions& options = {});

// ||X - X M M_inv||_F / ||X||_F with tokens as rows.
double reconstruction_error(const ot::ActivationMatrix& acts, const JunctionMaps& maps);

struct CompressionSpec {
  Strategy strategy = Strategy::kDotResize;
  double sparsity = 0.2;
  double lambda = 0.1;
  // Defaults to l2 for dotresize and pruning, l1 for pca_dotresize.
  std::optional<NormKind> support_norm;
  PipelineMode pipeline_mode = PipelineMode::kSequential;
  std::uint64_t seed = 0;
  bool rms_rescale = false;
  bool center_costs = false;
  CostScaling cost_scaling = CostScaling::kMax;

  int d_new(int d_orig) const;
  MapOptions map_options() const;
  void validate() const;
  nlohmann::json to_json() const;
};

struct JunctionReport {
  std::string junction;
  Strategy strategy = Strategy::kDotResize;
  int d_orig = 0;
  int d_new = 0;
  double lambda = 0.0;
  int iterations = 0;
  double residual = 0.0;
  std::vector<std::size_t> support;
  double reconstruction_error = 0.0;
};

struct CompressedModel {
  model::Model model;
  CompressionSpec spec;
  std::vector<JunctionReport> junctions;

  nlohmann::json manifest() const;
};

// Builds the maps for one junction according to the spec's strategy.
JunctionMaps build_maps(const CompressionSpec& spec, const ot::ActivationMatrix& acts,
                        std::size_t d_new);

// Junction-by-junction pipeline over an RMSNorm-folded model. After k steps
// junctions 0..k-1 are fused: their producers carry M, their residual
// adapters are set, and the consumers of junction k-1 carry M_inv. Everything
// downstream is still the original weights.
class Compressor {
 public:
  Compressor(const model::Model& folded, CompressionSpec spec,
             std::vector<std::vector<std::uint32_t>> calibration);

  int next_junction() const { return next_; }
  bool done() const { return next_ == original_.config.n_junctions(); }

  // Captures activations, builds and fuses the maps of the next junction.
  void step();

  // Partially fused weights; only a valid model once done().
  const model::Model& working_model() const { return working_; }
  const std::vector<JunctionMaps>& maps() const { return maps_; }

  CompressedModel finish();

 private:
  ot::ActivationMatrix junction_activations();
  void fuse(int junction, const JunctionMaps& maps);

  model::Model original_;
  model::Model working_;
  CompressionSpec spec_;
  std::vector<std::vector<std::uint32_t>> calibration_;
  int d_orig_ = 0;
  int d_new_ = 0;
  int next_ = 0;
  // Per calibration sequence: reduced-width stream (sequential mode) or the
  // original full-width stream (one-shot mode) at junction next_ - 1.
  std::vector<Matrix> streams_;
  std::vector<JunctionMaps> maps_;
  std::vector<JunctionReport> reports_;
};

// Runs every junction. Throws kInvalidConfig if the model is not folded.
CompressedModel compress(const model::Model& folded, const CompressionSpec& spec,
                         std::vector<std::vector<std::uint32_t>> calibration);

}  // namespace dotresize::compress

#endif  // DOTRESIZE_COMPRESSOR_H_
