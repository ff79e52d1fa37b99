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

#include "dotresize/compressor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dotresize/error.h"
#include "dotresize/linalg.h"

namespace dotresize::compress {
namespace {

using model::JunctionId;

// Sinkhorn plan between all neurons of `acts` and the support, rescaled so
// each row sums to one. Retries once at twice the regularization.
JunctionMaps transport(const ot::ActivationMatrix& acts, std::size_t d_new,
                       const MapOptions& options) {
  JunctionMaps maps;
  maps.support = select_support(acts, d_new, options.support_norm);
  Matrix cost = ot::cost_matrix(acts, maps.support, {.center = options.center_costs});
  if (options.cost_scaling == CostScaling::kMax) {
    const double peak = cost.maxCoeff();
    if (peak > 0.0) cost /= peak;
  }

  const Eigen::Index n = cost.rows();
  const Eigen::Index k = cost.cols();
  ot::SinkhornOptions solve{.lambda = options.lambda,
                            .tol = options.sinkhorn_tol,
                            .max_iter = options.sinkhorn_max_iter,
                            .mode = options.sinkhorn_mode};
  ot::TransportPlan plan;
  try {
    plan = ot::sinkhorn(cost, ot::uniform(n), ot::uniform(k), solve);
  } catch (const NotConvergedError&) {
    solve.lambda *= 2.0;
    plan = ot::sinkhorn(cost, ot::uniform(n), ot::uniform(k), solve);
  }
  maps.lambda = plan.lambda;
  maps.iterations = plan.iterations;
  maps.residual = plan.residual;
  maps.m = ot::rescale_rows(plan);  // caller turns T into (M, M_inv)
  return maps;
}

// M = Q and M_inv = R * pinv(T) for T = QR.
void split(JunctionMaps& maps, const Matrix& t) {
  linalg::QrResult qr = linalg::qr_thin(t);
  maps.m_inv = qr.r * linalg::pseudoinverse(t);
  maps.m = std::move(qr.q);
}

ot::ActivationMatrix concat_transposed(const std::vector<Matrix>& streams) {
  Eigen::Index total = 0;
  for (const Matrix& s : streams) total += s.rows();
  ot::ActivationMatrix acts;
  acts.values.resize(streams.empty() ? 0 : streams.front().cols(), total);
  Eigen::Index column = 0;
  for (const Matrix& s : streams) {
    acts.values.middleCols(column, s.rows()) = s.transpose();
    column += s.rows();
  }
  return acts;
}

}  // namespace

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kDotResize: return "dotresize";
    case Strategy::kMagnitudePrune: return "magnitude_prune";
    case Strategy::kPcaSlice: return "pca_slice";
    case Strategy::kPcaDotResize: return "pca_dotresize";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kDotResize, Strategy::kMagnitudePrune, Strategy::kPcaSlice,
                     Strategy::kPcaDotResize}) {
    if (strategy_name(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown strategy '" + name + "'");
}

std::string pipeline_mode_name(PipelineMode m) {
  return m == PipelineMode::kSequential ? "sequential" : "one_shot";
}

PipelineMode parse_pipeline_mode(const std::string& name) {
  if (name == "sequential") return PipelineMode::kSequential;
  if (name == "one_shot") return PipelineMode::kOneShot;
  throw Error(ErrorCode::kInvalidConfig, "unknown pipeline mode '" + name + "'");
}

std::vector<std::size_t> select_support(const ot::ActivationMatrix& acts, std::size_t d_new,
                                        NormKind norm) {
  const auto d = static_cast<std::size_t>(acts.neurons());
  if (d_new > d) {
    throw Error(ErrorCode::kIndexOutOfRange, "d_new " + std::to_string(d_new) + " > " +
                                                 std::to_string(d));
  }
  const double t = static_cast<double>(acts.tokens());
  std::vector<double> score(d);
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = acts.values.row(static_cast<Eigen::Index>(i));
    score[i] = norm == NormKind::kL1 ? row.cwiseAbs().sum() / t : std::sqrt(row.squaredNorm() / t);
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(d_new);
  std::sort(order.begin(), order.end());
  return order;
}

JunctionMaps build_dotresize_maps(const ot::ActivationMatrix& acts, std::size_t d_new,
                                  const MapOptions& options) {
  JunctionMaps maps = transport(acts, d_new, options);
  const Matrix t = std::move(maps.m);
  split(maps, t);
  return maps;
}

JunctionMaps build_prune_maps(const ot::ActivationMatrix& acts, std::size_t d_new) {
  JunctionMaps maps;
  maps.support = select_support(acts, d_new, NormKind::kL2);
  maps.m = Matrix::Zero(acts.neurons(), static_cast<Eigen::Index>(d_new));
  for (std::size_t j = 0; j < d_new; ++j) {
    maps.m(static_cast<Eigen::Index>(maps.support[j]), static_cast<Eigen::Index>(j)) = 1.0;
  }
  maps.m_inv = maps.m.transpose();
  return maps;
}

namespace {

linalg::EigResult pca_basis(const ot::ActivationMatrix& acts) {
  Matrix second = acts.values * acts.values.transpose() / static_cast<double>(acts.tokens());
  // The product is symmetric up to rounding; make it exactly so.
  second = 0.5 * (second + second.transpose()).eval();
  return linalg::sym_eig_desc(second);
}

}  // namespace

JunctionMaps build_pca_maps(const ot::ActivationMatrix& acts, std::size_t d_new) {
  const linalg::EigResult eig = pca_basis(acts);
  JunctionMaps maps;
  maps.m = eig.vectors.leftCols(static_cast<Eigen::Index>(d_new));
  maps.m_inv = maps.m.transpose();
  return maps;
}

JunctionMaps build_pca_dotresize_maps(const ot::ActivationMatrix& acts, std::size_t d_new,
                                      const MapOptions& options) {
  const linalg::EigResult eig = pca_basis(acts);
  ot::ActivationMatrix rotated{eig.vectors.transpose() * acts.values};
  JunctionMaps maps = transport(rotated, d_new, options);
  const Matrix total = eig.vectors * maps.m;
  split(maps, total);
  return maps;
}

double reconstruction_error(const ot::ActivationMatrix& acts, const JunctionMaps& maps) {
  const Matrix projector = maps.m * maps.m_inv;
  const double denom = acts.values.norm();
  if (denom == 0.0) return 0.0;
  return (acts.values - projector.transpose() * acts.values).norm() / denom;
}

int CompressionSpec::d_new(int d_orig) const {
  return std::max(1, static_cast<int>(std::lround((1.0 - sparsity) * d_orig)));
}

MapOptions CompressionSpec::map_options() const {
  MapOptions o;
  o.lambda = lambda;
  o.support_norm = support_norm.value_or(strategy == Strategy::kPcaDotResize ? NormKind::kL1
                                                                              : NormKind::kL2);
  o.cost_scaling = cost_scaling;
  o.center_costs = center_costs;
  return o;
}

void CompressionSpec::validate() const {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "sparsity must lie in [0, 1)");
  }
  if (!(lambda > 0.0)) throw Error(ErrorCode::kInvalidConfig, "lambda must be positive");
}

nlohmann::json CompressionSpec::to_json() const {
  const MapOptions o = map_options();
  nlohmann::json j;
  j["strategy"] = strategy_name(strategy);
  j["sparsity"] = sparsity;
  j["lambda"] = lambda;
  j["support_norm"] = o.support_norm == NormKind::kL1 ? "l1" : "l2";
  j["pipeline_mode"] = pipeline_mode_name(pipeline_mode);
  j["seed"] = seed;
  j["rms_rescale"] = rms_rescale;
  j["center_costs"] = center_costs;
  j["cost_scaling"] = cost_scaling == CostScaling::kMax ? "max" : "none";
  return j;
}

nlohmann::json CompressedModel::manifest() const {
  nlohmann::json j;
  j["spec"] = spec.to_json();
  j["residual_width"] = model.config.width();
  j["d_model"] = model.config.d_model;
  j["junctions"] = nlohmann::json::array();
  for (const JunctionReport& r : junctions) {
    nlohmann::json e;
    e["junction"] = r.junction;
    e["strategy"] = strategy_name(r.strategy);
    e["d_orig"] = r.d_orig;
    e["d_new"] = r.d_new;
    e["lambda"] = r.lambda;
    e["sinkhorn_iterations"] = r.iterations;
    e["marginal_residual"] = r.residual;
    e["support"] = r.support;
    e["reconstruction_error"] = r.reconstruction_error;
    j["junctions"].push_back(std::move(e));
  }
  return j;
}

JunctionMaps build_maps(const CompressionSpec& spec, const ot::ActivationMatrix& acts,
                        std::size_t d_new) {
  switch (spec.strategy) {
    case Strategy::kDotResize: return build_dotresize_maps(acts, d_new, spec.map_options());
    case Strategy::kMagnitudePrune: return build_prune_maps(acts, d_new);
    case Strategy::kPcaSlice: return build_pca_maps(acts, d_new);
    case Strategy::kPcaDotResize:
      return build_pca_dotresize_maps(acts, d_new, spec.map_options());
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown strategy");
}

Compressor::Compressor(const model::Model& folded, CompressionSpec spec,
                       std::vector<std::vector<std::uint32_t>> calibration)
    : original_(folded),
      working_(folded),
      spec_(std::move(spec)),
      calibration_(std::move(calibration)) {
  spec_.validate();
  if (!folded.config.norms_folded) {
    throw Error(ErrorCode::kInvalidConfig, "compress needs an RMSNorm-folded model");
  }
  if (folded.compressed()) {
    throw Error(ErrorCode::kInvalidConfig, "model is already compressed");
  }
  if (calibration_.empty()) throw Error(ErrorCode::kInvalidConfig, "no calibration data");
  d_orig_ = folded.config.d_model;
  d_new_ = spec_.d_new(d_orig_);
}

ot::ActivationMatrix Compressor::junction_activations() {
  const int j = next_;
  if (j == 0) {
    streams_.clear();
    for (const auto& seq : calibration_) streams_.push_back(model::embed_tokens(original_, seq));
    return concat_transposed(streams_);
  }
  if (spec_.pipeline_mode == PipelineMode::kOneShot) {
    for (Matrix& s : streams_) s = model::advance(original_, j, s);
    return concat_transposed(streams_);
  }

  // Sequential: run the block on the reduced stream, with its consumers
  // already carrying the previous M_inv and its producer not yet fused.
  const JunctionId junction = JunctionId::from_index(j);
  const model::LayerWeights& layer = working_.layers[static_cast<std::size_t>(junction.layer)];
  const Matrix& prev_inv = maps_.back().m_inv;
  const double eps = working_.config.norm_eps;
  for (Matrix& s : streams_) {
    const Matrix h = model::norm(s, Vector(), eps);
    const Matrix block = junction.kind == JunctionId::Kind::kAttnOut
                             ? model::attention_block(working_.config, layer, h)
                             : model::ffn_block(layer, h);
    s = s * prev_inv + block;
  }
  return concat_transposed(streams_);
}

void Compressor::fuse(int junction_index, const JunctionMaps& maps) {
  const JunctionId junction = JunctionId::from_index(junction_index);
  const double scale =
      spec_.rms_rescale ? std::sqrt(static_cast<double>(d_orig_) / static_cast<double>(d_new_))
                        : 1.0;
  const Matrix consumer = scale * maps.m_inv;

  if (junction.kind == JunctionId::Kind::kEmbeddingOut) {
    working_.embed = working_.embed * maps.m;
  } else {
    model::LayerWeights& layer = working_.layers[static_cast<std::size_t>(junction.layer)];
    const Matrix adapter = maps_.back().m_inv * maps.m;
    if (junction.kind == JunctionId::Kind::kAttnOut) {
      layer.wo = layer.wo * maps.m;
      layer.adapter_attn = adapter;
    } else {
      layer.wdown = layer.wdown * maps.m;
      layer.adapter_ffn = adapter;
    }
  }

  if (junction_index + 1 == working_.config.n_junctions()) {
    working_.head = consumer * working_.head;
    return;
  }
  const JunctionId next = JunctionId::from_index(junction_index + 1);
  model::LayerWeights& layer = working_.layers[static_cast<std::size_t>(next.layer)];
  if (next.kind == JunctionId::Kind::kAttnOut) {
    layer.wq = consumer * layer.wq;
    layer.wk = consumer * layer.wk;
    layer.wv = consumer * layer.wv;
  } else {
    layer.wup = consumer * layer.wup;
    layer.wgate = consumer * layer.wgate;
  }
}

void Compressor::step() {
  if (done()) throw Error(ErrorCode::kInvalidJunction, "all junctions are compressed");
  const int j = next_;
  const ot::ActivationMatrix acts = junction_activations();
  JunctionMaps maps = build_maps(spec_, acts, static_cast<std::size_t>(d_new_));

  JunctionReport report;
  report.junction = JunctionId::from_index(j).name();
  report.strategy = spec_.strategy;
  report.d_orig = d_orig_;
  report.d_new = d_new_;
  report.lambda = maps.lambda;
  report.iterations = maps.iterations;
  report.residual = maps.residual;
  report.support = maps.support;
  report.reconstruction_error = reconstruction_error(acts, maps);
  reports_.push_back(std::move(report));

  fuse(j, maps);
  if (spec_.pipeline_mode == PipelineMode::kSequential) {
    for (Matrix& s : streams_) s = s * maps.m;
  }
  maps_.push_back(std::move(maps));
  ++next_;
}

CompressedModel Compressor::finish() {
  while (!done()) step();
  streams_.clear();
  CompressedModel out;
  out.model = working_;
  out.model.config.residual_width = d_new_;
  model::round_to_precision(out.model);
  out.spec = spec_;
  out.junctions = reports_;
  return out;
}

CompressedModel compress(const model::Model& folded, const CompressionSpec& spec,
                         std::vector<std::vector<std::uint32_t>> calibration) {
  Compressor compressor(folded, spec, std::move(calibration));
  return compressor.finish();
}

}  // namespace dotresize::compress
