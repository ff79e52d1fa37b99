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

#include "dotresize/eval.h"

#include <chrono>
#include <cmath>
#include <fstream>

#include "dotresize/error.h"

namespace dotresize::eval {
namespace {

Vector log_softmax(const Eigen::Ref<const RowVector>& logits) {
  const double peak = logits.maxCoeff();
  const double lse = peak + std::log((logits.array() - peak).exp().sum());
  return (logits.array() - lse).matrix().transpose();
}

Eigen::Index argmax_lowest(const Eigen::Ref<const RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return best;
}

std::size_t window_count(std::size_t n, std::size_t seq_len) {
  if (seq_len < 2) throw Error(ErrorCode::kInvalidConfig, "seq_len must be >= 2");
  if (n < seq_len + 1) {
    throw Error(ErrorCode::kStreamTooShort, std::to_string(n) + " tokens for windows of " +
                                                std::to_string(seq_len));
  }
  return n / seq_len;
}

std::uint64_t cells(const Matrix& m) { return static_cast<std::uint64_t>(m.size()); }

}  // namespace

LogitsFn logits_of(const model::Model& model) {
  return [&model](model::TokenSpan tokens) { return model::forward(model, tokens); };
}

double perplexity(const LogitsFn& logits, std::span<const std::uint32_t> stream,
                  std::size_t seq_len) {
  const std::size_t windows = window_count(stream.size(), seq_len);
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < windows; ++w) {
    const auto tokens = stream.subspan(w * seq_len, seq_len);
    const Matrix out = logits(tokens);
    for (std::size_t p = 0; p + 1 < seq_len; ++p) {
      const Vector lp = log_softmax(out.row(static_cast<Eigen::Index>(p)));
      nll -= lp(tokens[p + 1]);
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

double perplexity(const model::Model& model, std::span<const std::uint32_t> stream,
                  std::size_t seq_len) {
  return perplexity(logits_of(model), stream, seq_len);
}

Divergence divergence(const LogitsFn& a, const LogitsFn& b,
                      std::span<const std::uint32_t> stream, std::size_t seq_len) {
  const std::size_t windows = window_count(stream.size(), seq_len);
  double kl = 0.0;
  std::size_t agree = 0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < windows; ++w) {
    const auto tokens = stream.subspan(w * seq_len, seq_len);
    const Matrix la = a(tokens);
    const Matrix lb = b(tokens);
    for (Eigen::Index p = 0; p + 1 < static_cast<Eigen::Index>(seq_len); ++p) {
      const Vector lpa = log_softmax(la.row(p));
      const Vector lpb = log_softmax(lb.row(p));
      kl += (lpa.array().exp() * (lpa - lpb).array()).sum();
      if (argmax_lowest(la.row(p)) == argmax_lowest(lb.row(p))) ++agree;
      ++count;
    }
  }
  Divergence d;
  d.positions = count;
  d.mean_kl = std::max(0.0, kl / static_cast<double>(count));
  d.top1_agreement = static_cast<double>(agree) / static_cast<double>(count);
  return d;
}

Divergence divergence(const model::Model& a, const model::Model& b,
                      std::span<const std::uint32_t> stream, std::size_t seq_len) {
  return divergence(logits_of(a), logits_of(b), stream, seq_len);
}

std::uint64_t param_count(const model::Model& m) {
  std::uint64_t n = cells(m.embed) + cells(m.head) + cells(m.norm_final);
  for (const model::LayerWeights& l : m.layers) {
    n += cells(l.wq) + cells(l.wk) + cells(l.wv) + cells(l.wo) + cells(l.wup) + cells(l.wgate) +
         cells(l.wdown) + cells(l.norm_attn) + cells(l.norm_ffn) + cells(l.adapter_attn) +
         cells(l.adapter_ffn);
  }
  return n;
}

std::uint64_t param_count_formula(const model::ModelConfig& c) {
  const std::uint64_t w = static_cast<std::uint64_t>(c.width());
  const std::uint64_t attn = static_cast<std::uint64_t>(c.attn_width());
  const std::uint64_t kv = static_cast<std::uint64_t>(c.kv_width());
  const std::uint64_t ff = static_cast<std::uint64_t>(c.d_ff);
  const std::uint64_t vocab = static_cast<std::uint64_t>(c.vocab_size);
  std::uint64_t layer = w * attn + 2 * w * kv + attn * w + 3 * w * ff;
  if (!c.norms_folded) layer += 2 * w;
  if (c.residual_width) layer += 2 * w * w;
  std::uint64_t total = 2 * vocab * w + static_cast<std::uint64_t>(c.n_layers) * layer;
  if (!c.norms_folded) total += w;
  return total;
}

nlohmann::json ParamReport::to_json() const {
  return {{"original", original},
          {"compressed", compressed},
          {"ratio", ratio},
          {"savings", savings},
          {"negative_savings", negative_savings},
          {"per_layer_savings", per_layer_savings},
          {"adapter_params", adapter_params}};
}

ParamReport compare_params(const model::Model& original, const model::Model& compressed) {
  ParamReport r;
  r.original = param_count(original);
  r.compressed = param_count(compressed);
  r.ratio = static_cast<double>(r.compressed) / static_cast<double>(r.original);
  r.savings = static_cast<std::int64_t>(r.original) - static_cast<std::int64_t>(r.compressed);
  r.negative_savings = r.savings < 0;
  auto layer_params = [](const model::Model& m) {
    std::uint64_t n = 0;
    if (m.layers.empty()) return n;
    const model::LayerWeights& l = m.layers.front();
    n = cells(l.wq) + cells(l.wk) + cells(l.wv) + cells(l.wo) + cells(l.wup) + cells(l.wgate) +
        cells(l.wdown) + cells(l.norm_attn) + cells(l.norm_ffn) + cells(l.adapter_attn) +
        cells(l.adapter_ffn);
    return n;
  };
  r.per_layer_savings = static_cast<std::int64_t>(layer_params(original)) -
                        static_cast<std::int64_t>(layer_params(compressed));
  for (const model::LayerWeights& l : compressed.layers) {
    r.adapter_params += cells(l.adapter_attn) + cells(l.adapter_ffn);
  }
  return r;
}

double ms_per_token(const model::Model& model, std::span<const std::uint32_t> stream,
                    std::size_t seq_len, std::size_t max_windows) {
  const std::size_t windows = std::min(max_windows, std::max<std::size_t>(1, stream.size() / seq_len));
  const std::size_t len = std::min(seq_len, stream.size());
  const auto start = std::chrono::steady_clock::now();
  std::size_t tokens = 0;
  for (std::size_t w = 0; w < windows; ++w) {
    const Matrix out = model::forward(model, stream.subspan(w * len, len));
    tokens += len;
    if (!out.allFinite()) throw Error(ErrorCode::kNonFinite, "non-finite logits");
  }
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  return elapsed.count() / static_cast<double>(tokens);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["original_id"] = original_id;
  j["compressed_id"] = compressed_id;
  j["spec"] = spec;
  j["calib_budget"] = calib_budget ? nlohmann::json(*calib_budget) : nlohmann::json();
  j["original_perplexity"] = original_perplexity;
  j["perplexity"] = perplexity;
  j["mean_kl"] = mean_kl;
  j["top1_agreement"] = top1_agreement;
  j["params"] = params.to_json();
  j["timing"] = {{"ms_per_token", ms_per_token},
                 {"original_ms_per_token", original_ms_per_token},
                 {"note", "coarse single-threaded wall clock"}};
  j["junctions"] = junctions;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw Error(ErrorCode::kVersionMismatch, "report schema " + j.at("schema_version").dump());
    }
    EvalReport r;
    r.original_id = j.at("original_id").get<std::string>();
    r.compressed_id = j.at("compressed_id").get<std::string>();
    r.spec = j.at("spec");
    if (!j.at("calib_budget").is_null()) r.calib_budget = j.at("calib_budget").get<std::size_t>();
    r.original_perplexity = j.at("original_perplexity").get<double>();
    r.perplexity = j.at("perplexity").get<double>();
    r.mean_kl = j.at("mean_kl").get<double>();
    r.top1_agreement = j.at("top1_agreement").get<double>();
    const auto& p = j.at("params");
    r.params.original = p.at("original").get<std::uint64_t>();
    r.params.compressed = p.at("compressed").get<std::uint64_t>();
    r.params.ratio = p.at("ratio").get<double>();
    r.params.savings = p.at("savings").get<std::int64_t>();
    r.params.negative_savings = p.at("negative_savings").get<bool>();
    r.params.per_layer_savings = p.at("per_layer_savings").get<std::int64_t>();
    r.params.adapter_params = p.at("adapter_params").get<std::uint64_t>();
    r.ms_per_token = j.at("timing").at("ms_per_token").get<double>();
    r.original_ms_per_token = j.at("timing").at("original_ms_per_token").get<double>();
    r.junctions = j.at("junctions");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("report: ") + e.what());
  }
}

bool EvalReport::valid() const {
  const auto finite = [](double v) { return std::isfinite(v); };
  return finite(original_perplexity) && finite(perplexity) && finite(mean_kl) &&
         finite(top1_agreement) && finite(ms_per_token) && finite(params.ratio) &&
         perplexity >= 1.0 && original_perplexity >= 1.0 && mean_kl >= 0.0 &&
         top1_agreement >= 0.0 && top1_agreement <= 1.0;
}

EvalReport evaluate(const model::Model& original, const model::Model& candidate,
                    std::span<const std::uint32_t> stream, const EvalOptions& options) {
  EvalReport r;
  r.original_perplexity = perplexity(original, stream, options.seq_len);
  r.perplexity = perplexity(candidate, stream, options.seq_len);
  const Divergence d = divergence(original, candidate, stream, options.seq_len);
  r.mean_kl = d.mean_kl;
  r.top1_agreement = d.top1_agreement;
  r.params = compare_params(original, candidate);
  if (options.timing) {
    r.original_ms_per_token = ms_per_token(original, stream, options.seq_len);
    r.ms_per_token = ms_per_token(candidate, stream, options.seq_len);
  }
  return r;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dotresize::eval
