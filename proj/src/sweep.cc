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

#include "dotresize/sweep.h"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "dotresize/error.h"

namespace dotresize::eval {
namespace {

std::string fmt_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

SweepResult run_cell(const model::Model& folded, const calib::TokenStream& calib,
                     std::span<const std::uint32_t> eval_stream, const SweepCell& cell,
                     const SweepOptions& options) {
  SweepResult result;
  result.cell = cell;
  const std::filesystem::path path = options.out_dir / (cell.id() + ".json");
  try {
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      result.report = EvalReport::from_json(nlohmann::json::parse(in));
      result.resumed = true;
      return result;
    }
    auto sequences = calib::sample_calibration(calib, cell.budget, options.seq_len, options.seed);
    const compress::CompressedModel compressed =
        compress::compress(folded, cell.spec, std::move(sequences));
    EvalReport report = evaluate(folded, compressed.model, eval_stream,
                                 {.seq_len = options.eval_seq_len, .timing = options.timing});
    report.original_id = "original";
    report.compressed_id = cell.id();
    report.spec = cell.spec.to_json();
    report.calib_budget = cell.budget;
    report.junctions = compressed.manifest().at("junctions");
    write_atomic(path, report.to_json().dump(2) + "\n");
    result.report = std::move(report);
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

}  // namespace

std::string SweepCell::id() const {
  return compress::strategy_name(spec.strategy) + "_s" + fmt_number(spec.sparsity) + "_l" +
         fmt_number(spec.lambda) + "_b" + std::to_string(budget);
}

std::vector<SweepCell> expand_grid(const SweepGrid& grid, const SweepOptions& options) {
  std::vector<SweepCell> cells;
  for (compress::Strategy strategy : grid.strategies) {
    for (double sparsity : grid.sparsities) {
      for (double lambda : grid.lambdas) {
        for (std::size_t budget : grid.budgets) {
          SweepCell cell;
          cell.spec = options.base;
          cell.spec.strategy = strategy;
          cell.spec.sparsity = sparsity;
          cell.spec.lambda = lambda;
          cell.spec.seed = options.seed;
          cell.budget = budget;
          cells.push_back(cell);
        }
      }
    }
  }
  return cells;
}

std::vector<SweepResult> sweep(const model::Model& folded, const calib::TokenStream& calib,
                               std::span<const std::uint32_t> eval_stream,
                               const SweepGrid& grid, const SweepOptions& options) {
  std::filesystem::create_directories(options.out_dir);
  const std::vector<SweepCell> cells = expand_grid(grid, options);
  std::vector<SweepResult> results(cells.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      results[i] = run_cell(folded, calib, eval_stream, cells[i], options);
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(cells.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return results;
}

std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream out;
  out << "strategy,sparsity,lambda,budget,ppl,kl,top1,params,ms_per_token,error\n";
  out.precision(10);
  for (const SweepResult& r : results) {
    out << compress::strategy_name(r.cell.spec.strategy) << ',' << r.cell.spec.sparsity << ','
        << r.cell.spec.lambda << ',' << r.cell.budget << ',';
    if (r.report) {
      out << r.report->perplexity << ',' << r.report->mean_kl << ',' << r.report->top1_agreement
          << ',' << r.report->params.compressed << ',' << r.report->ms_per_token << ",\n";
    } else {
      std::string message = r.error;
      for (char& c : message) {
        if (c == ',' || c == '\n') c = ' ';
      }
      out << ",,,,," << message << '\n';
    }
  }
  return out.str();
}

}  // namespace dotresize::eval
