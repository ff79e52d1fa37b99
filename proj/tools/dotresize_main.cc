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

// Command-line front end: generate-toy, fold, compress, eval, compare, sweep,
// synth-tokens.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dotresize/calib.h"
#include "dotresize/compressor.h"
#include "dotresize/error.h"
#include "dotresize/eval.h"
#include "dotresize/model.h"
#include "dotresize/sweep.h"

namespace {

using namespace dotresize;

struct DataArgs {
  std::string path;
  std::string format;  // empty: infer from extension
  std::uint32_t vocab = 0;

  calib::TokenStream load(std::uint32_t vocab_size) const {
    const calib::TokenFormat f =
        format.empty() ? calib::infer_token_format(path) : calib::parse_token_format(format);
    return calib::load_tokens(path, f, vocab ? vocab : vocab_size);
  }
};

model::Model load_folded(const std::string& path) {
  model::Model m = model::load_container(path);
  if (!m.config.norms_folded) m = model::fold_rmsnorm(m);
  return m;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    eval::write_atomic(path, text);
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if constexpr (std::is_floating_point_v<T>) {
      out.push_back(static_cast<T>(std::stod(item)));
    } else {
      out.push_back(static_cast<T>(std::stoull(item)));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free transformer width reduction with optimal-transport maps"};
  app.require_subcommand(1);

  // generate-toy
  model::ModelConfig toy;
  toy.d_model = 64;
  toy.n_layers = 4;
  toy.n_heads = 4;
  toy.n_kv_heads = 4;
  toy.d_head = 16;
  toy.d_ff = 256;
  toy.vocab_size = 256;
  std::string toy_out;
  std::string toy_precision = "f32";
  std::uint64_t toy_seed = 0;
  auto* gen = app.add_subcommand("generate-toy", "Write a seeded random model container");
  gen->add_option("--out", toy_out, "Output container")->required();
  gen->add_option("--d-model", toy.d_model)->capture_default_str();
  gen->add_option("--layers", toy.n_layers)->capture_default_str();
  gen->add_option("--heads", toy.n_heads)->capture_default_str();
  gen->add_option("--kv-heads", toy.n_kv_heads)->capture_default_str();
  gen->add_option("--d-head", toy.d_head)->capture_default_str();
  gen->add_option("--d-ff", toy.d_ff)->capture_default_str();
  gen->add_option("--vocab", toy.vocab_size)->capture_default_str();
  gen->add_option("--seed", toy_seed)->capture_default_str();
  gen->add_option("--precision", toy_precision)->check(CLI::IsMember({"f32", "f64"}));

  // synth-tokens
  std::string synth_out;
  std::size_t synth_len = std::size_t{1} << 18;
  std::uint32_t synth_vocab = 256;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth-tokens", "Write a synthetic binary_u32 token stream");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--length", synth_len)->capture_default_str();
  synth->add_option("--vocab", synth_vocab)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();

  // fold
  std::string fold_model, fold_out;
  auto* fold = app.add_subcommand("fold", "Absorb RMSNorm scales into adjacent weights");
  fold->add_option("--model", fold_model)->required();
  fold->add_option("--out", fold_out)->required();

  // compress
  std::string c_model, c_out, c_manifest, c_strategy = "dotresize", c_mode = "sequential";
  std::string c_precision;
  double c_sparsity = 0.2, c_lambda = 0.1;
  DataArgs c_calib;
  std::size_t c_budget = calib::kDefaultBudget, c_seq_len = 128;
  std::uint64_t c_seed = 0;
  bool c_rescale = false, c_center = false;
  auto* comp = app.add_subcommand("compress", "Reduce the residual width of a model");
  comp->add_option("--model", c_model)->required();
  comp->add_option("--out", c_out)->required();
  comp->add_option("--manifest", c_manifest, "Map manifest JSON (default: <out>.manifest.json)");
  comp->add_option("--strategy", c_strategy)
      ->check(CLI::IsMember({"dotresize", "magnitude_prune", "pca_slice", "pca_dotresize"}))
      ->capture_default_str();
  comp->add_option("--sparsity", c_sparsity)->capture_default_str();
  comp->add_option("--lambda", c_lambda)->capture_default_str();
  comp->add_option("--calib", c_calib.path)->required();
  comp->add_option("--calib-format", c_calib.format)
      ->check(CLI::IsMember({"binary_u32", "text_bytes"}));
  comp->add_option("--calib-budget", c_budget)->capture_default_str();
  comp->add_option("--seq-len", c_seq_len)->capture_default_str();
  comp->add_option("--seed", c_seed)->capture_default_str();
  comp->add_option("--pipeline-mode", c_mode)
      ->check(CLI::IsMember({"sequential", "one_shot"}))
      ->capture_default_str();
  comp->add_option("--precision", c_precision, "Storage precision of the output")
      ->check(CLI::IsMember({"f32", "f64"}));
  comp->add_flag("--rms-rescale", c_rescale, "Scale consumers by sqrt(d_orig / d_new)");
  comp->add_flag("--center-costs", c_center, "Mean-center neuron signatures before distances");

  // eval
  std::string e_model, e_out;
  DataArgs e_data;
  std::size_t e_seq_len = 128;
  auto* ev = app.add_subcommand("eval", "Perplexity and parameter count of one model");
  ev->add_option("--model", e_model)->required();
  ev->add_option("--data", e_data.path, "Evaluation token file")->required();
  ev->add_option("--data-format", e_data.format)->check(CLI::IsMember({"binary_u32", "text_bytes"}));
  ev->add_option("--seq-len", e_seq_len)->capture_default_str();
  ev->add_option("--out", e_out, "Report JSON (default stdout)");

  // compare
  std::string k_model, k_compressed, k_out;
  DataArgs k_data;
  std::size_t k_seq_len = 128;
  bool k_no_timing = false;
  auto* cmp = app.add_subcommand("compare", "Original vs compressed: perplexity, KL, top-1, params");
  cmp->add_option("--model", k_model, "Original container")->required();
  cmp->add_option("--compressed", k_compressed)->required();
  cmp->add_option("--data", k_data.path)->required();
  cmp->add_option("--data-format", k_data.format)->check(CLI::IsMember({"binary_u32", "text_bytes"}));
  cmp->add_option("--seq-len", k_seq_len)->capture_default_str();
  cmp->add_option("--out", k_out, "Report JSON (default stdout)");
  cmp->add_flag("--no-timing", k_no_timing);

  // sweep
  std::string s_model, s_out, s_strategies = "dotresize", s_sparsities = "0.1,0.2,0.3,0.4,0.5";
  std::string s_lambdas = "0.01,0.1,1,5,10", s_budgets = "65536,131072,262144,524288";
  std::string s_mode = "sequential";
  DataArgs s_calib, s_data;
  std::size_t s_seq_len = 128;
  std::uint64_t s_seed = 0;
  int s_workers = 1;
  bool s_rescale = false, s_no_timing = false;
  auto* sw = app.add_subcommand("sweep", "Grid over sparsity x lambda x calibration budget");
  sw->add_option("--model", s_model)->required();
  sw->add_option("--out", s_out, "Output directory for reports and summary.csv")->required();
  sw->add_option("--calib", s_calib.path)->required();
  sw->add_option("--calib-format", s_calib.format)->check(CLI::IsMember({"binary_u32", "text_bytes"}));
  sw->add_option("--data", s_data.path, "Evaluation token file")->required();
  sw->add_option("--data-format", s_data.format)->check(CLI::IsMember({"binary_u32", "text_bytes"}));
  sw->add_option("--strategy", s_strategies, "Comma-separated strategies")->capture_default_str();
  sw->add_option("--sparsity", s_sparsities, "Comma-separated sparsities")->capture_default_str();
  sw->add_option("--lambda", s_lambdas, "Comma-separated lambdas")->capture_default_str();
  sw->add_option("--calib-budget", s_budgets, "Comma-separated budgets")->capture_default_str();
  sw->add_option("--seq-len", s_seq_len)->capture_default_str();
  sw->add_option("--seed", s_seed)->capture_default_str();
  sw->add_option("--pipeline-mode", s_mode)->check(CLI::IsMember({"sequential", "one_shot"}));
  sw->add_option("--workers", s_workers)->capture_default_str();
  sw->add_flag("--rms-rescale", s_rescale);
  sw->add_flag("--no-timing", s_no_timing);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      toy.precision = model::parse_precision(toy_precision);
      model::save_container(model::generate_toy(toy, toy_seed), toy_out);
    } else if (synth->parsed()) {
      calib::save_tokens(calib::synthetic_stream(synth_len, synth_vocab, synth_seed).ids, synth_out);
    } else if (fold->parsed()) {
      model::save_container(model::fold_rmsnorm(model::load_container(fold_model)), fold_out);
    } else if (comp->parsed()) {
      model::Model folded = load_folded(c_model);
      if (!c_precision.empty()) folded.config.precision = model::parse_precision(c_precision);
      const calib::TokenStream stream =
          c_calib.load(static_cast<std::uint32_t>(folded.config.vocab_size));
      compress::CompressionSpec spec;
      spec.strategy = compress::parse_strategy(c_strategy);
      spec.sparsity = c_sparsity;
      spec.lambda = c_lambda;
      spec.pipeline_mode = compress::parse_pipeline_mode(c_mode);
      spec.seed = c_seed;
      spec.rms_rescale = c_rescale;
      spec.center_costs = c_center;
      const compress::CompressedModel out = compress::compress(
          folded, spec, calib::sample_calibration(stream, c_budget, c_seq_len, c_seed));
      model::save_container(out.model, c_out);
      nlohmann::json manifest = out.manifest();
      manifest["calib"] = {{"path", c_calib.path}, {"budget", c_budget}, {"seq_len", c_seq_len}};
      write_json(c_manifest.empty() ? c_out + ".manifest.json" : c_manifest, manifest);
    } else if (ev->parsed()) {
      const model::Model m = model::load_container(e_model);
      const calib::TokenStream data = e_data.load(static_cast<std::uint32_t>(m.config.vocab_size));
      nlohmann::json j;
      j["schema_version"] = eval::kReportSchemaVersion;
      j["model_id"] = e_model;
      j["perplexity"] = eval::perplexity(m, data.ids, e_seq_len);
      j["params"] = eval::param_count(m);
      j["params_formula"] = eval::param_count_formula(m.config);
      j["timing"] = {{"ms_per_token", eval::ms_per_token(m, data.ids, e_seq_len)},
                     {"note", "coarse single-threaded wall clock"}};
      write_json(e_out, j);
    } else if (cmp->parsed()) {
      const model::Model original = load_folded(k_model);
      const model::Model candidate = model::load_container(k_compressed);
      const calib::TokenStream data =
          k_data.load(static_cast<std::uint32_t>(original.config.vocab_size));
      eval::EvalReport report =
          eval::evaluate(original, candidate, data.ids, {.seq_len = k_seq_len, .timing = !k_no_timing});
      report.original_id = k_model;
      report.compressed_id = k_compressed;
      std::ifstream manifest(k_compressed + ".manifest.json");
      if (manifest) {
        const nlohmann::json m = nlohmann::json::parse(manifest);
        report.spec = m.value("spec", nlohmann::json());
        report.junctions = m.value("junctions", nlohmann::json::array());
      }
      write_json(k_out, report.to_json());
    } else if (sw->parsed()) {
      const model::Model folded = load_folded(s_model);
      const auto vocab = static_cast<std::uint32_t>(folded.config.vocab_size);
      const calib::TokenStream calib_stream = s_calib.load(vocab);
      const calib::TokenStream data = s_data.load(vocab);
      eval::SweepGrid grid;
      grid.strategies.clear();
      std::string item;
      std::istringstream strategies(s_strategies);
      while (std::getline(strategies, item, ',')) grid.strategies.push_back(compress::parse_strategy(item));
      grid.sparsities = parse_list<double>(s_sparsities);
      grid.lambdas = parse_list<double>(s_lambdas);
      grid.budgets = parse_list<std::size_t>(s_budgets);
      eval::SweepOptions options;
      options.out_dir = s_out;
      options.seq_len = s_seq_len;
      options.eval_seq_len = s_seq_len;
      options.seed = s_seed;
      options.workers = s_workers;
      options.timing = !s_no_timing;
      options.base.pipeline_mode = compress::parse_pipeline_mode(s_mode);
      options.base.rms_rescale = s_rescale;
      const auto results = eval::sweep(folded, calib_stream, data.ids, grid, options);
      eval::write_atomic(options.out_dir / "summary.csv", eval::sweep_csv(results));
      int failures = 0;
      for (const auto& r : results) {
        if (!r.error.empty()) {
          ++failures;
          std::cerr << r.cell.id() << ": " << r.error << "\n";
        }
      }
      std::cout << results.size() << " cells, " << failures << " failed\n";
      return failures == 0 ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
