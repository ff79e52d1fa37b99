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

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dotresize/compressor.h"
#include "dotresize/error.h"
#include "dotresize/linalg.h"
#include "dotresize/model.h"
#include "test_util.h"

namespace dotresize::compress {
namespace {

using model::JunctionId;
using model::Model;
using testing::random_matrix;
using testing::random_tokens;

using Calibration = std::vector<std::vector<std::uint32_t>>;

Calibration random_calibration(std::uint64_t seed, int sequences = 6, std::size_t len = 24,
                               std::uint32_t vocab = 32) {
  std::mt19937_64 rng(seed);
  Calibration out;
  for (int i = 0; i < sequences; ++i) out.push_back(random_tokens(rng, len, vocab));
  return out;
}

ot::ActivationMatrix acts_of(Matrix values) { return ot::ActivationMatrix{std::move(values)}; }

double orthonormality_defect(const Matrix& m) {
  return (m.transpose() * m - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff();
}

// Equal up to the sign of each column.
double signed_column_gap(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    worst = std::max(worst, std::min((a.col(j) - b.col(j)).cwiseAbs().maxCoeff(),
                                     (a.col(j) + b.col(j)).cwiseAbs().maxCoeff()));
  }
  return worst;
}

TEST_CASE("support selection examples") {
  Matrix x(3, 2);
  x << 3.0, -3.0, 1.0, 1.0, 2.0, 2.0;
  CHECK(select_support(acts_of(x), 2, NormKind::kL2) == std::vector<std::size_t>{0, 2});
  CHECK(select_support(acts_of(x), 2, NormKind::kL1) == std::vector<std::size_t>{0, 2});
  CHECK(select_support(acts_of(Matrix::Ones(4, 3)), 2, NormKind::kL2) ==
        std::vector<std::size_t>{0, 1});
  CHECK(select_support(acts_of(x), 3, NormKind::kL2) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(select_support(acts_of(x), 4, NormKind::kL2), Error);
}

TEST_CASE("l1 and l2 scores can disagree") {
  // Row 0: one spike. Row 1: spread evenly. Same l1 mass, larger l2 for row 0.
  Matrix x(2, 4);
  x << 4.0, 0.0, 0.0, 0.0, 1.1, 1.1, 1.1, 1.1;
  CHECK(select_support(acts_of(x), 1, NormKind::kL2) == std::vector<std::size_t>{0});
  CHECK(select_support(acts_of(x), 1, NormKind::kL1) == std::vector<std::size_t>{1});
}

TEST_CASE("prune maps are selection matrices") {
  Matrix x(3, 2);
  x << 3.0, 3.0, 1.0, 1.0, 2.0, 2.0;
  const JunctionMaps maps = build_prune_maps(acts_of(x), 2);
  Matrix expected(3, 2);
  expected << 1, 0, 0, 0, 0, 1;
  CHECK(maps.m == expected);
  CHECK(maps.m_inv == expected.transpose());
  CHECK(build_prune_maps(acts_of(x), 3).m == Matrix::Identity(3, 3));

  const RowVector v = (RowVector(3) << 5.0, 6.0, 7.0).finished();
  const RowVector projected = v * maps.m * maps.m_inv;
  CHECK(projected == (RowVector(3) << 5.0, 0.0, 7.0).finished());
}

TEST_CASE("PCA maps: rank one and full width") {
  std::mt19937_64 rng(1);
  const Vector direction = random_matrix(rng, 6, 1).col(0).normalized();
  const Matrix coeffs = random_matrix(rng, 1, 40);
  const JunctionMaps one = build_pca_maps(acts_of(direction * coeffs), 1);
  CHECK(std::abs(std::abs(one.m.col(0).dot(direction)) - 1.0) < 1e-12);
  const RowVector x = 2.5 * direction.transpose();
  CHECK((x * one.m * one.m_inv - x).norm() < 1e-12);

  const JunctionMaps full = build_pca_maps(acts_of(random_matrix(rng, 6, 40)), 6);
  CHECK(orthonormality_defect(full.m) < 1e-9);
  CHECK((full.m * full.m_inv - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("PCA reconstruction beats random orthonormal bases") {
  std::mt19937_64 rng(2);
  for (int instance = 0; instance < 10; ++instance) {
    // Anisotropic 5 x 20 activations.
    Matrix x = random_matrix(rng, 5, 20);
    for (int i = 0; i < 5; ++i) x.row(i) *= 1.0 + i;
    const auto acts = acts_of(x);
    const double pca = reconstruction_error(acts, build_pca_maps(acts, 2));
    for (int trial = 0; trial < 200; ++trial) {
      JunctionMaps random;
      random.m = testing::random_orthogonal(rng, 5).leftCols(2);
      random.m_inv = random.m.transpose();
      CHECK(pca <= reconstruction_error(acts, random) + 1e-12);
    }
  }
}

TEST_CASE("DOTResize maps: identity limit") {
  // Well-separated neurons: distinct constant offsets.
  std::mt19937_64 rng(3);
  Matrix x = random_matrix(rng, 5, 30, 0.01);
  for (int i = 0; i < 5; ++i) x.row(i).array() += 1.0 + 2.0 * i;
  MapOptions options;
  options.lambda = 1e-3;
  const JunctionMaps maps = build_dotresize_maps(acts_of(x), 5, options);
  CHECK((maps.m - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((maps.m * maps.m_inv - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("DOTResize maps merge a duplicated neuron") {
  std::mt19937_64 rng(4);
  Matrix x(4, 50);
  x.row(0) = 0.5 * random_matrix(rng, 1, 50);
  x.row(1) = x.row(0);  // twin, dropped by the index tie-break
  x.row(2) = 3.0 * random_matrix(rng, 1, 50);
  x.row(3) = 3.0 * random_matrix(rng, 1, 50);
  const auto acts = acts_of(x);
  const JunctionMaps maps = build_dotresize_maps(acts, 3);
  CHECK(maps.support == std::vector<std::size_t>{0, 2, 3});
  CHECK(orthonormality_defect(maps.m) < 1e-9);

  // Twins have identical cost rows, so their plan rows (and thus the rows of
  // M) coincide and the map's column space contains the shared direction.
  CHECK((maps.m.row(0) - maps.m.row(1)).cwiseAbs().maxCoeff() < 1e-9);
  const Matrix reconstructed = (x.transpose() * maps.m * maps.m_inv).transpose();
  CHECK((reconstructed - x).norm() / x.norm() < 1e-2);
  CHECK(reconstruction_error(acts, maps) < 1e-9);

  // The twin's column in a recomputed plan: its mass goes mostly to the
  // survivor, which costs nothing to reach.
  Matrix cost = ot::cost_matrix(acts, maps.support);
  cost /= cost.maxCoeff();
  const ot::TransportPlan plan = ot::sinkhorn(cost, ot::uniform(4), ot::uniform(3), {});
  const Matrix t = ot::rescale_rows(plan);
  CHECK(t(1, 0) > 0.5);
  CHECK((t.row(0) - t.row(1)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("DOTResize maps have orthonormal columns") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto acts = acts_of(random_matrix(rng, 12, 60));
    for (std::size_t d_new : {std::size_t{3}, std::size_t{9}, std::size_t{12}}) {
      const JunctionMaps maps = build_dotresize_maps(acts, d_new);
      CHECK(orthonormality_defect(maps.m) < 1e-9);
      CHECK(maps.m_inv.rows() == static_cast<Eigen::Index>(d_new));
      CHECK(maps.m_inv.cols() == 12);
      CHECK(maps.iterations > 0);
      CHECK(maps.residual <= 1e-9);
      CHECK(maps.lambda == 0.1);
    }
  }
}

TEST_CASE("PCA + DOTResize reduces to PCA slicing at full width") {
  // Full width and a sharp plan: T -> I on the rotated neurons, so the total
  // map is the PCA basis itself.
  std::mt19937_64 rng(6);
  Matrix x = random_matrix(rng, 5, 80);
  for (int i = 0; i < 5; ++i) x.row(i) *= 1.0 + 3.0 * i;
  const auto acts = acts_of(x);
  MapOptions options;
  options.lambda = 1e-3;
  options.support_norm = NormKind::kL1;
  const JunctionMaps mixed = build_pca_dotresize_maps(acts, 5, options);
  const JunctionMaps pca = build_pca_maps(acts, 5);
  CHECK(signed_column_gap(mixed.m, pca.m) < 1e-4);
  CHECK(orthonormality_defect(mixed.m) < 1e-9);
}

TEST_CASE("PCA + DOTResize on decorrelated input equals plain DOTResize") {
  std::mt19937_64 rng(7);
  const int d = 6;
  const int t = 120;
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, t, d));
  const Matrix z = qr.householderQ() * Matrix::Identity(t, d);
  Vector sigma(d);
  sigma << 1.0, 4.0, 2.0, 6.0, 3.0, 5.0;
  const Matrix x = sigma.asDiagonal() * z.transpose() * std::sqrt(static_cast<double>(t));
  const auto acts = acts_of(x);

  MapOptions options;
  options.support_norm = NormKind::kL1;
  for (std::size_t d_new : {std::size_t{3}, std::size_t{4}}) {
    const JunctionMaps mixed = build_pca_dotresize_maps(acts, d_new, options);
    const JunctionMaps plain = build_dotresize_maps(acts, d_new, options);
    // Column order may differ, so compare the projectors.
    CHECK((mixed.m * mixed.m_inv - plain.m * plain.m_inv).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(orthonormality_defect(mixed.m) < 1e-9);
  }
}

TEST_CASE("spec arithmetic and validation") {
  CompressionSpec spec;
  spec.sparsity = 0.2;
  CHECK(spec.d_new(64) == 51);
  spec.sparsity = 0.1;
  CHECK(spec.d_new(64) == 58);
  spec.sparsity = 0.0;
  CHECK(spec.d_new(64) == 64);
  spec.sparsity = 0.99;
  CHECK(spec.d_new(16) == 1);
  spec.sparsity = 1.0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.sparsity = 0.2;
  spec.lambda = 0.0;
  CHECK_THROWS_AS(spec.validate(), Error);

  CompressionSpec pca;
  pca.strategy = Strategy::kPcaDotResize;
  CHECK(pca.map_options().support_norm == NormKind::kL1);
  CHECK(CompressionSpec{}.map_options().support_norm == NormKind::kL2);
  CHECK(parse_strategy("pca_slice") == Strategy::kPcaSlice);
  CHECK_THROWS_AS(parse_strategy("svd"), Error);
  CHECK(parse_pipeline_mode("one_shot") == PipelineMode::kOneShot);
}

TEST_CASE("zero sparsity is functionally invariant for every strategy") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 8));
  const Calibration calib = random_calibration(9);
  const Calibration held_out = random_calibration(10, 4, 16);
  for (Strategy s : {Strategy::kDotResize, Strategy::kMagnitudePrune, Strategy::kPcaSlice,
                     Strategy::kPcaDotResize}) {
    for (PipelineMode mode : {PipelineMode::kSequential, PipelineMode::kOneShot}) {
      CAPTURE(strategy_name(s));
      CAPTURE(pipeline_mode_name(mode));
      CompressionSpec spec;
      spec.strategy = s;
      spec.sparsity = 0.0;
      spec.pipeline_mode = mode;
      const CompressedModel out = compress(folded, spec, calib);
      CHECK(out.model.config.width() == 16);
      for (const auto& seq : held_out) {
        CHECK(linalg::max_relative_error(model::forward(out.model, seq),
                                         model::forward(folded, seq)) < 1e-9);
      }
    }
  }
}

TEST_CASE("pruning through fusion equals deleting rows and columns") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 11));
  CompressionSpec spec;
  spec.strategy = Strategy::kMagnitudePrune;
  spec.sparsity = 0.25;
  const CompressedModel out = compress(folded, spec, random_calibration(12));
  const int n = folded.config.n_junctions();
  REQUIRE(static_cast<int>(out.junctions.size()) == n);

  auto keep = [&](int j) {
    const auto& s = out.junctions[static_cast<std::size_t>(j)].support;
    return std::vector<Eigen::Index>(s.begin(), s.end());
  };
  auto cols = [](const Matrix& w, const std::vector<Eigen::Index>& idx) {
    Matrix r(w.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) r.col(static_cast<Eigen::Index>(i)) = w.col(idx[i]);
    return r;
  };
  auto rows = [](const Matrix& w, const std::vector<Eigen::Index>& idx) {
    Matrix r(static_cast<Eigen::Index>(idx.size()), w.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = w.row(idx[i]);
    return r;
  };

  double worst = 0.0;
  auto gap = [&](const Matrix& a, const Matrix& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  };
  gap(out.model.embed, cols(folded.embed, keep(0)));
  for (int l = 0; l < folded.config.n_layers; ++l) {
    const auto& src = folded.layers[static_cast<std::size_t>(l)];
    const auto& dst = out.model.layers[static_cast<std::size_t>(l)];
    const auto in_attn = keep(2 * l);
    const auto at_attn = keep(2 * l + 1);
    const auto at_ffn = keep(2 * l + 2);
    gap(dst.wq, rows(src.wq, in_attn));
    gap(dst.wk, rows(src.wk, in_attn));
    gap(dst.wv, rows(src.wv, in_attn));
    gap(dst.wo, cols(src.wo, at_attn));
    gap(dst.wup, rows(src.wup, at_attn));
    gap(dst.wgate, rows(src.wgate, at_attn));
    gap(dst.wdown, cols(src.wdown, at_ffn));
    // Adapter: keep the coordinates present on both sides.
    gap(dst.adapter_attn,
        rows(cols(Matrix::Identity(16, 16), at_attn), in_attn));
    gap(dst.adapter_ffn, rows(cols(Matrix::Identity(16, 16), at_ffn), at_attn));
  }
  gap(out.model.head, rows(folded.head, keep(n - 1)));
  CHECK(worst <= 1e-12);
}

TEST_CASE("compressed shapes and manifest") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 13));
  CompressionSpec spec;
  spec.sparsity = 0.3;  // 16 -> 11
  const CompressedModel out = compress(folded, spec, random_calibration(14));
  const auto& c = out.model.config;
  REQUIRE(c.residual_width.has_value());
  CHECK(c.width() == 11);
  CHECK(out.model.embed.cols() == 11);
  CHECK(out.model.head.rows() == 11);
  for (const auto& l : out.model.layers) {
    CHECK(l.adapter_attn.rows() == 11);
    CHECK(l.adapter_attn.cols() == 11);
    CHECK(l.adapter_ffn.rows() == 11);
    CHECK(l.wq.rows() == 11);
    CHECK(l.wq.cols() == 16);
    CHECK(l.wo.rows() == 16);
    CHECK(l.wo.cols() == 11);
    CHECK(l.wdown.rows() == 32);
    CHECK(l.wdown.cols() == 11);
  }
  const auto seq = random_calibration(15, 1).front();
  CHECK(model::forward(out.model, seq).allFinite());

  const nlohmann::json m = out.manifest();
  REQUIRE(m["junctions"].size() == 5);
  CHECK(m["junctions"][0]["junction"] == "embedding_out");
  CHECK(m["junctions"][4]["junction"] == JunctionId::ffn_out(1).name());
  CHECK(m["junctions"][2]["support"].size() == 11);
  CHECK(m["junctions"][2]["d_new"] == 11);
  CHECK(m["junctions"][2]["sinkhorn_iterations"].get<int>() > 0);
  CHECK(m["spec"]["strategy"] == "dotresize");
  CHECK(m["residual_width"] == 11);
}

TEST_CASE("sequential compression leaves later layers untouched") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(16, 3), 16));
  CompressionSpec spec;
  spec.sparsity = 0.25;
  Compressor compressor(folded, spec, random_calibration(17));
  compressor.step();  // embedding_out
  compressor.step();  // attn_out(0)
  CHECK(compressor.next_junction() == 2);
  const Model& w = compressor.working_model();
  const auto& l0 = w.layers[0];
  const auto& f0 = folded.layers[0];
  // The boundary consumer carries M_inv of attn_out(0).
  CHECK(l0.wup.rows() == 12);
  CHECK(l0.wup == compressor.maps()[1].m_inv * f0.wup);
  CHECK(l0.wgate == compressor.maps()[1].m_inv * f0.wgate);
  CHECK(l0.wdown == f0.wdown);
  for (std::size_t l = 1; l < 3; ++l) {
    const auto& a = w.layers[l];
    const auto& b = folded.layers[l];
    CHECK(a.wq == b.wq);
    CHECK(a.wk == b.wk);
    CHECK(a.wv == b.wv);
    CHECK(a.wo == b.wo);
    CHECK(a.wup == b.wup);
    CHECK(a.wgate == b.wgate);
    CHECK(a.wdown == b.wdown);
  }
  CHECK(w.head == folded.head);
  CHECK_FALSE(compressor.done());
}

TEST_CASE("one-shot mode builds maps from the original model") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 18));
  const Calibration calib = random_calibration(19);
  CompressionSpec spec;
  spec.sparsity = 0.25;
  spec.pipeline_mode = PipelineMode::kOneShot;
  Compressor compressor(folded, spec, calib);
  while (!compressor.done()) compressor.step();
  for (int j = 0; j < folded.config.n_junctions(); ++j) {
    const auto acts = model::capture_activations(folded, calib, JunctionId::from_index(j));
    const JunctionMaps direct = build_maps(spec, acts, 12);
    const JunctionMaps& got = compressor.maps()[static_cast<std::size_t>(j)];
    CHECK(got.support == direct.support);
    CHECK((got.m - direct.m).cwiseAbs().maxCoeff() < 1e-10);
  }

  // Sequential agrees on the embedding junction and diverges afterwards.
  spec.pipeline_mode = PipelineMode::kSequential;
  Compressor sequential(folded, spec, calib);
  while (!sequential.done()) sequential.step();
  CHECK((sequential.maps()[0].m - compressor.maps()[0].m).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sequential.maps()[4].m - compressor.maps()[4].m).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("rms rescale scales the consumers") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 20));
  const Calibration calib = random_calibration(21);
  CompressionSpec spec;
  spec.sparsity = 0.5;
  const CompressedModel plain = compress(folded, spec, calib);
  spec.rms_rescale = true;
  const CompressedModel scaled = compress(folded, spec, calib);
  CHECK((scaled.model.layers[0].wq - std::sqrt(2.0) * plain.model.layers[0].wq)
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK(scaled.model.embed == plain.model.embed);
}

TEST_CASE("compress preconditions and solver errors") {
  const Model raw = model::generate_toy(testing::tiny_config(), 22);
  const Calibration calib = random_calibration(23);
  CHECK_THROWS_AS(compress(raw, {}, calib), Error);
  const Model folded = model::fold_rmsnorm(raw);
  CHECK_THROWS_AS(compress(folded, {}, {}), Error);
  CompressionSpec bad;
  bad.sparsity = 1.0;
  CHECK_THROWS_AS(compress(folded, bad, calib), Error);

  std::mt19937_64 rng(24);
  MapOptions starved;
  starved.sinkhorn_max_iter = 1;
  starved.sinkhorn_tol = 1e-15;
  CHECK_THROWS_AS(build_dotresize_maps(acts_of(random_matrix(rng, 8, 40)), 4, starved),
                  NotConvergedError);
}

TEST_CASE("compression leaves the input model unchanged") {
  const Model folded = model::fold_rmsnorm(model::generate_toy(testing::tiny_config(), 25));
  const Model copy = folded;
  compress(folded, {}, random_calibration(26));
  CHECK(folded.embed == copy.embed);
  CHECK(folded.layers[1].wq == copy.layers[1].wq);
  CHECK(folded.head == copy.head);
}

}  // namespace
}  // namespace dotresize::compress
