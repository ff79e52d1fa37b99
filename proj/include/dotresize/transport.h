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

#ifndef DOTRESIZE_TRANSPORT_H_
#define DOTRESIZE_TRANSPORT_H_

// Entropy-regularized discrete optimal transport between a layer's neurons
// and a selected subset of them.

#include <cstddef>
#include <span>
#include <vector>

#include "dotresize/linalg.h"

namespace dotresize::ot {

// One row per neuron; each row is that neuron's signature over t tokens.
struct ActivationMatrix {
  Matrix values;  // neurons x tokens

  Eigen::Index neurons() const { return values.rows(); }
  Eigen::Index tokens() const { return values.cols(); }
};

struct CostOptions {
  // Subtract each neuron's mean activation before taking distances.
  bool center = false;
};

// C(i, j) = || x_i - x_support[j] ||_1 over the token axis.
Matrix cost_matrix(const ActivationMatrix& acts, std::span<const std::size_t> support,
                   const CostOptions& options = {});

enum class SinkhornMode { kAuto, kLinear, kLog };

struct SinkhornOptions {
  double lambda = 0.1;
  double tol = 1e-9;
  int max_iter = 10000;
  SinkhornMode mode = SinkhornMode::kAuto;
};

struct TransportPlan {
  Matrix plan;  // n x k, nonnegative
  double lambda = 0.0;
  Vector marginals_src;
  Vector marginals_tgt;
  int iterations = 0;
  double residual = 0.0;  // max-norm marginal violation at exit
  bool log_domain = false;
};

// Solves argmin <T, C> - lambda * H(T) with H(T) = -sum T (log T - 1), subject
// to T 1 = a and T^T 1 = b. The auto mode runs in the log domain when
// lambda < 0.05 * median(C) or when the linear kernel underflows.
// Throws NotConvergedError, or kNumericalUnderflow in forced linear mode.
TransportPlan sinkhorn(const Matrix& cost, const Vector& a, const Vector& b,
                       const SinkhornOptions& options = {});

Vector uniform(Eigen::Index n);

// plan * n, so every row of an n-row plan with uniform source sums to 1.
Matrix rescale_rows(const TransportPlan& plan);

// -sum T (log T - 1), with 0 log 0 = 0.
double entropy(const Matrix& plan);

// <T, C> - lambda * H(T).
double objective(const Matrix& plan, const Matrix& cost, double lambda);

// Max-norm violation of both marginals.
double marginal_violation(const Matrix& plan, const Vector& a, const Vector& b);

}  // namespace dotresize::ot

#endif  // DOTRESIZE_TRANSPORT_H_
