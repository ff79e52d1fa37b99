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

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "dotresize/error.h"
#include "dotresize/transport.h"

namespace dotresize::ot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double median_entry(const Matrix& m) {
  std::vector<double> values(m.data(), m.data() + m.size());
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

template <typename Values>
double log_sum_exp(const Values& values) {
  const double peak = values.maxCoeff();
  if (peak == kNegInf) return kNegInf;
  return peak + std::log((values.array() - peak).exp().sum());
}

Vector safe_log(const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out(i) = v(i) > 0.0 ? std::log(v(i)) : kNegInf;
  }
  return out;
}

struct LinearResult {
  bool underflow = false;
  TransportPlan plan;
};

LinearResult solve_linear(const Matrix& cost, const Vector& a, const Vector& b,
                          const SinkhornOptions& options) {
  LinearResult result;
  // std::exp rather than Eigen's vectorized exp, which clamps large negative
  // arguments to a denormal instead of flushing to zero.
  const double lambda = options.lambda;
  const Matrix kernel = cost.unaryExpr([lambda](double c) { return std::exp(-c / lambda); });
  if (kernel.maxCoeff() == 0.0) {
    result.underflow = true;
    return result;
  }

  Vector u = Vector::Ones(cost.rows());
  Vector v = Vector::Ones(cost.cols());
  double residual = std::numeric_limits<double>::infinity();
  int iter = 0;
  while (iter < options.max_iter) {
    ++iter;
    u = a.cwiseQuotient(kernel * v);
    v = b.cwiseQuotient(kernel.transpose() * u);
    if (!u.allFinite() || !v.allFinite()) {
      result.underflow = true;
      return result;
    }
    // Column marginals are exact after the v update.
    residual = (u.cwiseProduct(kernel * v) - a).cwiseAbs().maxCoeff();
    if (residual <= options.tol) break;
  }

  result.plan.plan = u.asDiagonal() * kernel * v.asDiagonal();
  result.plan.iterations = iter;
  result.plan.residual = marginal_violation(result.plan.plan, a, b);
  return result;
}

TransportPlan solve_log(const Matrix& cost, const Vector& a, const Vector& b,
                        const SinkhornOptions& options) {
  const double lambda = options.lambda;
  const Eigen::Index n = cost.rows();
  const Eigen::Index k = cost.cols();
  const Vector log_a = safe_log(a);
  const Vector log_b = safe_log(b);

  // Potentials scaled by 1/lambda: plan_ij = exp(f_i + g_j - C_ij / lambda).
  const Matrix scaled = cost / lambda;
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(k);
  Eigen::ArrayXd scratch_row(k);
  Eigen::ArrayXd scratch_col(n);

  auto update_f = [&] {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (log_a(i) == kNegInf) {
        f(i) = kNegInf;
        continue;
      }
      scratch_row = g.array() - scaled.row(i).transpose().array();
      f(i) = log_a(i) - log_sum_exp(scratch_row);
    }
  };
  auto update_g = [&] {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (log_b(j) == kNegInf) {
        g(j) = kNegInf;
        continue;
      }
      scratch_col = f.array() - scaled.col(j).array();
      g(j) = log_b(j) - log_sum_exp(scratch_col);
    }
  };
  auto row_violation = [&] {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row_sum = 0.0;
      if (f(i) != kNegInf) {
        scratch_row = g.array() - scaled.row(i).transpose().array();
        row_sum = std::exp(f(i) + log_sum_exp(scratch_row));
      }
      worst = std::max(worst, std::abs(row_sum - a(i)));
    }
    return worst;
  };

  double residual = std::numeric_limits<double>::infinity();
  int iter = 0;
  while (iter < options.max_iter) {
    ++iter;
    update_f();
    update_g();
    residual = row_violation();
    if (residual <= options.tol) break;
  }

  TransportPlan out;
  out.plan.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double exponent = f(i) + g(j) - scaled(i, j);
      out.plan(i, j) = exponent == kNegInf ? 0.0 : std::exp(exponent);
    }
  }
  out.iterations = iter;
  out.residual = marginal_violation(out.plan, a, b);
  out.log_domain = true;
  return out;
}

}  // namespace

Matrix cost_matrix(const ActivationMatrix& acts, std::span<const std::size_t> support,
                   const CostOptions& options) {
  const auto d = static_cast<std::size_t>(acts.neurons());
  std::set<std::size_t> seen;
  for (std::size_t s : support) {
    if (s >= d) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "support index " + std::to_string(s) + " >= " + std::to_string(d));
    }
    if (!seen.insert(s).second) {
      throw Error(ErrorCode::kDuplicateSupportIndex,
                  "support index " + std::to_string(s) + " repeated");
    }
  }

  Matrix centered;
  const Matrix* x = &acts.values;
  if (options.center) {
    centered = acts.values.colwise() - acts.values.rowwise().mean();
    x = &centered;
  }

  // Walk token columns so the inner loop reads contiguous memory.
  Matrix cost = Matrix::Zero(acts.neurons(), static_cast<Eigen::Index>(support.size()));
  for (Eigen::Index c = 0; c < x->cols(); ++c) {
    const auto column = x->col(c).array();
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
      const double target = column(static_cast<Eigen::Index>(support[j]));
      cost.col(j).array() += (column - target).abs();
    }
  }
  return cost;
}

TransportPlan sinkhorn(const Matrix& cost, const Vector& a, const Vector& b,
                       const SinkhornOptions& options) {
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    throw Error(ErrorCode::kDimMismatch, "cost matrix does not match marginals");
  }
  if (!(options.lambda > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "lambda must be positive");
  }
  linalg::require_finite(cost, "cost matrix");

  bool use_log = options.mode == SinkhornMode::kLog;
  if (options.mode == SinkhornMode::kAuto) {
    use_log = options.lambda < 0.05 * median_entry(cost);
  }

  TransportPlan out;
  if (!use_log) {
    LinearResult linear = solve_linear(cost, a, b, options);
    if (linear.underflow) {
      if (options.mode == SinkhornMode::kLinear) {
        throw Error(ErrorCode::kNumericalUnderflow,
                    "kernel exp(-C/lambda) underflowed; use the log domain");
      }
      use_log = true;
    } else {
      out = std::move(linear.plan);
    }
  }
  if (use_log) out = solve_log(cost, a, b, options);

  out.lambda = options.lambda;
  out.marginals_src = a;
  out.marginals_tgt = b;
  if (!(out.residual <= options.tol)) {
    throw NotConvergedError(out.residual, out.iterations);
  }
  return out;
}

Vector uniform(Eigen::Index n) {
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

Matrix rescale_rows(const TransportPlan& plan) {
  return plan.plan * static_cast<double>(plan.plan.rows());
}

double entropy(const Matrix& plan) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < plan.size(); ++i) {
    const double t = plan.data()[i];
    if (t > 0.0) h -= t * (std::log(t) - 1.0);
  }
  return h;
}

double objective(const Matrix& plan, const Matrix& cost, double lambda) {
  return plan.cwiseProduct(cost).sum() - lambda * entropy(plan);
}

double marginal_violation(const Matrix& plan, const Vector& a, const Vector& b) {
  const double rows = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double cols = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

}  // namespace dotresize::ot
