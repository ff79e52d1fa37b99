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

#include "dotresize/linalg.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dotresize/error.h"

namespace dotresize {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kNotSymmetric: return "NotSymmetric";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kDuplicateSupportIndex: return "DuplicateSupportIndex";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::kAlreadyFolded: return "AlreadyFolded";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kInvalidJunction: return "InvalidJunction";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kMissingTensor: return "MissingTensor";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kFileNotFound: return "FileNotFound";
    case ErrorCode::kMalformedLength: return "MalformedLength";
    case ErrorCode::kIdExceedsVocab: return "IdExceedsVocab";
    case ErrorCode::kBudgetExceedsData: return "BudgetExceedsData";
    case ErrorCode::kStreamTooShort: return "StreamTooShort";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

namespace linalg {

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, std::string(what) + " has non-finite entries");
  }
}

QrResult qr_thin(const Matrix& t) {
  const Eigen::Index rows = t.rows();
  const Eigen::Index cols = t.cols();
  if (cols > rows) {
    throw Error(ErrorCode::kRankDeficient,
                "qr_thin needs cols <= rows, got " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
  require_finite(t, "qr_thin input");

  Eigen::HouseholderQR<Matrix> qr(t);
  QrResult out;
  out.q = qr.householderQ() * Matrix::Identity(rows, cols);
  out.r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();

  const double max_col_norm = t.colwise().norm().maxCoeff();
  for (Eigen::Index i = 0; i < cols; ++i) {
    if (out.r(i, i) < 0.0) {
      out.r.row(i) *= -1.0;
      out.q.col(i) *= -1.0;
    }
    if (out.r(i, i) < kRankTolerance * max_col_norm) {
      throw Error(ErrorCode::kRankDeficient,
                  "R(" + std::to_string(i) + "," + std::to_string(i) +
                      ") = " + std::to_string(out.r(i, i)));
    }
  }
  return out;
}

Matrix pseudoinverse(const Matrix& m, double rcond) {
  require_finite(m, "pseudoinverse input");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rcond * s(0) : 0.0;
  Vector s_inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) s_inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

EigResult sym_eig_desc(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw Error(ErrorCode::kNotSymmetric, "matrix is not square");
  }
  require_finite(s, "sym_eig_desc input");
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTolerance) {
    throw Error(ErrorCode::kNotSymmetric, "max |S - S^T| = " + std::to_string(asym));
  }

  Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
  const Eigen::Index d = s.rows();
  EigResult out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  // Eigen returns ascending order.
  for (Eigen::Index k = 0; k < d; ++k) {
    out.values(k) = solver.eigenvalues()(d - 1 - k);
    Vector v = solver.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    out.vectors.col(k) = v;
  }
  return out;
}

Vector rmsnorm(const Vector& x, double eps) {
  const double ms = x.squaredNorm() / static_cast<double>(x.size());
  const double denom = std::sqrt(ms + eps);
  if (denom == 0.0) return Vector::Zero(x.size());
  return x / denom;
}

Matrix rmsnorm_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  const double width = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double denom = std::sqrt(x.row(i).squaredNorm() / width + eps);
    if (denom == 0.0) {
      out.row(i).setZero();
    } else {
      out.row(i) = x.row(i) / denom;
    }
  }
  return out;
}

double max_relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace linalg
}  // namespace dotresize
