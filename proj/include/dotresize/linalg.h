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

#ifndef DOTRESIZE_LINALG_H_
#define DOTRESIZE_LINALG_H_

// Dense kernels used by the transport, model and compression code. All
// functions are pure and operate in double precision.
//
// Convention: activations are row vectors and weights right-multiply them,
// i.e. a layer computes x * W.

#include <Eigen/Dense>

namespace dotresize {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace linalg {

inline constexpr double kRankTolerance = 1e-12;
inline constexpr double kPinvRcond = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-9;

struct QrResult {
  Matrix q;  // rows x cols, orthonormal columns
  Matrix r;  // cols x cols, upper triangular, nonnegative diagonal
};

// Householder thin QR of a tall matrix (cols <= rows). The sign of each
// Householder column is flipped so that diag(R) >= 0.
// Throws kRankDeficient when |R_ii| < 1e-12 * max column norm of t.
QrResult qr_thin(const Matrix& t);

// Moore-Penrose pseudoinverse via SVD; singular values below
// rcond * sigma_max are treated as zero.
Matrix pseudoinverse(const Matrix& m, double rcond = kPinvRcond);

struct EigResult {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values(k)
};

// Symmetric eigendecomposition with eigenvalues sorted in descending order.
// Each eigenvector is signed so that its largest-magnitude entry is positive.
EigResult sym_eig_desc(const Matrix& s);

// x / sqrt(mean(x^2) + eps).
Vector rmsnorm(const Vector& x, double eps);

// Row-wise rmsnorm of a (tokens x width) block.
Matrix rmsnorm_rows(const Matrix& x, double eps);

bool all_finite(const Matrix& m);

// Throws kNonFinite if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

// max |a - b| / max(|b|, tiny); the denominator uses b's largest entry.
double max_relative_error(const Matrix& a, const Matrix& b);

}  // namespace linalg
}  // namespace dotresize

#endif  // DOTRESIZE_LINALG_H_
