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

#ifndef DOTRESIZE_ERROR_H_
#define DOTRESIZE_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace dotresize {

enum class ErrorCode {
  // linalg
  kRankDeficient,
  kNotSymmetric,
  kNonFinite,
  // transport
  kDuplicateSupportIndex,
  kIndexOutOfRange,
  kNotConverged,
  kNumericalUnderflow,
  // model / container
  kAlreadyFolded,
  kTokenOutOfRange,
  kInvalidJunction,
  kBadMagic,
  kVersionMismatch,
  kMissingTensor,
  kDimMismatch,
  kTruncatedFile,
  kInvalidConfig,
  // data
  kFileNotFound,
  kMalformedLength,
  kIdExceedsVocab,
  kBudgetExceedsData,
  kStreamTooShort,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// Every recoverable failure in the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Thrown by the Sinkhorn solver; carries the final marginal violation.
class NotConvergedError : public Error {
 public:
  NotConvergedError(double residual, int iterations)
      : Error(ErrorCode::kNotConverged,
              "marginal residual " + std::to_string(residual) + " after " +
                  std::to_string(iterations) + " iterations"),
        residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace dotresize

#endif  // DOTRESIZE_ERROR_H_
