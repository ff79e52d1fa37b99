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

#ifndef DOTRESIZE_CALIB_H_
#define DOTRESIZE_CALIB_H_

// Token streams for calibration and evaluation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dotresize::calib {

enum class TokenFormat { kBinaryU32, kTextBytes };

TokenFormat parse_token_format(const std::string& name);

// Extension ".bin" or ".u32" selects binary, anything else text bytes.
TokenFormat infer_token_format(const std::filesystem::path& path);

struct TokenStream {
  std::vector<std::uint32_t> ids;
  std::filesystem::path source;
  std::uint32_t vocab_bound = 256;

  std::size_t size() const { return ids.size(); }
};

inline constexpr std::size_t kDefaultBudget = std::size_t{1} << 18;

// binary_u32: little-endian u32 ids, checked against vocab_bound.
// text_bytes: one id per byte, vocabulary 256.
// Throws kFileNotFound, kMalformedLength, kIdExceedsVocab.
TokenStream load_tokens(const std::filesystem::path& path, TokenFormat format,
                        std::uint32_t vocab_bound = 256);

void save_tokens(const std::vector<std::uint32_t>& ids, const std::filesystem::path& path);

struct Window {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// ceil(budget / seq_len) contiguous windows, non-overlapping whenever the
// stream has room for them, chosen deterministically from the seed and
// returned in ascending offset order. Throws kBudgetExceedsData.
std::vector<Window> sample_windows(std::size_t stream_size, std::size_t budget,
                                   std::size_t seq_len, std::uint64_t seed);

std::vector<std::vector<std::uint32_t>> sample_calibration(const TokenStream& stream,
                                                           std::size_t budget,
                                                           std::size_t seq_len,
                                                           std::uint64_t seed);

// Deterministic synthetic corpus for self-contained runs: a sparse random
// Markov chain over the vocabulary, so the stream has learnable structure.
TokenStream synthetic_stream(std::size_t length, std::uint32_t vocab, std::uint64_t seed);

}  // namespace dotresize::calib

#endif  // DOTRESIZE_CALIB_H_
