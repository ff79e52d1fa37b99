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

#include "dotresize/calib.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "dotresize/error.h"

namespace dotresize::calib {
namespace {

// Unbiased enough for n << 2^64 and independent of the standard library's
// distribution implementations.
std::size_t draw_below(std::mt19937_64& engine, std::size_t n) {
  return static_cast<std::size_t>(engine() % n);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TokenFormat parse_token_format(const std::string& name) {
  if (name == "binary_u32") return TokenFormat::kBinaryU32;
  if (name == "text_bytes") return TokenFormat::kTextBytes;
  throw Error(ErrorCode::kInvalidConfig, "unknown token format '" + name + "'");
}

TokenFormat infer_token_format(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  return ext == ".bin" || ext == ".u32" ? TokenFormat::kBinaryU32 : TokenFormat::kTextBytes;
}

TokenStream load_tokens(const std::filesystem::path& path, TokenFormat format,
                        std::uint32_t vocab_bound) {
  const std::vector<char> bytes = read_file(path);
  TokenStream stream;
  stream.source = path;
  if (format == TokenFormat::kTextBytes) {
    stream.vocab_bound = 256;
    stream.ids.reserve(bytes.size());
    for (char c : bytes) stream.ids.push_back(static_cast<unsigned char>(c));
  } else {
    if (bytes.size() % 4 != 0) {
      throw Error(ErrorCode::kMalformedLength,
                  path.string() + " has " + std::to_string(bytes.size()) + " bytes");
    }
    stream.vocab_bound = vocab_bound;
    stream.ids.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < stream.ids.size(); ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
      const std::uint32_t id = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                               (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
      if (id >= vocab_bound) {
        throw Error(ErrorCode::kIdExceedsVocab,
                    "id " + std::to_string(id) + " at position " + std::to_string(i));
      }
      stream.ids[i] = id;
    }
  }
  if (stream.ids.empty()) throw Error(ErrorCode::kMalformedLength, path.string() + " is empty");
  return stream;
}

void save_tokens(const std::vector<std::uint32_t>& ids, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  for (std::uint32_t id : ids) {
    const unsigned char b[4] = {static_cast<unsigned char>(id), static_cast<unsigned char>(id >> 8),
                                static_cast<unsigned char>(id >> 16),
                                static_cast<unsigned char>(id >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

std::vector<Window> sample_windows(std::size_t stream_size, std::size_t budget,
                                   std::size_t seq_len, std::uint64_t seed) {
  if (seq_len < 2) throw Error(ErrorCode::kInvalidConfig, "seq_len must be >= 2");
  if (budget > stream_size) {
    throw Error(ErrorCode::kBudgetExceedsData, std::to_string(budget) + " tokens requested, " +
                                                   std::to_string(stream_size) + " available");
  }
  if (budget == 0) return {};
  const std::size_t length = std::min(seq_len, stream_size);
  const std::size_t count = (budget + seq_len - 1) / seq_len;
  std::mt19937_64 engine(seed);

  std::vector<Window> windows;
  const std::size_t slots = stream_size / length;
  if (count <= slots) {
    // Tile the stream from a random phase, then pick `count` distinct tiles.
    const std::size_t slack = stream_size - slots * length;
    const std::size_t phase = slack > 0 ? draw_below(engine, slack + 1) : 0;
    std::vector<std::size_t> tiles(slots);
    std::iota(tiles.begin(), tiles.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(tiles[i], tiles[i + draw_below(engine, slots - i)]);
    }
    for (std::size_t i = 0; i < count; ++i) windows.push_back({phase + tiles[i] * length, length});
  } else {
    // Not enough room for disjoint windows: use every tile, then overlap.
    for (std::size_t i = 0; i < slots; ++i) windows.push_back({i * length, length});
    while (windows.size() < count) {
      windows.push_back({draw_below(engine, stream_size - length + 1), length});
    }
  }
  std::sort(windows.begin(), windows.end(),
            [](const Window& a, const Window& b) { return a.offset < b.offset; });
  return windows;
}

std::vector<std::vector<std::uint32_t>> sample_calibration(const TokenStream& stream,
                                                           std::size_t budget,
                                                           std::size_t seq_len,
                                                           std::uint64_t seed) {
  std::vector<std::vector<std::uint32_t>> out;
  for (const Window& w : sample_windows(stream.size(), budget, seq_len, seed)) {
    const auto begin = stream.ids.begin() + static_cast<std::ptrdiff_t>(w.offset);
    out.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(w.length));
  }
  return out;
}

TokenStream synthetic_stream(std::size_t length, std::uint32_t vocab, std::uint64_t seed) {
  if (vocab < 2) throw Error(ErrorCode::kInvalidConfig, "vocab must be >= 2");
  std::mt19937_64 engine(seed);
  constexpr std::size_t kFanout = 4;
  std::vector<std::uint32_t> successors(static_cast<std::size_t>(vocab) * kFanout);
  for (auto& s : successors) s = static_cast<std::uint32_t>(draw_below(engine, vocab));

  TokenStream stream;
  stream.vocab_bound = vocab;
  stream.source = "synthetic";
  stream.ids.reserve(length);
  std::uint32_t current = static_cast<std::uint32_t>(draw_below(engine, vocab));
  for (std::size_t i = 0; i < length; ++i) {
    stream.ids.push_back(current);
    const std::uint64_t r = engine();
    if (r % 10 == 0) {
      current = static_cast<std::uint32_t>((r >> 8) % vocab);
    } else {
      current = successors[static_cast<std::size_t>(current) * kFanout + (r >> 8) % kFanout];
    }
  }
  return stream;
}

}  // namespace dotresize::calib
