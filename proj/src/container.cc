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

// Weight container v1, all integers little-endian:
//
//   8 bytes   magic "DOTRSZ01"
//   u32       header length
//   bytes     UTF-8 JSON config header
//   per tensor, until end of file:
//     u16     name length
//     bytes   name
//     u8      dtype (0 = f32, 1 = f64)
//     u8      rank
//     u32     dims[rank]
//     bytes   row-major little-endian data
//
// Matrices are stored as written in the row-vector convention, e.g.
// layers.{i}.wq has dims [width, n_heads * d_head].

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dotresize/error.h"
#include "dotresize/model.h"

namespace dotresize::model {
namespace {

constexpr std::array<char, 8> kMagic = {'D', 'O', 'T', 'R', 'S', 'Z', '0', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

struct RawTensor {
  std::vector<std::uint32_t> dims;
  Matrix values;  // rank-1 tensors are stored as a column
};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::kIoError, "cannot open " + path.string() + " for writing");
  }

  template <typename T>
  void scalar(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  void tensor(const std::string& name, const Matrix& m, bool is_vector, Precision precision) {
    scalar(static_cast<std::uint16_t>(name.size()));
    bytes(name.data(), name.size());
    scalar(static_cast<std::uint8_t>(precision == Precision::kF32 ? 0 : 1));
    if (is_vector) {
      scalar(static_cast<std::uint8_t>(1));
      scalar(static_cast<std::uint32_t>(m.size()));
    } else {
      scalar(static_cast<std::uint8_t>(2));
      scalar(static_cast<std::uint32_t>(m.rows()));
      scalar(static_cast<std::uint32_t>(m.cols()));
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (precision == Precision::kF32) {
          scalar(static_cast<float>(m(i, j)));
        } else {
          scalar(m(i, j));
        }
      }
    }
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorCode::kIoError, "write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  bool at_end() const { return pos_ == data_.size(); }

  template <typename T>
  T scalar() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  std::string string(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }

  const char* take(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncatedFile, "unexpected end of container");
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["n_kv_heads"] = c.n_kv_heads;
  j["d_head"] = c.d_head;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["rope_base"] = c.rope_base;
  j["norm_eps"] = c.norm_eps;
  j["precision"] = precision_name(c.precision);
  j["norms_folded"] = c.norms_folded;
  if (c.residual_width) j["residual_width"] = *c.residual_width;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  "header format_version " + j.at("format_version").dump());
    }
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_kv_heads = j.at("n_kv_heads").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.rope_base = j.value("rope_base", 10000.0);
    c.norm_eps = j.value("norm_eps", 1e-5);
    c.precision = parse_precision(j.value("precision", std::string("f32")));
    c.norms_folded = j.value("norms_folded", false);
    if (j.contains("residual_width")) c.residual_width = j.at("residual_width").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config header: ") + e.what());
  }
}

struct Expected {
  std::string name;
  std::vector<std::uint32_t> dims;
};

std::vector<Expected> expected_tensors(const ModelConfig& c) {
  const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
  const std::uint32_t w = u(c.width());
  std::vector<Expected> out;
  out.push_back({"embed", {u(c.vocab_size), w}});
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "wq", {w, u(c.attn_width())}});
    out.push_back({p + "wk", {w, u(c.kv_width())}});
    out.push_back({p + "wv", {w, u(c.kv_width())}});
    out.push_back({p + "wo", {u(c.attn_width()), w}});
    out.push_back({p + "wup", {w, u(c.d_ff)}});
    out.push_back({p + "wgate", {w, u(c.d_ff)}});
    out.push_back({p + "wdown", {u(c.d_ff), w}});
    if (!c.norms_folded) {
      out.push_back({p + "norm_attn", {w}});
      out.push_back({p + "norm_ffn", {w}});
    }
    if (c.residual_width) {
      out.push_back({p + "adapter_attn", {w, w}});
      out.push_back({p + "adapter_ffn", {w, w}});
    }
  }
  if (!c.norms_folded) out.push_back({"norm_final", {w}});
  out.push_back({"head", {w, u(c.vocab_size)}});
  return out;
}

// Visits (name, tensor, is_vector) in the canonical order.
template <typename Fn>
void for_each_tensor(const Model& m, Fn&& fn) {
  fn("embed", m.embed, false);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerWeights& l = m.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    fn(p + "wq", l.wq, false);
    fn(p + "wk", l.wk, false);
    fn(p + "wv", l.wv, false);
    fn(p + "wo", l.wo, false);
    fn(p + "wup", l.wup, false);
    fn(p + "wgate", l.wgate, false);
    fn(p + "wdown", l.wdown, false);
    if (!m.config.norms_folded) {
      fn(p + "norm_attn", Matrix(l.norm_attn), true);
      fn(p + "norm_ffn", Matrix(l.norm_ffn), true);
    }
    if (m.compressed()) {
      fn(p + "adapter_attn", l.adapter_attn, false);
      fn(p + "adapter_ffn", l.adapter_ffn, false);
    }
  }
  if (!m.config.norms_folded) fn("norm_final", Matrix(m.norm_final), true);
  fn("head", m.head, false);
}

}  // namespace

void save_container(const Model& model, const std::filesystem::path& path) {
  model.config.validate();
  const std::vector<Expected> expected = expected_tensors(model.config);
  std::size_t k = 0;
  for_each_tensor(model, [&](const std::string& name, const Matrix& m, bool is_vector) {
    const Expected& e = expected.at(k++);
    const bool ok = is_vector ? (e.dims.size() == 1 && m.size() == e.dims[0])
                              : (e.dims.size() == 2 && m.rows() == e.dims[0] &&
                                 m.cols() == e.dims[1]);
    if (name != e.name || !ok) {
      throw Error(ErrorCode::kDimMismatch, "tensor " + name + " does not match config");
    }
  });

  Writer w(path);
  w.bytes(kMagic.data(), kMagic.size());
  const std::string header = config_to_json(model.config).dump();
  w.scalar(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  for_each_tensor(model, [&](const std::string& name, const Matrix& m, bool is_vector) {
    w.tensor(name, m, is_vector, model.config.precision);
  });
  w.finish();
}

Model load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  const std::string magic = r.string(kMagic.size());
  if (magic.compare(0, 6, std::string(kMagic.data(), 6)) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a weight container");
  }
  if (magic != std::string(kMagic.data(), kMagic.size())) {
    throw Error(ErrorCode::kVersionMismatch, "container version " + magic.substr(6));
  }
  const auto header_len = r.scalar<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config header: ") + e.what());
  }
  const ModelConfig config = config_from_json(header);

  std::map<std::string, RawTensor> tensors;
  while (!r.at_end()) {
    const auto name_len = r.scalar<std::uint16_t>();
    std::string name = r.string(name_len);
    const auto dtype = r.scalar<std::uint8_t>();
    const auto rank = r.scalar<std::uint8_t>();
    if (dtype > 1) throw Error(ErrorCode::kInvalidConfig, name + ": unknown dtype");
    if (rank < 1 || rank > 2) throw Error(ErrorCode::kDimMismatch, name + ": unsupported rank");
    RawTensor t;
    for (int i = 0; i < rank; ++i) t.dims.push_back(r.scalar<std::uint32_t>());
    const Eigen::Index rows = t.dims[0];
    const Eigen::Index cols = rank == 2 ? t.dims[1] : 1;
    t.values.resize(rows, cols);
    if (rank == 1) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        t.values(i, 0) = dtype == 0 ? r.scalar<float>() : r.scalar<double>();
      }
    } else {
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
          t.values(i, j) = dtype == 0 ? r.scalar<float>() : r.scalar<double>();
        }
      }
    }
    if (!tensors.emplace(name, std::move(t)).second) {
      throw Error(ErrorCode::kDimMismatch, "tensor " + name + " appears twice");
    }
  }

  const std::vector<Expected> expected = expected_tensors(config);
  std::set<std::string> wanted;
  for (const Expected& e : expected) {
    auto it = tensors.find(e.name);
    if (it == tensors.end()) throw Error(ErrorCode::kMissingTensor, e.name);
    if (it->second.dims != e.dims) throw Error(ErrorCode::kDimMismatch, e.name);
    wanted.insert(e.name);
  }
  for (const auto& [name, t] : tensors) {
    if (!wanted.count(name)) throw Error(ErrorCode::kDimMismatch, "unexpected tensor " + name);
  }

  auto take = [&](const std::string& name) { return std::move(tensors.at(name).values); };
  Model m;
  m.config = config;
  m.embed = take("embed");
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (int i = 0; i < config.n_layers; ++i) {
    LayerWeights& l = m.layers[static_cast<std::size_t>(i)];
    const std::string p = "layers." + std::to_string(i) + ".";
    l.wq = take(p + "wq");
    l.wk = take(p + "wk");
    l.wv = take(p + "wv");
    l.wo = take(p + "wo");
    l.wup = take(p + "wup");
    l.wgate = take(p + "wgate");
    l.wdown = take(p + "wdown");
    if (!config.norms_folded) {
      l.norm_attn = take(p + "norm_attn");
      l.norm_ffn = take(p + "norm_ffn");
    }
    if (config.residual_width) {
      l.adapter_attn = take(p + "adapter_attn");
      l.adapter_ffn = take(p + "adapter_ffn");
    }
  }
  if (!config.norms_folded) m.norm_final = take("norm_final");
  m.head = take("head");
  return m;
}

}  // namespace dotresize::model
