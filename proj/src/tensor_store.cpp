/* Copyright 2026 The bvlab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "bvlab/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bvlab/errors.hpp"
#include "bvlab/util.hpp"
#include "json.hpp"

namespace bvlab {

namespace {

constexpr char kMagic[8] = {'N', 'T', 'C', 'H', 'K', 'P', 'T', '1'};
constexpr const char* kMetaKey = "__meta__";

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32_le(const std::uint8_t* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                             (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape_) : shape(std::move(shape_)) {
  data.assign(numel_of(shape), 0.0f);
}

Tensor::Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (data.size() != numel_of(shape)) {
    throw ValidationError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape product " + std::to_string(numel_of(shape)));
  }
}

std::size_t Tensor::numel_of(std::span<const std::int64_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ValidationError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::size_t NamedTensorMap::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries) n += t.numel();
  return n;
}

const Tensor& NamedTensorMap::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw ValidationError("no tensor named \"" + name + "\"");
  return it->second;
}

Tensor& NamedTensorMap::at(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) throw ValidationError("no tensor named \"" + name + "\"");
  return it->second;
}

void NamedTensorMap::set(const std::string& name, Tensor t) {
  if (name.empty()) throw ValidationError("tensor names must be non-empty");
  if (name == kMetaKey) throw ValidationError("tensor name \"__meta__\" is reserved");
  if (t.data.size() != Tensor::numel_of(t.shape)) {
    throw ValidationError("tensor \"" + name + "\": data length does not match shape");
  }
  entries.insert_or_assign(name, std::move(t));
}

std::string NamedTensorMap::role() const {
  auto it = meta.find("role");
  return it == meta.end() ? std::string() : it->second;
}

void check_invariants(const NamedTensorMap& map, bool require_finite) {
  for (const auto& [name, t] : map.entries) {
    if (name.empty()) throw ValidationError("tensor names must be non-empty");
    if (name == kMetaKey) throw ValidationError("tensor name \"__meta__\" is reserved");
    if (t.shape.empty()) throw ValidationError("tensor \"" + name + "\" has empty shape");
    if (t.data.size() != Tensor::numel_of(t.shape)) {
      throw ValidationError("tensor \"" + name + "\": data length does not match shape");
    }
    if (require_finite) {
      for (float v : t.data) {
        if (!std::isfinite(v)) throw ValidationError("tensor \"" + name + "\" has non-finite value");
      }
    }
  }
}

void validate_compatible(const NamedTensorMap& a, const NamedTensorMap& b) {
  std::vector<std::string> diff;
  for (const auto& [name, _] : a.entries) {
    if (!b.entries.contains(name)) diff.push_back(name);
  }
  for (const auto& [name, _] : b.entries) {
    if (!a.entries.contains(name)) diff.push_back(name);
  }
  if (!diff.empty()) {
    std::string msg = "name-set mismatch:";
    for (const auto& n : diff) msg += " " + n;
    throw ValidationError(msg);
  }
  for (const auto& [name, t] : a.entries) {
    if (t.shape != b.entries.at(name).shape) {
      throw ValidationError("shape mismatch for \"" + name + "\"");
    }
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensorMap& map) {
  check_invariants(map, /*require_finite=*/true);

  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : map.entries) {
    const std::uint64_t nbytes = t.numel() * sizeof(float);
    header[name] = {{"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  if (!map.meta.empty()) header[kMetaKey] = map.meta;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, t] : map.entries) {
    for (float v : t.data) put_f32_le(out, v);
  }
  return out;
}

NamedTensorMap deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("bad magic");
  }
  const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("header must be a JSON object");

  const auto payload = bytes.subspan(16 + header_len);
  NamedTensorMap map;
  std::uint64_t declared = 0;
  try {
    for (const auto& [name, entry] : header.items()) {
      if (name == kMetaKey) {
        map.meta = entry.get<Meta>();
        continue;
      }
      auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      const std::size_t numel = Tensor::numel_of(shape);
      if (nbytes != numel * sizeof(float)) {
        throw FormatError("length mismatch for \"" + name + "\"");
      }
      if (offset != declared) {
        throw FormatError("layout mismatch: \"" + name + "\" is not contiguous in name order");
      }
      if (offset > payload.size() || nbytes > payload.size() - offset) {
        throw FormatError("length mismatch: \"" + name + "\" exceeds payload");
      }
      std::vector<float> data(numel);
      const std::uint8_t* p = payload.data() + offset;
      for (std::size_t i = 0; i < numel; ++i) data[i] = get_f32_le(p + 4 * i);
      map.set(name, Tensor(std::move(shape), std::move(data)));
      declared += nbytes;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header entry: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
  if (declared != payload.size()) throw FormatError("length mismatch: payload size differs from header");
  try {
    check_invariants(map, /*require_finite=*/true);
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
  return map;
}

void save_checkpoint(const NamedTensorMap& map, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(map));
}

NamedTensorMap load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

std::string content_hash(const NamedTensorMap& map) {
  return sha256_hex(serialize_checkpoint(map));
}

}  // namespace bvlab
