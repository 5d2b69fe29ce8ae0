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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bvlab {

/// Dense row-major f32 tensor.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape_);
  Tensor(std::vector<std::int64_t> shape_, std::vector<float> data_);

  static std::size_t numel_of(std::span<const std::int64_t> shape);
  std::size_t numel() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

using Meta = std::map<std::string, std::string>;

/// Ordered map from parameter name to tensor. `std::map` keeps the
/// lexicographic name order that every flattening, hashing and
/// serialization routine relies on.
struct NamedTensorMap {
  std::map<std::string, Tensor> entries;
  Meta meta;

  std::size_t total_elements() const;
  bool empty() const { return entries.empty(); }

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  /// Inserts or replaces; rejects empty names and data/shape mismatches.
  void set(const std::string& name, Tensor t);

  /// Role tag stored in meta ("pretrained", "clean", "backdoored", "delta").
  std::string role() const;

  /// Tensors and meta compare equal bit for bit.
  bool operator==(const NamedTensorMap&) const = default;
};

/// Checks the structural invariants of a map; throws ValidationError.
void check_invariants(const NamedTensorMap& map, bool require_finite);

/// Throws ValidationError unless `a` and `b` share names and shapes.
void validate_compatible(const NamedTensorMap& a, const NamedTensorMap& b);

// NTC layout: 8-byte magic "NTCHKPT1", u64 LE header length, compact JSON
// header {name: {shape, offset, nbytes}, "__meta__": {...}} with keys in
// sorted order, then the f32 LE payloads concatenated in name order.
std::vector<std::uint8_t> serialize_checkpoint(const NamedTensorMap& map);
NamedTensorMap deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NamedTensorMap& map, const std::filesystem::path& path);
NamedTensorMap load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint, lowercase hex.
std::string content_hash(const NamedTensorMap& map);

}  // namespace bvlab
