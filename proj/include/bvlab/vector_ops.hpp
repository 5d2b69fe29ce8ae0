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

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bvlab/tensor_store.hpp"

namespace bvlab {

/// A NamedTensorMap carrying delta semantics (meta role "delta"): a task
/// vector (fine-tuned minus pre-trained) or a backdoor vector (backdoored
/// minus clean). Kept as a distinct type so that weights and deltas are not
/// mixed up at call sites.
class TaskVector {
 public:
  TaskVector() { map_.meta["role"] = "delta"; }
  /// Adopts `map` and forces meta role to "delta".
  explicit TaskVector(NamedTensorMap map);

  const NamedTensorMap& map() const { return map_; }
  NamedTensorMap& map() { return map_; }
  const Meta& meta() const { return map_.meta; }
  Meta& meta() { return map_.meta; }
  std::size_t total_elements() const { return map_.total_elements(); }

  /// Copies all tensors, in canonical name order, into one flat vector.
  std::vector<float> flatten() const;

  bool operator==(const TaskVector&) const = default;

 private:
  NamedTensorMap map_;
};

/// theta_ft - theta_pre.
TaskVector task_vector(const NamedTensorMap& theta_ft, const NamedTensorMap& theta_pre);

/// theta_backdoored - theta_clean; records both parents' seeds in meta.
TaskVector backdoor_vector(const NamedTensorMap& theta_backdoored,
                           const NamedTensorMap& theta_clean);

/// base + lambda * v. The result keeps the base's meta.
NamedTensorMap apply_vector(const NamedTensorMap& base, const TaskVector& v, float lambda);

/// sum_i coeffs[i] * vs[i], accumulated in f64 in list order.
TaskVector linear_combine(std::span<const TaskVector> vs, std::span<const float> coeffs);

/// a - b.
TaskVector subtract(const TaskVector& a, const TaskVector& b);

/// a * c.
TaskVector scale(const TaskVector& a, float c);

/// Cosine of the two flattened vectors; throws on a zero-norm input.
float cosine_similarity(const TaskVector& a, const TaskVector& b);

struct CosineMatrix {
  std::vector<std::vector<float>> values;
  /// Mean over the off-diagonal entries.
  float off_diagonal_mean() const;
  /// Mean of |value| over the off-diagonal entries.
  float off_diagonal_abs_mean() const;
};

CosineMatrix pairwise_cosine(std::span<const TaskVector> vs);

/// Hoyer sparsity (sqrt(n) - l1/l2) / (sqrt(n) - 1) of the flattened vector.
/// Computed in f64; the f32 value returned is the cast of `hoyer_sparsity_f64`.
float hoyer_sparsity(const TaskVector& v);
double hoyer_sparsity_f64(const TaskVector& v);
double hoyer_sparsity_f64(std::span<const float> flat);

/// Per-tensor Hoyer values (optional breakdown; tensors with fewer than two
/// elements or all zeros are skipped).
std::map<std::string, double> hoyer_sparsity_per_tensor(const TaskVector& v);

}  // namespace bvlab
