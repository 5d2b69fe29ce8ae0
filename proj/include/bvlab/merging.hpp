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
#include <span>
#include <string>
#include <vector>

#include "bvlab/tensor_store.hpp"
#include "bvlab/vector_ops.hpp"

namespace bvlab {

enum class SparsificationType { kSignConsistent, kRandom };
enum class ShuffleScope { kPerTensor, kGlobal };

std::string to_string(SparsificationType st);
SparsificationType parse_sparsification(const std::string& s);  // "sc" | "rnd"
std::string to_string(ShuffleScope s);
ShuffleScope parse_shuffle_scope(const std::string& s);  // "per_tensor" | "global"

/// Binary mask with the same names and shapes as a reference vector.
struct SparseMask {
  NamedTensorMap mask;

  std::size_t popcount() const;
  std::size_t popcount(const std::string& name) const;
};

enum class MergeTag { kTaskArithmetic, kAverage, kTies, kSbvSc, kSbvRnd };

struct MergeStrategy {
  MergeTag tag = MergeTag::kTaskArithmetic;
  float lambda = 0.1f;
  float trim_fraction = 0.2f;
  int k = 5;
  std::uint64_t seed = 0;

  /// Throws ValidationError when parameters are out of range.
  void validate() const;
};

std::string to_string(MergeTag tag);
MergeTag parse_merge_tag(const std::string& s);  // "ta" | "avg" | "ties" | "sbv_sc" | "sbv_rnd"

/// theta_pre + lambda * sum(tvs). The sum is accumulated in f64.
NamedTensorMap merge_task_arithmetic(const NamedTensorMap& theta_pre,
                                     std::span<const TaskVector> tvs, float lambda);

/// Element-wise mean of the vectors.
TaskVector merge_average(std::span<const TaskVector> tvs);

/// TIES merging (trim, elect sign, disjoint mean). Trimming keeps the top
/// `trim_fraction` entries by magnitude over each whole flattened vector;
/// ties at the threshold are broken by lower flat index. The result is not
/// scaled; apply lambda when adding it to the base.
TaskVector merge_ties(std::span<const TaskVector> tvs, float trim_fraction);

/// Keeps index j iff every vector is nonzero at j and all share one sign.
/// `kRandom` permutes the sign-consistent mask with a seeded uniform shuffle,
/// either inside each tensor or over the whole flattened vector.
SparseMask sparse_mask(std::span<const TaskVector> bvs, SparsificationType st, std::uint64_t seed,
                       ShuffleScope scope = ShuffleScope::kPerTensor);

/// Sparse backdoor vector: with BV_t = delta_backdoored - clean_deltas[t],
/// returns (sum_t BV_t) masked by sparse_mask({BV_t}).
TaskVector sbv(const TaskVector& delta_backdoored, std::span<const TaskVector> clean_deltas,
               SparsificationType st, std::uint64_t seed,
               ShuffleScope scope = ShuffleScope::kPerTensor);

/// Element-wise mask application.
TaskVector apply_mask(const TaskVector& v, const SparseMask& mask);

/// Adversary release: theta_pre + carrier_clean_delta + sbv.
NamedTensorMap craft_submission(const NamedTensorMap& theta_pre, const TaskVector& carrier_clean_delta,
                                const TaskVector& sbv);

/// merged_delta - lambda_ibvs * bv_injected.
TaskVector ibvs_defend(const TaskVector& merged_delta, const TaskVector& bv_injected,
                       float lambda_ibvs);

}  // namespace bvlab
