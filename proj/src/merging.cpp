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

#include "bvlab/merging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bvlab/errors.hpp"
#include "bvlab/kernels.hpp"
#include "bvlab/util.hpp"

namespace bvlab {

namespace {

void require_nonempty(std::span<const TaskVector> tvs, const char* what) {
  if (tvs.empty()) throw ValidationError(std::string(what) + ": empty input");
}

void require_mutually_compatible(std::span<const TaskVector> tvs) {
  for (std::size_t i = 1; i < tvs.size(); ++i) validate_compatible(tvs[0].map(), tvs[i].map());
}

int sign_of(float v) { return (v > 0.0f) - (v < 0.0f); }

}  // namespace

std::string to_string(SparsificationType st) {
  return st == SparsificationType::kSignConsistent ? "sc" : "rnd";
}

SparsificationType parse_sparsification(const std::string& s) {
  if (s == "sc" || s == "SC") return SparsificationType::kSignConsistent;
  if (s == "rnd" || s == "RND") return SparsificationType::kRandom;
  throw ValidationError("unknown sparsification type \"" + s + "\"");
}

std::string to_string(ShuffleScope s) {
  return s == ShuffleScope::kPerTensor ? "per_tensor" : "global";
}

ShuffleScope parse_shuffle_scope(const std::string& s) {
  if (s == "per_tensor") return ShuffleScope::kPerTensor;
  if (s == "global") return ShuffleScope::kGlobal;
  throw ValidationError("unknown shuffle scope \"" + s + "\"");
}

std::string to_string(MergeTag tag) {
  switch (tag) {
    case MergeTag::kTaskArithmetic: return "ta";
    case MergeTag::kAverage: return "avg";
    case MergeTag::kTies: return "ties";
    case MergeTag::kSbvSc: return "sbv_sc";
    case MergeTag::kSbvRnd: return "sbv_rnd";
  }
  return "?";
}

MergeTag parse_merge_tag(const std::string& s) {
  if (s == "ta") return MergeTag::kTaskArithmetic;
  if (s == "avg") return MergeTag::kAverage;
  if (s == "ties") return MergeTag::kTies;
  if (s == "sbv_sc") return MergeTag::kSbvSc;
  if (s == "sbv_rnd") return MergeTag::kSbvRnd;
  throw ValidationError("unknown merge strategy \"" + s + "\"");
}

void MergeStrategy::validate() const {
  if (tag == MergeTag::kTaskArithmetic && !(lambda > 0.0f)) {
    throw ValidationError("task arithmetic requires lambda > 0");
  }
  if (tag == MergeTag::kTies && !(trim_fraction > 0.0f && trim_fraction <= 1.0f)) {
    throw ValidationError("trim_fraction must lie in (0, 1]");
  }
  if ((tag == MergeTag::kSbvSc || tag == MergeTag::kSbvRnd) && k < 1) {
    throw ValidationError("k must be at least 1");
  }
}

std::size_t SparseMask::popcount() const {
  std::size_t n = 0;
  for (const auto& [name, _] : mask.entries) n += popcount(name);
  return n;
}

std::size_t SparseMask::popcount(const std::string& name) const {
  const auto& d = mask.at(name).data;
  return static_cast<std::size_t>(std::count(d.begin(), d.end(), 1.0f));
}

NamedTensorMap merge_task_arithmetic(const NamedTensorMap& theta_pre,
                                     std::span<const TaskVector> tvs, float lambda) {
  require_nonempty(tvs, "merge_task_arithmetic");
  if (!std::isfinite(lambda)) throw ValidationError("lambda must be finite");
  for (const auto& tv : tvs) validate_compatible(theta_pre, tv.map());

  NamedTensorMap out = theta_pre;
  for (auto& [name, t] : out.entries) {
    const std::size_t n = t.numel();
    std::vector<double> acc(n, 0.0);
    for (const auto& tv : tvs) {
      const auto& src = tv.map().entries.at(name).data;
      for (std::size_t i = 0; i < n; ++i) acc[i] += src[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      t.data[i] = static_cast<float>(double(t.data[i]) + double(lambda) * acc[i]);
    }
  }
  out.meta["role"] = "merged";
  return out;
}

TaskVector merge_average(std::span<const TaskVector> tvs) {
  require_nonempty(tvs, "merge_average");
  require_mutually_compatible(tvs);
  const std::vector<float> coeffs(tvs.size(), 1.0f / static_cast<float>(tvs.size()));
  return linear_combine(tvs, coeffs);
}

TaskVector merge_ties(std::span<const TaskVector> tvs, float trim_fraction) {
  require_nonempty(tvs, "merge_ties");
  if (!(trim_fraction > 0.0f && trim_fraction <= 1.0f)) {
    throw ValidationError("trim_fraction must lie in (0, 1]");
  }
  require_mutually_compatible(tvs);

  const std::size_t n = tvs[0].total_elements();
  const auto keep = static_cast<std::size_t>(std::ceil(double(trim_fraction) * double(n)));

  // Trim each vector to its top-`keep` magnitudes.
  std::vector<std::vector<float>> trimmed;
  trimmed.reserve(tvs.size());
  for (const auto& tv : tvs) {
    std::vector<float> flat = tv.flatten();
    if (keep < n) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      auto by_magnitude = [&](std::size_t a, std::size_t b) {
        const float fa = std::abs(flat[a]), fb = std::abs(flat[b]);
        return fa != fb ? fa > fb : a < b;
      };
      std::nth_element(idx.begin(), idx.begin() + keep, idx.end(), by_magnitude);
      std::vector<float> kept(n, 0.0f);
      for (std::size_t i = 0; i < keep; ++i) kept[idx[i]] = flat[idx[i]];
      flat = std::move(kept);
    }
    trimmed.push_back(std::move(flat));
  }

  // Elect a sign per index, then average the agreeing entries.
  std::vector<float> merged(n, 0.0f);
  for (std::size_t j = 0; j < n; ++j) {
    double total = 0.0;
    for (const auto& v : trimmed) total += v[j];
    const int elected = (total > 0.0) - (total < 0.0);
    if (elected == 0) continue;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& v : trimmed) {
      if (sign_of(v[j]) == elected) {
        sum += v[j];
        ++count;
      }
    }
    if (count > 0) merged[j] = static_cast<float>(sum / double(count));
  }

  TaskVector out;
  std::size_t offset = 0;
  for (const auto& [name, t] : tvs[0].map().entries) {
    Tensor r(t.shape);
    std::copy_n(merged.begin() + offset, t.numel(), r.data.begin());
    offset += t.numel();
    out.map().entries.emplace(name, std::move(r));
  }
  out.meta()["kind"] = "ties";
  return out;
}

SparseMask sparse_mask(std::span<const TaskVector> bvs, SparsificationType st, std::uint64_t seed,
                       ShuffleScope scope) {
  require_nonempty(bvs, "sparse_mask");
  require_mutually_compatible(bvs);

  SparseMask result;
  std::vector<const float*> ptrs(bvs.size());
  for (const auto& [name, t] : bvs[0].map().entries) {
    for (std::size_t k = 0; k < bvs.size(); ++k) ptrs[k] = bvs[k].map().entries.at(name).data.data();
    Tensor m(t.shape);
    kernels::omp::sign_consistent_mask(ptrs, t.numel(), m.data);
    result.mask.entries.emplace(name, std::move(m));
  }

  if (st == SparsificationType::kRandom) {
    if (scope == ShuffleScope::kPerTensor) {
      for (auto& [name, m] : result.mask.entries) {
        std::mt19937_64 rng(derive_seed(name, seed));
        std::shuffle(m.data.begin(), m.data.end(), rng);
      }
    } else {
      std::vector<float> flat;
      for (const auto& [_, m] : result.mask.entries) flat.insert(flat.end(), m.data.begin(), m.data.end());
      std::mt19937_64 rng(derive_seed("global", seed));
      std::shuffle(flat.begin(), flat.end(), rng);
      std::size_t offset = 0;
      for (auto& [_, m] : result.mask.entries) {
        std::copy_n(flat.begin() + offset, m.numel(), m.data.begin());
        offset += m.numel();
      }
    }
  }
  result.mask.meta["role"] = "mask";
  result.mask.meta["sparsification"] = to_string(st);
  return result;
}

TaskVector apply_mask(const TaskVector& v, const SparseMask& mask) {
  validate_compatible(v.map(), mask.mask);
  TaskVector out = v;
  for (auto& [name, t] : out.map().entries) {
    const auto& m = mask.mask.entries.at(name).data;
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = m[i] != 0.0f ? t.data[i] : 0.0f;
  }
  return out;
}

TaskVector sbv(const TaskVector& delta_backdoored, std::span<const TaskVector> clean_deltas,
               SparsificationType st, std::uint64_t seed, ShuffleScope scope) {
  if (clean_deltas.empty()) throw ValidationError("sbv: empty clean_deltas");
  std::vector<TaskVector> bvs;
  bvs.reserve(clean_deltas.size());
  for (const auto& c : clean_deltas) bvs.push_back(subtract(delta_backdoored, c));

  const std::vector<float> ones(bvs.size(), 1.0f);
  const TaskVector summed = linear_combine(bvs, ones);
  const SparseMask mu = sparse_mask(bvs, st, seed, scope);
  TaskVector out = apply_mask(summed, mu);
  out.meta()["kind"] = "sbv";
  out.meta()["sparsification"] = to_string(st);
  out.meta()["k"] = std::to_string(bvs.size());
  out.meta()["seed"] = std::to_string(seed);
  return out;
}

NamedTensorMap craft_submission(const NamedTensorMap& theta_pre, const TaskVector& carrier_clean_delta,
                                const TaskVector& sbv_vec) {
  validate_compatible(theta_pre, carrier_clean_delta.map());
  validate_compatible(theta_pre, sbv_vec.map());
  NamedTensorMap out = theta_pre;
  for (auto& [name, t] : out.entries) {
    const auto& c = carrier_clean_delta.map().entries.at(name).data;
    const auto& s = sbv_vec.map().entries.at(name).data;
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = t.data[i] + (c[i] + s[i]);
  }
  out.meta["role"] = "backdoored";
  return out;
}

TaskVector ibvs_defend(const TaskVector& merged_delta, const TaskVector& bv_injected,
                       float lambda_ibvs) {
  if (!(lambda_ibvs >= 0.0f) || !std::isfinite(lambda_ibvs)) {
    throw ValidationError("lambda_ibvs must be a finite value >= 0");
  }
  validate_compatible(merged_delta.map(), bv_injected.map());
  TaskVector out = merged_delta;
  if (lambda_ibvs == 0.0f) return out;
  for (auto& [name, t] : out.map().entries) {
    kernels::omp::axpy(t.data, -lambda_ibvs, bv_injected.map().entries.at(name).data);
  }
  return out;
}

}  // namespace bvlab
