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

#include "bvlab/vector_ops.hpp"

#include <cmath>

#include "bvlab/errors.hpp"
#include "bvlab/kernels.hpp"

namespace bvlab {

namespace {

// out = a - b, tensor by tensor.
NamedTensorMap difference(const NamedTensorMap& a, const NamedTensorMap& b) {
  validate_compatible(a, b);
  NamedTensorMap out;
  for (const auto& [name, ta] : a.entries) {
    Tensor t(ta.shape);
    kernels::omp::sub(t.data, ta.data, b.entries.at(name).data);
    out.entries.emplace(name, std::move(t));
  }
  return out;
}

std::string meta_or(const Meta& m, const std::string& key, const std::string& fallback) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

void require_finite(float v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " must be finite");
}

}  // namespace

TaskVector::TaskVector(NamedTensorMap map) : map_(std::move(map)) {
  map_.meta["role"] = "delta";
}

std::vector<float> TaskVector::flatten() const {
  std::vector<float> flat;
  flat.reserve(total_elements());
  for (const auto& [_, t] : map_.entries) flat.insert(flat.end(), t.data.begin(), t.data.end());
  return flat;
}

TaskVector task_vector(const NamedTensorMap& theta_ft, const NamedTensorMap& theta_pre) {
  TaskVector tv(difference(theta_ft, theta_pre));
  tv.meta()["kind"] = "task_vector";
  if (auto it = theta_ft.meta.find("seed"); it != theta_ft.meta.end()) tv.meta()["seed"] = it->second;
  if (auto it = theta_ft.meta.find("task"); it != theta_ft.meta.end()) tv.meta()["task"] = it->second;
  return tv;
}

TaskVector backdoor_vector(const NamedTensorMap& theta_backdoored,
                           const NamedTensorMap& theta_clean) {
  TaskVector bv(difference(theta_backdoored, theta_clean));
  bv.meta()["kind"] = "backdoor_vector";
  bv.meta()["seed_backdoored"] = meta_or(theta_backdoored.meta, "seed", "unknown");
  bv.meta()["seed_clean"] = meta_or(theta_clean.meta, "seed", "unknown");
  return bv;
}

NamedTensorMap apply_vector(const NamedTensorMap& base, const TaskVector& v, float lambda) {
  require_finite(lambda, "lambda");
  validate_compatible(base, v.map());
  NamedTensorMap out = base;
  for (auto& [name, t] : out.entries) kernels::omp::axpy(t.data, lambda, v.map().entries.at(name).data);
  return out;
}

TaskVector linear_combine(std::span<const TaskVector> vs, std::span<const float> coeffs) {
  if (vs.empty()) throw ValidationError("linear_combine: empty input");
  if (vs.size() != coeffs.size()) throw ValidationError("linear_combine: length mismatch");
  for (float c : coeffs) require_finite(c, "coefficient");
  for (std::size_t i = 1; i < vs.size(); ++i) validate_compatible(vs[0].map(), vs[i].map());

  TaskVector out;
  for (const auto& [name, t0] : vs[0].map().entries) {
    const std::size_t n = t0.numel();
    std::vector<double> acc(n, 0.0);
    for (std::size_t k = 0; k < vs.size(); ++k) {
      const auto& src = vs[k].map().entries.at(name).data;
      const double c = coeffs[k];
      for (std::size_t i = 0; i < n; ++i) acc[i] += c * double(src[i]);
    }
    Tensor t(t0.shape);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<float>(acc[i]);
    out.map().entries.emplace(name, std::move(t));
  }
  return out;
}

TaskVector subtract(const TaskVector& a, const TaskVector& b) {
  return TaskVector(difference(a.map(), b.map()));
}

TaskVector scale(const TaskVector& a, float c) {
  require_finite(c, "scale");
  TaskVector out = a;
  for (auto& [_, t] : out.map().entries) {
    for (float& v : t.data) v *= c;
  }
  return out;
}

float cosine_similarity(const TaskVector& a, const TaskVector& b) {
  validate_compatible(a.map(), b.map());
  double dot = 0.0, na = 0.0, nb = 0.0;
  // Per-tensor partials summed in canonical name order.
  for (const auto& [name, ta] : a.map().entries) {
    const auto& tb = b.map().entries.at(name);
    dot += kernels::omp::dot(ta.data, tb.data);
    na += kernels::omp::norms(ta.data).l2sq;
    nb += kernels::omp::norms(tb.data).l2sq;
  }
  if (na == 0.0 || nb == 0.0) throw ValidationError("zero vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return static_cast<float>(std::clamp(c, -1.0, 1.0));
}

float CosineMatrix::off_diagonal_mean() const {
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (i == j) continue;
      s += values[i][j];
      ++count;
    }
  }
  return count == 0 ? 0.0f : static_cast<float>(s / count);
}

float CosineMatrix::off_diagonal_abs_mean() const {
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (i == j) continue;
      s += std::abs(values[i][j]);
      ++count;
    }
  }
  return count == 0 ? 0.0f : static_cast<float>(s / count);
}

CosineMatrix pairwise_cosine(std::span<const TaskVector> vs) {
  if (vs.size() < 2) throw ValidationError("pairwise_cosine: need at least two vectors");
  const std::size_t n = vs.size();
  CosineMatrix m;
  m.values.assign(n, std::vector<float>(n, 0.0f));
  for (std::size_t i = 0; i < n; ++i) {
    m.values[i][i] = 1.0f;
    for (std::size_t j = i + 1; j < n; ++j) {
      const float c = cosine_similarity(vs[i], vs[j]);
      m.values[i][j] = c;
      m.values[j][i] = c;
    }
  }
  // Diagonal entries still require nonzero inputs.
  for (const auto& v : vs) {
    double sq = 0.0;
    for (const auto& [_, t] : v.map().entries) sq += kernels::omp::norms(t.data).l2sq;
    if (sq == 0.0) throw ValidationError("zero vector");
  }
  return m;
}

double hoyer_sparsity_f64(std::span<const float> flat) {
  const std::size_t n = flat.size();
  if (n < 2) throw ValidationError("hoyer_sparsity: need at least two elements");
  const auto norms = kernels::omp::norms(flat);
  if (norms.l2sq == 0.0) throw ValidationError("hoyer_sparsity: zero vector");
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double h = (sqrt_n - norms.l1 / std::sqrt(norms.l2sq)) / (sqrt_n - 1.0);
  return std::clamp(h, 0.0, 1.0);
}

double hoyer_sparsity_f64(const TaskVector& v) {
  const std::size_t n = v.total_elements();
  if (n < 2) throw ValidationError("hoyer_sparsity: need at least two elements");
  double l1 = 0.0, l2sq = 0.0;
  for (const auto& [_, t] : v.map().entries) {
    const auto part = kernels::omp::norms(t.data);
    l1 += part.l1;
    l2sq += part.l2sq;
  }
  if (l2sq == 0.0) throw ValidationError("hoyer_sparsity: zero vector");
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double h = (sqrt_n - l1 / std::sqrt(l2sq)) / (sqrt_n - 1.0);
  return std::clamp(h, 0.0, 1.0);
}

float hoyer_sparsity(const TaskVector& v) { return static_cast<float>(hoyer_sparsity_f64(v)); }

std::map<std::string, double> hoyer_sparsity_per_tensor(const TaskVector& v) {
  std::map<std::string, double> out;
  for (const auto& [name, t] : v.map().entries) {
    if (t.numel() < 2) continue;
    if (kernels::omp::norms(t.data).l2sq == 0.0) continue;
    out[name] = hoyer_sparsity_f64(t.data);
  }
  return out;
}

}  // namespace bvlab
