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
// Central finite-difference check of the trunk gradients on a tiny model.

#include <cmath>
#include <random>
#include <vector>

#include "bvlab/lab/model.hpp"

namespace bvlab::testing {

struct GradCheckResult {
  double param_rel_err = 0.0;  // ||g - fd|| / ||fd|| over all trunk parameters
  double input_rel_err = 0.0;  // same for dLoss/dx
};

/// One random batch on the tiny model (input 4, hidden [3], embed 2).
/// Relative errors are norm-wise so that near-zero components do not
/// dominate.
inline GradCheckResult gradient_check(std::uint64_t seed, double eps = 1e-3) {
  lab::ModelSpec spec;
  spec.input_dim = 4;
  spec.hidden = {3};
  spec.embed_dim = 2;
  spec.num_classes = 3;
  std::mt19937_64 rng(seed);
  auto params = lab::init_trunk(spec, seed);
  std::normal_distribution<float> nd(0.0f, 0.5f);
  for (auto& [name, t] : params.entries)
    for (float& v : t.data) v = nd(rng);
  const auto head_a = lab::Head::generate(3, 2, seed * 2 + 1);
  const auto head_b = lab::Head::generate(3, 2, seed * 2 + 2);

  const std::size_t batch = 5;
  std::vector<float> x(batch * 4), w(batch);
  std::vector<int> y(batch);
  std::vector<const lab::Head*> heads(batch);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_int_distribution<int> cls(0, 2);
  for (float& v : x) v = u(rng);
  for (std::size_t b = 0; b < batch; ++b) {
    y[b] = cls(rng);
    w[b] = 0.1f + u(rng);
    heads[b] = b % 2 ? &head_a : &head_b;
  }

  lab::Network net(spec);
  NamedTensorMap grads;
  for (const auto& [name, t] : params.entries) grads.set(name, Tensor(t.shape));
  std::vector<float> dx;
  lab::BatchView view{x, y, w, heads};
  net.loss_and_grad(params, view, &grads, &dx);

  auto loss_at = [&](NamedTensorMap& p, std::vector<float>& xs) {
    lab::BatchView v{xs, y, w, heads};
    return net.loss(p, v);
  };

  GradCheckResult r;
  double num = 0.0, den = 0.0;
  for (auto& [name, t] : params.entries) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const float orig = t.data[i];
      t.data[i] = orig + float(eps);
      const double lp = loss_at(params, x);
      t.data[i] = orig - float(eps);
      const double lm = loss_at(params, x);
      t.data[i] = orig;
      const double fd = (lp - lm) / (2.0 * eps);
      const double g = grads.at(name).data[i];
      num += (g - fd) * (g - fd);
      den += fd * fd;
    }
  }
  r.param_rel_err = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);

  num = den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + float(eps);
    const double lp = loss_at(params, x);
    x[i] = orig - float(eps);
    const double lm = loss_at(params, x);
    x[i] = orig;
    const double fd = (lp - lm) / (2.0 * eps);
    num += (dx[i] - fd) * (dx[i] - fd);
    den += fd * fd;
  }
  r.input_rel_err = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
  return r;
}

}  // namespace bvlab::testing
