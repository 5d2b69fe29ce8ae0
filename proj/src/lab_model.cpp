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

#include "bvlab/lab/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bvlab/errors.hpp"
#include "bvlab/kernels.hpp"

namespace bvlab::lab {

namespace {
constexpr float kNormEps = 1e-12f;
}

void ModelSpec::validate() const {
  if (input_dim <= 0 || embed_dim <= 0 || num_classes < 2) {
    throw ValidationError("model dimensions must be positive (num_classes >= 2)");
  }
  for (int h : hidden) {
    if (h <= 0) throw ValidationError("hidden widths must be positive");
  }
  if (!(logit_scale > 0.0f)) throw ValidationError("logit_scale must be positive");
}

std::string weight_name(int layer) { return "trunk." + std::to_string(layer) + ".weight"; }
std::string bias_name(int layer) { return "trunk." + std::to_string(layer) + ".bias"; }

ModelSpec ModelSpec::infer(const NamedTensorMap& params, int num_classes, float logit_scale) {
  ModelSpec spec;
  spec.hidden.clear();
  spec.num_classes = num_classes;
  spec.logit_scale = logit_scale;
  int layers = 0;
  while (params.entries.contains(weight_name(layers))) ++layers;
  if (layers == 0) throw ValidationError("checkpoint has no trunk layers");
  for (int l = 0; l < layers; ++l) {
    const auto& w = params.at(weight_name(l));
    const auto& b = params.at(bias_name(l));
    if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
      throw ValidationError("malformed trunk layer " + std::to_string(l));
    }
    if (l == 0) spec.input_dim = static_cast<int>(w.shape[1]);
    else if (w.shape[1] != spec.hidden.back()) {
      throw ValidationError("trunk layer " + std::to_string(l) + " does not chain");
    }
    if (l == layers - 1) spec.embed_dim = static_cast<int>(w.shape[0]);
    else spec.hidden.push_back(static_cast<int>(w.shape[0]));
  }
  if (params.entries.size() != static_cast<std::size_t>(2 * layers)) {
    throw ValidationError("checkpoint contains tensors outside the trunk");
  }
  spec.validate();
  return spec;
}

NamedTensorMap init_trunk(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  NamedTensorMap params;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_in(l), out = spec.layer_out(l);
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in)));
    Tensor w({out, in});
    for (float& v : w.data) v = dist(rng);
    params.set(weight_name(l), std::move(w));
    params.set(bias_name(l), Tensor({out}));
  }
  params.meta["role"] = "init";
  params.meta["seed"] = std::to_string(seed);
  return params;
}

Head Head::generate(int num_classes, int embed_dim, std::uint64_t head_seed) {
  if (num_classes < 2 || embed_dim <= 0) throw ValidationError("invalid head dimensions");
  Head h;
  h.num_classes = num_classes;
  h.embed_dim = embed_dim;
  h.rows.resize(static_cast<std::size_t>(num_classes) * embed_dim);
  std::mt19937_64 rng(head_seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (int c = 0; c < num_classes; ++c) {
    float* r = h.rows.data() + static_cast<std::size_t>(c) * embed_dim;
    double sq = 0.0;
    for (int d = 0; d < embed_dim; ++d) {
      r[d] = dist(rng);
      sq += double(r[d]) * r[d];
    }
    const auto inv = static_cast<float>(1.0 / std::sqrt(sq));
    for (int d = 0; d < embed_dim; ++d) r[d] *= inv;
  }
  return h;
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  acts_.resize(spec_.num_layers() + 1);
  deltas_.resize(spec_.num_layers() + 1);
}

void Network::forward(const NamedTensorMap& params, std::span<const float> x, std::size_t batch) {
  const int layers = spec_.num_layers();
  if (x.size() != batch * static_cast<std::size_t>(spec_.input_dim)) {
    throw ValidationError("input batch has wrong size");
  }
  acts_[0].assign(x.begin(), x.end());
  for (int l = 0; l < layers; ++l) {
    const int in = spec_.layer_in(l), out = spec_.layer_out(l);
    const auto& w = params.at(weight_name(l)).data;
    const auto& b = params.at(bias_name(l)).data;
    auto& y = acts_[l + 1];
    y.resize(batch * out);
    kernels::omp::linear_forward(acts_[l], w, b, y, batch, in, out);
    if (l + 1 < layers) {
      for (float& v : y) v = v > 0.0f ? v : 0.0f;
    }
  }
}

void Network::head_logits(std::size_t batch, std::span<const Head* const> heads) {
  const int ed = spec_.embed_dim, nc = spec_.num_classes;
  if (heads.size() != batch) throw ValidationError("one head per sample is required");
  const auto& emb = acts_[spec_.num_layers()];
  norms_.resize(batch);
  logits_.resize(batch * nc);
  for (std::size_t b = 0; b < batch; ++b) {
    const Head& head = *heads[b];
    if (head.embed_dim != ed || head.num_classes != nc) {
      throw ValidationError("head dimensions do not match the model");
    }
    const float* e = emb.data() + b * ed;
    float sq = 0.0f;
    for (int d = 0; d < ed; ++d) sq += e[d] * e[d];
    const float n = std::sqrt(sq + kNormEps);
    norms_[b] = n;
    for (int c = 0; c < nc; ++c) {
      const auto h = head.row(c);
      float dot = 0.0f;
      for (int d = 0; d < ed; ++d) dot += e[d] * h[d];
      logits_[b * nc + c] = spec_.logit_scale * dot / n;
    }
  }
}

void Network::logits(const NamedTensorMap& params, std::span<const float> x, std::size_t batch,
                     std::span<const Head* const> heads, std::vector<float>& out) {
  forward(params, x, batch);
  head_logits(batch, heads);
  out = logits_;
}

double Network::loss(const NamedTensorMap& params, const BatchView& batch) {
  return loss_and_grad(params, batch, nullptr, nullptr);
}

double Network::loss_and_grad(const NamedTensorMap& params, const BatchView& batch,
                              NamedTensorMap* grads, std::vector<float>* input_grad) {
  const std::size_t bsz = batch.labels.size();
  if (batch.weights.size() != bsz) throw ValidationError("one weight per sample is required");
  forward(params, batch.x, bsz);
  head_logits(bsz, batch.heads);

  const int nc = spec_.num_classes, ed = spec_.embed_dim, layers = spec_.num_layers();
  const bool backward = grads != nullptr || input_grad != nullptr;
  double total = 0.0;
  auto& de = deltas_[layers];
  if (backward) de.assign(bsz * ed, 0.0f);

  std::vector<float> p(nc), g(ed);
  for (std::size_t b = 0; b < bsz; ++b) {
    const int label = batch.labels[b];
    if (label < 0 || label >= nc) throw ValidationError("label out of range");
    const float* z = logits_.data() + b * nc;
    const float zmax = *std::max_element(z, z + nc);
    double denom = 0.0;
    for (int c = 0; c < nc; ++c) {
      p[c] = std::exp(z[c] - zmax);
      denom += p[c];
    }
    const double lse = std::log(denom) + zmax;
    const float w = batch.weights[b];
    total += double(w) * (lse - z[label]);
    if (!backward || w == 0.0f) continue;

    // dL/dlogit_c = w (p_c - [c == label]); map back through the cosine.
    std::fill(g.begin(), g.end(), 0.0f);
    const Head& head = *batch.heads[b];
    for (int c = 0; c < nc; ++c) {
      const float dz = w * (static_cast<float>(p[c] / denom) - (c == label ? 1.0f : 0.0f));
      const auto h = head.row(c);
      for (int d = 0; d < ed; ++d) g[d] += dz * h[d];
    }
    const float* e = acts_[layers].data() + b * ed;
    const float n = norms_[b];
    float eg = 0.0f;
    for (int d = 0; d < ed; ++d) eg += e[d] * g[d];
    const float s = spec_.logit_scale / n;
    const float proj = eg / (n * n);
    float* out = de.data() + b * ed;
    for (int d = 0; d < ed; ++d) out[d] = s * (g[d] - proj * e[d]);
  }
  if (!backward) return total;

  for (int l = layers - 1; l >= 0; --l) {
    const int in = spec_.layer_in(l), out = spec_.layer_out(l);
    const auto& delta = deltas_[l + 1];
    if (grads != nullptr) {
      kernels::omp::linear_backward_params(delta, acts_[l], grads->at(weight_name(l)).data,
                                           grads->at(bias_name(l)).data, bsz, in, out);
    }
    if (l == 0 && input_grad == nullptr) break;
    auto& dx = deltas_[l];
    dx.resize(bsz * in);
    kernels::omp::linear_backward_input(delta, params.at(weight_name(l)).data, dx, bsz, in, out);
    if (l > 0) {
      const auto& a = acts_[l];
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (a[i] <= 0.0f) dx[i] = 0.0f;
      }
    } else {
      *input_grad = dx;
    }
  }
  return total;
}

}  // namespace bvlab::lab
