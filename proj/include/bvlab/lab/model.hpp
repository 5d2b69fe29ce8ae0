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

namespace bvlab::lab {

/// Architecture of the trainable trunk (an MLP with ReLU hidden layers and a
/// linear embedding layer) and of the frozen cosine-similarity head.
struct ModelSpec {
  int input_dim = 256;
  std::vector<int> hidden = {128, 64};
  int embed_dim = 32;
  int num_classes = 8;
  float logit_scale = 10.0f;

  void validate() const;
  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim : hidden[l - 1]; }
  int layer_out(int l) const { return l == num_layers() - 1 ? embed_dim : hidden[l]; }

  /// Recovers the layer sizes from trunk tensor shapes.
  static ModelSpec infer(const NamedTensorMap& params, int num_classes, float logit_scale);

  bool operator==(const ModelSpec&) const = default;
};

std::string weight_name(int layer);
std::string bias_name(int layer);

/// He-normal weights and zero biases, seeded.
NamedTensorMap init_trunk(const ModelSpec& spec, std::uint64_t seed);

/// Frozen class-embedding matrix: num_classes rows of unit-norm embed_dim
/// vectors, generated from the task's head seed. Never trained.
struct Head {
  int num_classes = 0;
  int embed_dim = 0;
  std::vector<float> rows;  // num_classes x embed_dim, each row unit norm

  static Head generate(int num_classes, int embed_dim, std::uint64_t head_seed);
  std::span<const float> row(int c) const {
    return {rows.data() + static_cast<std::size_t>(c) * embed_dim, static_cast<std::size_t>(embed_dim)};
  }
};

/// Per-sample inputs of a forward/backward pass.
struct BatchView {
  std::span<const float> x;               // batch x input_dim
  std::span<const int> labels;            // batch
  std::span<const float> weights;         // batch; per-sample loss weights
  std::span<const Head* const> heads;     // batch; head used for each sample
};

/// Dense forward/backward for the trunk with cosine-similarity logits.
///
/// Loss for a batch is sum_b weights[b] * CE(logit_scale * cos(e_b, head_b), label_b).
/// Callers pass weights = 1/B for a mean loss.
class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }

  /// Writes logits (batch x num_classes) for the given inputs.
  void logits(const NamedTensorMap& params, std::span<const float> x, std::size_t batch,
              std::span<const Head* const> heads, std::vector<float>& out);

  /// Returns the weighted loss and accumulates parameter gradients into
  /// `grads` (same names/shapes as params; zero it beforehand). If
  /// `input_grad` is non-null it receives dLoss/dx (batch x input_dim).
  double loss_and_grad(const NamedTensorMap& params, const BatchView& batch, NamedTensorMap* grads,
                       std::vector<float>* input_grad);

  /// Weighted loss only.
  double loss(const NamedTensorMap& params, const BatchView& batch);

 private:
  void forward(const NamedTensorMap& params, std::span<const float> x, std::size_t batch);
  void head_logits(std::size_t batch, std::span<const Head* const> heads);

  ModelSpec spec_;
  // Layer activations: acts_[0] is the input copy, acts_[l+1] the output of layer l
  // (post-ReLU for hidden layers, the raw embedding for the last).
  std::vector<std::vector<float>> acts_;
  std::vector<float> norms_;   // batch, embedding norms
  std::vector<float> logits_;  // batch x num_classes
  std::vector<std::vector<float>> deltas_;
};

}  // namespace bvlab::lab
