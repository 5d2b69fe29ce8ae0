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

#include "bvlab/lab/eval.hpp"

#include <algorithm>

#include "bvlab/errors.hpp"

namespace bvlab::lab {

namespace {
constexpr std::size_t kEvalChunk = 256;
}

std::vector<int> predict(const NamedTensorMap& theta, const ModelSpec& spec, const Head& head,
                         std::span<const float> images) {
  const std::size_t dim = spec.input_dim;
  if (images.size() % dim != 0) throw ValidationError("image buffer is not a whole number of images");
  const std::size_t n = images.size() / dim;
  std::vector<int> out(n);
  Network net(spec);
  std::vector<float> logits;
  std::vector<const Head*> heads(kEvalChunk, &head);
  const int nc = spec.num_classes;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t bsz = std::min(kEvalChunk, n - start);
    net.logits(theta, images.subspan(start * dim, bsz * dim), bsz,
               std::span(heads).first(bsz), logits);
    for (std::size_t b = 0; b < bsz; ++b) {
      const float* z = logits.data() + b * nc;
      out[start + b] = static_cast<int>(std::max_element(z, z + nc) - z);
    }
  }
  return out;
}

float eval_accuracy(const NamedTensorMap& theta, const ModelSpec& spec, const TaskDataset& data) {
  if (data.n_test() == 0) throw ValidationError("empty test set");
  const Head head = Head::generate(spec.num_classes, spec.embed_dim, data.head_seed);
  const auto pred = predict(theta, spec, head, data.test_x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.test_y[i];
  return static_cast<float>(double(correct) / double(pred.size()));
}

float eval_asr(const NamedTensorMap& theta, const ModelSpec& spec, const TaskDataset& data,
               const Trigger& trigger, int target_class, bool exclude_target) {
  if (data.n_test() == 0) throw ValidationError("empty test set");
  if (target_class < 0 || target_class >= spec.num_classes) {
    throw ValidationError("target_class out of range");
  }
  const Head head = Head::generate(spec.num_classes, spec.embed_dim, data.head_seed);
  std::vector<float> xs = data.test_x;
  inject_trigger_batch(xs, trigger);
  const auto pred = predict(theta, spec, head, xs);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (exclude_target && data.test_y[i] == target_class) continue;
    ++total;
    hits += pred[i] == target_class;
  }
  if (total == 0) throw ValidationError("no test images left after excluding the target class");
  return static_cast<float>(double(hits) / double(total));
}

}  // namespace bvlab::lab
