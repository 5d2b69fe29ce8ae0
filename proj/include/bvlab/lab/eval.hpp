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

#include <span>
#include <vector>

#include "bvlab/lab/data.hpp"
#include "bvlab/lab/model.hpp"
#include "bvlab/lab/trigger.hpp"
#include "bvlab/tensor_store.hpp"

namespace bvlab::lab {

/// Argmax cosine-similarity class for each image (n x input_dim).
std::vector<int> predict(const NamedTensorMap& theta, const ModelSpec& spec, const Head& head,
                         std::span<const float> images);

/// Clean accuracy on the task's test split.
float eval_accuracy(const NamedTensorMap& theta, const ModelSpec& spec, const TaskDataset& data);

/// Fraction of triggered test images predicted as target_class. By default
/// every test image counts; `exclude_target` drops images whose true label
/// already is the target.
float eval_asr(const NamedTensorMap& theta, const ModelSpec& spec, const TaskDataset& data,
               const Trigger& trigger, int target_class, bool exclude_target = false);

}  // namespace bvlab::lab
