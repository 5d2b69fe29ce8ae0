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

#include "bvlab/lab/data.hpp"
#include "bvlab/lab/model.hpp"
#include "bvlab/lab/trigger.hpp"
#include "bvlab/tensor_store.hpp"

namespace bvlab::lab {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  float learning_rate = 0.05f;
  // Per-step learning-rate schedule: "constant", or "cosine" decay from
  // learning_rate to zero over the whole run.
  std::string lr_schedule = "cosine";
  float momentum = 0.9f;
  float alpha = 5.0f;  // weight of the backdoor loss term
  float grad_clip = 1.0f;  // max global gradient L2 norm; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  NamedTensorMap params;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Trains a freshly initialized trunk on the union of `tasks`, each sample
/// scored against its own task's frozen head.
TrainResult pretrain(const ModelSpec& spec, std::span<const TaskDataset> tasks,
                     const TrainConfig& cfg);

/// Trunk-only fine-tune from theta_pre on one task.
TrainResult finetune_clean(const NamedTensorMap& theta_pre, const ModelSpec& spec,
                           const TaskDataset& data, const TrainConfig& cfg);

/// Fine-tune minimizing L_clean(batch) + alpha * L_backdoor(triggered batch
/// relabeled to target_class). alpha = 0 reproduces finetune_clean exactly.
TrainResult finetune_backdoored(const NamedTensorMap& theta_pre, const ModelSpec& spec,
                                const TaskDataset& data, const Trigger& trigger,
                                int target_class, const TrainConfig& cfg);

}  // namespace bvlab::lab
