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
#include <string>
#include <vector>

namespace bvlab::lab {

/// Parameters of a synthetic classification task. Images are single-channel
/// height x width grids with values in [0, 1].
struct TaskGenParams {
  int height = 16;
  int width = 16;
  int num_classes = 8;
  int n_train = 4096;
  int n_test = 1024;
  float proto_mean = 0.5f;
  float proto_std = 0.03f;
  float noise_sigma = 0.15f;
  // Noise shape: a Gaussian blur of std noise_corr pixels (0 = iid) plus an
  // independent per-pixel part whose std is noise_white relative to sigma.
  // Low-frequency noise with small per-pixel class differences leaves the
  // trained trunk sensitive to high-frequency patches.
  float noise_corr = 2.0f;
  float noise_white = 1.0f / 3.0f;

  int input_dim() const { return height * width; }
  void validate() const;
};

struct TaskDataset {
  std::string task_id;
  std::uint64_t seed = 0;
  std::uint64_t head_seed = 0;
  TaskGenParams params;
  std::vector<float> prototypes;  // num_classes x input_dim
  std::vector<float> train_x;     // n_train x input_dim
  std::vector<int> train_y;
  std::vector<float> test_x;      // n_test x input_dim
  std::vector<int> test_y;

  int input_dim() const { return params.input_dim(); }
  int num_classes() const { return params.num_classes; }
  std::size_t n_train() const { return train_y.size(); }
  std::size_t n_test() const { return test_y.size(); }
};

/// Prototypes are drawn from N(proto_mean, proto_std^2) per pixel and
/// clamped to [0, 1]; each sample is clamp(prototype + noise_sigma * (n +
/// noise_white * w)) where w is iid N(0, 1) and n is N(0, 1) per pixel,
/// spatially blurred when noise_corr > 0.
/// Labels cycle through the classes so splits are balanced. Deterministic in
/// (task_id, seed); the frozen head seed is derived from the same pair.
TaskDataset gen_task(const std::string& task_id, const TaskGenParams& params, std::uint64_t seed);

}  // namespace bvlab::lab
