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
#include "bvlab/tensor_store.hpp"

namespace bvlab::lab {

enum class TriggerKind { kInjected, kInherent };

/// Patch rectangle inside the image: size (h, w) with origin (row, col).
struct PatchSpec {
  int h = 3;
  int w = 3;
  int row = 13;
  int col = 13;

  /// Bottom-right patch of the given size.
  static PatchSpec bottom_right(int image_h, int image_w, int h, int w);
  void validate(int image_h, int image_w) const;
  bool operator==(const PatchSpec&) const = default;
};

/// A trigger t = {mask, pattern}: mask is 1 exactly on the patch, the pattern
/// holds the values written there (ignored where the mask is 0).
struct Trigger {
  TriggerKind kind = TriggerKind::kInjected;
  std::string name;  // "white_square", "wavelet", "inherent", ...
  int image_h = 16;
  int image_w = 16;
  PatchSpec patch;
  std::vector<float> mask;     // image_h x image_w
  std::vector<float> pattern;  // image_h x image_w, zero off-patch

  /// Builds mask/pattern from patch values (patch.h x patch.w, row-major).
  static Trigger from_patch(TriggerKind kind, std::string name, int image_h, int image_w,
                            PatchSpec patch, std::span<const float> values);
  std::vector<float> patch_values() const;

  /// Trigger with an all-zero mask (no-op).
  static Trigger empty(int image_h, int image_w);

  bool operator==(const Trigger&) const = default;
};

enum class InjectedPattern { kWhiteSquare, kWavelet };
InjectedPattern parse_injected_pattern(const std::string& s);

/// white_square: 1.0 on the patch. wavelet: checkerboard of {1, 0} starting
/// with 1 at the patch origin.
Trigger make_injected_trigger(InjectedPattern kind, const PatchSpec& patch, int image_h = 16,
                              int image_w = 16);

/// x (*) t = pattern * mask + (1 - mask) * x, for one image.
std::vector<float> inject_trigger(std::span<const float> x, const Trigger& t);
/// In place over a batch of images stored back to back.
void inject_trigger_batch(std::span<float> xs, const Trigger& t);

struct InherentTriggerOptions {
  int steps = 100;
  float step_size = 0.05f;
  std::uint64_t seed = 0;
  int num_samples = 512;  // base-distribution samples drawn from the train split
};

struct InherentTriggerResult {
  Trigger trigger;
  double initial_objective = 0.0;
  double best_objective = 0.0;
  bool improved = false;
};

/// Projected sign-gradient ascent on the mean target log-probability of
/// triggered samples, evaluated on the given (pre-trained) weights. The patch
/// starts from seeded uniform noise and is clamped to [0, 1] after each step;
/// the best iterate seen is returned.
InherentTriggerResult optimize_inherent_trigger(const NamedTensorMap& theta, const ModelSpec& spec,
                                                const TaskDataset& data, int target_class,
                                                const PatchSpec& patch,
                                                const InherentTriggerOptions& options);

/// {kind, name, image, location, patch, pattern: base64 of f32 LE patch values}.
std::string trigger_to_json(const Trigger& t);
Trigger trigger_from_json(const std::string& text);

}  // namespace bvlab::lab
