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

#include "bvlab/lab/trigger.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "bvlab/errors.hpp"
#include "bvlab/util.hpp"
#include "json.hpp"

namespace bvlab::lab {

PatchSpec PatchSpec::bottom_right(int image_h, int image_w, int h, int w) {
  PatchSpec p{h, w, image_h - h, image_w - w};
  p.validate(image_h, image_w);
  return p;
}

void PatchSpec::validate(int image_h, int image_w) const {
  if (h <= 0 || w <= 0 || row < 0 || col < 0 || row + h > image_h || col + w > image_w) {
    throw ValidationError("patch (" + std::to_string(h) + "x" + std::to_string(w) + " at " +
                          std::to_string(row) + "," + std::to_string(col) +
                          ") is outside the image");
  }
}

Trigger Trigger::from_patch(TriggerKind kind, std::string name, int image_h, int image_w,
                            PatchSpec patch, std::span<const float> values) {
  patch.validate(image_h, image_w);
  if (values.size() != static_cast<std::size_t>(patch.h * patch.w)) {
    throw ValidationError("patch values do not match the patch size");
  }
  Trigger t;
  t.kind = kind;
  t.name = std::move(name);
  t.image_h = image_h;
  t.image_w = image_w;
  t.patch = patch;
  t.mask.assign(static_cast<std::size_t>(image_h) * image_w, 0.0f);
  t.pattern.assign(t.mask.size(), 0.0f);
  for (int r = 0; r < patch.h; ++r) {
    for (int c = 0; c < patch.w; ++c) {
      const float v = values[r * patch.w + c];
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("trigger pattern values must lie in [0, 1]");
      const std::size_t idx = static_cast<std::size_t>(patch.row + r) * image_w + (patch.col + c);
      t.mask[idx] = 1.0f;
      t.pattern[idx] = v;
    }
  }
  return t;
}

std::vector<float> Trigger::patch_values() const {
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(patch.h * patch.w));
  for (int r = 0; r < patch.h; ++r) {
    for (int c = 0; c < patch.w; ++c) {
      v.push_back(pattern[static_cast<std::size_t>(patch.row + r) * image_w + (patch.col + c)]);
    }
  }
  return v;
}

Trigger Trigger::empty(int image_h, int image_w) {
  Trigger t;
  t.name = "none";
  t.image_h = image_h;
  t.image_w = image_w;
  t.patch = {0, 0, 0, 0};
  t.mask.assign(static_cast<std::size_t>(image_h) * image_w, 0.0f);
  t.pattern.assign(t.mask.size(), 0.0f);
  return t;
}

InjectedPattern parse_injected_pattern(const std::string& s) {
  if (s == "white_square") return InjectedPattern::kWhiteSquare;
  if (s == "wavelet") return InjectedPattern::kWavelet;
  throw ValidationError("unknown injected trigger \"" + s + "\"");
}

Trigger make_injected_trigger(InjectedPattern kind, const PatchSpec& patch, int image_h,
                              int image_w) {
  std::vector<float> values(static_cast<std::size_t>(std::max(0, patch.h * patch.w)));
  for (int r = 0; r < patch.h; ++r) {
    for (int c = 0; c < patch.w; ++c) {
      values[r * patch.w + c] = kind == InjectedPattern::kWhiteSquare ? 1.0f : ((r + c) % 2 == 0 ? 1.0f : 0.0f);
    }
  }
  return Trigger::from_patch(TriggerKind::kInjected,
                             kind == InjectedPattern::kWhiteSquare ? "white_square" : "wavelet",
                             image_h, image_w, patch, values);
}

std::vector<float> inject_trigger(std::span<const float> x, const Trigger& t) {
  if (x.size() != t.mask.size()) throw ValidationError("image and trigger shapes differ");
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = t.pattern[i] * t.mask[i] + (1.0f - t.mask[i]) * x[i];
  return out;
}

void inject_trigger_batch(std::span<float> xs, const Trigger& t) {
  const std::size_t dim = t.mask.size();
  if (dim == 0 || xs.size() % dim != 0) throw ValidationError("image and trigger shapes differ");
  // Only patch pixels change; the mask is binary so x (*) t there is the pattern.
  std::vector<std::size_t> on;
  for (std::size_t i = 0; i < dim; ++i) {
    if (t.mask[i] != 0.0f) on.push_back(i);
  }
  for (std::size_t base = 0; base < xs.size(); base += dim) {
    for (std::size_t i : on) xs[base + i] = t.pattern[i] * t.mask[i] + (1.0f - t.mask[i]) * xs[base + i];
  }
}

InherentTriggerResult optimize_inherent_trigger(const NamedTensorMap& theta, const ModelSpec& spec,
                                                const TaskDataset& data, int target_class,
                                                const PatchSpec& patch,
                                                const InherentTriggerOptions& options) {
  const int ih = data.params.height, iw = data.params.width;
  patch.validate(ih, iw);
  if (target_class < 0 || target_class >= spec.num_classes) {
    throw ValidationError("target_class out of range");
  }
  if (options.steps < 0 || options.num_samples <= 0 || !(options.step_size > 0.0f)) {
    throw ValidationError("invalid trigger optimization options");
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::vector<float> values(static_cast<std::size_t>(patch.h * patch.w));
  for (float& v : values) v = uni(rng);

  // Fixed sample set from the train split.
  const int dim = data.input_dim();
  const std::size_t n = std::min<std::size_t>(options.num_samples, data.n_train());
  std::vector<std::size_t> pick(data.n_train());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  std::shuffle(pick.begin(), pick.end(), rng);
  std::vector<float> clean(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(data.train_x.data() + pick[i] * dim, dim, clean.data() + i * dim);
  }

  const Head head = Head::generate(spec.num_classes, spec.embed_dim, data.head_seed);
  std::vector<const Head*> heads(n, &head);
  std::vector<int> labels(n, target_class);
  std::vector<float> weights(n, 1.0f / static_cast<float>(n));
  Network net(spec);
  std::vector<float> xs, grad;

  // Objective: mean log p(target | x (*) t) = -loss.
  auto evaluate = [&](const std::vector<float>& vals, bool with_grad) {
    Trigger t = Trigger::from_patch(TriggerKind::kInherent, "inherent", ih, iw, patch, vals);
    xs = clean;
    inject_trigger_batch(xs, t);
    const BatchView batch{xs, labels, weights, heads};
    return -(with_grad ? net.loss_and_grad(theta, batch, nullptr, &grad) : net.loss(theta, batch));
  };

  InherentTriggerResult result;
  result.initial_objective = evaluate(values, false);
  result.best_objective = result.initial_objective;
  std::vector<float> best = values;

  for (int step = 0; step < options.steps; ++step) {
    evaluate(values, true);
    // d objective / d patch pixel = -sum over samples of dLoss/dx at that pixel.
    for (int r = 0; r < patch.h; ++r) {
      for (int c = 0; c < patch.w; ++c) {
        const std::size_t pix = static_cast<std::size_t>(patch.row + r) * iw + (patch.col + c);
        double g = 0.0;
        for (std::size_t i = 0; i < n; ++i) g -= grad[i * dim + pix];
        float& v = values[r * patch.w + c];
        const float dir = static_cast<float>((g > 0.0) - (g < 0.0));
        v = std::clamp(v + options.step_size * dir, 0.0f, 1.0f);
      }
    }
    const double obj = evaluate(values, false);
    if (obj > result.best_objective) {
      result.best_objective = obj;
      best = values;
      result.improved = true;
    }
  }
  result.trigger = Trigger::from_patch(TriggerKind::kInherent, "inherent", ih, iw, patch, best);
  return result;
}

std::string trigger_to_json(const Trigger& t) {
  const auto vals = t.patch_values();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(vals.size() * 4);
  for (float v : vals) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  nlohmann::json j = {
      {"kind", t.kind == TriggerKind::kInherent ? "inherent" : "injected"},
      {"name", t.name},
      {"image", {t.image_h, t.image_w}},
      {"location", {t.patch.row, t.patch.col}},
      {"patch", {t.patch.h, t.patch.w}},
      {"pattern", base64_encode(bytes)},
  };
  return j.dump(2) + "\n";
}

Trigger trigger_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto kind_s = j.at("kind").get<std::string>();
    TriggerKind kind;
    if (kind_s == "inherent") kind = TriggerKind::kInherent;
    else if (kind_s == "injected") kind = TriggerKind::kInjected;
    else throw FormatError("unknown trigger kind \"" + kind_s + "\"");
    const auto image = j.value("image", std::vector<int>{16, 16});
    const auto loc = j.at("location").get<std::vector<int>>();
    const auto size = j.at("patch").get<std::vector<int>>();
    if (image.size() != 2 || loc.size() != 2 || size.size() != 2) {
      throw FormatError("trigger geometry fields must have two entries");
    }
    const auto bytes = base64_decode(j.at("pattern").get<std::string>());
    if (bytes.size() % 4 != 0) throw FormatError("trigger pattern is not a sequence of f32");
    std::vector<float> vals(bytes.size() / 4);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const std::uint32_t bits = std::uint32_t(bytes[4 * i]) | (std::uint32_t(bytes[4 * i + 1]) << 8) |
                                 (std::uint32_t(bytes[4 * i + 2]) << 16) |
                                 (std::uint32_t(bytes[4 * i + 3]) << 24);
      vals[i] = std::bit_cast<float>(bits);
    }
    return Trigger::from_patch(kind, j.value("name", kind_s), image[0], image[1],
                               PatchSpec{size[0], size[1], loc[0], loc[1]}, vals);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trigger JSON: ") + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid trigger: ") + e.what());
  }
}

}  // namespace bvlab::lab
