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

#include "bvlab/lab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bvlab/errors.hpp"

namespace bvlab::lab {

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (!(learning_rate > 0.0f)) throw ValidationError("learning_rate must be positive");
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw ValidationError("lr_schedule must be constant or cosine");
  }
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(alpha >= 0.0f)) throw ValidationError("alpha must be >= 0");
  if (!(grad_clip >= 0.0f)) throw ValidationError("grad_clip must be >= 0");
}

namespace {

struct SampleRef {
  int task;
  int index;
};

struct Poison {
  const Trigger* trigger = nullptr;
  int target = 0;
  float alpha = 0.0f;
};

NamedTensorMap zeros_like(const NamedTensorMap& m) {
  NamedTensorMap z;
  for (const auto& [name, t] : m.entries) z.entries.emplace(name, Tensor(t.shape));
  return z;
}

// Mini-batch SGD with momentum (v <- mu v + g; theta <- theta - lr v).
// The sample order is reshuffled every epoch from one generator seeded by
// cfg.seed, so a run is a pure function of its inputs.
TrainResult run_sgd(NamedTensorMap params, const ModelSpec& spec,
                    std::span<const TaskDataset* const> tasks, const TrainConfig& cfg,
                    const Poison& poison) {
  cfg.validate();
  std::vector<Head> heads;
  heads.reserve(tasks.size());
  std::vector<SampleRef> samples;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TaskDataset& ds = *tasks[t];
    if (ds.input_dim() != spec.input_dim || ds.num_classes() != spec.num_classes) {
      throw ValidationError("task \"" + ds.task_id + "\" does not match the model spec");
    }
    heads.push_back(Head::generate(spec.num_classes, spec.embed_dim, ds.head_seed));
    for (std::size_t i = 0; i < ds.n_train(); ++i) {
      samples.push_back({static_cast<int>(t), static_cast<int>(i)});
    }
  }
  if (samples.empty()) throw ValidationError("no training samples");
  if (poison.trigger != nullptr && (poison.target < 0 || poison.target >= spec.num_classes)) {
    throw ValidationError("target_class out of range");
  }

  TrainResult result;
  Network net(spec);
  NamedTensorMap grads = zeros_like(params);
  NamedTensorMap velocity = zeros_like(params);
  std::mt19937_64 rng(cfg.seed);
  const bool poisoned = poison.trigger != nullptr && poison.alpha > 0.0f;
  const int dim = spec.input_dim;

  std::vector<float> xs;
  std::vector<int> labels;
  std::vector<float> weights;
  std::vector<const Head*> batch_heads;

  const std::size_t steps_per_epoch = (samples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = double(steps_per_epoch) * cfg.epochs;
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(samples.size(), start + cfg.batch_size);
      const std::size_t bsz = end - start;
      const std::size_t rows = poisoned ? 2 * bsz : bsz;
      xs.resize(rows * dim);
      labels.resize(rows);
      weights.resize(rows);
      batch_heads.resize(rows);
      for (std::size_t b = 0; b < bsz; ++b) {
        const SampleRef s = samples[start + b];
        const TaskDataset& ds = *tasks[s.task];
        const float* src = ds.train_x.data() + static_cast<std::size_t>(s.index) * dim;
        std::copy_n(src, dim, xs.data() + b * dim);
        labels[b] = ds.train_y[s.index];
        weights[b] = 1.0f / static_cast<float>(bsz);
        batch_heads[b] = &heads[s.task];
        if (poisoned) {
          std::copy_n(src, dim, xs.data() + (bsz + b) * dim);
          labels[bsz + b] = poison.target;
          weights[bsz + b] = poison.alpha / static_cast<float>(bsz);
          batch_heads[bsz + b] = &heads[s.task];
        }
      }
      if (poisoned) {
        inject_trigger_batch(std::span(xs).subspan(bsz * dim, bsz * dim), *poison.trigger);
      }

      for (auto& [_, g] : grads.entries) std::fill(g.data.begin(), g.data.end(), 0.0f);
      const double loss = net.loss_and_grad(params, {xs, labels, weights, batch_heads}, &grads, nullptr);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      }
      epoch_sum += loss;
      ++batches;

      float gscale = 1.0f;
      if (cfg.grad_clip > 0.0f) {
        double sq = 0.0;
        for (const auto& [_, g] : grads.entries) {
          for (float v : g.data) sq += double(v) * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) gscale = static_cast<float>(cfg.grad_clip / norm);
      }
      float lr = cfg.learning_rate;
      if (cfg.lr_schedule == "cosine") {
        lr = static_cast<float>(0.5 * cfg.learning_rate * (1.0 + std::cos(M_PI * double(step) / total_steps)));
      }
      ++step;
      for (auto& [name, p] : params.entries) {
        auto& v = velocity.entries.at(name).data;
        const auto& g = grads.entries.at(name).data;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
          v[i] = cfg.momentum * v[i] + gscale * g[i];
          p.data[i] -= lr * v[i];
        }
      }
    }
    result.epoch_loss.push_back(epoch_sum / batches);
  }
  for (const auto& [name, p] : params.entries) {
    for (float v : p.data) {
      if (!std::isfinite(v)) throw TrainingError("training diverged (non-finite weight in " + name + ")");
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace

TrainResult pretrain(const ModelSpec& spec, std::span<const TaskDataset> tasks,
                     const TrainConfig& cfg) {
  if (tasks.empty()) throw ValidationError("pretrain: at least one task is required");
  std::vector<const TaskDataset*> ptrs;
  for (const auto& t : tasks) ptrs.push_back(&t);
  auto init = init_trunk(spec, cfg.seed);
  auto result = run_sgd(std::move(init), spec, ptrs, cfg, Poison{});
  result.params.meta = {{"role", "pretrained"}, {"seed", std::to_string(cfg.seed)}};
  return result;
}

TrainResult finetune_clean(const NamedTensorMap& theta_pre, const ModelSpec& spec,
                           const TaskDataset& data, const TrainConfig& cfg) {
  const TaskDataset* ptr = &data;
  auto result = run_sgd(theta_pre, spec, std::span(&ptr, 1), cfg, Poison{});
  result.params.meta = {{"role", "clean"}, {"seed", std::to_string(cfg.seed)}, {"task", data.task_id}};
  return result;
}

TrainResult finetune_backdoored(const NamedTensorMap& theta_pre, const ModelSpec& spec,
                                const TaskDataset& data, const Trigger& trigger,
                                int target_class, const TrainConfig& cfg) {
  if (trigger.image_h * trigger.image_w != spec.input_dim) {
    throw ValidationError("trigger geometry does not match the model input");
  }
  const TaskDataset* ptr = &data;
  Poison poison{&trigger, target_class, cfg.alpha};
  auto result = run_sgd(theta_pre, spec, std::span(&ptr, 1), cfg, poison);
  result.params.meta = {{"role", "backdoored"},
                        {"seed", std::to_string(cfg.seed)},
                        {"task", data.task_id},
                        {"target", std::to_string(target_class)},
                        {"trigger", trigger.name}};
  return result;
}

}  // namespace bvlab::lab
