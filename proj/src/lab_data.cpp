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

#include "bvlab/lab/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bvlab/errors.hpp"
#include "bvlab/util.hpp"

namespace bvlab::lab {

void TaskGenParams::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("image dimensions must be positive");
  if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
  if (n_train <= 0 || n_test <= 0) throw ValidationError("split sizes must be positive");
  if (!(proto_std >= 0.0f) || !(noise_sigma >= 0.0f) || !(noise_corr >= 0.0f) ||
      !(noise_white >= 0.0f)) {
    throw ValidationError("proto_std, noise_sigma, noise_corr and noise_white must be non-negative");
  }
}

namespace {

// Separable blur of an iid field, renormalized per pixel so every output
// pixel is exactly unit-variance (the edges see truncated kernels).
class NoiseField {
 public:
  NoiseField(int h, int w, float corr) : h_(h), w_(w) {
    if (corr <= 0.0f) return;
    const int radius = static_cast<int>(std::ceil(3.0f * corr));
    for (int k = -radius; k <= radius; ++k) taps_.push_back(std::exp(-0.5f * k * k / (corr * corr)));
    row_norm_ = axis_norm(w);
    col_norm_ = axis_norm(h);
    tmp_.resize(static_cast<std::size_t>(h) * w);
  }

  void sample(std::mt19937_64& rng, std::normal_distribution<float>& nd, float* out) {
    const std::size_t dim = static_cast<std::size_t>(h_) * w_;
    for (std::size_t d = 0; d < dim; ++d) out[d] = nd(rng);
    if (taps_.empty()) return;
    const int radius = static_cast<int>(taps_.size() / 2);
    for (int r = 0; r < h_; ++r) {
      for (int c = 0; c < w_; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int cc = c + k;
          if (cc >= 0 && cc < w_) acc += taps_[k + radius] * out[r * w_ + cc];
        }
        tmp_[r * w_ + c] = acc / row_norm_[c];
      }
    }
    for (int r = 0; r < h_; ++r) {
      for (int c = 0; c < w_; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int rr = r + k;
          if (rr >= 0 && rr < h_) acc += taps_[k + radius] * tmp_[rr * w_ + c];
        }
        out[r * w_ + c] = acc / col_norm_[r];
      }
    }
  }

 private:
  std::vector<float> axis_norm(int n) const {
    const int radius = static_cast<int>(taps_.size() / 2);
    std::vector<float> norm(n);
    for (int i = 0; i < n; ++i) {
      float sq = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        if (i + k >= 0 && i + k < n) sq += taps_[k + radius] * taps_[k + radius];
      }
      norm[i] = std::sqrt(sq);
    }
    return norm;
  }

  int h_, w_;
  std::vector<float> taps_, row_norm_, col_norm_, tmp_;
};

void fill_split(const std::vector<float>& protos, const TaskGenParams& params, int n,
                std::mt19937_64& rng, std::vector<float>& xs, std::vector<int>& ys) {
  const int dim = params.input_dim();
  const int classes = params.num_classes;
  std::normal_distribution<float> nd(0.0f, 1.0f);
  NoiseField field(params.height, params.width, params.noise_corr);
  std::vector<float> noise(dim);
  xs.resize(static_cast<std::size_t>(n) * dim);
  ys.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    ys[i] = label;
    const float* p = protos.data() + static_cast<std::size_t>(label) * dim;
    float* x = xs.data() + static_cast<std::size_t>(i) * dim;
    if (params.noise_sigma == 0.0f) {
      std::copy_n(p, dim, x);
      continue;
    }
    field.sample(rng, nd, noise.data());
    for (int d = 0; d < dim; ++d) {
      float n = noise[d];
      if (params.noise_white > 0.0f) n += params.noise_white * nd(rng);
      x[d] = std::clamp(p[d] + params.noise_sigma * n, 0.0f, 1.0f);
    }
  }
}

}  // namespace

TaskDataset gen_task(const std::string& task_id, const TaskGenParams& params, std::uint64_t seed) {
  params.validate();
  TaskDataset ds;
  ds.task_id = task_id;
  ds.seed = seed;
  ds.params = params;
  ds.head_seed = derive_seed(task_id + "/head", seed);

  const int dim = params.input_dim();
  std::mt19937_64 proto_rng(derive_seed(task_id + "/prototypes", seed));
  std::normal_distribution<float> proto(params.proto_mean, params.proto_std);
  ds.prototypes.resize(static_cast<std::size_t>(params.num_classes) * dim);
  for (float& v : ds.prototypes) v = std::clamp(proto(proto_rng), 0.0f, 1.0f);

  std::mt19937_64 train_rng(derive_seed(task_id + "/train", seed));
  fill_split(ds.prototypes, params, params.n_train, train_rng, ds.train_x, ds.train_y);
  std::mt19937_64 test_rng(derive_seed(task_id + "/test", seed));
  fill_split(ds.prototypes, params, params.n_test, test_rng, ds.test_x, ds.test_y);
  return ds;
}

}  // namespace bvlab::lab
