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

// Data-parallel inner loops. Every kernel has a plain sequential
// implementation in `serial` that serves as the test oracle, and an
// OpenMP implementation in `omp` that the rest of the library calls.
//
// The OpenMP reductions split the input into fixed-size blocks and sum the
// per-block partials in block order, so results do not depend on the number
// of threads. They may differ from the `serial` sums in the last few ulps.

#include <cstddef>
#include <cstdint>
#include <span>

namespace bvlab::kernels {

/// Block length for deterministic parallel reductions.
inline constexpr std::size_t kReduceBlock = 4096;

struct Norms {
  double l1 = 0.0;
  double l2sq = 0.0;
};

namespace serial {

void axpy(std::span<float> y, float a, std::span<const float> x);
void sub(std::span<float> out, std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const float> b);
Norms norms(std::span<const float> x);

/// out[j] = 1 iff every vectors[t][j] is nonzero and shares the sign of vectors[0][j].
void sign_consistent_mask(std::span<const float* const> vectors, std::size_t n,
                          std::span<float> out);

/// Y[b, o] = sum_i X[b, i] * W[o, i] + bias[o]
void linear_forward(std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y, std::size_t batch,
                    std::size_t in, std::size_t out);
/// dW[o, i] += sum_b dY[b, o] * X[b, i];  dbias[o] += sum_b dY[b, o]
void linear_backward_params(std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw, std::span<float> dbias, std::size_t batch,
                            std::size_t in, std::size_t out);
/// dX[b, i] = sum_o dY[b, o] * W[o, i]
void linear_backward_input(std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx, std::size_t batch, std::size_t in,
                           std::size_t out);

}  // namespace serial

namespace omp {

void axpy(std::span<float> y, float a, std::span<const float> x);
void sub(std::span<float> out, std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const float> b);
Norms norms(std::span<const float> x);
void sign_consistent_mask(std::span<const float* const> vectors, std::size_t n,
                          std::span<float> out);
void linear_forward(std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y, std::size_t batch,
                    std::size_t in, std::size_t out);
void linear_backward_params(std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw, std::span<float> dbias, std::size_t batch,
                            std::size_t in, std::size_t out);
void linear_backward_input(std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx, std::size_t batch, std::size_t in,
                           std::size_t out);

}  // namespace omp

}  // namespace bvlab::kernels
