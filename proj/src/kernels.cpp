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

#include "bvlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "bvlab/errors.hpp"

namespace bvlab::kernels {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
}

int sign_of(float v) { return (v > 0.0f) - (v < 0.0f); }

// Eight independent lanes so the compiler can vectorize without
// reassociating a single accumulator.
inline float dot8(const float* a, const float* b, std::size_t n) {
  float lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])) +
         tail;
}

inline void axpy_raw(float* y, float a, const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// serial

namespace serial {

void axpy(std::span<float> y, float a, std::span<const float> x) {
  require_same(y.size(), x.size(), "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

void sub(std::span<float> out, std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "sub");
  require_same(out.size(), a.size(), "sub");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
}

double dot(std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

Norms norms(std::span<const float> x) {
  Norms r;
  for (float v : x) {
    r.l1 += std::abs(double(v));
    r.l2sq += double(v) * double(v);
  }
  return r;
}

void sign_consistent_mask(std::span<const float* const> vectors, std::size_t n,
                          std::span<float> out) {
  require_same(out.size(), n, "sign_consistent_mask");
  for (std::size_t j = 0; j < n; ++j) {
    const int s0 = sign_of(vectors[0][j]);
    bool keep = s0 != 0;
    for (std::size_t t = 1; keep && t < vectors.size(); ++t) keep = sign_of(vectors[t][j]) == s0;
    out[j] = keep ? 1.0f : 0.0f;
  }
}

void linear_forward(std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y, std::size_t batch,
                    std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      float s = 0.0f;
      for (std::size_t i = 0; i < in; ++i) s += x[b * in + i] * w[o * in + i];
      y[b * out + o] = s + bias[o];
    }
  }
}

void linear_backward_params(std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw, std::span<float> dbias, std::size_t batch,
                            std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      const float g = dy[b * out + o];
      dbias[o] += g;
      for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += g * x[b * in + i];
    }
  }
}

void linear_backward_input(std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx, std::size_t batch, std::size_t in,
                           std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < in; ++i) {
      float s = 0.0f;
      for (std::size_t o = 0; o < out; ++o) s += dy[b * out + o] * w[o * in + i];
      dx[b * in + i] = s;
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// omp

namespace omp {

void axpy(std::span<float> y, float a, std::span<const float> x) {
  require_same(y.size(), x.size(), "axpy");
  const auto n = static_cast<std::int64_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void sub(std::span<float> out, std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "sub");
  require_same(out.size(), a.size(), "sub");
  const auto n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

double dot(std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "dot");
  const std::size_t n = a.size();
  const auto blocks = static_cast<std::int64_t>((n + kReduceBlock - 1) / kReduceBlock);
  std::vector<double> partial(blocks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < blocks; ++k) {
    const std::size_t lo = k * kReduceBlock;
    const std::size_t hi = std::min(n, lo + kReduceBlock);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += double(a[i]) * double(b[i]);
    partial[k] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

Norms norms(std::span<const float> x) {
  const std::size_t n = x.size();
  const auto blocks = static_cast<std::int64_t>((n + kReduceBlock - 1) / kReduceBlock);
  std::vector<Norms> partial(blocks);
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < blocks; ++k) {
    const std::size_t lo = k * kReduceBlock;
    const std::size_t hi = std::min(n, lo + kReduceBlock);
    Norms s;
    for (std::size_t i = lo; i < hi; ++i) {
      s.l1 += std::abs(double(x[i]));
      s.l2sq += double(x[i]) * double(x[i]);
    }
    partial[k] = s;
  }
  Norms total;
  for (const auto& p : partial) {
    total.l1 += p.l1;
    total.l2sq += p.l2sq;
  }
  return total;
}

void sign_consistent_mask(std::span<const float* const> vectors, std::size_t n,
                          std::span<float> out) {
  require_same(out.size(), n, "sign_consistent_mask");
  const auto nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < nn; ++j) {
    const int s0 = sign_of(vectors[0][j]);
    bool keep = s0 != 0;
    for (std::size_t t = 1; keep && t < vectors.size(); ++t) keep = sign_of(vectors[t][j]) == s0;
    out[j] = keep ? 1.0f : 0.0f;
  }
}

void linear_forward(std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y, std::size_t batch,
                    std::size_t in, std::size_t out) {
  const auto nb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    const float* xr = x.data() + b * in;
    float* yr = y.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = dot8(xr, w.data() + o * in, in) + bias[o];
  }
}

void linear_backward_params(std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw, std::span<float> dbias, std::size_t batch,
                            std::size_t in, std::size_t out) {
  // Parallel over output rows; each row sums the batch in order.
  const auto no = static_cast<std::int64_t>(out);
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < no; ++o) {
    float* wr = dw.data() + o * in;
    float gb = 0.0f;
    for (std::size_t b = 0; b < batch; ++b) {
      const float g = dy[b * out + o];
      gb += g;
      if (g != 0.0f) axpy_raw(wr, g, x.data() + b * in, in);
    }
    dbias[o] += gb;
  }
}

void linear_backward_input(std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx, std::size_t batch, std::size_t in,
                           std::size_t out) {
  const auto nb = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < nb; ++b) {
    float* xr = dx.data() + b * in;
    std::fill(xr, xr + in, 0.0f);
    for (std::size_t o = 0; o < out; ++o) {
      const float g = dy[b * out + o];
      if (g != 0.0f) axpy_raw(xr, g, w.data() + o * in, in);
    }
  }
}

}  // namespace omp

}  // namespace bvlab::kernels
