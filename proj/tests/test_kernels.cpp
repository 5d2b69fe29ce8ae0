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

#include <cmath>
#include <random>
#include <vector>

#include "bvlab/kernels.hpp"
#include "doctest.h"

namespace k = bvlab::kernels;

namespace {

std::vector<float> randn(std::size_t n, std::mt19937_64& rng, double zero_frac = 0.0) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng) < zero_frac ? 0.0f : d(rng);
  return v;
}

double rel(double a, double b) { return std::fabs(a - b) / std::max(1.0, std::fabs(b)); }

}  // namespace

// Sizes straddle the reduction block so partial and empty blocks are covered.
TEST_CASE("omp kernels match the serial reference") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {std::size_t{0}, std::size_t{1}, std::size_t{4095}, k::kReduceBlock,
                        std::size_t{3 * 4096 + 17}}) {
    CAPTURE(n);
    const auto x = randn(n, rng), y = randn(n, rng);

    auto y1 = y, y2 = y;
    k::serial::axpy(y1, 0.75f, x);
    k::omp::axpy(y2, 0.75f, x);
    CHECK(y1 == y2);

    std::vector<float> s1(n), s2(n);
    k::serial::sub(s1, x, y);
    k::omp::sub(s2, x, y);
    CHECK(s1 == s2);

    CHECK(rel(k::omp::dot(x, y), k::serial::dot(x, y)) < 1e-12);
    const auto n1 = k::serial::norms(x), n2 = k::omp::norms(x);
    CHECK(rel(n2.l1, n1.l1) < 1e-12);
    CHECK(rel(n2.l2sq, n1.l2sq) < 1e-12);
  }
}

TEST_CASE("parallel reductions are reproducible") {
  std::mt19937_64 rng(2);
  const auto x = randn(100000, rng), y = randn(100000, rng);
  const double d = k::omp::dot(x, y);
  for (int i = 0; i < 5; ++i) CHECK(k::omp::dot(x, y) == d);
}

TEST_CASE("sign-consistent mask kernels agree") {
  std::mt19937_64 rng(3);
  const std::size_t n = 10007;
  for (int kk = 1; kk <= 5; ++kk) {
    std::vector<std::vector<float>> vs;
    std::vector<const float*> ptrs;
    for (int t = 0; t < kk; ++t) vs.push_back(randn(n, rng, 0.1));
    for (const auto& v : vs) ptrs.push_back(v.data());
    std::vector<float> a(n), b(n);
    k::serial::sign_consistent_mask(ptrs, n, a);
    k::omp::sign_consistent_mask(ptrs, n, b);
    CHECK(a == b);
  }
}

TEST_CASE("linear layer kernels agree") {
  std::mt19937_64 rng(4);
  const std::size_t batch = 37, in = 53, out = 29;
  const auto x = randn(batch * in, rng), w = randn(out * in, rng), bias = randn(out, rng);
  const auto dy = randn(batch * out, rng);

  std::vector<float> y1(batch * out), y2(batch * out);
  k::serial::linear_forward(x, w, bias, y1, batch, in, out);
  k::omp::linear_forward(x, w, bias, y2, batch, in, out);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-5));

  // Spot-check the serial forward itself against the formula.
  double ref = bias[3];
  for (std::size_t i = 0; i < in; ++i) ref += double(x[5 * in + i]) * w[3 * in + i];
  CHECK(y1[5 * out + 3] == doctest::Approx(ref).epsilon(1e-5));

  std::vector<float> dw1(out * in, 0.5f), dw2(out * in, 0.5f), db1(out, 0.25f), db2(out, 0.25f);
  k::serial::linear_backward_params(dy, x, dw1, db1, batch, in, out);
  k::omp::linear_backward_params(dy, x, dw2, db2, batch, in, out);
  for (std::size_t i = 0; i < dw1.size(); ++i) CHECK(dw2[i] == doctest::Approx(dw1[i]).epsilon(1e-5));
  for (std::size_t i = 0; i < db1.size(); ++i) CHECK(db2[i] == doctest::Approx(db1[i]).epsilon(1e-5));

  std::vector<float> dx1(batch * in), dx2(batch * in);
  k::serial::linear_backward_input(dy, w, dx1, batch, in, out);
  k::omp::linear_backward_input(dy, w, dx2, batch, in, out);
  for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx2[i] == doctest::Approx(dx1[i]).epsilon(1e-5));
}
