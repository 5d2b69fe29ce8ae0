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

// Times the OpenMP kernels against their serial references.
//
//   bench_kernels [--reps N]
//
// Prints one line per kernel with the median wall time of each variant and
// the speedup. Set OMP_NUM_THREADS to control the parallel side.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bvlab/kernels.hpp"

namespace k = bvlab::kernels;

namespace {

double median_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm-up
  std::vector<double> t;
  for (int r = 0; r < reps; ++r) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

void report(const char* name, const std::string& shape, double serial, double parallel) {
  std::printf("%-24s %-22s %10.3f %10.3f %8.2fx\n", name, shape.c_str(), serial, parallel,
              serial / parallel);
}

std::vector<float> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

volatile double g_sink = 0.0;

}  // namespace

int main(int argc, char** argv) {
  int reps = 20;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--reps") && i + 1 < argc) {
      reps = std::max(1, std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--reps N]\n", argv[0]);
      return 1;
    }
  }
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  std::printf("%-24s %-22s %10s %10s %9s\n", "kernel", "shape", "serial ms", "omp ms", "speedup");

  std::mt19937_64 rng(42);
  const std::size_t n = 1 << 22;
  auto x = randn(n, rng), y = randn(n, rng), out(y);
  const std::string vshape = "n=" + std::to_string(n);

  report("axpy", vshape, median_ms(reps, [&] { k::serial::axpy(y, 0.5f, x); }),
         median_ms(reps, [&] { k::omp::axpy(y, 0.5f, x); }));
  report("sub", vshape, median_ms(reps, [&] { k::serial::sub(out, x, y); }),
         median_ms(reps, [&] { k::omp::sub(out, x, y); }));
  report("dot", vshape, median_ms(reps, [&] { g_sink = k::serial::dot(x, y); }),
         median_ms(reps, [&] { g_sink = k::omp::dot(x, y); }));
  report("norms", vshape, median_ms(reps, [&] { g_sink = k::serial::norms(x).l2sq; }),
         median_ms(reps, [&] { g_sink = k::omp::norms(x).l2sq; }));

  std::vector<std::vector<float>> bvs;
  std::vector<const float*> ptrs;
  for (int t = 0; t < 5; ++t) {
    bvs.push_back(randn(n, rng));
    ptrs.push_back(bvs.back().data());
  }
  report("sign_consistent_mask", vshape + " k=5",
         median_ms(reps, [&] { k::serial::sign_consistent_mask(ptrs, n, out); }),
         median_ms(reps, [&] { k::omp::sign_consistent_mask(ptrs, n, out); }));

  // Shapes of the testbed's first layer at training and evaluation batch sizes.
  for (std::size_t batch : {std::size_t{128}, std::size_t{256}}) {
    const std::size_t in = 256, o = 128;
    auto xb = randn(batch * in, rng), w = randn(o * in, rng), b = randn(o, rng);
    std::vector<float> yb(batch * o), dw(o * in), db(o), dx(batch * in);
    auto dy = randn(batch * o, rng);
    const std::string shape = std::to_string(batch) + "x" + std::to_string(in) + "->" + std::to_string(o);
    report("linear_forward", shape,
           median_ms(reps, [&] { k::serial::linear_forward(xb, w, b, yb, batch, in, o); }),
           median_ms(reps, [&] { k::omp::linear_forward(xb, w, b, yb, batch, in, o); }));
    report("linear_backward_params", shape,
           median_ms(reps, [&] { k::serial::linear_backward_params(dy, xb, dw, db, batch, in, o); }),
           median_ms(reps, [&] { k::omp::linear_backward_params(dy, xb, dw, db, batch, in, o); }));
    report("linear_backward_input", shape,
           median_ms(reps, [&] { k::serial::linear_backward_input(dy, w, dx, batch, in, o); }),
           median_ms(reps, [&] { k::omp::linear_backward_input(dy, w, dx, batch, in, o); }));
  }
  return 0;
}
