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

// Acceptance checks 1-12 for the toolkit.
//
//   bvlab_acceptance [--work-dir DIR] [--only N[,N...]]
//
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
// Criteria 6-11 read from one run of the experiment suite; criterion 12 runs
// the suite again with a fresh runner and compares every report and
// checkpoint byte for byte.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bvlab/errors.hpp"
#include "bvlab/experiment.hpp"
#include "bvlab/lab/eval.hpp"
#include "bvlab/merging.hpp"
#include "bvlab/tensor_store.hpp"
#include "bvlab/util.hpp"
#include "bvlab/vector_ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace bvlab;

namespace {

constexpr double kPp = 0.02;  // two percentage points

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Non-decreasing sequence, allowing at most one step down of at most `tol`.
bool nearly_monotone(const std::vector<double>& xs, double tol, std::string* why) {
  int inversions = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double drop = xs[i - 1] - xs[i];
    if (drop > 0.0) {
      ++inversions;
      if (drop > tol) {
        *why = fmt("drop of %.4f at step %zu", drop, i);
        return false;
      }
    }
  }
  if (inversions > 1) {
    *why = fmt("%d inversions", inversions);
    return false;
  }
  return true;
}

// ------------------------------------------------------------- suite

ExperimentConfig base_config() {
  ExperimentConfig c;  // single task, 10 models, TA at 0.1, inherent attack
  c.seeds = {0, 1, 2};
  c.targets = {0, 1, 2};
  return c;
}

/// Every report the criteria read, keyed by a file-friendly name.
using Suite = std::map<std::string, Report>;

Suite run_suite(Runner& r) {
  Suite s;
  ExperimentConfig c = base_config();
  for (auto bm : {BvMerging::kNone, BvMerging::kAvg, BvMerging::kSbvSc, BvMerging::kSbvRnd}) {
    c.bv_merging = bm;
    s["merge_" + to_string(bm)] = r.run(c);
  }
  c.bv_merging = BvMerging::kSbvSc;
  for (int k = 1; k <= 5; ++k) {
    c.k = k;
    s["k_sweep_" + std::to_string(k)] = r.run(c);
  }

  ExperimentConfig sp = base_config();
  sp.experiment = ExperimentKind::kSparsity;
  sp.seeds = {0, 1, 2, 3};
  sp.targets = {0, 1, 2, 3, 4};
  s["sparsity"] = r.run(sp);

  ExperimentConfig tr = base_config();
  tr.experiment = ExperimentKind::kTrajectory;
  tr.attack = Attack::kNone;
  tr.n_models = 9;
  for (const char* probe : {"inherent", "white_square"}) {
    tr.probe_trigger = probe;
    s[std::string("trajectory_clean_") + probe] = r.run(tr);
  }

  ExperimentConfig d = base_config();
  d.experiment = ExperimentKind::kDefense;
  d.defense = Defense::kIbvs;
  for (float l : {0.1f, 0.3f}) {
    d.lambda_ibvs = l;
    s["defense_" + format_number(l)] = r.run(d);
  }

  ExperimentConfig ls = base_config();
  ls.experiment = ExperimentKind::kLambdaSweep;
  s["lambda_sweep"] = r.run(ls);
  return s;
}

double mean_asr(const Report& r) { return *r.rows.at(0).asr.mean; }

const ReportRow& defense_row(const Report& r, const std::string& defense) {
  for (const auto& row : r.rows) {
    if (row.defense == defense) return row;
  }
  throw Error("report has no row for defense " + defense);
}

// ------------------------------------------------------------- fixture
// Pre-trained model plus one clean and one backdoored fine-tune of task0,
// trained directly through the lab API.

struct Fixture {
  TestbedConfig tb;
  lab::ModelSpec spec;
  lab::TaskDataset data;
  NamedTensorMap pre, clean, backdoored;
  lab::Trigger trigger;
  int target = 0;
  double train_seconds = 0.0;
};

const Fixture& fixture() {
  static std::optional<Fixture> f;
  if (f) return *f;
  Fixture x;
  x.spec = x.tb.model_spec();
  x.data = make_task(x.tb, task_id(0));
  x.pre = lab::pretrain(x.spec, pretrain_corpus(x.tb, 1), x.tb.pretrain).params;
  const auto t1 = std::chrono::steady_clock::now();
  x.trigger = lab::make_injected_trigger(lab::InjectedPattern::kWhiteSquare, x.tb.patch());
  lab::TrainConfig cfg = x.tb.finetune;  // alpha = 5
  cfg.seed = 0;
  x.clean = lab::finetune_clean(x.pre, x.spec, x.data, cfg).params;
  x.backdoored = lab::finetune_backdoored(x.pre, x.spec, x.data, x.trigger, x.target, cfg).params;
  x.train_seconds = seconds_since(t1);  // fine-tunes only
  f = std::move(x);
  return *f;
}

// ------------------------------------------------------------- criteria

Outcome c1_mask_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> val(-3, 3);
  std::uniform_real_distribution<float> mag(0.01f, 1.0f);
  // 10^4 elements split over three tensors.
  const std::vector<std::pair<std::string, std::vector<std::int64_t>>> layout = {
      {"a.weight", {50, 100}}, {"a.bias", {1000}}, {"b.weight", {40, 100}}};
  int mismatched = 0;
  std::size_t kept = 0, total = 0;
  for (int set = 0; set < 100; ++set) {
    const int k = 1 + set % 5;
    std::vector<TaskVector> bvs;
    std::vector<std::vector<float>> flats;
    for (int t = 0; t < k; ++t) {
      NamedTensorMap m;
      for (const auto& [name, shape] : layout) {
        Tensor x(shape);
        // Signs biased per index so agreement is common; about 1/7 zeros.
        for (float& v : x.data) v = static_cast<float>(val(rng)) * mag(rng);
        m.set(name, std::move(x));
      }
      bvs.emplace_back(std::move(m));
      flats.push_back(bvs.back().flatten());
    }
    const auto got = TaskVector(sparse_mask(bvs, SparsificationType::kSignConsistent, 0).mask).flatten();
    const auto want = testing::brute_sc_mask(flats);
    if (got != want) ++mismatched;
    kept += static_cast<std::size_t>(std::count(want.begin(), want.end(), 1.0f));
    total += want.size();
  }
  const double secs = seconds_since(t0);
  return {mismatched == 0 && secs < 5.0,
          fmt("100 sets x 10^4 elements, %d mismatching, oracle density %.3f, %.2fs (limit 5s)",
              mismatched, double(kept) / total, secs)};
}

Outcome c2_sbv_trace() {
  const auto db = testing::vec({5, 5, 5, 5});
  const TaskVector cleans[] = {testing::vec({4, 7, 5, 2}), testing::vec({3, 6, 1, 8})};
  const auto s = sbv(db, cleans, SparsificationType::kSignConsistent, 0);
  const bool trace_ok = s.map().at("w").data == std::vector<float>{3, -3, 0, 0};

  // k = 1 on testbed checkpoints: the submission is the backdoored model.
  const Fixture& f = fixture();
  const TaskVector d_b = task_vector(f.backdoored, f.pre);
  const TaskVector d_c = task_vector(f.clean, f.pre);
  const auto s1 = sbv(d_b, std::span(&d_c, 1), SparsificationType::kSignConsistent, 0);
  const auto sub = craft_submission(f.pre, d_c, s1);
  double worst = 0.0;
  for (const auto& [name, t] : f.backdoored.entries) {
    const auto& got = sub.at(name).data;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double ref = t.data[i];
      worst = std::max(worst, std::fabs(got[i] - ref) / std::max(std::fabs(ref), 1e-6));
    }
  }
  // Elements whose reference is tiny are dominated by the rounding of the
  // larger operands; report them against the operand scale as well.
  double worst_scaled = 0.0;
  for (const auto& [name, t] : f.backdoored.entries) {
    const auto& got = sub.at(name).data;
    const auto& pre = f.pre.at(name).data;
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double scale = std::max({std::fabs(double(t.data[i])), std::fabs(double(pre[i])), 1e-6});
      worst_scaled = std::max(worst_scaled, std::fabs(got[i] - t.data[i]) / scale);
    }
  }
  const double asr_sub = lab::eval_asr(sub, f.spec, f.data, f.trigger, f.target);
  const double asr_bd = lab::eval_asr(f.backdoored, f.spec, f.data, f.trigger, f.target);
  const bool ok = trace_ok && worst_scaled <= 1e-6 && asr_sub == asr_bd;
  return {ok, fmt("trace [3,-3,0,0] %s; k=1 max rel err %.2e (operand scale %.2e, limit 1e-6); "
                  "ASR submission %.4f vs backdoored %.4f",
                  trace_ok ? "exact" : "WRONG", worst, worst_scaled, asr_sub, asr_bd)};
}

Outcome c3_diagnostics() {
  const auto t0 = std::chrono::steady_clock::now();
  double err_hoyer = 0.0;
  for (int n : {2, 7, 256, 10000}) {
    std::vector<float> one_hot(n, 0.0f), constant(n, 0.7f);
    one_hot[n - 1] = 3.0f;
    err_hoyer = std::max(err_hoyer, std::fabs(hoyer_sparsity_f64(testing::vec(one_hot)) - 1.0));
    err_hoyer = std::max(err_hoyer, std::fabs(hoyer_sparsity_f64(testing::vec(constant))));
  }
  err_hoyer = std::max(err_hoyer, std::fabs(hoyer_sparsity_f64(testing::vec({1, 1, 0, 0})) -
                                            (2.0 - std::sqrt(2.0))));

  const auto v = testing::vec({0.3f, -1.2f, 2.5f, 0.0f});
  double err_cos = std::fabs(cosine_similarity(v, v) - 1.0);
  err_cos = std::max(err_cos, std::fabs(cosine_similarity(v, scale(v, -2.0f)) + 1.0));
  err_cos = std::max(err_cos, double(std::fabs(cosine_similarity(testing::vec({1, 0}), testing::vec({0, 1})))));
  err_cos = std::max(err_cos, std::fabs(cosine_similarity(testing::vec({1, 2}), testing::vec({-1, -2})) + 1.0));

  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> len(2, 2000);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::uniform_real_distribution<float> sc(-100.0f, 100.0f);
  double err_scale = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> x(len(rng));
    for (float& e : x) e = nd(rng);
    float c = sc(rng);
    if (std::fabs(c) < 1e-3f) c = 1.0f;
    const auto tv = testing::vec(x);
    err_scale = std::max(err_scale, double(std::fabs(hoyer_sparsity(scale(tv, c)) - hoyer_sparsity(tv))));
  }
  const double secs = seconds_since(t0);
  const bool ok = err_hoyer <= 1e-9 && err_cos <= 1e-6 && err_scale <= 1e-6 && secs < 5.0;
  return {ok, fmt("Hoyer analytic err %.1e (1e-9), cosine err %.1e (1e-6), scale-invariance err %.1e "
                  "over 1000 vectors (1e-6), %.2fs",
                  err_hoyer, err_cos, err_scale, secs)};
}

Outcome c4_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, worst_input = 0.0;
  for (std::uint64_t b = 0; b < 20; ++b) {
    const auto r = testing::gradient_check(1000 + b);
    worst = std::max(worst, r.param_rel_err);
    worst_input = std::max(worst_input, r.input_rel_err);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-2 && secs < 30.0,
          fmt("20 batches, eps 1e-3: max trunk rel err %.2e (limit 1e-2), input grad %.2e, %.2fs",
              worst, worst_input, secs)};
}

Outcome c5_backdoor_finetune() {
  const Fixture& f = fixture();
  const double asr = lab::eval_asr(f.backdoored, f.spec, f.data, f.trigger, f.target);
  const double ba = lab::eval_accuracy(f.backdoored, f.spec, f.data);
  const double ca = lab::eval_accuracy(f.clean, f.spec, f.data);
  const bool ok = asr > 0.9 && ca - ba <= kPp && f.train_seconds < 120.0;
  return {ok, fmt("white square, alpha 5: ASR %.4f (>0.9), clean acc %.4f vs clean fine-tune %.4f "
                  "(drop %.2fpp, limit 2pp), fine-tunes %.1fs",
                  asr, ba, ca, 100.0 * (ca - ba), f.train_seconds)};
}

Outcome c6_sbv_dominance(const Suite& s, double suite_seconds) {
  const double none = mean_asr(s.at("merge_none")), avg = mean_asr(s.at("merge_avg"));
  const double sc = mean_asr(s.at("merge_sbv_sc")), rnd = mean_asr(s.at("merge_sbv_rnd"));
  double worst_gap = 0.0;
  for (const char* key : {"merge_none", "merge_avg", "merge_sbv_sc", "merge_sbv_rnd"}) {
    const auto& row = s.at(key).rows.at(0);
    worst_gap = std::max(worst_gap, std::fabs(*row.ba.mean - *row.ca.mean));
  }
  const bool ok = sc > avg && avg > none - kPp && sc > rnd && worst_gap <= kPp && suite_seconds < 900.0;
  return {ok, fmt("ASR sbv_sc %.4f > avg %.4f > none %.4f - 2pp; sbv_rnd %.4f; max |BA-CA| %.2fpp; "
                  "3 seeds x 3 targets; suite %.0fs (limit 900s)",
                  sc, avg, none, rnd, 100.0 * worst_gap, suite_seconds)};
}

Outcome c7_k_monotone(const Suite& s) {
  std::vector<double> asr;
  std::string seq;
  for (int k = 1; k <= 5; ++k) {
    asr.push_back(mean_asr(s.at("k_sweep_" + std::to_string(k))));
    seq += fmt("%s%.4f", k > 1 ? " -> " : "", asr.back());
  }
  std::string why;
  const bool ok = nearly_monotone(asr, kPp, &why);
  return {ok, "ASR over k=1..5: " + seq + (why.empty() ? "" : " (" + why + ")")};
}

Outcome c8_sparsity(const Suite& s) {
  const auto& ex = s.at("sparsity").extra;
  const std::size_t n = ex.at("hoyer_bv").size();
  const double bv = ex.at("mean_hoyer_bv"), sbv_sc = ex.at("mean_hoyer_sbv_sc");
  return {n >= 20 && sbv_sc > bv,
          fmt("%zu BV sets: mean Hoyer SBV_SC %.4f vs BV %.4f", n, sbv_sc, bv)};
}

Outcome c9_dichotomy(const Suite& s) {
  const Fixture& f = fixture();
  const double chance = 1.0 / f.spec.num_classes;
  const ExperimentConfig c = base_config();
  // Same trigger seeds as the runner uses for its inherent attacks.
  std::vector<double> inh, inj;
  const auto white = lab::make_injected_trigger(lab::InjectedPattern::kWhiteSquare, f.tb.patch());
  for (std::uint64_t seed : c.seeds) {
    for (int t : c.targets) {
      lab::InherentTriggerOptions o;
      o.steps = f.tb.inherent_steps;
      o.step_size = f.tb.inherent_step_size;
      o.num_samples = f.tb.inherent_samples;
      o.seed = derive_seed("trigger/" + std::to_string(t), seed);
      const auto trig = lab::optimize_inherent_trigger(f.pre, f.spec, f.data, t, f.tb.patch(), o).trigger;
      inh.push_back(lab::eval_asr(f.pre, f.spec, f.data, trig, t));
    }
  }
  for (int t : c.targets) inj.push_back(lab::eval_asr(f.pre, f.spec, f.data, white, t));
  const double pre_inh = *Stat::of(inh).mean, pre_inj = *Stat::of(inj).mean;

  const auto& ti = s.at("trajectory_clean_inherent").rows;
  const auto& tw = s.at("trajectory_clean_white_square").rows;
  double max_inj = pre_inj, min_margin = pre_inh - pre_inj;
  for (std::size_t m = 0; m < ti.size(); ++m) {
    max_inj = std::max(max_inj, *tw[m].asr.mean);
    min_margin = std::min(min_margin, *ti[m].asr.mean - *tw[m].asr.mean);
  }
  const bool ok = pre_inh > 3.0 * chance && max_inj < 2.0 * chance && min_margin > 0.0 && ti.size() == 9;
  return {ok, fmt("theta_pre: inherent ASR %.4f (>%.3f), white square %.4f; all-clean merges m=1..%zu: "
                  "max white-square ASR %.4f (<%.3f), min inherent-minus-injected margin %.4f",
                  pre_inh, 3.0 * chance, pre_inj, ti.size(), max_inj, 2.0 * chance, min_margin)};
}

Outcome c10_ibvs(const Suite& s) {
  const auto& r1 = s.at("defense_" + format_number(0.1f));
  const auto& r3 = s.at("defense_" + format_number(0.3f));
  const auto& none = defense_row(r3, "none");
  const auto& d1 = defense_row(r1, "ibvs");
  const auto& d3 = defense_row(r3, "ibvs");
  const double a0 = *none.asr.mean, a1 = *d1.asr.mean, a3 = *d3.asr.mean;
  const double ba_drop = *none.ba.mean - *d3.ba.mean;
  const bool ok = a0 - a3 >= 0.05 && ba_drop <= kPp && a3 <= a1 && a1 <= a0;
  return {ok, fmt("ASR none %.4f, ibvs 0.1 %.4f, ibvs 0.3 %.4f (reduction %.2fpp, need >=5pp); "
                  "BA drop at 0.3 %.2fpp (limit 2pp)",
                  a0, a1, a3, 100.0 * (a0 - a3), 100.0 * ba_drop)};
}

Outcome c11_lambda_sweep(const Suite& s) {
  const auto& rows = s.at("lambda_sweep").rows;
  std::vector<double> asr;
  double worst_acc = 0.0;
  const double acc0 = *rows.at(0).ba.mean;
  std::string seq;
  for (const auto& row : rows) {
    asr.push_back(*row.asr.mean);
    worst_acc = std::max(worst_acc, std::fabs(*row.ba.mean - acc0));
    seq += fmt("%s%.3f", seq.empty() ? "" : " ", asr.back());
  }
  std::string why;
  const bool mono = nearly_monotone(asr, kPp, &why);
  return {mono && worst_acc <= kPp && rows.size() == 11,
          fmt("ASR over lambda_BV 0..1: %s; max clean-acc change %.2fpp (limit 2pp)", seq.c_str(),
              100.0 * worst_acc) + (why.empty() ? "" : " (" + why + ")")};
}

// Writes every report of a suite plus the runner's checkpoints.
void write_suite(const Suite& s, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, rep] : s) {
    emit_report(rep, ReportFormat::kJson, dir / (name + ".json"));
    emit_report(rep, ReportFormat::kCsv, dir / (name + ".csv"));
  }
}

std::map<std::string, std::vector<std::uint8_t>> dir_contents(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out[e.path().filename().string()] = read_file(e.path());
  }
  return out;
}

Outcome c12_determinism(const fs::path& work, const Suite& first, const fs::path& first_cache) {
  // Second run: fresh runner, its own cache, a different thread count.
  const int threads = omp_get_max_threads();
  omp_set_num_threads(3);
  const fs::path second_cache = work / "cache_run2";
  fs::remove_all(second_cache);
  Runner again(second_cache);
  const Suite second = run_suite(again);
  omp_set_num_threads(threads);

  write_suite(first, work / "reports_run1");
  write_suite(second, work / "reports_run2");
  const auto r1 = dir_contents(work / "reports_run1"), r2 = dir_contents(work / "reports_run2");
  const auto c1 = dir_contents(first_cache), c2 = dir_contents(second_cache);
  int report_diff = 0, ckpt_diff = 0;
  for (const auto& [name, bytes] : r1) report_diff += !r2.contains(name) || r2.at(name) != bytes;
  for (const auto& [name, bytes] : c1) ckpt_diff += !c2.contains(name) || c2.at(name) != bytes;
  report_diff += r1.size() != r2.size();
  ckpt_diff += c1.size() != c2.size();

  // NTC round trip on random maps.
  std::mt19937_64 rng(1212);
  int rt_fail = 0;
  for (int i = 0; i < 100; ++i) {
    const auto m = testing::random_map(rng, 1e4f, 0.05);
    const fs::path p = work / "roundtrip.ntc";
    save_checkpoint(m, p);
    const auto back = load_checkpoint(p);
    bool same = back.entries.size() == m.entries.size();
    for (const auto& [name, t] : m.entries) {
      same = same && back.entries.contains(name) && back.at(name).shape == t.shape &&
             std::memcmp(back.at(name).data.data(), t.data.data(), t.data.size() * 4) == 0;
    }
    rt_fail += !same || serialize_checkpoint(back) != read_file(p);
  }
  fs::remove(work / "roundtrip.ntc");
  const bool ok = report_diff == 0 && ckpt_diff == 0 && rt_fail == 0 && !c1.empty();
  return {ok, fmt("%zu report files, %d differ; %zu checkpoints, %d differ (second run on %d threads); "
                  "NTC round trip %d/100 bit-exact",
                  r1.size(), report_diff, c1.size(), ckpt_diff, 3, 100 - rt_fail)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "bvlab_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--work-dir") && i + 1 < argc) {
      work = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else {
      std::fprintf(stderr, "usage: %s [--work-dir DIR] [--only N[,N...]]\n", argv[0]);
      return 1;
    }
  }
  fs::create_directories(work);
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  int failures = 0;
  auto report = [&](int n, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d: %s  %s [%.1fs]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, c1_mask_oracle);
  report(2, c2_sbv_trace);
  report(3, c3_diagnostics);
  report(4, c4_gradients);
  report(5, c5_backdoor_finetune);

  bool need_suite = false;
  for (int n = 6; n <= 12; ++n) need_suite = need_suite || wanted(n);
  if (need_suite) {
    const fs::path cache = work / "cache_run1";
    fs::remove_all(cache);
    Runner runner(cache);
    const auto t0 = std::chrono::steady_clock::now();
    Suite suite;
    std::string suite_error;
    try {
      suite = run_suite(runner);
    } catch (const std::exception& e) {
      suite_error = e.what();
    }
    const double suite_seconds = seconds_since(t0);
    std::printf("suite: %zu reports, %zu models trained, %.0fs\n", suite.size(), runner.trained_count(),
                suite_seconds);
    auto from_suite = [&](int n, const std::function<Outcome()>& fn) {
      report(n, [&]() -> Outcome {
        if (!suite_error.empty()) return {false, "suite failed: " + suite_error};
        return fn();
      });
    };
    from_suite(6, [&] { return c6_sbv_dominance(suite, suite_seconds); });
    from_suite(7, [&] { return c7_k_monotone(suite); });
    from_suite(8, [&] { return c8_sparsity(suite); });
    from_suite(9, [&] { return c9_dichotomy(suite); });
    from_suite(10, [&] { return c10_ibvs(suite); });
    from_suite(11, [&] { return c11_lambda_sweep(suite); });
    from_suite(12, [&] { return c12_determinism(work, suite, cache); });
  }
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
