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
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bvlab/lab/data.hpp"
#include "bvlab/lab/model.hpp"
#include "bvlab/lab/train.hpp"
#include "bvlab/lab/trigger.hpp"
#include "bvlab/merging.hpp"
#include "bvlab/report.hpp"
#include "bvlab/vector_ops.hpp"
#include "json.hpp"

namespace bvlab {

enum class Scenario { kSingleTask, kMultiTask };
enum class Attack { kNone, kInjected, kInherent };
enum class BvMerging { kNone, kAvg, kSbvSc, kSbvRnd };
enum class Defense { kNone, kIbvs };
enum class ExperimentKind { kMerge, kTrajectory, kTransferGrid, kDefense, kLambdaSweep, kSparsity };

std::string to_string(Scenario v);
std::string to_string(Attack v);
std::string to_string(BvMerging v);
std::string to_string(Defense v);
std::string to_string(ExperimentKind v);

/// Everything that defines the synthetic testbed: data, model, optimizers
/// and trigger geometry. Shared by every experiment that uses it.
struct TestbedConfig {
  lab::TaskGenParams data;
  std::uint64_t data_seed = 0;
  std::vector<int> hidden = {128, 64};
  int embed_dim = 32;
  float logit_scale = 10.0f;
  int base_tasks = 4;  // extra pre-training tasks besides the downstream ones
  // Pre-training keeps a constant rate; fine-tunes use the cosine default.
  lab::TrainConfig pretrain = [] {
    lab::TrainConfig c;
    c.seed = 1;
    c.lr_schedule = "constant";
    return c;
  }();
  lab::TrainConfig finetune;
  int patch_h = 3;
  int patch_w = 3;
  int inherent_steps = 100;
  float inherent_step_size = 0.05f;
  int inherent_samples = 512;

  lab::ModelSpec model_spec() const;
  lab::PatchSpec patch() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TestbedConfig from_json(const nlohmann::json& j);
};

/// Downstream task id for slot i ("task<i>") and pre-training base task id.
std::string task_id(int i);
std::string base_task_id(int i);
lab::TaskDataset make_task(const TestbedConfig& tb, const std::string& id);

/// Pre-training corpus: tb.base_tasks base tasks followed by the downstream
/// tasks task0..task{n_tasks-1}. The pre-trained model has seen every
/// downstream distribution, as a broad foundation model would.
std::vector<lab::TaskDataset> pretrain_corpus(const TestbedConfig& tb, int n_tasks);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kMerge;
  Scenario scenario = Scenario::kSingleTask;
  std::optional<int> n_models;  // default 10 single-task, 6 multi-task
  int adversary_slot = 0;
  Attack attack = Attack::kInherent;
  std::string injected_trigger = "white_square";
  BvMerging bv_merging = BvMerging::kNone;
  int k = 5;
  MergeTag strategy = MergeTag::kTaskArithmetic;  // ta | avg | ties
  std::optional<float> lambda;                    // default 0.1 single-task, 0.2 multi-task
  float trim = 0.2f;
  Defense defense = Defense::kNone;
  float lambda_ibvs = 0.3f;
  std::string defender_trigger = "wavelet";
  int defender_target = 0;
  std::uint64_t defender_seed = 0;
  std::string probe_trigger = "white_square";  // trigger probed when attack = none
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<int> targets = {0, 1, 2, 3, 4};
  bool asr_exclude_target = false;
  float grid_step = 0.05f;   // transfer grids
  float sweep_step = 0.1f;   // lambda sweeps
  TestbedConfig testbed;
  std::vector<nlohmann::json> variants;  // per-row overrides merged into this config

  int effective_n_models() const;
  float effective_lambda() const;
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected so that typos do not silently fall back to
  /// defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

/// ASR of one attack evaluated on base + l1 * bv1 + l2 * bv2 for every pair
/// of grid values. asr[i][j] uses lambdas[i] for bv1 and lambdas[j] for bv2.
struct TransferGrid {
  std::vector<double> lambdas;
  std::vector<std::vector<double>> asr;

  /// Mean over l1 of ASR(l1, max l2) - ASR(l1, 0): how much adding bv2
  /// raises the first attack.
  double marginal_gain() const;
  std::string to_csv() const;
};

struct EvalContext {
  const lab::ModelSpec* spec = nullptr;
  const lab::TaskDataset* data = nullptr;
  const lab::Trigger* trigger = nullptr;
  int target = 0;
  bool exclude_target = false;
};

std::vector<double> grid_values(float step);
TransferGrid run_transfer_grid(const TaskVector& bv1, const TaskVector& bv2,
                               const NamedTensorMap& base, const std::vector<double>& lambdas,
                               const EvalContext& ctx);

/// Runs experiments over one shared set of trained models. Every trained
/// checkpoint is memoized by a key covering the testbed, the pre-trained
/// weights' content hash and the run's own settings; with a cache
/// directory the checkpoints also persist across processes.
class Runner {
 public:
  explicit Runner(std::optional<std::filesystem::path> cache_dir = std::nullopt);
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  /// Dispatches on cfg.experiment and expands cfg.variants into rows.
  Report run(const ExperimentConfig& cfg);

  Report run_single_task(const ExperimentConfig& cfg);
  Report run_multi_task(const ExperimentConfig& cfg);
  /// Rows carry extra["n_merged"] = m for the merge of the first m models.
  Report run_trajectory(const ExperimentConfig& cfg);
  /// Rows for no defense and for IBVS at cfg.lambda_ibvs.
  Report run_defense(const ExperimentConfig& cfg);
  /// theta_clean + l * BV for l in [0, 1]; rows carry extra["lambda_bv"].
  Report run_lambda_sweep(const ExperimentConfig& cfg);
  /// Paired grids: inherent attack with the injected BV added, and the
  /// reverse. Grids are returned as (name, grid) when `grids` is non-null.
  Report run_transfer(const ExperimentConfig& cfg,
                      std::vector<std::pair<std::string, TransferGrid>>* grids = nullptr);
  /// Hoyer sparsity of single BVs vs SBV_SC over seeds x targets.
  Report run_sparsity(const ExperimentConfig& cfg);

  /// Number of models trained (not served from memory or disk) so far.
  std::size_t trained_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Report run_single_task(const ExperimentConfig& cfg);
Report run_multi_task(const ExperimentConfig& cfg);
Report run_trajectory(const ExperimentConfig& cfg);
Report run_defense(const ExperimentConfig& cfg);

}  // namespace bvlab
