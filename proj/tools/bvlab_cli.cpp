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

// bvlab command-line front end. Exit codes: 0 success, 1 usage error,
// 2 validation error (bad arguments, configs or input files), 3 runtime or
// training error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bvlab/errors.hpp"
#include "bvlab/experiment.hpp"
#include "bvlab/lab/eval.hpp"
#include "bvlab/merging.hpp"
#include "bvlab/report.hpp"
#include "bvlab/tensor_store.hpp"
#include "bvlab/util.hpp"
#include "bvlab/vector_ops.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace bvlab;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

ExperimentConfig load_config(const std::string& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

TaskVector load_delta(const std::string& path) { return TaskVector(load_checkpoint(path)); }

lab::ModelSpec spec_for(const NamedTensorMap& params, const TestbedConfig& tb) {
  auto spec = lab::ModelSpec::infer(params, tb.data.num_classes, tb.logit_scale);
  if (spec.input_dim != tb.data.input_dim()) {
    throw ValidationError("checkpoint input size does not match the testbed image size");
  }
  return spec;
}

void note(const std::string& msg) { std::cerr << msg << "\n"; }

// CSV of rows that carry an extra key (trajectory, lambda sweep).
std::string extra_rows_csv(const Report& rep, const std::string& key) {
  std::ostringstream out;
  out << key << ",CA_mean,CA_std,BA_mean,BA_std,ASR_mean,ASR_std\n";
  auto f = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (const auto& r : rep.rows) {
    const auto it = r.extra.find(key);
    if (it == r.extra.end()) continue;
    out << format_number(it->second) << ',' << f(r.ca.mean) << ',' << f(r.ca.std) << ','
        << f(r.ba.mean) << ',' << f(r.ba.std) << ',' << f(r.asr.mean) << ',' << f(r.asr.std) << "\n";
  }
  return out.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor-vector lab: task arithmetic, backdoor merging and IBVS on a synthetic testbed"};
  app.require_subcommand(1);

  // pretrain
  std::string cfg_path, out_path;
  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the trunk on the testbed corpus");
  pretrain->add_option("--config", cfg_path, "Experiment config (JSON)")->required();
  pretrain->add_option("--out", out_path, "Output checkpoint")->required();

  // finetune
  std::string pre_path, task = "task0", attack = "none", trigger_path, injected = "white_square";
  std::uint64_t seed = 0;
  int target = 0;
  std::optional<float> alpha;
  auto* finetune = app.add_subcommand("finetune", "Clean or backdoored fine-tune from a pre-trained checkpoint");
  finetune->add_option("--pre", pre_path, "Pre-trained checkpoint")->required();
  finetune->add_option("--task", task, "Task id (task<i> or base<i>)")->required();
  finetune->add_option("--seed", seed, "Training seed")->required();
  finetune->add_option("--attack", attack, "none | injected | inherent")
      ->check(CLI::IsMember({"none", "injected", "inherent"}));
  finetune->add_option("--target", target, "Target class of the backdoor");
  finetune->add_option("--alpha", alpha, "Backdoor loss weight");
  finetune->add_option("--trigger", trigger_path, "Trigger JSON (default: built or optimized)");
  finetune->add_option("--injected-trigger", injected, "white_square | wavelet");
  finetune->add_option("--config", cfg_path, "Experiment config supplying the testbed");
  finetune->add_option("--out", out_path, "Output checkpoint")->required();

  // trigger-opt
  int steps = 100;
  auto* topt = app.add_subcommand("trigger-opt", "Optimize an inherent trigger against a pre-trained model");
  topt->add_option("--pre", pre_path, "Pre-trained checkpoint")->required();
  topt->add_option("--target", target, "Target class")->required();
  topt->add_option("--steps", steps, "Ascent steps")->required();
  topt->add_option("--task", task, "Task whose head and samples are used");
  topt->add_option("--seed", seed, "Initialization and sampling seed");
  topt->add_option("--config", cfg_path, "Experiment config supplying the testbed");
  topt->add_option("--out", out_path, "Output trigger JSON")->required();

  // bv
  std::string bd_path, clean_path;
  auto* bv = app.add_subcommand("bv", "Backdoor vector: backdoored minus clean");
  bv->add_option("--backdoored", bd_path, "Backdoored checkpoint")->required();
  bv->add_option("--clean", clean_path, "Clean checkpoint")->required();
  bv->add_option("--out", out_path, "Output delta")->required();

  // sbv
  std::string bd_delta;
  std::vector<std::string> clean_deltas;
  std::string mode = "sc", scope = "per_tensor";
  auto* sbvc = app.add_subcommand("sbv", "Sparse backdoor vector from one backdoored and k clean deltas");
  sbvc->add_option("--backdoored-delta", bd_delta, "Task vector of the backdoored model")->required();
  sbvc->add_option("--clean-deltas", clean_deltas, "Task vectors of clean models")->required();
  sbvc->add_option("--mode", mode, "sc | rnd")->check(CLI::IsMember({"sc", "rnd"}));
  sbvc->add_option("--seed", seed, "Shuffle seed for rnd");
  sbvc->add_option("--scope", scope, "Shuffle scope for rnd: per_tensor | global")
      ->check(CLI::IsMember({"per_tensor", "global"}));
  sbvc->add_option("--out", out_path, "Output delta")->required();

  // merge
  std::vector<std::string> deltas;
  std::string strategy = "ta";
  float lambda = 0.1f, trim = 0.2f;
  auto* merge = app.add_subcommand("merge", "Merge task vectors into a pre-trained checkpoint");
  merge->add_option("--pre", pre_path, "Pre-trained checkpoint")->required();
  merge->add_option("--deltas", deltas, "Task vectors to merge")->required();
  merge->add_option("--strategy", strategy, "ta | avg | ties")->check(CLI::IsMember({"ta", "avg", "ties"}));
  merge->add_option("--lambda", lambda, "Scaling coefficient (ta, ties)");
  merge->add_option("--trim", trim, "Kept fraction for ties");
  merge->add_option("--out", out_path, "Output checkpoint")->required();

  // defend
  std::string delta_path, ibvs_path;
  float lambda_ibvs = 0.3f;
  auto* defend = app.add_subcommand("defend", "Subtract an injected-trigger BV from a merged delta");
  defend->add_option("--delta", delta_path, "Merged delta")->required();
  defend->add_option("--ibvs-bv", ibvs_path, "Defender backdoor vector")->required();
  defend->add_option("--lambda-ibvs", lambda_ibvs, "Subtraction coefficient")->required();
  defend->add_option("--out", out_path, "Output delta")->required();

  // eval
  std::string model_path;
  std::optional<int> eval_target;
  bool exclude_target = false;
  auto* eval = app.add_subcommand("eval", "Clean accuracy and optional ASR of a checkpoint");
  eval->add_option("--model", model_path, "Checkpoint")->required();
  eval->add_option("--task", task, "Task id")->required();
  eval->add_option("--trigger", trigger_path, "Trigger JSON");
  eval->add_option("--target", eval_target, "Target class for ASR");
  eval->add_flag("--exclude-target", exclude_target, "Drop true-target images from the ASR denominator");
  eval->add_option("--config", cfg_path, "Experiment config supplying the testbed");

  // exp run
  std::string out_dir, cache_dir;
  auto* exp = app.add_subcommand("exp", "Experiment runner");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "Run an experiment config and write reports");
  run->add_option("--config", cfg_path, "Experiment config (JSON)")->required();
  run->add_option("--out-dir", out_dir, "Directory for reports")->required();
  run->add_option("--cache-dir", cache_dir, "Checkpoint cache directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*pretrain) {
      const auto cfg = load_config(cfg_path);
      const int n = cfg.scenario == Scenario::kSingleTask ? 1 : cfg.effective_n_models();
      const auto result = lab::pretrain(cfg.testbed.model_spec(), pretrain_corpus(cfg.testbed, n),
                                        cfg.testbed.pretrain);
      save_checkpoint(result.params, out_path);
      note("pretrained on " + std::to_string(cfg.testbed.base_tasks + n) + " tasks; final loss " +
           format_number(result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()));
    } else if (*finetune) {
      const auto cfg = config_or_default(cfg_path);
      const auto pre = load_checkpoint(pre_path);
      const auto spec = spec_for(pre, cfg.testbed);
      const auto data = make_task(cfg.testbed, task);
      lab::TrainConfig tc = cfg.testbed.finetune;
      tc.seed = seed;
      if (alpha) tc.alpha = *alpha;
      NamedTensorMap out;
      if (attack == "none") {
        out = lab::finetune_clean(pre, spec, data, tc).params;
      } else {
        lab::Trigger trig;
        if (!trigger_path.empty()) {
          const auto bytes = read_file(trigger_path);
          trig = lab::trigger_from_json(std::string(bytes.begin(), bytes.end()));
        } else if (attack == "injected") {
          trig = lab::make_injected_trigger(lab::parse_injected_pattern(injected), cfg.testbed.patch(),
                                            cfg.testbed.data.height, cfg.testbed.data.width);
        } else {
          lab::InherentTriggerOptions o;
          o.steps = cfg.testbed.inherent_steps;
          o.step_size = cfg.testbed.inherent_step_size;
          o.num_samples = cfg.testbed.inherent_samples;
          o.seed = seed;
          trig = lab::optimize_inherent_trigger(pre, spec, data, target, cfg.testbed.patch(), o).trigger;
        }
        out = lab::finetune_backdoored(pre, spec, data, trig, target, tc).params;
      }
      save_checkpoint(out, out_path);
    } else if (*topt) {
      const auto cfg = config_or_default(cfg_path);
      const auto pre = load_checkpoint(pre_path);
      const auto spec = spec_for(pre, cfg.testbed);
      lab::InherentTriggerOptions o;
      o.steps = steps;
      o.step_size = cfg.testbed.inherent_step_size;
      o.num_samples = cfg.testbed.inherent_samples;
      o.seed = seed;
      const auto r = lab::optimize_inherent_trigger(pre, spec, make_task(cfg.testbed, task), target,
                                                    cfg.testbed.patch(), o);
      if (!r.improved) note("warning: optimization did not improve on the initial patch");
      write_file(out_path, lab::trigger_to_json(r.trigger));
      note("objective " + format_number(r.initial_objective) + " -> " + format_number(r.best_objective));
    } else if (*bv) {
      save_checkpoint(backdoor_vector(load_checkpoint(bd_path), load_checkpoint(clean_path)).map(), out_path);
    } else if (*sbvc) {
      std::vector<TaskVector> cds;
      for (const auto& p : clean_deltas) cds.push_back(load_delta(p));
      const auto out = sbv(load_delta(bd_delta), cds, parse_sparsification(mode), seed,
                           parse_shuffle_scope(scope));
      save_checkpoint(out.map(), out_path);
    } else if (*merge) {
      const auto pre = load_checkpoint(pre_path);
      std::vector<TaskVector> tvs;
      for (const auto& p : deltas) tvs.push_back(load_delta(p));
      NamedTensorMap out;
      if (strategy == "ta") {
        out = merge_task_arithmetic(pre, tvs, lambda);
      } else if (strategy == "avg") {
        out = apply_vector(pre, merge_average(tvs), 1.0f);
      } else {
        out = apply_vector(pre, merge_ties(tvs, trim), lambda);
      }
      out.meta["role"] = "merged";
      save_checkpoint(out, out_path);
    } else if (*defend) {
      save_checkpoint(ibvs_defend(load_delta(delta_path), load_delta(ibvs_path), lambda_ibvs).map(), out_path);
    } else if (*eval) {
      const auto cfg = config_or_default(cfg_path);
      const auto model = load_checkpoint(model_path);
      const auto spec = spec_for(model, cfg.testbed);
      const auto data = make_task(cfg.testbed, task);
      nlohmann::json j = {{"task", task}, {"accuracy", std::stod(format_number(lab::eval_accuracy(model, spec, data)))}};
      if (!trigger_path.empty()) {
        if (!eval_target) throw ValidationError("--trigger requires --target");
        const auto bytes = read_file(trigger_path);
        const auto trig = lab::trigger_from_json(std::string(bytes.begin(), bytes.end()));
        j["target"] = *eval_target;
        j["asr"] = std::stod(format_number(lab::eval_asr(model, spec, data, trig, *eval_target, exclude_target)));
      } else if (eval_target) {
        throw ValidationError("--target requires --trigger");
      }
      std::cout << j.dump(2) << "\n";
    } else if (*run) {
      const auto cfg = load_config(cfg_path);
      Runner runner(cache_dir.empty() ? std::nullopt : std::optional<fs::path>(cache_dir));
      std::vector<std::pair<std::string, TransferGrid>> grids;
      const Report rep = cfg.experiment == ExperimentKind::kTransferGrid && cfg.variants.empty()
                             ? runner.run_transfer(cfg, &grids)
                             : runner.run(cfg);
      fs::create_directories(out_dir);
      emit_report(rep, ReportFormat::kJson, fs::path(out_dir) / "report.json");
      emit_report(rep, ReportFormat::kCsv, fs::path(out_dir) / "report.csv");
      for (const auto& [name, g] : grids) write_file(fs::path(out_dir) / (name + ".csv"), g.to_csv());
      if (cfg.experiment == ExperimentKind::kTrajectory) {
        write_file(fs::path(out_dir) / "trajectory.csv", extra_rows_csv(rep, "n_merged"));
      } else if (cfg.experiment == ExperimentKind::kLambdaSweep) {
        write_file(fs::path(out_dir) / "lambda_sweep.csv", extra_rows_csv(rep, "lambda_bv"));
      }
      note("wrote " + std::to_string(rep.rows.size()) + " rows to " + out_dir + " (" +
           std::to_string(runner.trained_count()) + " models trained)");
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
