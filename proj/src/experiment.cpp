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

#include "bvlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "bvlab/errors.hpp"
#include "bvlab/lab/eval.hpp"
#include "bvlab/util.hpp"

namespace bvlab {

using nlohmann::json;

// ---------------------------------------------------------------- enums

std::string to_string(Scenario v) { return v == Scenario::kSingleTask ? "single_task" : "multi_task"; }

std::string to_string(Attack v) {
  switch (v) {
    case Attack::kNone: return "none";
    case Attack::kInjected: return "injected";
    case Attack::kInherent: return "inherent";
  }
  return "?";
}

std::string to_string(BvMerging v) {
  switch (v) {
    case BvMerging::kNone: return "none";
    case BvMerging::kAvg: return "avg";
    case BvMerging::kSbvSc: return "sbv_sc";
    case BvMerging::kSbvRnd: return "sbv_rnd";
  }
  return "?";
}

std::string to_string(Defense v) { return v == Defense::kNone ? "none" : "ibvs"; }

std::string to_string(ExperimentKind v) {
  switch (v) {
    case ExperimentKind::kMerge: return "merge";
    case ExperimentKind::kTrajectory: return "trajectory";
    case ExperimentKind::kTransferGrid: return "transfer_grid";
    case ExperimentKind::kDefense: return "defense";
    case ExperimentKind::kLambdaSweep: return "lambda_sweep";
    case ExperimentKind::kSparsity: return "sparsity";
  }
  return "?";
}

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> all, const char* what) {
  for (E e : all) {
    if (to_string(e) == s) return e;
  }
  throw ValidationError(std::string("unknown ") + what + " \"" + s + "\"");
}

// Reads fields from a JSON object and rejects keys that were never read.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ValidationError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where_ + "." + key + " has the wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ValidationError("unknown field " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json train_json(const lab::TrainConfig& c, bool with_seed) {
  json j = {{"epochs", c.epochs},           {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
            {"alpha", c.alpha},             {"grad_clip", c.grad_clip},
            {"lr_schedule", c.lr_schedule}};
  if (with_seed) j["seed"] = c.seed;
  return j;
}

lab::TrainConfig train_from_json(const json& j, lab::TrainConfig c, const std::string& where,
                                 bool with_seed) {
  Fields f(j, where);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("learning_rate", c.learning_rate);
  f.get("momentum", c.momentum);
  f.get("alpha", c.alpha);
  f.get("grad_clip", c.grad_clip);
  f.get("lr_schedule", c.lr_schedule);
  if (with_seed) f.get("seed", c.seed);
  f.finish();
  return c;
}

}  // namespace

// ---------------------------------------------------------------- testbed

lab::ModelSpec TestbedConfig::model_spec() const {
  lab::ModelSpec s;
  s.input_dim = data.input_dim();
  s.hidden = hidden;
  s.embed_dim = embed_dim;
  s.num_classes = data.num_classes;
  s.logit_scale = logit_scale;
  return s;
}

lab::PatchSpec TestbedConfig::patch() const {
  return lab::PatchSpec::bottom_right(data.height, data.width, patch_h, patch_w);
}

void TestbedConfig::validate() const {
  data.validate();
  model_spec().validate();
  pretrain.validate();
  finetune.validate();
  patch();
  if (base_tasks < 0) throw ValidationError("base_tasks must be >= 0");
  if (inherent_steps < 0 || inherent_samples <= 0 || !(inherent_step_size > 0.0f)) {
    throw ValidationError("invalid inherent trigger settings");
  }
}

json TestbedConfig::to_json() const {
  return {
      {"data",
       {{"height", data.height},
        {"width", data.width},
        {"num_classes", data.num_classes},
        {"n_train", data.n_train},
        {"n_test", data.n_test},
        {"proto_mean", data.proto_mean},
        {"proto_std", data.proto_std},
        {"noise_sigma", data.noise_sigma},
        {"noise_corr", data.noise_corr},
        {"noise_white", data.noise_white}}},
      {"data_seed", data_seed},
      {"hidden", hidden},
      {"embed_dim", embed_dim},
      {"logit_scale", logit_scale},
      {"base_tasks", base_tasks},
      {"pretrain", train_json(pretrain, true)},
      {"finetune", train_json(finetune, false)},
      {"patch", {patch_h, patch_w}},
      {"inherent",
       {{"steps", inherent_steps}, {"step_size", inherent_step_size}, {"samples", inherent_samples}}},
  };
}

TestbedConfig TestbedConfig::from_json(const json& j) {
  TestbedConfig tb;
  Fields f(j, "testbed");
  if (const json* d = f.sub("data")) {
    Fields g(*d, "testbed.data");
    g.get("height", tb.data.height);
    g.get("width", tb.data.width);
    g.get("num_classes", tb.data.num_classes);
    g.get("n_train", tb.data.n_train);
    g.get("n_test", tb.data.n_test);
    g.get("proto_mean", tb.data.proto_mean);
    g.get("proto_std", tb.data.proto_std);
    g.get("noise_sigma", tb.data.noise_sigma);
    g.get("noise_corr", tb.data.noise_corr);
    g.get("noise_white", tb.data.noise_white);
    g.finish();
  }
  f.get("data_seed", tb.data_seed);
  f.get("hidden", tb.hidden);
  f.get("embed_dim", tb.embed_dim);
  f.get("logit_scale", tb.logit_scale);
  f.get("base_tasks", tb.base_tasks);
  if (const json* p = f.sub("pretrain")) tb.pretrain = train_from_json(*p, tb.pretrain, "testbed.pretrain", true);
  if (const json* p = f.sub("finetune")) tb.finetune = train_from_json(*p, tb.finetune, "testbed.finetune", false);
  std::vector<int> patch{tb.patch_h, tb.patch_w};
  f.get("patch", patch);
  if (patch.size() != 2) throw ValidationError("testbed.patch must be [h, w]");
  tb.patch_h = patch[0];
  tb.patch_w = patch[1];
  if (const json* p = f.sub("inherent")) {
    Fields g(*p, "testbed.inherent");
    g.get("steps", tb.inherent_steps);
    g.get("step_size", tb.inherent_step_size);
    g.get("samples", tb.inherent_samples);
    g.finish();
  }
  f.finish();
  tb.validate();
  return tb;
}

std::string task_id(int i) { return "task" + std::to_string(i); }
std::string base_task_id(int i) { return "base" + std::to_string(i); }

lab::TaskDataset make_task(const TestbedConfig& tb, const std::string& id) {
  return lab::gen_task(id, tb.data, tb.data_seed);
}

std::vector<lab::TaskDataset> pretrain_corpus(const TestbedConfig& tb, int n_tasks) {
  std::vector<lab::TaskDataset> corpus;
  for (int i = 0; i < tb.base_tasks; ++i) corpus.push_back(make_task(tb, base_task_id(i)));
  for (int i = 0; i < n_tasks; ++i) corpus.push_back(make_task(tb, task_id(i)));
  return corpus;
}

// ---------------------------------------------------------------- config

int ExperimentConfig::effective_n_models() const {
  return n_models.value_or(scenario == Scenario::kSingleTask ? 10 : 6);
}

float ExperimentConfig::effective_lambda() const {
  return lambda.value_or(scenario == Scenario::kSingleTask ? 0.1f : 0.2f);
}

void ExperimentConfig::validate() const {
  testbed.validate();
  const int n = effective_n_models();
  if (n < 1) throw ValidationError("n_models must be >= 1");
  if (adversary_slot < 0 || adversary_slot >= n) {
    throw ValidationError("adversary_slot must be < n_models");
  }
  if (!(effective_lambda() > 0.0f) || !std::isfinite(effective_lambda())) {
    throw ValidationError("lambda must be > 0");
  }
  if (k < 1) throw ValidationError("k must be >= 1");
  if (strategy != MergeTag::kTaskArithmetic && strategy != MergeTag::kAverage &&
      strategy != MergeTag::kTies) {
    throw ValidationError("strategy must be ta, avg or ties");
  }
  if (!(trim > 0.0f && trim <= 1.0f)) throw ValidationError("trim must lie in (0, 1]");
  if (!(lambda_ibvs >= 0.0f) || !std::isfinite(lambda_ibvs)) {
    throw ValidationError("lambda_ibvs must be >= 0");
  }
  lab::parse_injected_pattern(injected_trigger);
  lab::parse_injected_pattern(defender_trigger);
  if (probe_trigger != "inherent") lab::parse_injected_pattern(probe_trigger);
  if (seeds.empty()) throw ValidationError("seeds must not be empty");
  if (targets.empty()) throw ValidationError("targets must not be empty");
  const int nc = testbed.data.num_classes;
  for (int t : targets) {
    if (t < 0 || t >= nc) throw ValidationError("target class " + std::to_string(t) + " out of range");
  }
  if (defender_target < 0 || defender_target >= nc) throw ValidationError("defender_target out of range");
  if (!(grid_step > 0.0f && grid_step <= 1.0f)) throw ValidationError("grid_step must lie in (0, 1]");
  if (!(sweep_step > 0.0f && sweep_step <= 1.0f)) throw ValidationError("sweep_step must lie in (0, 1]");
  if (experiment == ExperimentKind::kDefense && defense != Defense::kIbvs) {
    throw ValidationError("the defense experiment requires defense = ibvs");
  }
}

json ExperimentConfig::to_json() const {
  json j = {{"experiment", to_string(experiment)},
            {"scenario", to_string(scenario)},
            {"n_models", effective_n_models()},
            {"adversary_slot", adversary_slot},
            {"attack", to_string(attack)},
            {"injected_trigger", injected_trigger},
            {"bv_merging", to_string(bv_merging)},
            {"k", k},
            {"strategy", to_string(strategy)},
            {"lambda", effective_lambda()},
            {"trim", trim},
            {"defense", to_string(defense)},
            {"lambda_ibvs", lambda_ibvs},
            {"defender_trigger", defender_trigger},
            {"defender_target", defender_target},
            {"defender_seed", defender_seed},
            {"probe_trigger", probe_trigger},
            {"seeds", seeds},
            {"targets", targets},
            {"asr_exclude_target", asr_exclude_target},
            {"grid_step", grid_step},
            {"sweep_step", sweep_step},
            {"testbed", testbed.to_json()}};
  if (!variants.empty()) j["variants"] = variants;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "config");
  std::string s;
  auto read_enum = [&]<typename E>(const char* key, E& out, std::initializer_list<E> all) {
    s.clear();
    f.get(key, s);
    if (!s.empty()) out = parse_enum(s, all, key);
  };
  read_enum("experiment", c.experiment,
            {ExperimentKind::kMerge, ExperimentKind::kTrajectory, ExperimentKind::kTransferGrid,
             ExperimentKind::kDefense, ExperimentKind::kLambdaSweep, ExperimentKind::kSparsity});
  read_enum("scenario", c.scenario, {Scenario::kSingleTask, Scenario::kMultiTask});
  read_enum("attack", c.attack, {Attack::kNone, Attack::kInjected, Attack::kInherent});
  read_enum("bv_merging", c.bv_merging,
            {BvMerging::kNone, BvMerging::kAvg, BvMerging::kSbvSc, BvMerging::kSbvRnd});
  read_enum("defense", c.defense, {Defense::kNone, Defense::kIbvs});
  s.clear();
  f.get("strategy", s);
  if (!s.empty()) c.strategy = parse_merge_tag(s);
  f.get("n_models", c.n_models);
  f.get("adversary_slot", c.adversary_slot);
  f.get("injected_trigger", c.injected_trigger);
  f.get("k", c.k);
  f.get("lambda", c.lambda);
  f.get("trim", c.trim);
  f.get("lambda_ibvs", c.lambda_ibvs);
  f.get("defender_trigger", c.defender_trigger);
  f.get("defender_target", c.defender_target);
  f.get("defender_seed", c.defender_seed);
  f.get("probe_trigger", c.probe_trigger);
  f.get("seeds", c.seeds);
  f.get("targets", c.targets);
  f.get("asr_exclude_target", c.asr_exclude_target);
  f.get("grid_step", c.grid_step);
  f.get("sweep_step", c.sweep_step);
  if (const json* t = f.sub("testbed")) c.testbed = TestbedConfig::from_json(*t);
  if (const json* v = f.sub("variants")) {
    if (!v->is_array()) throw ValidationError("variants must be an array of objects");
    for (const auto& item : *v) {
      if (!item.is_object()) throw ValidationError("variants must be an array of objects");
      c.variants.push_back(item);
    }
  }
  f.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------- grids

std::vector<double> grid_values(float step) {
  if (!(step > 0.0f && step <= 1.0f)) throw ValidationError("grid step must lie in (0, 1]");
  const int n = static_cast<int>(std::lround(1.0 / step));
  std::vector<double> v;
  for (int i = 0; i <= n; ++i) v.push_back(std::min(1.0, i * static_cast<double>(step)));
  if (v.back() < 1.0) v.push_back(1.0);
  return v;
}

double TransferGrid::marginal_gain() const {
  if (asr.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& row : asr) sum += row.back() - row.front();
  return sum / static_cast<double>(asr.size());
}

std::string TransferGrid::to_csv() const {
  return matrix_to_csv("lambda1\\lambda2", lambdas, lambdas, asr);
}

TransferGrid run_transfer_grid(const TaskVector& bv1, const TaskVector& bv2,
                               const NamedTensorMap& base, const std::vector<double>& lambdas,
                               const EvalContext& ctx) {
  validate_compatible(base, bv1.map());
  validate_compatible(base, bv2.map());
  if (lambdas.empty()) throw ValidationError("empty lambda grid");
  if (!ctx.spec || !ctx.data || !ctx.trigger) throw ValidationError("incomplete evaluation context");
  TransferGrid g;
  g.lambdas = lambdas;
  g.asr.assign(lambdas.size(), std::vector<double>(lambdas.size()));
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      const std::vector<TaskVector> vs{bv1, bv2};
      const std::vector<float> cs{static_cast<float>(lambdas[i]), static_cast<float>(lambdas[j])};
      const NamedTensorMap theta = apply_vector(base, linear_combine(vs, cs), 1.0f);
      g.asr[i][j] = lab::eval_asr(theta, *ctx.spec, *ctx.data, *ctx.trigger, ctx.target,
                                  ctx.exclude_target);
    }
  }
  return g;
}

// ---------------------------------------------------------------- runner

namespace {

// Pre-trained model plus the datasets of one testbed.
struct Env {
  TestbedConfig tb;
  lab::ModelSpec spec;
  std::vector<lab::TaskDataset> tasks;  // downstream tasks task0..task{n-1}
  const NamedTensorMap* pre = nullptr;
  std::string pre_hash;
  std::string key;  // testbed JSON + downstream count
};

struct Stored {
  NamedTensorMap model;
  std::string hash;
};

// Metrics of one merged model for one (seed, target) cell.
struct CellMetrics {
  double ca = 0.0;
  std::optional<double> ba;
  double asr = 0.0;
};

}  // namespace

struct Runner::Impl {
  std::optional<std::filesystem::path> cache_dir;
  std::map<std::string, std::unique_ptr<Env>> envs;
  std::map<std::string, Stored> models;
  std::map<std::string, lab::Trigger> triggers;
  std::size_t trained = 0;
  std::map<std::string, std::string>* artifacts = nullptr;  // report being assembled

  // -- memoized artifacts

  const NamedTensorMap& model(const json& key, const std::string& label,
                              const std::function<NamedTensorMap()>& build) {
    const std::string k = key.dump();
    auto it = models.find(k);
    if (it == models.end()) {
      Stored s;
      const std::string file = sha256_hex(k) + ".ntc";
      if (cache_dir && std::filesystem::exists(*cache_dir / file)) {
        s.model = load_checkpoint(*cache_dir / file);
      } else {
        s.model = build();
        ++trained;
        if (cache_dir) {
          std::filesystem::create_directories(*cache_dir);
          save_checkpoint(s.model, *cache_dir / file);
        }
      }
      s.hash = content_hash(s.model);
      it = models.emplace(k, std::move(s)).first;
    }
    if (artifacts) (*artifacts)[label] = it->second.hash;
    return it->second.model;
  }

  Env& env(const TestbedConfig& tb, int n_tasks) {
    const std::string key = tb.to_json().dump() + "/" + std::to_string(n_tasks);
    auto it = envs.find(key);
    if (it == envs.end()) {
      auto e = std::make_unique<Env>();
      e->tb = tb;
      e->spec = tb.model_spec();
      e->key = key;
      for (int i = 0; i < n_tasks; ++i) e->tasks.push_back(make_task(tb, task_id(i)));
      it = envs.emplace(key, std::move(e)).first;
    }
    Env& e = *it->second;
    const std::string label = "pretrained/" + std::to_string(n_tasks) + "tasks";
    e.pre = &model({{"op", "pretrain"}, {"testbed", tb.to_json()}, {"tasks", n_tasks}}, label, [&] {
      return lab::pretrain(e.spec, pretrain_corpus(tb, n_tasks), tb.pretrain).params;
    });
    e.pre_hash = content_hash(*e.pre);
    return e;
  }

  json base_key(const Env& e, const char* op, int task, std::uint64_t seed) const {
    return {{"op", op},
            {"pre", e.pre_hash},
            {"finetune", train_json(e.tb.finetune, false)},
            {"data", e.tb.to_json().at("data")},
            {"data_seed", e.tb.data_seed},
            {"task", task_id(task)},
            {"seed", seed}};
  }

  TaskVector clean(Env& e, int task, std::uint64_t seed) {
    const auto& m = model(base_key(e, "clean", task, seed),
                          "clean/" + task_id(task) + "/" + std::to_string(seed), [&] {
                            lab::TrainConfig c = e.tb.finetune;
                            c.seed = seed;
                            return lab::finetune_clean(*e.pre, e.spec, e.tasks[task], c).params;
                          });
    return task_vector(m, *e.pre);
  }

  TaskVector backdoored(Env& e, int task, const lab::Trigger& trig, int target, std::uint64_t seed) {
    json key = base_key(e, "backdoored", task, seed);
    const std::string trig_json = lab::trigger_to_json(trig);
    key["trigger"] = sha256_hex(trig_json);
    key["target"] = target;
    const auto& m = model(key,
                          "backdoored/" + task_id(task) + "/" + trig.name + "/t" +
                              std::to_string(target) + "/" + std::to_string(seed),
                          [&] {
                            lab::TrainConfig c = e.tb.finetune;
                            c.seed = seed;
                            return lab::finetune_backdoored(*e.pre, e.spec, e.tasks[task], trig,
                                                            target, c)
                                .params;
                          });
    return task_vector(m, *e.pre);
  }

  const lab::Trigger& inherent(Env& e, int task, int target, std::uint64_t seed) {
    const std::string key = e.key + "/" + e.pre_hash + "/" + task_id(task) + "/" +
                            std::to_string(target) + "/" + std::to_string(seed);
    auto it = triggers.find(key);
    if (it == triggers.end()) {
      lab::InherentTriggerOptions o;
      o.steps = e.tb.inherent_steps;
      o.step_size = e.tb.inherent_step_size;
      o.num_samples = e.tb.inherent_samples;
      o.seed = seed;
      auto r = lab::optimize_inherent_trigger(*e.pre, e.spec, e.tasks[task], target, e.tb.patch(), o);
      it = triggers.emplace(key, std::move(r.trigger)).first;
    }
    return it->second;
  }

  lab::Trigger injected(const Env& e, const std::string& name) const {
    return lab::make_injected_trigger(lab::parse_injected_pattern(name), e.tb.patch(),
                                      e.tb.data.height, e.tb.data.width);
  }

  // -- experiment pieces

  static std::uint64_t seed_of(const std::string& what, std::uint64_t s) { return derive_seed(what, s); }

  lab::Trigger attack_trigger(Env& e, const ExperimentConfig& cfg, Attack attack, int task, int target,
                              std::uint64_t s) {
    switch (attack) {
      case Attack::kInjected: return injected(e, cfg.injected_trigger);
      case Attack::kInherent: return inherent(e, task, target, seed_of("trigger/" + std::to_string(target), s));
      case Attack::kNone:
        if (cfg.probe_trigger == "inherent") {
          return inherent(e, task, target, seed_of("trigger/" + std::to_string(target), s));
        }
        return injected(e, cfg.probe_trigger);
    }
    throw Error("unreachable");
  }

  TaskVector adversary_clean(Env& e, int task, int j, std::uint64_t s) {
    return clean(e, task, seed_of("adversary/clean/" + std::to_string(j), s));
  }

  TaskVector adversary_backdoored(Env& e, int task, const lab::Trigger& trig, int target,
                                  std::uint64_t s) {
    return backdoored(e, task, trig, target, seed_of("adversary/backdoor/" + std::to_string(target), s));
  }

  // The adversary's released delta for one cell.
  TaskVector submission(Env& e, const ExperimentConfig& cfg, int task, const lab::Trigger& trig,
                        int target, std::uint64_t s) {
    if (cfg.attack == Attack::kNone) return adversary_clean(e, task, 0, s);
    const TaskVector db = adversary_backdoored(e, task, trig, target, s);
    if (cfg.bv_merging == BvMerging::kNone) return db;
    std::vector<TaskVector> cds;
    for (int j = 0; j < cfg.k; ++j) cds.push_back(adversary_clean(e, task, j, s));
    const std::uint64_t mask_seed = seed_of("sbv", s);
    TaskVector add;
    switch (cfg.bv_merging) {
      case BvMerging::kAvg: {
        std::vector<TaskVector> bvs;
        for (const auto& c : cds) bvs.push_back(subtract(db, c));
        add = merge_average(bvs);
        break;
      }
      case BvMerging::kSbvSc: add = sbv(db, cds, SparsificationType::kSignConsistent, mask_seed); break;
      case BvMerging::kSbvRnd: add = sbv(db, cds, SparsificationType::kRandom, mask_seed); break;
      case BvMerging::kNone: break;
    }
    return task_vector(craft_submission(*e.pre, cds[0], add), *e.pre);
  }

  int slot_task(const ExperimentConfig& cfg, int slot) const {
    return cfg.scenario == Scenario::kSingleTask ? 0 : slot;
  }

  // Clean deltas of every slot; the adversary slot holds the adversary's
  // carrier (the model it would have released without attacking).
  std::vector<TaskVector> clean_slots(Env& e, const ExperimentConfig& cfg, std::uint64_t s) {
    std::vector<TaskVector> out;
    for (int i = 0; i < cfg.effective_n_models(); ++i) {
      const int task = slot_task(cfg, i);
      if (i == cfg.adversary_slot) {
        out.push_back(adversary_clean(e, task, 0, s));
      } else {
        out.push_back(clean(e, task, seed_of("victim/" + std::to_string(i), s)));
      }
    }
    return out;
  }

  NamedTensorMap merge(const Env& e, const ExperimentConfig& cfg, std::span<const TaskVector> tvs) {
    switch (cfg.strategy) {
      case MergeTag::kTaskArithmetic: return merge_task_arithmetic(*e.pre, tvs, cfg.effective_lambda());
      case MergeTag::kAverage: {
        auto out = apply_vector(*e.pre, merge_average(tvs), 1.0f);
        out.meta["role"] = "merged";
        return out;
      }
      case MergeTag::kTies: {
        auto out = apply_vector(*e.pre, merge_ties(tvs, cfg.trim), cfg.effective_lambda());
        out.meta["role"] = "merged";
        return out;
      }
      default: throw ValidationError("strategy must be ta, avg or ties");
    }
  }

  TaskVector defender_bv(Env& e, const ExperimentConfig& cfg, int task) {
    const std::uint64_t seed = seed_of("defender", cfg.defender_seed);
    const lab::Trigger trig = injected(e, cfg.defender_trigger);
    return subtract(backdoored(e, task, trig, cfg.defender_target, seed), clean(e, task, seed));
  }

  NamedTensorMap defend(Env& e, const ExperimentConfig& cfg, const NamedTensorMap& merged, int task,
                        float lambda_ibvs) {
    const TaskVector dbv = defender_bv(e, cfg, task);
    return apply_vector(*e.pre, ibvs_defend(task_vector(merged, *e.pre), dbv, lambda_ibvs), 1.0f);
  }

  double acc(const Env& e, const NamedTensorMap& theta, int task) {
    return lab::eval_accuracy(theta, e.spec, e.tasks[task]);
  }

  double asr(const Env& e, const ExperimentConfig& cfg, const NamedTensorMap& theta, int task,
             const lab::Trigger& trig, int target) {
    return lab::eval_asr(theta, e.spec, e.tasks[task], trig, target, cfg.asr_exclude_target);
  }
};

namespace {

ReportRow row_for(const ExperimentConfig& cfg, Defense defense, float lambda_ibvs) {
  ReportRow r;
  r.scenario = to_string(cfg.scenario);
  r.strategy = to_string(cfg.strategy);
  r.bv_merging = cfg.attack == Attack::kNone ? "none" : to_string(cfg.bv_merging);
  r.k = cfg.attack == Attack::kNone || cfg.bv_merging == BvMerging::kNone ? 1 : cfg.k;
  r.lambda = cfg.strategy == MergeTag::kAverage ? 1.0 / cfg.effective_n_models() : cfg.effective_lambda();
  r.defense = to_string(defense);
  r.lambda_ibvs = defense == Defense::kIbvs ? lambda_ibvs : 0.0;
  r.seed_count = static_cast<int>(cfg.seeds.size());
  return r;
}

std::string row_label(const ReportRow& r) {
  std::string s = r.scenario + "/" + r.strategy + "/" + r.bv_merging + "/k" + std::to_string(r.k) +
                  "/" + r.defense + "/" + format_number(r.lambda_ibvs);
  for (const auto& [k, v] : r.extra) s += "/" + k + "=" + format_number(v);
  return s;
}

// Accumulates cells into one aggregated row.
struct RowBuilder {
  explicit RowBuilder(ReportRow r) : row(std::move(r)) {}

  ReportRow row;
  std::vector<double> ca, ba, asr;
  std::vector<CellRecord> cells;

  void add(std::uint64_t seed, int target, const CellMetrics& m) {
    ca.push_back(m.ca);
    if (m.ba) ba.push_back(*m.ba);
    asr.push_back(m.asr);
    cells.push_back({"", seed, target, m.ca, m.ba, m.asr});
  }

  void finish_into(Report& rep) {
    row.ca = Stat::of(ca);
    row.ba = Stat::of(ba);
    row.asr = Stat::of(asr);
    row.repetitions = static_cast<int>(asr.size());
    const std::string label = row_label(row);
    for (auto& c : cells) {
      c.row = label;
      rep.cells.push_back(c);
    }
    rep.rows.push_back(row);
  }
};

Report new_report(const ExperimentConfig& cfg) {
  Report r;
  r.experiment = to_string(cfg.experiment);
  r.config = cfg.to_json();
  return r;
}

}  // namespace

Runner::Runner(std::optional<std::filesystem::path> cache_dir) : impl_(std::make_unique<Impl>()) {
  impl_->cache_dir = std::move(cache_dir);
}

Runner::~Runner() = default;

std::size_t Runner::trained_count() const { return impl_->trained; }

namespace {

// Binds the runner's artifact sink to a report for the duration of a run.
struct ArtifactScope {
  std::map<std::string, std::string>*& slot;
  ArtifactScope(std::map<std::string, std::string>*& s, Report& r) : slot(s) { slot = &r.artifacts; }
  ~ArtifactScope() { slot = nullptr; }
};

}  // namespace

Report Runner::run_single_task(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario != Scenario::kSingleTask) throw ValidationError("run_single_task needs scenario single_task");
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  Env& e = im.env(cfg.testbed, 1);
  RowBuilder rb{row_for(cfg, cfg.defense, cfg.lambda_ibvs)};
  for (std::uint64_t s : cfg.seeds) {
    std::vector<TaskVector> tvs = im.clean_slots(e, cfg, s);
    const double ca = im.acc(e, im.merge(e, cfg, tvs), 0);
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, 0, t, s);
      std::vector<TaskVector> attacked = tvs;
      attacked[cfg.adversary_slot] = im.submission(e, cfg, 0, trig, t, s);
      NamedTensorMap merged = im.merge(e, cfg, attacked);
      if (cfg.defense == Defense::kIbvs) merged = im.defend(e, cfg, merged, 0, cfg.lambda_ibvs);
      CellMetrics m{ca, std::nullopt, im.asr(e, cfg, merged, 0, trig, t)};
      if (cfg.attack != Attack::kNone) m.ba = im.acc(e, merged, 0);
      rb.add(s, t, m);
    }
  }
  rb.finish_into(rep);
  rep.sort_rows();
  return rep;
}

Report Runner::run_multi_task(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario != Scenario::kMultiTask) throw ValidationError("run_multi_task needs scenario multi_task");
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  const int n = cfg.effective_n_models();
  Env& e = im.env(cfg.testbed, n);
  const int adv_task = cfg.adversary_slot;
  RowBuilder rb{row_for(cfg, cfg.defense, cfg.lambda_ibvs)};
  std::vector<double> abs_cos;
  for (std::uint64_t s : cfg.seeds) {
    std::vector<TaskVector> tvs = im.clean_slots(e, cfg, s);
    if (tvs.size() >= 2) abs_cos.push_back(pairwise_cosine(tvs).off_diagonal_abs_mean());
    const double ca = im.acc(e, im.merge(e, cfg, tvs), adv_task);
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, adv_task, t, s);
      std::vector<TaskVector> attacked = tvs;
      attacked[cfg.adversary_slot] = im.submission(e, cfg, adv_task, trig, t, s);
      NamedTensorMap merged = im.merge(e, cfg, attacked);
      if (cfg.defense == Defense::kIbvs) merged = im.defend(e, cfg, merged, adv_task, cfg.lambda_ibvs);
      CellMetrics m{ca, std::nullopt, im.asr(e, cfg, merged, adv_task, trig, t)};
      if (cfg.attack != Attack::kNone) m.ba = im.acc(e, merged, adv_task);
      rb.add(s, t, m);
    }
  }
  if (!abs_cos.empty()) rb.row.extra["mean_abs_cos"] = *Stat::of(abs_cos).mean;
  rb.finish_into(rep);
  rep.sort_rows();
  return rep;
}

Report Runner::run_trajectory(const ExperimentConfig& cfg) {
  cfg.validate();
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  const int n = cfg.effective_n_models();
  Env& e = im.env(cfg.testbed, cfg.scenario == Scenario::kSingleTask ? 1 : n);
  const int adv_task = im.slot_task(cfg, cfg.adversary_slot);
  std::vector<RowBuilder> rbs;
  for (int m = 1; m <= n; ++m) {
    RowBuilder rb{row_for(cfg, cfg.defense, cfg.lambda_ibvs)};
    rb.row.extra["n_merged"] = m;
    rbs.push_back(std::move(rb));
  }
  for (std::uint64_t s : cfg.seeds) {
    const std::vector<TaskVector> tvs = im.clean_slots(e, cfg, s);
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, adv_task, t, s);
      std::vector<TaskVector> attacked = tvs;
      attacked[cfg.adversary_slot] = im.submission(e, cfg, adv_task, trig, t, s);
      for (int m = 1; m <= n; ++m) {
        const auto first = std::span(tvs).first(m);
        const auto first_attacked = std::span(attacked).first(m);
        const double ca = im.acc(e, im.merge(e, cfg, first), adv_task);
        NamedTensorMap merged = im.merge(e, cfg, first_attacked);
        if (cfg.defense == Defense::kIbvs) merged = im.defend(e, cfg, merged, adv_task, cfg.lambda_ibvs);
        CellMetrics cm{ca, std::nullopt, im.asr(e, cfg, merged, adv_task, trig, t)};
        if (cfg.attack != Attack::kNone) cm.ba = im.acc(e, merged, adv_task);
        rbs[m - 1].add(s, t, cm);
      }
    }
  }
  for (auto& rb : rbs) rb.finish_into(rep);
  rep.sort_rows();
  return rep;
}

Report Runner::run_defense(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.defense != Defense::kIbvs) throw ValidationError("run_defense requires defense = ibvs");
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  const int n = cfg.effective_n_models();
  Env& e = im.env(cfg.testbed, cfg.scenario == Scenario::kSingleTask ? 1 : n);
  const int adv_task = im.slot_task(cfg, cfg.adversary_slot);
  RowBuilder plain{row_for(cfg, Defense::kNone, 0.0f)};
  RowBuilder defended{row_for(cfg, Defense::kIbvs, cfg.lambda_ibvs)};
  for (std::uint64_t s : cfg.seeds) {
    const std::vector<TaskVector> tvs = im.clean_slots(e, cfg, s);
    const double ca = im.acc(e, im.merge(e, cfg, tvs), adv_task);
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, adv_task, t, s);
      std::vector<TaskVector> attacked = tvs;
      attacked[cfg.adversary_slot] = im.submission(e, cfg, adv_task, trig, t, s);
      const NamedTensorMap merged = im.merge(e, cfg, attacked);
      const NamedTensorMap def = im.defend(e, cfg, merged, adv_task, cfg.lambda_ibvs);
      const bool has_ba = cfg.attack != Attack::kNone;
      CellMetrics a{ca, std::nullopt, im.asr(e, cfg, merged, adv_task, trig, t)};
      CellMetrics b{ca, std::nullopt, im.asr(e, cfg, def, adv_task, trig, t)};
      if (has_ba) {
        a.ba = im.acc(e, merged, adv_task);
        b.ba = im.acc(e, def, adv_task);
      }
      plain.add(s, t, a);
      defended.add(s, t, b);
    }
  }
  plain.finish_into(rep);
  defended.finish_into(rep);
  const ReportRow& p = rep.rows[0];
  const ReportRow& d = rep.rows[1];
  rep.extra["delta_ASR"] = std::stod(format_number(*d.asr.mean - *p.asr.mean));
  if (p.ba.mean && d.ba.mean) rep.extra["delta_BA"] = std::stod(format_number(*d.ba.mean - *p.ba.mean));
  rep.sort_rows();
  return rep;
}

Report Runner::run_lambda_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.attack == Attack::kNone) throw ValidationError("lambda_sweep needs an attack");
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  Env& e = im.env(cfg.testbed, 1);
  const std::vector<double> lambdas = grid_values(cfg.sweep_step);
  std::vector<RowBuilder> rbs;
  for (double l : lambdas) {
    RowBuilder rb{row_for(cfg, Defense::kNone, 0.0f)};
    rb.row.bv_merging = "none";
    rb.row.k = 1;
    rb.row.extra["lambda_bv"] = l;
    rbs.push_back(std::move(rb));
  }
  for (std::uint64_t s : cfg.seeds) {
    const TaskVector clean_tv = im.adversary_clean(e, 0, 0, s);
    const NamedTensorMap theta_clean = apply_vector(*e.pre, clean_tv, 1.0f);
    const double ca = im.acc(e, theta_clean, 0);
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, 0, t, s);
      const TaskVector bv = subtract(im.adversary_backdoored(e, 0, trig, t, s), clean_tv);
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const NamedTensorMap theta = apply_vector(theta_clean, bv, static_cast<float>(lambdas[i]));
        rbs[i].add(s, t, {ca, im.acc(e, theta, 0), im.asr(e, cfg, theta, 0, trig, t)});
      }
    }
  }
  for (auto& rb : rbs) rb.finish_into(rep);
  rep.sort_rows();
  return rep;
}

Report Runner::run_transfer(const ExperimentConfig& cfg,
                            std::vector<std::pair<std::string, TransferGrid>>* grids) {
  cfg.validate();
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  Env& e = im.env(cfg.testbed, 1);
  const std::vector<double> lambdas = grid_values(cfg.grid_step);
  TransferGrid to_inherent, to_injected;  // running sums
  to_inherent.lambdas = to_injected.lambdas = lambdas;
  to_inherent.asr.assign(lambdas.size(), std::vector<double>(lambdas.size(), 0.0));
  to_injected.asr = to_inherent.asr;
  std::vector<double> gain_inh, gain_inj;
  int cells = 0;
  for (std::uint64_t s : cfg.seeds) {
    const TaskVector clean_tv = im.adversary_clean(e, 0, 0, s);
    const NamedTensorMap theta_clean = apply_vector(*e.pre, clean_tv, 1.0f);
    for (int t : cfg.targets) {
      const lab::Trigger star = im.attack_trigger(e, cfg, Attack::kInherent, 0, t, s);
      const lab::Trigger plus = im.attack_trigger(e, cfg, Attack::kInjected, 0, t, s);
      const TaskVector bv_star = subtract(im.adversary_backdoored(e, 0, star, t, s), clean_tv);
      const TaskVector bv_plus = subtract(im.adversary_backdoored(e, 0, plus, t, s), clean_tv);
      EvalContext ctx{&e.spec, &e.tasks[0], &star, t, cfg.asr_exclude_target};
      const TransferGrid a = run_transfer_grid(bv_star, bv_plus, theta_clean, lambdas, ctx);
      ctx.trigger = &plus;
      const TransferGrid b = run_transfer_grid(bv_plus, bv_star, theta_clean, lambdas, ctx);
      gain_inh.push_back(a.marginal_gain());
      gain_inj.push_back(b.marginal_gain());
      for (std::size_t i = 0; i < lambdas.size(); ++i) {
        for (std::size_t j = 0; j < lambdas.size(); ++j) {
          to_inherent.asr[i][j] += a.asr[i][j];
          to_injected.asr[i][j] += b.asr[i][j];
        }
      }
      ++cells;
    }
  }
  for (auto* g : {&to_inherent, &to_injected}) {
    for (auto& row : g->asr) {
      for (double& v : row) v /= cells;
    }
  }
  const double gi = *Stat::of(gain_inh).mean, gj = *Stat::of(gain_inj).mean;
  rep.extra["gain_injected_to_inherent"] = std::stod(format_number(gi));
  rep.extra["gain_inherent_to_injected"] = std::stod(format_number(gj));
  if (grids) {
    grids->emplace_back("inherent_plus_injected", std::move(to_inherent));
    grids->emplace_back("injected_plus_inherent", std::move(to_injected));
  }
  return rep;
}

Report Runner::run_sparsity(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.attack == Attack::kNone) throw ValidationError("sparsity needs an attack");
  Report rep = new_report(cfg);
  ArtifactScope scope(impl_->artifacts, rep);
  Impl& im = *impl_;
  Env& e = im.env(cfg.testbed, 1);
  json hb = json::array(), hs = json::array();
  std::vector<double> vb, vs;
  for (std::uint64_t s : cfg.seeds) {
    std::vector<TaskVector> cds;
    for (int j = 0; j < cfg.k; ++j) cds.push_back(im.adversary_clean(e, 0, j, s));
    for (int t : cfg.targets) {
      const lab::Trigger trig = im.attack_trigger(e, cfg, cfg.attack, 0, t, s);
      const TaskVector db = im.adversary_backdoored(e, 0, trig, t, s);
      const double b = hoyer_sparsity_f64(subtract(db, cds[0]));
      const double v = hoyer_sparsity_f64(sbv(db, cds, SparsificationType::kSignConsistent, Impl::seed_of("sbv", s)));
      vb.push_back(b);
      vs.push_back(v);
      hb.push_back(std::stod(format_number(b)));
      hs.push_back(std::stod(format_number(v)));
    }
  }
  rep.extra["hoyer_bv"] = hb;
  rep.extra["hoyer_sbv_sc"] = hs;
  rep.extra["mean_hoyer_bv"] = std::stod(format_number(*Stat::of(vb).mean));
  rep.extra["mean_hoyer_sbv_sc"] = std::stod(format_number(*Stat::of(vs).mean));
  return rep;
}

Report Runner::run(const ExperimentConfig& cfg) {
  cfg.validate();
  auto dispatch = [&](const ExperimentConfig& c) {
    switch (c.experiment) {
      case ExperimentKind::kMerge:
        return c.scenario == Scenario::kSingleTask ? run_single_task(c) : run_multi_task(c);
      case ExperimentKind::kTrajectory: return run_trajectory(c);
      case ExperimentKind::kDefense: return run_defense(c);
      case ExperimentKind::kLambdaSweep: return run_lambda_sweep(c);
      case ExperimentKind::kTransferGrid: return run_transfer(c);
      case ExperimentKind::kSparsity: return run_sparsity(c);
    }
    throw Error("unreachable");
  };
  if (cfg.variants.empty()) return dispatch(cfg);

  Report rep = new_report(cfg);
  rep.extra["variants"] = json::array();
  json base = cfg.to_json();
  base.erase("variants");
  for (const auto& v : cfg.variants) {
    if (v.contains("variants") || v.contains("experiment")) {
      throw ValidationError("variants may not change the experiment or nest variants");
    }
    json patched = base;
    patched.merge_patch(v);
    const Report part = dispatch(ExperimentConfig::from_json(patched));
    rep.rows.insert(rep.rows.end(), part.rows.begin(), part.rows.end());
    rep.cells.insert(rep.cells.end(), part.cells.begin(), part.cells.end());
    rep.artifacts.insert(part.artifacts.begin(), part.artifacts.end());
    rep.extra["variants"].push_back(part.extra);
  }
  rep.sort_rows();
  return rep;
}

Report run_single_task(const ExperimentConfig& cfg) { return Runner().run_single_task(cfg); }
Report run_multi_task(const ExperimentConfig& cfg) { return Runner().run_multi_task(cfg); }
Report run_trajectory(const ExperimentConfig& cfg) { return Runner().run_trajectory(cfg); }
Report run_defense(const ExperimentConfig& cfg) { return Runner().run_defense(cfg); }

}  // namespace bvlab
