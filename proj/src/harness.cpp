// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "sparseforge/accounting.hpp"
#include "sparseforge/checkpoint.hpp"
#include "sparseforge/distillation.hpp"

namespace sparseforge {

namespace fs = std::filesystem;

fs::path default_output_root() {
  const char* env = std::getenv("SPARSEFORGE_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

ExperimentConfig resolve_recipe(const std::string& ref) {
  if (fs::is_regular_file(ref)) return load_recipe(ref);
  const auto names = recipe_preset_names();
  if (std::find(names.begin(), names.end(), ref) != names.end()) return recipe_preset(ref);
  throw ConfigError(fmt::format("'{}' is neither a recipe file nor a preset ({})", ref, fmt::join(names, ", ")));
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// analyze

std::string analyze_csv(const ArchitectureSpec& spec) {
  std::string out = "group,params,flops_per_token,param_fraction,flop_fraction\n";
  for (const ComponentReport& r : component_report(spec)) {
    out += fmt::format("{},{},{},{},{}\n", to_string(r.group), r.param_count, r.flops_per_token,
                       r.fraction_of_total_params, r.fraction_of_total_flops);
  }
  return out;
}

std::string analyze_table(const ArchitectureSpec& spec) {
  std::string out = fmt::format("{:<20}{:>14}{:>14}{:>10}{:>10}\n", "group", "params (M)", "FLOPs (M)", "params", "FLOPs");
  for (const ComponentReport& r : component_report(spec)) {
    out += fmt::format("{:<20}{:>14.3f}{:>14.3f}{:>9.1f}%{:>9.1f}%\n", to_string(r.group), r.param_count / 1e6,
                       r.flops_per_token / 1e6, 100.0 * r.fraction_of_total_params,
                       100.0 * r.fraction_of_total_flops);
  }
  return out;
}

// ---------------------------------------------------------------------------
// runs

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError(fmt::format("cannot write {}", path.string()));
  out << text;
}

void write_summary(const fs::path& dir, const ExperimentConfig& cfg, const RunSummary& s, std::size_t steps) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["precision"] = std::string(to_string(cfg.precision));
  j["mode"] = std::string(to_string(cfg.mode));
  j["dense_accuracy"] = s.dense_accuracy;
  j["final_accuracy"] = s.final_accuracy;
  j["encoder_sparsity"] = s.encoder_sparsity;
  j["in_scope_sparsity"] = s.in_scope_sparsity;
  j["train_steps"] = steps;
  write_text(dir / "summary.json", j.dump(2) + "\n");
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.pruning.seed = seed;
  return cfg;
}

template <typename T>
struct DenseRun {
  Model<T> model;
  RunLog log;
};

template <typename T>
DenseRun<T> dense_phase(const ExperimentConfig& cfg, std::uint64_t seed, const TaskData& data) {
  Model<T> model = build_model<T>(cfg.architecture, seed, cfg.forward);
  RunLog log = train_dense(model, data, cfg.dense, seed, cfg.pruning.batch_size, cfg.pruning.optimizer);
  return DenseRun<T>{std::move(model), std::move(log)};
}

template <typename T>
GradualResult<T> prune_phase(const ExperimentConfig& cfg, std::uint64_t seed, const Model<T>& dense,
                             const TaskData& data) {
  PruningRecipe recipe = cfg.pruning;
  recipe.seed = seed;
  if (cfg.mode == PruneMode::OneShot) return one_shot(dense, recipe, recipe.sparsity.s_final, data);
  if (!recipe.kd) return gradual_prune<T>(dense, nullptr, recipe, data);
  const Teacher<T> teacher = make_teacher(dense);
  return gradual_prune(dense, &teacher, recipe, data);
}

template <typename T>
RunSummary finish_prune_run(const ExperimentConfig& cfg, std::uint64_t seed, double dense_accuracy,
                            const GradualResult<T>& result, const fs::path& dir) {
  fs::create_directories(dir);
  result.log.write_csv(dir / "runlog.csv");
  write_text(dir / "recipe.yaml", serialize_recipe(with_seed(cfg, seed)));
  RunSummary s{cfg.name, seed, dense_accuracy, result.log.final_accuracy, result.log.final_encoder_sparsity,
               result.masks.sparsity(), dir};
  write_summary(dir, cfg, s, result.log.steps.size());
  const MaskManifest manifest{cfg.pruning.scope, result.log.steps.size(), result.masks.sparsity()};
  save_checkpoint(dir / "checkpoint", result.model, seed, result.log.steps.size(), &result.masks, &manifest);
  return s;
}

template <typename T>
RunSummary run_train_t(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  const TaskData data = gen_task(cfg.task);
  const DenseRun<T> dense = dense_phase<T>(cfg, seed, data);
  fs::create_directories(dir);
  dense.log.write_csv(dir / "runlog.csv");
  write_text(dir / "recipe.yaml", serialize_recipe(with_seed(cfg, seed)));
  RunSummary s{cfg.name, seed, dense.log.final_accuracy, dense.log.final_accuracy, 0.0, 0.0, dir};
  write_summary(dir, cfg, s, dense.log.steps.size());
  save_checkpoint(dir / "checkpoint", dense.model, seed, dense.log.steps.size());
  return s;
}

template <typename T>
RunSummary run_prune_t(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  const TaskData data = gen_task(cfg.task);
  const DenseRun<T> dense = dense_phase<T>(cfg, seed, data);
  dense.log.write_csv(dir / "dense" / "runlog.csv");
  const GradualResult<T> result = prune_phase(cfg, seed, dense.model, data);
  return finish_prune_run(cfg, seed, dense.log.final_accuracy, result, dir);
}

/// Runs tasks[0..n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

/// Dense models for each seed, trained in parallel and kept for reuse.
template <typename T>
std::vector<DenseRun<T>> dense_per_seed(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                        const TaskData& data, const fs::path& out_dir, std::size_t jobs) {
  std::vector<std::optional<DenseRun<T>>> slots(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    slots[i] = dense_phase<T>(cfg, seeds[i], data);
    slots[i]->log.write_csv(out_dir / "dense" / fmt::format("seed-{}", seeds[i]) / "runlog.csv");
  });
  std::vector<DenseRun<T>> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string value_label(double v) { return fmt::format("{}", v); }

template <typename T>
SweepResult run_sweep_t(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                        const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::size_t jobs) {
  std::vector<ExperimentConfig> configs;
  for (double v : values) configs.push_back(apply_axis(base, axis, v));
  const TaskData data = gen_task(base.task);
  const auto dense = dense_per_seed<T>(base, seeds, data, out_dir, jobs);

  SweepResult result{axis, std::vector<SweepRow>(values.size() * seeds.size())};
  parallel_for(result.rows.size(), jobs, [&](std::size_t i) {
    const std::size_t vi = i / seeds.size();
    const std::size_t si = i % seeds.size();
    const fs::path dir =
        out_dir / fmt::format("{}={}", to_string(axis), value_label(values[vi])) / fmt::format("seed-{}", seeds[si]);
    const GradualResult<T> run = prune_phase(configs[vi], seeds[si], dense[si].model, data);
    result.rows[i] = SweepRow{values[vi], finish_prune_run(configs[vi], seeds[si], dense[si].log.final_accuracy, run, dir)};
  });
  write_text(out_dir / "sweep.csv", result.to_csv());
  write_text(out_dir / "sweep_medians.csv", result.medians_csv());
  return result;
}

template <typename T>
SensitivityResult run_sensitivity_t(const ExperimentConfig& base, const SensitivityOptions& options,
                                    const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                    std::size_t jobs) {
  if (options.scopes.empty() || options.targets.empty()) throw ConfigError("sensitivity needs scopes and targets");
  for (double t : options.targets) {
    if (!(t >= 0.0 && t < 1.0)) throw ConfigError(fmt::format("sensitivity target {} outside [0, 1)", t));
  }
  std::vector<ScopePolicy> scopes;
  for (const auto& name : options.scopes) scopes.push_back(scope_from_string(name));

  const TaskData data = gen_task(base.task);
  const auto dense = dense_per_seed<T>(base, seeds, data, out_dir, jobs);

  SensitivityResult result;
  result.mode = options.one_shot ? "one_shot" : "gradual";
  result.pruner = std::string(to_string(options.pruner));
  const std::size_t per_scope = options.targets.size() * seeds.size();
  result.rows.resize(scopes.size() * per_scope);
  parallel_for(result.rows.size(), jobs, [&](std::size_t i) {
    const std::size_t sc = i / per_scope;
    const std::size_t ti = (i % per_scope) / seeds.size();
    const std::size_t si = i % seeds.size();
    const double target = options.targets[ti];
    SensitivityRow row{options.scopes[sc], target, seeds[si], dense[si].log.final_accuracy, 0.0, 0.0, 0.0};
    if (target == 0.0) {
      const MaskSet masks = MaskSet::dense(dense[si].model.layout(), scopes[sc]);
      row.accuracy = evaluate(dense[si].model, &masks, data.eval);
    } else {
      ExperimentConfig cfg = base;
      cfg.mode = options.one_shot ? PruneMode::OneShot : PruneMode::Gradual;
      cfg.pruning.scope = scopes[sc];
      cfg.pruning.pruner = options.pruner;
      cfg.pruning.sparsity.s_final = target;
      cfg.pruning.sparsity.s_init = std::min(cfg.pruning.sparsity.s_init, target);
      const fs::path dir = out_dir / options.scopes[sc] / fmt::format("target={}", value_label(target)) /
                           fmt::format("seed-{}", seeds[si]);
      const GradualResult<T> run = prune_phase(cfg, seeds[si], dense[si].model, data);
      const RunSummary s = finish_prune_run(cfg, seeds[si], row.dense_accuracy, run, dir);
      row.accuracy = s.final_accuracy;
      row.in_scope_sparsity = s.in_scope_sparsity;
      row.encoder_sparsity = s.encoder_sparsity;
    }
    result.rows[i] = row;
  });
  write_text(out_dir / "sensitivity.csv", result.to_csv());
  return result;
}

}  // namespace

RunSummary run_train(const ExperimentConfig& config, std::uint64_t seed, const fs::path& run_dir) {
  config.validate();
  return config.precision == Precision::Single ? run_train_t<float>(config, seed, run_dir)
                                               : run_train_t<double>(config, seed, run_dir);
}

RunSummary run_prune(const ExperimentConfig& config, std::uint64_t seed, const fs::path& run_dir) {
  config.validate();
  return config.precision == Precision::Single ? run_prune_t<float>(config, seed, run_dir)
                                               : run_prune_t<double>(config, seed, run_dir);
}

// ---------------------------------------------------------------------------
// sweeps

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Hardness: return "hardness";
    case SweepAxis::Temperature: return "temperature";
    case SweepAxis::InitStep: return "init_step";
    case SweepAxis::LR: return "lr";
    case SweepAxis::Target: return "target";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(std::string_view name) {
  for (SweepAxis a : {SweepAxis::Hardness, SweepAxis::Temperature, SweepAxis::InitStep, SweepAxis::LR,
                      SweepAxis::Target}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError(fmt::format("unknown sweep axis '{}' (hardness, temperature, init_step, lr, target)", name));
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, double value) {
  ExperimentConfig cfg = base;
  auto& p = cfg.pruning;
  switch (axis) {
    case SweepAxis::Hardness:
    case SweepAxis::Temperature:
      if (!p.kd) throw ConfigError(fmt::format("axis '{}' needs a recipe with distillation", to_string(axis)));
      (axis == SweepAxis::Hardness ? p.kd->hardness : p.kd->temperature) = value;
      break;
    case SweepAxis::InitStep:
      p.sparsity.s_init = value;
      break;
    case SweepAxis::LR:
      // Keeps the final/initial ratio of the base schedule.
      p.lr.lr_final = p.lr.lr_init > 0.0 ? p.lr.lr_final * (value / p.lr.lr_init) : 0.0;
      p.lr.lr_init = value;
      break;
    case SweepAxis::Target:
      p.sparsity.s_final = value;
      p.sparsity.s_init = std::min(p.sparsity.s_init, value);
      break;
  }
  cfg.validate();
  return cfg;
}

std::string SweepResult::to_csv() const {
  std::string out = "axis,value,seed,dense_accuracy,final_accuracy,encoder_sparsity\n";
  for (const SweepRow& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", to_string(axis), r.value, r.run.seed, r.run.dense_accuracy,
                       r.run.final_accuracy, r.run.encoder_sparsity);
  }
  return out;
}

std::string SweepResult::medians_csv() const {
  std::vector<double> order;
  std::map<double, std::vector<double>> by_value;
  for (const SweepRow& r : rows) {
    if (!by_value.contains(r.value)) order.push_back(r.value);
    by_value[r.value].push_back(r.run.final_accuracy);
  }
  std::string out = "value,runs,median_final_accuracy\n";
  for (double v : order) out += fmt::format("{},{},{}\n", v, by_value[v].size(), median(by_value[v]));
  return out;
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                      const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, std::size_t jobs) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  base.validate();
  return base.precision == Precision::Single ? run_sweep_t<float>(base, axis, values, seeds, out_dir, jobs)
                                             : run_sweep_t<double>(base, axis, values, seeds, out_dir, jobs);
}

// ---------------------------------------------------------------------------
// sensitivity

ScopePolicy scope_from_string(std::string_view name) {
  if (name == "encoder_only") return ScopePolicy::encoder_only();
  if (name == "all_components") return ScopePolicy::all_components();
  ScopePolicy scope;
  scope.included.clear();
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t end = std::min(name.find('+', start), name.size());
    scope.included.insert(component_tag_from_string(name.substr(start, end - start)));
    start = end + 1;
  }
  return scope;
}

std::string SensitivityResult::to_csv() const {
  std::string out = "scope,target,seed,mode,pruner,dense_accuracy,accuracy,in_scope_sparsity,encoder_sparsity\n";
  for (const SensitivityRow& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.scope, r.target, r.seed, mode, pruner, r.dense_accuracy,
                       r.accuracy, r.in_scope_sparsity, r.encoder_sparsity);
  }
  return out;
}

SensitivityResult run_sensitivity(const ExperimentConfig& base, const SensitivityOptions& options,
                                  const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                  std::size_t jobs) {
  if (seeds.empty()) throw ConfigError("sensitivity needs at least one seed");
  base.validate();
  return base.precision == Precision::Single ? run_sensitivity_t<float>(base, options, seeds, out_dir, jobs)
                                             : run_sensitivity_t<double>(base, options, seeds, out_dir, jobs);
}

// ---------------------------------------------------------------------------
// schedule dump

std::string schedule_csv(const ExperimentConfig& config) {
  const PruningRecipe& p = config.pruning;
  p.validate();
  const std::size_t per_epoch = steps_per_epoch(config.task.train_size, p.batch_size);
  const Timetable timetable = pruning_timetable(p.epochs, per_epoch, p.prune_frequency, p.stabilization_epochs);
  SparsityScheduleSpec sparsity = p.sparsity;
  sparsity.num_pruning_steps = timetable.num_pruning_steps();
  LRScheduleSpec lr = p.lr;
  lr.total_epochs = p.epochs;
  lr.steps_per_epoch = per_epoch;

  std::string out = "step,epoch,lr,sparsity,prune\n";
  double current = 0.0;
  std::size_t next = 0;
  for (std::size_t step = 0; step < lr.total_steps(); ++step) {
    const bool prune = next < timetable.pruning_steps.size() && timetable.pruning_steps[next] == step;
    if (prune) current = sparsity_at(sparsity, next++);
    out += fmt::format("{},{},{},{},{}\n", step, step / per_epoch, lr_at(lr, step), current, prune ? 1 : 0);
  }
  return out;
}

}  // namespace sparseforge
