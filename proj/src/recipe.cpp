// SPDX-License-Identifier: Apache-2.0
#include "sparseforge/recipe.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace sparseforge {

std::string_view to_string(Precision precision) { return precision == Precision::Single ? "single" : "double"; }

Precision precision_from_string(std::string_view name) {
  if (name == "single") return Precision::Single;
  if (name == "double") return Precision::Double;
  throw ConfigError(fmt::format("unknown precision '{}' (expected single or double)", name));
}

std::string_view to_string(PruneMode mode) { return mode == PruneMode::Gradual ? "gradual" : "one_shot"; }

PruneMode prune_mode_from_string(std::string_view name) {
  if (name == "gradual") return PruneMode::Gradual;
  if (name == "one_shot") return PruneMode::OneShot;
  throw ConfigError(fmt::format("unknown pruning mode '{}'", name));
}

void ExperimentConfig::validate() const {
  architecture.validate();
  task.validate();
  pruning.sparsity.validate();
  if (pruning.kd) pruning.kd->validate();
  if (task.vocab_size > architecture.vocab_size) {
    throw ConfigError(fmt::format("task vocab_size {} exceeds the model's {}", task.vocab_size, architecture.vocab_size));
  }
  if (task.num_labels != architecture.num_labels) {
    throw ConfigError(
        fmt::format("task has {} labels but the model head has {}", task.num_labels, architecture.num_labels));
  }
  if (task.sequence_length > architecture.max_positions) {
    throw ConfigError(fmt::format("sequence_length {} exceeds max_positions {}", task.sequence_length,
                                  architecture.max_positions));
  }
  if (!(forward.dropout >= 0.0 && forward.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (mode == PruneMode::Gradual) pruning.validate();
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

int line_of(const YAML::Node& node) { return node.Mark().is_null() ? 0 : node.Mark().line + 1; }

// A YAML mapping that tracks which keys were consumed, so leftovers can be reported.
class Section {
 public:
  Section(YAML::Node node, std::string path, std::string source)
      : node_(std::move(node)), path_(std::move(path)), source_(std::move(source)) {
    if (!node_.IsMap()) fail(node_, fmt::format("'{}' must be a mapping", path_.empty() ? "<root>" : path_));
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& message) const {
    throw RecipeError(fmt::format("{}:{}: {}", source_, line_of(at), message));
  }

  std::string key_path(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  /// The child node for `key`, or an undefined node when absent.
  YAML::Node take(std::string_view key) {
    used_.insert(std::string(key));
    return node_[std::string(key)];
  }

  template <typename V>
  void read(std::string_view key, V& out) {
    const YAML::Node n = take(key);
    if (!n.IsDefined()) return;
    if (!n.IsScalar()) fail(n, fmt::format("'{}' must be a scalar", key_path(key)));
    try {
      out = n.as<V>();
    } catch (const YAML::Exception&) {
      fail(n, fmt::format("'{}' has invalid value '{}'", key_path(key), n.Scalar()));
    }
  }

  template <typename E>
  void read_enum(std::string_view key, E& out, E (*convert)(std::string_view)) {
    std::string text;
    const YAML::Node n = node_[std::string(key)];
    read(key, text);
    if (!n.IsDefined()) return;
    try {
      out = convert(text);
    } catch (const ConfigError& e) {
      fail(n, fmt::format("'{}': {}", key_path(key), e.what()));
    }
  }

  /// Runs `body` on the nested mapping under `key` when present.
  void nested(std::string_view key, const std::function<void(Section&)>& body) {
    const YAML::Node n = take(key);
    if (!n.IsDefined()) return;
    Section child(n, key_path(key), source_);
    body(child);
    child.finish();
  }

  void finish() const {
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!used_.contains(key)) fail(kv.first, fmt::format("unknown key '{}'", key_path(key)));
    }
  }

  const std::string& source() const { return source_; }

 private:
  YAML::Node node_;
  std::string path_;
  std::string source_;
  std::set<std::string> used_;
};

void read_lr(Section& s, LRScheduleSpec& lr) {
  s.read_enum("kind", lr.kind, &lr_kind_from_string);
  s.read("lr_init", lr.lr_init);
  s.read("lr_final", lr.lr_final);
  s.read("cycle_epochs", lr.cycle_epochs);
  s.read("warmup_steps", lr.warmup_steps);
}

void read_scope(Section& s, ScopePolicy& scope) {
  const YAML::Node include = s.take("include");
  if (include.IsDefined()) {
    if (!include.IsSequence()) s.fail(include, fmt::format("'{}' must be a list", s.key_path("include")));
    scope.included.clear();
    for (const auto& item : include) {
      try {
        scope.included.insert(component_tag_from_string(item.as<std::string>()));
      } catch (const ConfigError& e) {
        s.fail(item, e.what());
      }
    }
  }
  s.read_enum("granularity", scope.granularity, &granularity_from_string);
}

std::string num(double v) { return fmt::format("{}", v); }

void emit_lr(YAML::Emitter& out, const LRScheduleSpec& lr) {
  out << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << std::string(to_string(lr.kind));
  out << YAML::Key << "lr_init" << YAML::Value << num(lr.lr_init);
  out << YAML::Key << "lr_final" << YAML::Value << num(lr.lr_final);
  out << YAML::Key << "cycle_epochs" << YAML::Value << lr.cycle_epochs;
  out << YAML::Key << "warmup_steps" << YAML::Value << lr.warmup_steps;
  out << YAML::EndMap;
}

}  // namespace

ExperimentConfig parse_recipe(std::string_view text, std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw RecipeError(fmt::format("{}:{}: {}", source, e.mark.line + 1, e.msg));
  }
  ExperimentConfig cfg;
  if (root.IsNull()) return cfg;
  Section top(root, "", std::string(source));

  top.read("name", cfg.name);
  top.read_enum("precision", cfg.precision, &precision_from_string);
  top.read("seed", cfg.pruning.seed);
  top.read("batch_size", cfg.pruning.batch_size);
  top.nested("architecture", [&](Section& s) {
    auto& a = cfg.architecture;
    s.read("vocab_size", a.vocab_size);
    s.read("hidden_dim", a.hidden_dim);
    s.read("num_layers", a.num_layers);
    s.read("num_heads", a.num_heads);
    s.read("ffn_dim", a.ffn_dim);
    s.read("max_positions", a.max_positions);
    s.read("num_segments", a.num_segments);
    s.read("num_labels", a.num_labels);
  });
  top.nested("forward", [&](Section& s) {
    s.read_enum("activation", cfg.forward.activation, &activation_from_string);
    s.read("dropout", cfg.forward.dropout);
  });
  top.nested("task", [&](Section& s) {
    auto& t = cfg.task;
    s.read("vocab_size", t.vocab_size);
    s.read("sequence_length", t.sequence_length);
    s.read("num_labels", t.num_labels);
    s.read("train_size", t.train_size);
    s.read("eval_size", t.eval_size);
    s.read("seed", t.seed);
    s.read("marker_token", t.marker_token);
    s.read("marker_rate", t.marker_rate);
  });
  top.nested("dense", [&](Section& s) {
    s.read("epochs", cfg.dense.epochs);
    s.nested("lr", [&](Section& lr) { read_lr(lr, cfg.dense.lr); });
  });
  top.nested("pruning", [&](Section& s) {
    auto& p = cfg.pruning;
    s.read_enum("mode", cfg.mode, &prune_mode_from_string);
    s.read_enum("pruner", p.pruner, &pruner_from_string);
    s.nested("scope", [&](Section& scope) { read_scope(scope, p.scope); });
    s.nested("sparsity", [&](Section& sp) {
      sp.read_enum("kind", p.sparsity.kind, &sparsity_kind_from_string);
      sp.read("s_init", p.sparsity.s_init);
      sp.read("s_final", p.sparsity.s_final);
    });
    s.nested("lr", [&](Section& lr) { read_lr(lr, p.lr); });
    s.read("epochs", p.epochs);
    s.read("prune_frequency", p.prune_frequency);
    s.read("stabilization_epochs", p.stabilization_epochs);
    s.read("fisher_samples", p.fisher_samples);
    const YAML::Node kd = s.take("kd");
    if (kd.IsDefined()) {
      if (kd.IsNull()) {
        p.kd.reset();
      } else {
        KDConfig k;
        Section ks(kd, s.key_path("kd"), s.source());
        ks.read("hardness", k.hardness);
        ks.read("temperature", k.temperature);
        ks.read("scale_by_t2", k.scale_by_t2);
        ks.finish();
        p.kd = k;
      }
    }
    s.nested("optimizer", [&](Section& o) {
      o.read("beta1", p.optimizer.beta1);
      o.read("beta2", p.optimizer.beta2);
      o.read("epsilon", p.optimizer.epsilon);
      o.read("weight_decay", p.optimizer.weight_decay);
    });
  });
  top.finish();

  cfg.dense.lr.total_epochs = cfg.dense.epochs;
  cfg.pruning.lr.total_epochs = cfg.pruning.epochs;
  try {
    cfg.validate();
  } catch (const RecipeError&) {
    throw;
  } catch (const ConfigError& e) {
    throw RecipeError(fmt::format("{}: {}", source, e.what()));
  }
  return cfg;
}

ExperimentConfig load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open recipe {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_recipe(buffer.str(), path.string());
}

std::string serialize_recipe(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << cfg.name;
  out << YAML::Key << "precision" << YAML::Value << std::string(to_string(cfg.precision));
  out << YAML::Key << "seed" << YAML::Value << cfg.pruning.seed;
  out << YAML::Key << "batch_size" << YAML::Value << cfg.pruning.batch_size;

  const auto& a = cfg.architecture;
  out << YAML::Key << "architecture" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "vocab_size" << YAML::Value << a.vocab_size;
  out << YAML::Key << "hidden_dim" << YAML::Value << a.hidden_dim;
  out << YAML::Key << "num_layers" << YAML::Value << a.num_layers;
  out << YAML::Key << "num_heads" << YAML::Value << a.num_heads;
  out << YAML::Key << "ffn_dim" << YAML::Value << a.ffn_dim;
  out << YAML::Key << "max_positions" << YAML::Value << a.max_positions;
  out << YAML::Key << "num_segments" << YAML::Value << a.num_segments;
  out << YAML::Key << "num_labels" << YAML::Value << a.num_labels;
  out << YAML::EndMap;

  out << YAML::Key << "forward" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "activation" << YAML::Value << std::string(to_string(cfg.forward.activation));
  out << YAML::Key << "dropout" << YAML::Value << num(cfg.forward.dropout);
  out << YAML::EndMap;

  const auto& t = cfg.task;
  out << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "vocab_size" << YAML::Value << t.vocab_size;
  out << YAML::Key << "sequence_length" << YAML::Value << t.sequence_length;
  out << YAML::Key << "num_labels" << YAML::Value << t.num_labels;
  out << YAML::Key << "train_size" << YAML::Value << t.train_size;
  out << YAML::Key << "eval_size" << YAML::Value << t.eval_size;
  out << YAML::Key << "seed" << YAML::Value << t.seed;
  out << YAML::Key << "marker_token" << YAML::Value << t.marker_token;
  out << YAML::Key << "marker_rate" << YAML::Value << num(t.marker_rate);
  out << YAML::EndMap;

  out << YAML::Key << "dense" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epochs" << YAML::Value << cfg.dense.epochs;
  out << YAML::Key << "lr" << YAML::Value;
  emit_lr(out, cfg.dense.lr);
  out << YAML::EndMap;

  const auto& p = cfg.pruning;
  out << YAML::Key << "pruning" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(cfg.mode));
  out << YAML::Key << "pruner" << YAML::Value << std::string(to_string(p.pruner));
  out << YAML::Key << "scope" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "include" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (ComponentTag tag : p.scope.included) out << std::string(to_string(tag));
  out << YAML::EndSeq;
  out << YAML::Key << "granularity" << YAML::Value << std::string(to_string(p.scope.granularity));
  out << YAML::EndMap;
  out << YAML::Key << "sparsity" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << std::string(to_string(p.sparsity.kind));
  out << YAML::Key << "s_init" << YAML::Value << num(p.sparsity.s_init);
  out << YAML::Key << "s_final" << YAML::Value << num(p.sparsity.s_final);
  out << YAML::EndMap;
  out << YAML::Key << "lr" << YAML::Value;
  emit_lr(out, p.lr);
  out << YAML::Key << "epochs" << YAML::Value << p.epochs;
  out << YAML::Key << "prune_frequency" << YAML::Value << p.prune_frequency;
  out << YAML::Key << "stabilization_epochs" << YAML::Value << p.stabilization_epochs;
  out << YAML::Key << "fisher_samples" << YAML::Value << p.fisher_samples;
  out << YAML::Key << "kd" << YAML::Value;
  if (p.kd) {
    out << YAML::BeginMap;
    out << YAML::Key << "hardness" << YAML::Value << num(p.kd->hardness);
    out << YAML::Key << "temperature" << YAML::Value << num(p.kd->temperature);
    out << YAML::Key << "scale_by_t2" << YAML::Value << p.kd->scale_by_t2;
    out << YAML::EndMap;
  } else {
    out << YAML::Null;
  }
  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "beta1" << YAML::Value << num(p.optimizer.beta1);
  out << YAML::Key << "beta2" << YAML::Value << num(p.optimizer.beta2);
  out << YAML::Key << "epsilon" << YAML::Value << num(p.optimizer.epsilon);
  out << YAML::Key << "weight_decay" << YAML::Value << num(p.optimizer.weight_decay);
  out << YAML::EndMap;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Presets

namespace {

ExperimentConfig toy_base() { return ExperimentConfig{}; }

ExperimentConfig gmp_star(std::size_t epochs) {
  ExperimentConfig cfg = toy_base();
  cfg.name = fmt::format("gmp-star-{}ep", epochs);
  auto& p = cfg.pruning;
  p.scope = ScopePolicy::encoder_only();
  p.pruner = PrunerKind::Magnitude;
  p.sparsity = SparsityScheduleSpec{SparsityKind::Cubic, 0.7, 0.9, 1};
  p.lr = LRScheduleSpec{LRKind::RecurringLinear, 1e-4, 1e-6, 2, epochs, 1, 0};
  p.epochs = epochs;
  p.prune_frequency = 10;
  p.stabilization_epochs = 2;
  p.kd = KDConfig{1.0, 5.5, true};
  return cfg;
}

}  // namespace

ArchitectureSpec toy_architecture() {
  ArchitectureSpec spec = presets::tiny();
  spec.num_labels = TaskSpec{}.num_labels;
  return spec;
}

ExperimentConfig recipe_preset(std::string_view name) {
  if (name == "gmp-star-10ep") return gmp_star(10);
  if (name == "gmp-star-30ep") return gmp_star(30);
  if (name == "smc-style") {
    ExperimentConfig cfg = toy_base();
    cfg.name = "smc-style";
    auto& p = cfg.pruning;
    p.scope = ScopePolicy::all_components();
    p.pruner = PrunerKind::Magnitude;
    p.sparsity = SparsityScheduleSpec{SparsityKind::Cubic, 0.0, 0.9, 1};
    p.lr = cfg.dense.lr;
    p.lr.total_epochs = 3;
    p.epochs = 3;
    p.prune_frequency = 10;
    p.stabilization_epochs = 1;
    p.kd.reset();
    return cfg;
  }
  if (name == "one-shot") {
    ExperimentConfig cfg = toy_base();
    cfg.name = "one-shot";
    cfg.mode = PruneMode::OneShot;
    cfg.pruning.sparsity = SparsityScheduleSpec{SparsityKind::Cubic, 0.0, 0.5, 1};
    cfg.pruning.kd.reset();
    return cfg;
  }
  throw ConfigError(fmt::format("unknown recipe preset '{}'", name));
}

std::vector<std::string> recipe_preset_names() { return {"gmp-star-10ep", "gmp-star-30ep", "smc-style", "one-shot"}; }

}  // namespace sparseforge
