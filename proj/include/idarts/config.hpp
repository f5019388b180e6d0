#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "idarts/continual.hpp"
#include "idarts/version.hpp"

#include <json.hpp>

namespace idarts {

// budget sentinel: resolved per modality (1000 signal / 2000 image) once the
// dataset is known
inline constexpr std::size_t kBudgetByModality = std::numeric_limits<std::size_t>::max();

struct GeneratorConfig {
  std::vector<std::string> modulations = supported_modulations();
  std::size_t n_train_per_class = 500;
  std::size_t n_test_per_class = 100;
  std::size_t length = 1024;
  double snr_db = 15.0;
};

struct TasksConfig {
  std::size_t n_tasks = 4;
  std::string grouping = "contiguous";  // contiguous | family | explicit
  std::vector<std::vector<int>> explicit_groups;
};

// Full experiment description. A run directory's resolved copy plus the seed
// reproduce the run exactly.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string device = "cpu";
  std::string code_version = kVersion;

  std::string dataset_manifest;  // one of manifest / generator
  std::optional<GeneratorConfig> generator;

  TasksConfig tasks;
  StrategyConfig strategy;
  SearchConfig search;
  LossWeights loss;

  CellSpec cell_spec;
  bool reductions_explicit = false;
  std::size_t stem_kernel = 5;
  std::size_t stem_stride = 2;
  std::string fixed_op = "sep_conv_3";
  GenotypeOptions genotype_opts;
  DeriveOptions derive_opts;
  std::string teacher_for_search = "child";

  std::size_t stop_after_task = 0;  // 0 = run all tasks

  void validate() const {
    if (device != "cpu") {
      throw ConfigError("device: only 'cpu' is supported in this build");
    }
    if (dataset_manifest.empty() == !generator.has_value()) {
      throw ConfigError("dataset: exactly one of dataset.manifest or dataset.generator required");
    }
    if (tasks.grouping != "contiguous" && tasks.grouping != "family" &&
        tasks.grouping != "explicit") {
      throw ConfigError("tasks.grouping: unknown grouping '" + tasks.grouping + "'");
    }
    if (tasks.grouping == "explicit" && tasks.explicit_groups.empty()) {
      throw ConfigError("tasks.grouping: explicit grouping requires tasks.explicit");
    }
    loss.validate();
    search.validate();
    cell_spec.validate();
    op_from_name(fixed_op);
    if (teacher_for_search != "child" && teacher_for_search != "supernet") {
      throw ConfigError("model.teacher_for_search: must be 'child' or 'supernet'");
    }
  }

  ContinualConfig continual_config(Modality modality, std::size_t in_channels) const {
    ContinualConfig c;
    c.cell_spec = cell_spec;
    c.dim = modality == Modality::signal1d ? Dim::conv1d : Dim::conv2d;
    c.in_channels = in_channels;
    c.stem_kernel = stem_kernel;
    c.stem_stride = stem_stride;
    c.strategy = strategy;
    if (c.strategy.coreset_budget == kBudgetByModality) {
      c.strategy.coreset_budget = modality == Modality::signal1d ? 1000 : 2000;
    }
    c.search = search;
    c.loss = loss;
    c.genotype_opts = genotype_opts;
    c.derive_opts = derive_opts;
    c.fixed_op = op_from_name(fixed_op);
    c.teacher_for_search = teacher_for_search;
    c.master_seed = seed;
    return c;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["device"] = device;
    j["code_version"] = code_version;
    if (!dataset_manifest.empty()) {
      j["dataset"] = {{"manifest", dataset_manifest}};
    } else {
      j["dataset"] = {{"generator",
                       {{"modulations", generator->modulations},
                        {"n_train_per_class", generator->n_train_per_class},
                        {"n_test_per_class", generator->n_test_per_class},
                        {"length", generator->length},
                        {"snr_db", generator->snr_db}}}};
    }
    j["tasks"] = {{"n_tasks", tasks.n_tasks}, {"grouping", tasks.grouping}};
    if (!tasks.explicit_groups.empty()) j["tasks"]["explicit"] = tasks.explicit_groups;
    j["strategy"] = {{"use_nas", strategy.use_nas},
                     {"use_kd", strategy.use_kd},
                     {"use_alpha_reg", strategy.use_alpha_reg},
                     {"use_balancing", strategy.use_balancing},
                     {"replay_mode", replay_mode_name(strategy.replay_mode)},
                     {"coreset_budget",
                      strategy.coreset_budget == kBudgetByModality ? 0 : strategy.coreset_budget}};
    j["model"] = {{"n_cells", cell_spec.n_cells},
                  {"n_nodes", cell_spec.n_nodes},
                  {"channels", cell_spec.channels},
                  {"reduction_positions",
                   std::vector<std::size_t>(cell_spec.reduction_positions.begin(),
                                            cell_spec.reduction_positions.end())},
                  {"stem_kernel", stem_kernel},
                  {"stem_stride", stem_stride},
                  {"fixed_op", fixed_op},
                  {"allow_zero_in_argmax", genotype_opts.allow_zero},
                  {"top_k_edges", genotype_opts.top_k_edges},
                  {"weight_inheritance", derive_opts.inherit_weights},
                  {"teacher_for_search", teacher_for_search}};
    j["search"] = {{"epochs_search", search.epochs_search},
                   {"epochs_retrain", search.epochs_retrain},
                   {"lr_w", search.lr_w},
                   {"lr_alpha", search.lr_alpha},
                   {"weight_decay", search.weight_decay},
                   {"batch_size", search.batch_size},
                   {"lr_milestones", search.lr_milestones},
                   {"lr_decay", search.lr_decay},
                   {"finetune_epochs", search.finetune_epochs},
                   {"lr_finetune", search.lr_finetune},
                   {"val_fraction", search.val_fraction},
                   {"optimizer_search", search.optimizer_search},
                   {"optimizer_retrain", search.optimizer_retrain},
                   {"momentum", search.momentum},
                   {"grad_clip", search.grad_clip},
                   {"kd_in_finetune", search.kd_in_finetune},
                   {"augment_train", search.augment_train}};
    j["loss"] = {{"mu", loss.mu},
                 {"lambda", loss.lambda},
                 {"kd_temperature", loss.temperature}};
    j["stop_after_task"] = stop_after_task;
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", std::uint64_t{1});
    c.out_dir = j.value("out_dir", std::string{});
    c.device = j.value("device", std::string{"cpu"});
    c.code_version = kVersion;
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("manifest")) c.dataset_manifest = d.at("manifest").get<std::string>();
      if (d.contains("generator")) {
        GeneratorConfig g;
        const auto& jg = d.at("generator");
        if (jg.contains("modulations")) {
          g.modulations.clear();
          for (const auto& m : jg.at("modulations")) g.modulations.push_back(m.get<std::string>());
        }
        g.n_train_per_class = jg.value("n_train_per_class", g.n_train_per_class);
        g.n_test_per_class = jg.value("n_test_per_class", g.n_test_per_class);
        g.length = jg.value("length", g.length);
        g.snr_db = jg.value("snr_db", g.snr_db);
        c.generator = g;
      }
    }
    if (j.contains("tasks")) {
      const auto& t = j.at("tasks");
      c.tasks.n_tasks = t.value("n_tasks", c.tasks.n_tasks);
      c.tasks.grouping = t.value("grouping", c.tasks.grouping);
      if (t.contains("explicit")) {
        for (const auto& g : t.at("explicit")) {
          c.tasks.explicit_groups.push_back(g.get<std::vector<int>>());
        }
      }
    }
    if (j.contains("strategy")) {
      const auto& s = j.at("strategy");
      if (s.contains("preset")) c.strategy = strategy_preset(s.at("preset").get<std::string>());
      c.strategy.use_nas = s.value("use_nas", c.strategy.use_nas);
      c.strategy.use_kd = s.value("use_kd", c.strategy.use_kd);
      c.strategy.use_alpha_reg = s.value("use_alpha_reg", c.strategy.use_alpha_reg);
      c.strategy.use_balancing = s.value("use_balancing", c.strategy.use_balancing);
      if (s.contains("replay_mode")) {
        c.strategy.replay_mode = replay_mode_from_name(s.at("replay_mode").get<std::string>());
      }
      if (s.contains("coreset_budget")) {
        c.strategy.coreset_budget = s.at("coreset_budget").get<std::size_t>();
      } else if (!s.contains("preset")) {
        c.strategy.coreset_budget = kBudgetByModality;
      }
    } else {
      c.strategy.coreset_budget = kBudgetByModality;
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.cell_spec.n_cells = m.value("n_cells", c.cell_spec.n_cells);
      c.cell_spec.n_nodes = m.value("n_nodes", c.cell_spec.n_nodes);
      c.cell_spec.channels = m.value("channels", c.cell_spec.channels);
      if (m.contains("reduction_positions")) {
        c.reductions_explicit = true;
        for (const auto& r : m.at("reduction_positions")) {
          c.cell_spec.reduction_positions.insert(r.get<std::size_t>());
        }
      }
      c.stem_kernel = m.value("stem_kernel", c.stem_kernel);
      c.stem_stride = m.value("stem_stride", c.stem_stride);
      c.fixed_op = m.value("fixed_op", c.fixed_op);
      c.genotype_opts.allow_zero = m.value("allow_zero_in_argmax", c.genotype_opts.allow_zero);
      c.genotype_opts.top_k_edges = m.value("top_k_edges", c.genotype_opts.top_k_edges);
      c.derive_opts.inherit_weights = m.value("weight_inheritance", c.derive_opts.inherit_weights);
      c.teacher_for_search = m.value("teacher_for_search", c.teacher_for_search);
    }
    if (!c.reductions_explicit) {
      c.cell_spec.reduction_positions = CellSpec::default_reductions(c.cell_spec.n_cells);
    }
    if (j.contains("search")) {
      const auto& s = j.at("search");
      c.search.epochs_search = s.value("epochs_search", c.search.epochs_search);
      c.search.epochs_retrain = s.value("epochs_retrain", c.search.epochs_retrain);
      c.search.lr_w = s.value("lr_w", c.search.lr_w);
      c.search.lr_alpha = s.value("lr_alpha", c.search.lr_alpha);
      c.search.weight_decay = s.value("weight_decay", c.search.weight_decay);
      c.search.batch_size = s.value("batch_size", c.search.batch_size);
      if (s.contains("lr_milestones")) {
        c.search.lr_milestones = s.at("lr_milestones").get<std::vector<std::size_t>>();
      }
      c.search.lr_decay = s.value("lr_decay", c.search.lr_decay);
      c.search.finetune_epochs = s.value("finetune_epochs", c.search.finetune_epochs);
      c.search.lr_finetune = s.value("lr_finetune", c.search.lr_finetune);
      c.search.val_fraction = s.value("val_fraction", c.search.val_fraction);
      c.search.optimizer_search = s.value("optimizer_search", c.search.optimizer_search);
      c.search.optimizer_retrain = s.value("optimizer_retrain", c.search.optimizer_retrain);
      c.search.momentum = s.value("momentum", c.search.momentum);
      c.search.grad_clip = s.value("grad_clip", c.search.grad_clip);
      c.search.kd_in_finetune = s.value("kd_in_finetune", c.search.kd_in_finetune);
      c.search.augment_train = s.value("augment_train", c.search.augment_train);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      c.loss.mu = l.value("mu", c.loss.mu);
      c.loss.lambda = l.value("lambda", c.loss.lambda);
      c.loss.temperature = l.value("kd_temperature", c.loss.temperature);
    }
    c.stop_after_task = j.value("stop_after_task", c.stop_after_task);
    return c;
  }

  static ExperimentConfig parse(const std::string& text) {
    return from_json(nlohmann::json::parse(text));
  }
};

// flag-style overrides: "use_kd=false,replay_mode=random,coreset_budget=500"
inline void apply_strategy_overrides(ExperimentConfig& cfg, const std::string& overrides) {
  if (overrides.empty()) return;
  std::size_t pos = 0;
  while (pos < overrides.size()) {
    std::size_t end = overrides.find(',', pos);
    if (end == std::string::npos) end = overrides.size();
    const std::string kv = overrides.substr(pos, end - pos);
    pos = end + 1;
    if (kv.empty()) continue;
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("strategy-overrides: expected key=value, got '" + kv + "'");
    }
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    auto to_bool = [&](const std::string& v) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw ConfigError("strategy-overrides: bad boolean '" + v + "' for " + key);
    };
    if (key == "preset") {
      const std::size_t keep_budget = cfg.strategy.coreset_budget;
      cfg.strategy = strategy_preset(val);
      if (keep_budget != 0 && keep_budget != kBudgetByModality) {
        cfg.strategy.coreset_budget = keep_budget;
      }
    } else if (key == "use_nas") {
      cfg.strategy.use_nas = to_bool(val);
    } else if (key == "use_kd") {
      cfg.strategy.use_kd = to_bool(val);
    } else if (key == "use_alpha_reg") {
      cfg.strategy.use_alpha_reg = to_bool(val);
    } else if (key == "use_balancing") {
      cfg.strategy.use_balancing = to_bool(val);
    } else if (key == "replay_mode") {
      cfg.strategy.replay_mode = replay_mode_from_name(val);
    } else if (key == "coreset_budget") {
      cfg.strategy.coreset_budget = std::stoull(val);
    } else if (key == "mu") {
      cfg.loss.mu = std::stod(val);
    } else if (key == "lambda") {
      cfg.loss.lambda = std::stod(val);
    } else {
      throw ConfigError("strategy-overrides: unknown key '" + key + "'");
    }
  }
}

}  // namespace idarts
