#pragma once

#include <memory>
#include <string>
#include <vector>

#include "idarts/eval.hpp"
#include "idarts/memory.hpp"
#include "idarts/search.hpp"

namespace idarts {

// Strategy flags spanning the method/baseline matrix:
//   naive          : replay none, kd off, balancing off, nas off
//   replay         : replay random, kd off, balancing off, nas off
//   lwf            : replay none, kd on, balancing off, nas off
//   e2e            : replay herding, kd on, balancing on, nas off
//   darts          : nas on, replay herding, kd off, balancing off
//   idarts         : nas on, replay herding, kd on, balancing on
//   idarts_star    : idarts plus alpha regularization
struct StrategyConfig {
  bool use_nas = true;
  bool use_kd = true;
  bool use_alpha_reg = true;
  bool use_balancing = true;
  ReplayMode replay_mode = ReplayMode::herding;
  std::size_t coreset_budget = 1000;
};

inline StrategyConfig strategy_preset(const std::string& name) {
  StrategyConfig s;
  if (name == "naive") {
    s = {false, false, false, false, ReplayMode::none, 0};
  } else if (name == "replay") {
    s = {false, false, false, false, ReplayMode::random, 1000};
  } else if (name == "lwf") {
    s = {false, true, false, false, ReplayMode::none, 0};
  } else if (name == "e2e") {
    s = {false, true, false, true, ReplayMode::herding, 1000};
  } else if (name == "darts") {
    s = {true, false, false, false, ReplayMode::herding, 1000};
  } else if (name == "idarts") {
    s = {true, true, false, true, ReplayMode::herding, 1000};
  } else if (name == "idarts_star") {
    s = {true, true, true, true, ReplayMode::herding, 1000};
  } else {
    throw ConfigError("strategy.preset: unknown preset '" + name + "'");
  }
  return s;
}

struct ContinualConfig {
  CellSpec cell_spec;
  Dim dim = Dim::conv1d;
  std::size_t in_channels = 2;
  std::size_t stem_kernel = 5;
  std::size_t stem_stride = 2;
  StrategyConfig strategy;
  SearchConfig search;
  LossWeights loss;
  GenotypeOptions genotype_opts;
  DeriveOptions derive_opts;
  OpKind fixed_op = OpKind::sep_conv_3;       // baseline architecture op
  std::string teacher_for_search = "child";   // "child" | "supernet"
  std::uint64_t master_seed = 1;

  // flag-resolved loss weights
  LossWeights effective_loss() const {
    LossWeights w = loss;
    if (!strategy.use_kd) w.mu = 0.0;
    if (!strategy.use_alpha_reg) w.lambda = 0.0;
    return w;
  }
};

// mutable state of one continual run; checkpointable at task boundaries
struct ContinualState {
  ContinualConfig cfg;
  const Dataset* dataset = nullptr;
  TaskSchedule schedule;
  std::vector<int> class_position;  // global class id -> head position (-1 unseen)

  std::unique_ptr<Network> supernet;          // persists across tasks (nas only)
  std::unique_ptr<Network> deployed;          // current child / baseline model
  std::unique_ptr<Network> teacher;           // frozen previous deployed model
  std::unique_ptr<Network> teacher_supernet;  // frozen previous supernet (optional)
  Coreset coreset;
  AccuracyMatrix matrix;
  std::vector<Genotype> genotype_history;
  std::vector<AlphaTable> alpha_snapshots;  // one per completed task (nas only)

  MetricsSink metrics;
  TimingLog timing;
  AuditLog audit;
  std::size_t completed_tasks = 0;
  std::size_t max_params_seen = 0;
};

inline ContinualState make_state(const ContinualConfig& cfg, const Dataset& dataset,
                                 const TaskSchedule& schedule) {
  ContinualState st;
  st.cfg = cfg;
  st.cfg.cell_spec.validate();
  st.dataset = &dataset;
  st.schedule = schedule;
  st.schedule.validate(dataset.n_classes());
  st.class_position.assign(dataset.n_classes(), -1);
  st.coreset.budget = cfg.strategy.coreset_budget;
  return st;
}

// task-n slice of a dataset split, tagged with its source task index
inline LabeledSet task_slice(const Dataset& ds, const TaskSchedule& schedule, std::size_t task,
                             const std::string& split) {
  const auto& set = ds.split(split);
  const auto& classes = schedule.tasks.at(task - 1);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), set.class_ids[i]) != classes.end()) {
      idx.push_back(i);
    }
  }
  LabeledSet out = set.subset(idx);
  for (auto& t : out.source_tasks) t = task;
  return out;
}

// uniform draw over the replay pool: task data alone (mode none) or the
// concatenation with the stored exemplars
inline Batch replay_batch(const LabeledSet& task_data, const Coreset& core, std::size_t batch_size,
                          ReplayMode mode, const std::vector<int>& class_position, Rng& rng,
                          AuditLog* audit = nullptr, long task_k = 0,
                          const std::string& stage = "replay") {
  if (batch_size == 0) throw ArgumentError("replay_batch: batch_size must be >= 1");
  LabeledSet pool =
      mode == ReplayMode::none ? task_data : LabeledSet::concat(task_data, core.as_set());
  if (pool.size() == 0) throw ArgumentError("replay_batch: empty pool");
  return sample_uniform_batch(pool, batch_size, class_position, rng, false, nullptr, audit, task_k,
                              stage);
}

// teacher := frozen deep copy of the deployed model
inline void snapshot_teacher(ContinualState& st) {
  if (!st.deployed) throw StateError("snapshot_teacher: no deployed model");
  st.teacher = std::make_unique<Network>(st.deployed->clone());
  if (st.cfg.strategy.use_nas && st.cfg.teacher_for_search == "supernet" && st.supernet) {
    st.teacher_supernet = std::make_unique<Network>(st.supernet->clone());
  }
}

inline Genotype fixed_genotype(const CellSpec& spec, OpKind op) {
  Genotype g;
  g.cell_spec = spec;
  for (const auto& id : spec.edges()) g.edges.push_back({id.cell, id.from, id.to, op});
  return g;
}

namespace detail {

inline FeatureFn make_feature_fn(Network& net, std::size_t chunk = 256) {
  return [&net, chunk](const Tensor& x) {
    const std::size_t n = x.size(0);
    const std::size_t per = x.numel() / n;
    Tensor out;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t stop = std::min(n, start + chunk);
      std::vector<std::size_t> cs = x.shape();
      cs[0] = stop - start;
      Tensor part(cs);
      std::copy(x.data() + start * per, x.data() + stop * per, part.data());
      Tensor feats = net.features(part, false);
      if (out.empty()) {
        out = Tensor({n, feats.size(1)});
      }
      std::copy(feats.data(), feats.data() + feats.numel(), out.data() + start * feats.size(1));
    }
    return out;
  };
}

}  // namespace detail

// One full task cycle: expand heads, (search -> infer -> derive) under NAS,
// retrain, refresh the exemplar store, balance the heads on it, freeze the
// teacher, evaluate on everything seen so far.
inline void run_task(ContinualState& st, std::size_t n) {
  if (n != st.completed_tasks + 1) {
    throw StateError("run_task: task " + std::to_string(n) + " requires tasks 1.." +
                     std::to_string(n - 1) + " completed");
  }
  const auto& cfg = st.cfg;
  const std::string tag = "/task" + std::to_string(n);
  std::string stage = "expand_head";
  try {
    StageTimer task_timer(st.timing, "task", static_cast<long>(n));
    const auto& classes_n = st.schedule.tasks.at(n - 1);
    const std::size_t n_new = classes_n.size();
    {
      // head positions follow class introduction order
      std::size_t pos = st.schedule.classes_through(n - 1);
      for (int c : classes_n) st.class_position[c] = static_cast<int>(pos++);
    }
    const LossWeights weights = cfg.effective_loss();
    TrainContext ctx;
    ctx.metrics = &st.metrics;
    ctx.audit = &st.audit;
    ctx.task_k = static_cast<long>(n);
    ctx.upto_task = n;
    ctx.class_position = st.class_position;

    {
      StageTimer t(st.timing, stage, static_cast<long>(n));
      Rng head_rng(cfg.master_seed, "head" + tag);
      if (cfg.strategy.use_nas) {
        if (!st.supernet) {
          NetworkRecipe r{cfg.dim, cfg.in_channels, cfg.cell_spec, cfg.stem_kernel,
                          cfg.stem_stride, {}, std::nullopt};
          Rng init_rng(cfg.master_seed, "init/supernet");
          st.supernet = std::make_unique<Network>(r, init_rng);
        }
        st.supernet->expand_head(n_new, head_rng);
      } else {
        if (!st.deployed) {
          NetworkRecipe r{cfg.dim, cfg.in_channels, cfg.cell_spec, cfg.stem_kernel,
                          cfg.stem_stride, {}, fixed_genotype(cfg.cell_spec, cfg.fixed_op)};
          Rng init_rng(cfg.master_seed, "init/fixed");
          st.deployed = std::make_unique<Network>(r, init_rng);
        }
        st.deployed->expand_head(n_new, head_rng);
      }
    }

    LabeledSet task_train = task_slice(*st.dataset, st.schedule, n, "train");
    LabeledSet pool = cfg.strategy.replay_mode == ReplayMode::none
                          ? task_train
                          : LabeledSet::concat(task_train, st.coreset.as_set());

    if (cfg.strategy.use_nas) {
      stage = "search";
      {
        StageTimer t(st.timing, stage, static_cast<long>(n));
        Network* search_teacher =
            cfg.teacher_for_search == "supernet" ? st.teacher_supernet.get() : st.teacher.get();
        Rng rng(cfg.master_seed, "search" + tag);
        AlphaTable snap = search_phase(*st.supernet, pool, search_teacher, weights, cfg.search,
                                       ctx, rng);
        st.alpha_snapshots.push_back(snap);
        st.metrics.add("alpha", static_cast<long>(n), 0, "mean_abs", mean_abs_alpha(*st.supernet));
        st.metrics.add("alpha", static_cast<long>(n), 0, "norm",
                       alpha_reg_from_params(st.supernet->alpha_params()));
      }
      stage = "infer_genotype";
      Genotype g;
      {
        StageTimer t(st.timing, stage, static_cast<long>(n));
        g = infer_genotype(st.supernet->alpha_table(), cfg.cell_spec, cfg.genotype_opts);
        g.head_sizes = st.supernet->head_sizes();
        st.genotype_history.push_back(g);
      }
      stage = "derive_child";
      {
        StageTimer t(st.timing, stage, static_cast<long>(n));
        Rng rng(cfg.master_seed, "init/child" + tag);
        st.deployed = std::make_unique<Network>(derive_child(*st.supernet, g, rng,
                                                             cfg.derive_opts));
      }
    } else {
      st.genotype_history.push_back(
          [&] {
            Genotype g = fixed_genotype(cfg.cell_spec, cfg.fixed_op);
            g.head_sizes = st.deployed->head_sizes();
            return g;
          }());
    }

    stage = "retrain";
    {
      StageTimer t(st.timing, stage, static_cast<long>(n));
      Rng rng(cfg.master_seed, "retrain" + tag);
      retrain_phase(*st.deployed, pool, st.teacher.get(), weights, cfg.search, ctx, rng);
    }

    if (cfg.strategy.replay_mode != ReplayMode::none) {
      stage = "update_coreset";
      StageTimer t(st.timing, stage, static_cast<long>(n));
      std::vector<int> classes_seen;
      for (std::size_t m = 1; m <= n; ++m) {
        classes_seen.insert(classes_seen.end(), st.schedule.tasks[m - 1].begin(),
                            st.schedule.tasks[m - 1].end());
      }
      Rng rng(cfg.master_seed, "coreset" + tag);
      st.coreset = update_coreset(st.coreset, task_train, detail::make_feature_fn(*st.deployed),
                                  classes_seen, cfg.strategy.replay_mode, rng);
      st.metrics.add("coreset", static_cast<long>(n), 0, "size",
                     static_cast<double>(st.coreset.total_size()));
    }

    if (cfg.strategy.use_balancing) {
      stage = "balance";
      StageTimer t(st.timing, stage, static_cast<long>(n));
      Rng rng(cfg.master_seed, "balance" + tag);
      class_balanced_finetune(*st.deployed, st.coreset.as_set(), cfg.search, weights,
                              st.teacher.get(), ctx, rng);
    }

    stage = "snapshot_teacher";
    {
      StageTimer t(st.timing, stage, static_cast<long>(n));
      snapshot_teacher(st);
    }

    stage = "evaluate";
    {
      StageTimer t(st.timing, stage, static_cast<long>(n));
      std::vector<double> row;
      for (std::size_t m = 1; m <= n; ++m) {
        LabeledSet test_m = task_slice(*st.dataset, st.schedule, m, "test");
        const double acc = task_accuracy(*st.deployed, test_m, n, st.class_position);
        row.push_back(acc);
        st.metrics.add("eval", static_cast<long>(n), static_cast<long>(m), "accuracy", acc);
      }
      st.matrix.push_row(row);

      const ParamCount child_pc = param_count(*st.deployed);
      st.metrics.add("params", static_cast<long>(n), 0, "child_total",
                     static_cast<double>(child_pc.total()));
      st.max_params_seen = std::max(st.max_params_seen, child_pc.total());
      if (cfg.strategy.use_nas) {
        const ParamCount pc = param_count(*st.supernet);
        st.metrics.add("params", static_cast<long>(n), 0, "supernet_weights",
                       static_cast<double>(pc.weights));
        st.metrics.add("params", static_cast<long>(n), 0, "supernet_alpha",
                       static_cast<double>(pc.alpha));
        st.metrics.add("params", static_cast<long>(n), 0, "supernet_total",
                       static_cast<double>(pc.total()));
        st.max_params_seen = std::max(st.max_params_seen, pc.total());
      }
      st.metrics.add("params", static_cast<long>(n), 0, "max_seen",
                     static_cast<double>(st.max_params_seen));
    }

    st.completed_tasks = n;
  } catch (const std::exception& e) {
    throw StateError("task " + std::to_string(n) + " failed in stage '" + stage + "': " + e.what());
  }
}

// run-level summary, computed once all scheduled tasks are complete
inline RunMetrics run_metrics(const ContinualState& st) {
  RunMetrics rm;
  std::vector<std::size_t> test_sizes;
  for (std::size_t m = 1; m <= st.schedule.n_tasks(); ++m) {
    test_sizes.push_back(task_slice(*st.dataset, st.schedule, m, "test").size());
  }
  rm.final_accuracy = final_accuracy(st.matrix, test_sizes);
  rm.final_accuracy_task_mean = final_accuracy_task_mean(st.matrix, st.schedule.n_tasks());
  rm.max_params = st.max_params_seen;
  rm.final_params = st.deployed ? param_count(*const_cast<ContinualState&>(st).deployed).total() : 0;
  // stage timers nest inside the per-task timers; training time is the sum
  // of the task spans (dataset generation is timed separately)
  double task_seconds = 0.0;
  for (const auto& r : st.timing.rows()) {
    if (r.stage == "task") task_seconds += r.seconds;
  }
  rm.wall_time_days = seconds_to_days(task_seconds);
  return rm;
}

}  // namespace idarts
