#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "idarts/checkpoint.hpp"

#include <CLI11.hpp>

namespace idarts {

namespace cli_detail {

inline std::string resolve_out_dir(const std::string& flag_out, const ExperimentConfig& cfg) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  const char* root = std::getenv("IDARTS_OUT_ROOT");
  const std::string base = root ? std::string(root) : std::string("runs");
  return base + "/run-seed" + std::to_string(cfg.seed);
}

// materializes the dataset: an external manifest, or the generator output
// cached under <run_dir>/data (regeneration is byte-identical, so loading the
// cache and regenerating are interchangeable)
inline Dataset prepare_dataset(const ExperimentConfig& cfg, const std::string& run_dir,
                               TimingLog* timing) {
  if (!cfg.dataset_manifest.empty()) return load_dataset(cfg.dataset_manifest);
  const std::string data_dir = run_dir + "/data";
  const std::string manifest = data_dir + "/manifest.json";
  if (fs::exists(manifest)) return load_dataset(manifest);
  const auto& g = *cfg.generator;
  if (g.n_train_per_class == 0 || g.n_test_per_class == 0) {
    throw ConfigError("dataset.generator: per-class counts must be >= 1");
  }
  const auto start = std::chrono::steady_clock::now();
  Dataset ds = make_rf_dataset(g.modulations, g.n_train_per_class, g.n_test_per_class, g.length,
                               g.snr_db, mix_seed(cfg.seed, "data"));
  save_dataset(ds, data_dir);
  if (timing) {
    timing->add("gen_data", 0,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return load_dataset(manifest);
}

inline TaskSchedule make_schedule(const ExperimentConfig& cfg, const Dataset& ds) {
  return split_tasks(ds.n_classes(), cfg.tasks.n_tasks, cfg.tasks.grouping,
                     cfg.tasks.explicit_groups, ds.manifest.classes);
}

inline void write_summary_and_outputs(ContinualState& st, const std::string& run_dir) {
  const RunMetrics rm = run_metrics(st);
  const long n = static_cast<long>(st.schedule.n_tasks());
  st.metrics.add("summary", n, 0, "final_accuracy_weighted", rm.final_accuracy);
  st.metrics.add("summary", n, 0, "final_accuracy_task_mean", rm.final_accuracy_task_mean);
  st.metrics.add("summary", n, 0, "max_params", static_cast<double>(rm.max_params));
  st.metrics.add("summary", n, 0, "final_params", static_cast<double>(rm.final_params));
  st.metrics.write_csv(run_dir + "/metrics.csv");
  st.timing.write_csv(run_dir + "/timing.csv");
  if (!st.alpha_snapshots.empty()) {
    detail::write_file(run_dir + "/alpha_hist.csv",
                       alpha_histogram_csv(alpha_histogram(st.alpha_snapshots, 20)));
  }
}

// shared run driver: builds or restores state, then runs the remaining tasks
inline int execute_run(ExperimentConfig cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  RunLock lock(run_dir);
  TimingLog pre_timing;
  Dataset dataset = prepare_dataset(cfg, run_dir, &pre_timing);
  const Modality modality = dataset.manifest.modality;
  const std::size_t in_channels = dataset.manifest.shape.at(0);
  ContinualConfig ccfg = cfg.continual_config(modality, in_channels);
  cfg.strategy.coreset_budget = ccfg.strategy.coreset_budget;  // echo the resolved value

  const std::string resolved = cfg.to_json().dump(2) + "\n";
  const std::string resolved_path = run_dir + "/config.resolved.json";
  if (fs::exists(resolved_path)) {
    // stop_after_task is a run-control knob, not experiment identity; resume
    // clears it, so it is excluded from the comparison
    auto identity = [](const std::string& text) {
      nlohmann::json j = nlohmann::json::parse(text);
      j.erase("stop_after_task");
      return j.dump();
    };
    if (identity(detail::read_file(resolved_path)) != identity(resolved)) {
      throw ConfigError("run directory " + run_dir +
                        " holds a different resolved config; refusing to mix runs");
    }
  } else {
    detail::write_file(resolved_path, resolved);
  }

  TaskSchedule schedule = make_schedule(cfg, dataset);
  ContinualState st = make_state(ccfg, dataset, schedule);
  st.timing.add_rows(pre_timing.rows());

  const std::size_t n_tasks = schedule.n_tasks();
  const std::size_t resume_from = last_completed_task(run_dir, n_tasks);
  if (resume_from > 0) {
    restore_state(st, run_dir, resume_from);
    if (fs::exists(run_dir + "/timing.csv")) {
      st.timing = TimingLog();
      st.timing.add_rows(TimingLog::parse_csv(detail::read_file(run_dir + "/timing.csv")));
    }
  }
  const std::size_t stop = cfg.stop_after_task == 0
                               ? n_tasks
                               : std::min<std::size_t>(cfg.stop_after_task, n_tasks);
  for (std::size_t n = resume_from + 1; n <= stop; ++n) {
    run_task(st, n);
    save_task_checkpoint(st, run_dir);
    std::cout << "task " << n << "/" << n_tasks << " done; accuracy row:";
    for (double a : st.matrix.rows.back()) std::cout << " " << format_value(a);
    std::cout << "\n";
  }
  if (st.completed_tasks == n_tasks) {
    write_summary_and_outputs(st, run_dir);
    const RunMetrics rm = run_metrics(st);
    std::cout << "run complete: " << run_dir << "\n"
              << "  final_accuracy_weighted " << format_value(rm.final_accuracy) << "\n"
              << "  final_accuracy_task_mean " << format_value(rm.final_accuracy_task_mean) << "\n"
              << "  max_params " << rm.max_params << "\n"
              << "  final_params " << rm.final_params << "\n"
              << "  wall_time_days " << format_value(rm.wall_time_days) << "\n";
  } else {
    std::cout << "stopped after task " << st.completed_tasks << " of " << n_tasks
              << " (checkpointed in " << run_dir << ")\n";
  }
  return 0;
}

}  // namespace cli_detail

inline int cmd_run(const std::string& config_path, const std::string& flag_out,
                   std::optional<std::uint64_t> flag_seed, const std::string& flag_device,
                   const std::string& overrides) {
  ExperimentConfig cfg = ExperimentConfig::parse(detail::read_file(config_path));
  if (flag_seed) cfg.seed = *flag_seed;
  if (!flag_device.empty()) cfg.device = flag_device;
  apply_strategy_overrides(cfg, overrides);
  cfg.validate();
  const std::string run_dir = cli_detail::resolve_out_dir(flag_out, cfg);
  return cli_detail::execute_run(cfg, run_dir);
}

inline int cmd_gen_data(const std::string& config_path, const std::string& flag_out,
                        std::optional<std::uint64_t> flag_seed) {
  ExperimentConfig cfg = ExperimentConfig::parse(detail::read_file(config_path));
  if (flag_seed) cfg.seed = *flag_seed;
  if (!cfg.generator) throw ConfigError("dataset.generator: gen-data needs a generator block");
  const auto& g = *cfg.generator;
  if (g.n_train_per_class == 0 || g.n_test_per_class == 0) {
    throw ConfigError("dataset.generator: per-class counts must be >= 1");
  }
  const std::string out = flag_out.empty() ? cli_detail::resolve_out_dir("", cfg) + "/data"
                                           : flag_out;
  Dataset ds = make_rf_dataset(g.modulations, g.n_train_per_class, g.n_test_per_class, g.length,
                               g.snr_db, mix_seed(cfg.seed, "data"));
  save_dataset(ds, out);
  std::cout << "dataset written: " << out << "/manifest.json\n";
  std::size_t total = 0;
  for (std::size_t c = 0; c < g.modulations.size(); ++c) {
    const std::size_t n = g.n_train_per_class + g.n_test_per_class;
    std::cout << "  class " << c << " (" << g.modulations[c] << "): " << g.n_train_per_class
              << " train + " << g.n_test_per_class << " test\n";
    total += n;
  }
  std::cout << "total examples: " << total << "\n";
  return 0;
}

inline int cmd_resume(const std::string& run_dir) {
  const std::string cfg_path = run_dir + "/config.resolved.json";
  if (!fs::exists(cfg_path)) {
    throw IoError("resume: " + cfg_path + " not found; not a run directory");
  }
  ExperimentConfig cfg = ExperimentConfig::parse(detail::read_file(cfg_path));
  cfg.validate();
  // resuming continues to completion even if the original run was truncated
  // via stop_after_task
  cfg.stop_after_task = 0;
  if (last_completed_task(run_dir, cfg.tasks.n_tasks) == 0) {
    throw StateError("resume: no completed task checkpoint in " + run_dir);
  }
  return cli_detail::execute_run(cfg, run_dir);
}

inline int cmd_report(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw ArgumentError("report: at least one run directory required");
  std::vector<double> finals;
  bool all_complete = true;
  for (const auto& dir : run_dirs) {
    const std::string metrics_path = dir + "/metrics.csv";
    if (!fs::exists(dir + "/config.resolved.json") || !fs::exists(metrics_path)) {
      throw IoError("report: " + dir + " is not a completed run directory");
    }
    const auto rows = MetricsSink::parse_csv(detail::read_file(metrics_path));
    std::cout << "run: " << dir << "\n";
    bool has_summary = false;
    for (const auto& r : rows) {
      if (r.stage != "summary") continue;
      has_summary = true;
      std::cout << "  " << r.metric << " " << format_value(r.value) << "\n";
      if (r.metric == "final_accuracy_weighted") finals.push_back(r.value);
    }
    if (fs::exists(dir + "/timing.csv")) {
      double task_seconds = 0.0;
      for (const auto& r : TimingLog::parse_csv(detail::read_file(dir + "/timing.csv"))) {
        if (r.stage == "task") task_seconds += r.seconds;
      }
      std::cout << "  wall_time_days " << format_value(seconds_to_days(task_seconds)) << "\n";
    }
    for (std::size_t t = 1;; ++t) {
      const std::string gpath = dir + "/" + task_dir_name(t) + "/genotype.json";
      if (!fs::exists(gpath)) break;
      const Genotype g = Genotype::parse(detail::read_file(gpath));
      std::cout << "  genotype task " << t << ":";
      for (const auto& e : g.edges) {
        std::cout << " c" << e.cell << ".e" << e.from << "_" << e.to << "=" << op_name(e.op);
      }
      std::cout << "\n";
    }
    if (!has_summary) {
      all_complete = false;
      std::cout << "  warning: run incomplete; partial report (last completed task "
                << last_completed_task(dir, 1000) << ")\n";
    }
  }
  if (finals.size() >= 2) {
    double lo = finals[0], hi = finals[0], sum = 0.0;
    for (double v : finals) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double mean = sum / static_cast<double>(finals.size());
    std::cout << "aggregate (" << finals.size() << " runs): final_accuracy_weighted "
              << format_value(mean) << " +- " << format_value((hi - lo) / 2.0) << "\n";
  }
  return all_complete ? 0 : 0;
}

inline int cmd_alpha_hist(const std::string& run_dir, std::size_t bins) {
  std::vector<AlphaTable> snapshots;
  for (std::size_t t = 1;; ++t) {
    const std::string path = run_dir + "/" + task_dir_name(t) + "/alpha.bin";
    if (!fs::exists(path)) break;
    snapshots.push_back(parse_alpha(detail::read_file(path)));
  }
  if (snapshots.empty()) {
    throw StateError("alpha-hist: no alpha snapshots in " + run_dir +
                     " (NAS disabled or no completed tasks)");
  }
  const auto hists = alpha_histogram(snapshots, bins);
  const std::string out = run_dir + "/alpha_hist.csv";
  detail::write_file(out, alpha_histogram_csv(hists));
  std::cout << "alpha histogram written: " << out << "\n";
  for (const auto& h : hists) {
    std::cout << "  task " << h.task << ": mean " << format_value(h.mean) << ", mean_abs "
              << format_value(h.mean_abs) << ", entries " << h.total << "\n";
  }
  return 0;
}

inline int cli_main(int argc, char** argv) {
  CLI::App app{"incremental differentiable architecture search experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, device, overrides, run_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> report_dirs;
  std::size_t bins = 20;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  auto* run = app.add_subcommand("run", "execute a full continual run from a config");
  run->add_option("--config", config_path, "experiment config (json)")->required();
  run->add_option("--out", out_dir, "run output directory");
  run->add_option("--device", device, "compute device (cpu)");
  run->add_option("--strategy-overrides", overrides, "comma list of key=value strategy overrides");
  add_seed(run);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic RF dataset");
  gen->add_option("--config", config_path, "config with a dataset.generator block")->required();
  gen->add_option("--out", out_dir, "dataset output directory");
  add_seed(gen);

  auto* res = app.add_subcommand("resume", "resume an interrupted run");
  res->add_option("--run", run_dir, "run directory")->required();

  auto* rep = app.add_subcommand("report", "summarize one or more completed runs");
  rep->add_option("dirs", report_dirs, "run directories")->required();

  auto* hist = app.add_subcommand("alpha-hist", "export per-task alpha histograms");
  hist->add_option("--run", run_dir, "run directory")->required();
  hist->add_option("--bins", bins, "histogram bin count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::optional<std::uint64_t> seed_opt =
        seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt;
    if (run->parsed()) return cmd_run(config_path, out_dir, seed_opt, device, overrides);
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed_opt);
    if (res->parsed()) return cmd_resume(run_dir);
    if (rep->parsed()) return cmd_report(report_dirs);
    if (hist->parsed()) return cmd_alpha_hist(run_dir, bins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace idarts
