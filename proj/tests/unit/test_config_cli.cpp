#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "idarts/cli.hpp"

using namespace idarts;

namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& tag) {
  const std::string dir = (fs::temp_directory_path() / ("idarts_cli_" + tag)).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// minimal 3-task configuration that runs in a couple of seconds
std::string tiny_run_config(std::uint64_t seed, const std::string& out_dir,
                            std::size_t stop_after = 0, const std::string& strategy = "") {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["dataset"] = {{"generator",
                   {{"modulations", {"BPSK", "QPSK", "AM-DSB", "FM"}},
                    {"n_train_per_class", 12},
                    {"n_test_per_class", 6},
                    {"length", 32},
                    {"snr_db", 12.0}}}};
  j["tasks"] = {{"n_tasks", 3}, {"grouping", "explicit"},
                {"explicit", {{0, 1}, {2}, {3}}}};
  j["strategy"] = {{"use_nas", true}, {"use_kd", true}, {"use_alpha_reg", true},
                   {"use_balancing", true}, {"replay_mode", "herding"}, {"coreset_budget", 8}};
  j["model"] = {{"n_cells", 1}, {"n_nodes", 1}, {"channels", 4},
                {"reduction_positions", nlohmann::json::array()},
                {"stem_kernel", 3}, {"stem_stride", 2}};
  j["search"] = {{"epochs_search", 2}, {"epochs_retrain", 3}, {"finetune_epochs", 2},
                 {"batch_size", 8}};
  if (stop_after > 0) j["stop_after_task"] = stop_after;
  if (!strategy.empty()) j["strategy"]["preset"] = strategy;
  return j.dump(2);
}

std::string write_config(const std::string& dir, const std::string& content) {
  const std::string path = dir + "/config.json";
  detail::write_file(path, content);
  return path;
}

std::vector<MetricRow> eval_rows(const std::string& run_dir) {
  std::vector<MetricRow> out;
  for (const auto& r : MetricsSink::parse_csv(detail::read_file(run_dir + "/metrics.csv"))) {
    if (r.stage == "eval") out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults follow the published hyperparameters") {
  ExperimentConfig cfg = ExperimentConfig::parse(R"({"dataset":{"generator":{}}})");
  REQUIRE(cfg.loss.mu == 0.5);
  REQUIRE(cfg.loss.lambda == 1e-3);
  REQUIRE(cfg.loss.temperature == 1.0);
  REQUIRE(cfg.search.epochs_search == 50);
  REQUIRE(cfg.search.epochs_retrain == 125);
  REQUIRE(cfg.search.lr_w == 0.05);
  REQUIRE(cfg.search.lr_alpha == 5e-3);
  REQUIRE(cfg.search.weight_decay == 2e-4);
  REQUIRE(cfg.search.batch_size == 128);
  REQUIRE(cfg.strategy.coreset_budget == kBudgetByModality);
  // modality-dependent defaults: 1000 for signals, 2000 for images
  REQUIRE(cfg.continual_config(Modality::signal1d, 2).strategy.coreset_budget == 1000);
  REQUIRE(cfg.continual_config(Modality::image2d, 3).strategy.coreset_budget == 2000);
  // missing mu is defaulted and echoed in the resolved json
  REQUIRE(cfg.to_json()["loss"]["mu"] == 0.5);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig cfg = ExperimentConfig::parse(R"({"dataset":{"generator":{}}})");
  cfg.tasks.grouping = "zigzag";
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("tasks.grouping"));
  cfg.tasks.grouping = "explicit";
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("tasks"));
  cfg.tasks.grouping = "contiguous";
  cfg.device = "gpu";
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("device"));
  cfg.device = "cpu";
  cfg.dataset_manifest = "also-set.json";
  REQUIRE_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("dataset"));
}

TEST_CASE("explicit task grouping round-trips through serialization") {
  ExperimentConfig cfg = ExperimentConfig::parse(R"({
    "dataset": {"generator": {}},
    "tasks": {"n_tasks": 2, "grouping": "explicit", "explicit": [[0,2],[1,3]]}
  })");
  ExperimentConfig back = ExperimentConfig::parse(cfg.to_json().dump());
  REQUIRE(back.tasks.explicit_groups == cfg.tasks.explicit_groups);
  REQUIRE(back.tasks.grouping == "explicit");
}

TEST_CASE("strategy overrides parse and apply") {
  ExperimentConfig cfg = ExperimentConfig::parse(R"({"dataset":{"generator":{}}})");
  apply_strategy_overrides(cfg, "preset=idarts,use_alpha_reg=true,coreset_budget=123,mu=0.25");
  REQUIRE(cfg.strategy.use_nas);
  REQUIRE(cfg.strategy.use_alpha_reg);
  REQUIRE(cfg.strategy.coreset_budget == 123);
  REQUIRE(cfg.loss.mu == 0.25);
  REQUIRE_THROWS_AS(apply_strategy_overrides(cfg, "bogus=1"), ConfigError);
  REQUIRE_THROWS_AS(apply_strategy_overrides(cfg, "use_kd"), ConfigError);
}

TEST_CASE("gen-data writes a loadable dataset and is byte-deterministic") {
  const std::string base = temp_dir("gendata");
  nlohmann::ordered_json j;
  j["seed"] = 5;
  j["dataset"] = {{"generator",
                   {{"modulations", {"BPSK", "GFSK"}},
                    {"n_train_per_class", 10},
                    {"n_test_per_class", 4},
                    {"length", 32},
                    {"snr_db", 10.0}}}};
  const std::string cfg_path = write_config(base, j.dump());

  REQUIRE(cmd_gen_data(cfg_path, base + "/d1", std::nullopt) == 0);
  REQUIRE(cmd_gen_data(cfg_path, base + "/d2", std::nullopt) == 0);
  REQUIRE(detail::read_file(base + "/d1/train_x.bin") ==
          detail::read_file(base + "/d2/train_x.bin"));
  REQUIRE(detail::read_file(base + "/d1/manifest.json") ==
          detail::read_file(base + "/d2/manifest.json"));
  Dataset ds = load_dataset(base + "/d1/manifest.json");
  REQUIRE(ds.split("train").size() == 20);
  REQUIRE(ds.split("test").size() == 8);

  // zero per-class request is a validation error
  j["dataset"]["generator"]["n_train_per_class"] = 0;
  const std::string bad_path = write_config(base, j.dump());
  REQUIRE_THROWS_WITH(cmd_gen_data(bad_path, base + "/d3", std::nullopt),
                      Catch::Matchers::ContainsSubstring("per-class"));
}

TEST_CASE("cmd_run end to end: outputs, determinism, idempotence") {
  const std::string base = temp_dir("run");
  const std::string cfg_path =
      write_config(base, tiny_run_config(3, base + "/out_a"));
  REQUIRE(cmd_run(cfg_path, "", std::nullopt, "", "") == 0);

  REQUIRE(fs::exists(base + "/out_a/config.resolved.json"));
  REQUIRE(fs::exists(base + "/out_a/metrics.csv"));
  REQUIRE(fs::exists(base + "/out_a/timing.csv"));
  REQUIRE(fs::exists(base + "/out_a/alpha_hist.csv"));
  REQUIRE(fs::exists(base + "/out_a/task_003/state.json"));
  // resolved config echoes defaults
  const auto resolved = nlohmann::json::parse(detail::read_file(base + "/out_a/config.resolved.json"));
  REQUIRE(resolved["loss"]["mu"] == 0.5);
  REQUIRE(resolved["search"]["lr_w"] == 0.05);

  // same config and seed into a second directory: identical metrics bytes
  const std::string cfg_b = write_config(temp_dir("run_b"), tiny_run_config(3, base + "/out_b"));
  REQUIRE(cmd_run(cfg_b, "", std::nullopt, "", "") == 0);
  REQUIRE(detail::read_file(base + "/out_a/metrics.csv") ==
          detail::read_file(base + "/out_b/metrics.csv"));

  // re-running over the completed directory is a no-op success
  REQUIRE(cmd_run(cfg_path, "", std::nullopt, "", "") == 0);
  REQUIRE(detail::read_file(base + "/out_a/metrics.csv") ==
          detail::read_file(base + "/out_b/metrics.csv"));

  // a different seed produces different metrics
  const std::string cfg_c = write_config(temp_dir("run_c"), tiny_run_config(4, base + "/out_c"));
  REQUIRE(cmd_run(cfg_c, "", std::nullopt, "", "") == 0);
  REQUIRE(detail::read_file(base + "/out_a/metrics.csv") !=
          detail::read_file(base + "/out_c/metrics.csv"));
}

TEST_CASE("interrupted run resumes to the identical accuracy matrix") {
  const std::string base = temp_dir("resume");
  // uninterrupted reference
  const std::string cfg_full = write_config(base, tiny_run_config(7, base + "/full"));
  REQUIRE(cmd_run(cfg_full, "", std::nullopt, "", "") == 0);

  // interrupt after task 1 of 3, then resume
  const std::string base2 = temp_dir("resume2");
  const std::string cfg_part =
      write_config(base2, tiny_run_config(7, base2 + "/part", /*stop_after=*/1));
  REQUIRE(cmd_run(cfg_part, "", std::nullopt, "", "") == 0);
  REQUIRE(!fs::exists(base2 + "/part/task_002"));
  REQUIRE(cmd_resume(base2 + "/part") == 0);

  const std::string m_full = detail::read_file(base + "/full/task_003/matrix.bin");
  const std::string m_part = detail::read_file(base2 + "/part/task_003/matrix.bin");
  REQUIRE(m_full == m_part);  // bitwise-identical accuracy matrices

  // eval rows agree exactly too
  auto ra = eval_rows(base + "/full");
  auto rb = eval_rows(base2 + "/part");
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    REQUIRE(ra[i].value == rb[i].value);
    REQUIRE(ra[i].task_k == rb[i].task_k);
  }

  SECTION("resume of a completed run is a no-op") {
    const std::string before = detail::read_file(base + "/full/metrics.csv");
    REQUIRE(cmd_resume(base + "/full") == 0);
    REQUIRE(detail::read_file(base + "/full/metrics.csv") == before);
  }

  SECTION("missing coreset file is reported with its path") {
    fs::remove(base2 + "/part/task_003/state.json");
    fs::remove(base2 + "/part/task_002/coreset.bin");
    REQUIRE_THROWS_WITH(cmd_resume(base2 + "/part"),
                        Catch::Matchers::ContainsSubstring("task_002/coreset.bin"));
  }

  SECTION("resume with no completed checkpoint is an error") {
    const std::string empty = temp_dir("resume_empty");
    fs::create_directories(empty + "/run");
    detail::write_file(empty + "/run/config.resolved.json",
                       detail::read_file(base + "/full/config.resolved.json"));
    REQUIRE_THROWS_WITH(cmd_resume(empty + "/run"),
                        Catch::Matchers::ContainsSubstring("no completed task checkpoint"));
  }
}

TEST_CASE("report bit-matches the metrics file and aggregates seeds") {
  const std::string base = temp_dir("report");
  const std::string cfg1 = write_config(temp_dir("rep1"), tiny_run_config(11, base + "/r1"));
  const std::string cfg2 = write_config(temp_dir("rep2"), tiny_run_config(12, base + "/r2"));
  REQUIRE(cmd_run(cfg1, "", std::nullopt, "", "") == 0);
  REQUIRE(cmd_run(cfg2, "", std::nullopt, "", "") == 0);

  // capture report stdout
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const int rc = cmd_report({base + "/r1", base + "/r2"});
  std::cout.rdbuf(old);
  REQUIRE(rc == 0);
  const std::string out = captured.str();

  // every summary value string in the report matches the file bytes
  for (const auto& r : MetricsSink::parse_csv(detail::read_file(base + "/r1/metrics.csv"))) {
    if (r.stage != "summary") continue;
    REQUIRE(out.find(r.metric + " " + format_value(r.value)) != std::string::npos);
  }
  REQUIRE(out.find("aggregate (2 runs)") != std::string::npos);
  REQUIRE(out.find("+-") != std::string::npos);
  REQUIRE(out.find("genotype task 1") != std::string::npos);

  SECTION("empty directory is an error") {
    REQUIRE_THROWS_AS(cmd_report({base + "/does_not_exist"}), IoError);
  }
}

TEST_CASE("alpha-hist subcommand exports per-task histograms") {
  const std::string base = temp_dir("ahist");
  const std::string cfg = write_config(base, tiny_run_config(13, base + "/run"));
  REQUIRE(cmd_run(cfg, "", std::nullopt, "", "") == 0);
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const int rc = cmd_alpha_hist(base + "/run", 8);
  std::cout.rdbuf(old);
  REQUIRE(rc == 0);
  const std::string csv = detail::read_file(base + "/run/alpha_hist.csv");
  REQUIRE(csv.rfind("task,bin_lo,bin_hi,count\n", 0) == 0);
  // 3 tasks x 8 bins + header
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 8);

  const std::string nonas = temp_dir("ahist_nonas");
  REQUIRE_THROWS_AS(cmd_alpha_hist(nonas, 8), StateError);
}

TEST_CASE("invalid task grouping fails with a field-level message") {
  const std::string base = temp_dir("badgroup");
  nlohmann::json j = nlohmann::json::parse(tiny_run_config(3, base + "/out"));
  j["tasks"]["explicit"] = {{0, 1}, {1, 2}, {3}};
  const std::string cfg = write_config(base, j.dump());
  REQUIRE_THROWS_WITH(cmd_run(cfg, "", std::nullopt, "", ""),
                      Catch::Matchers::ContainsSubstring("tasks.grouping"));
}

TEST_CASE("run directory locking prevents concurrent ownership") {
  const std::string base = temp_dir("lock");
  fs::create_directories(base + "/run");
  RunLock lock(base + "/run");
  REQUIRE_THROWS_WITH(RunLock(base + "/run"), Catch::Matchers::ContainsSubstring("locked"));
}
