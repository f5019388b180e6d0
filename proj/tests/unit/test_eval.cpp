#include <catch2/catch_amalgamated.hpp>

#include "idarts/eval.hpp"

using namespace idarts;

namespace {

Network tiny_net(Rng& rng, std::size_t head = 4) {
  NetworkRecipe r;
  r.dim = Dim::conv1d;
  r.in_channels = 2;
  r.spec = {1, 1, 4, {}};
  r.stem_kernel = 3;
  r.stem_stride = 1;
  Network net(r, rng);
  Rng hrng(160);
  net.expand_head(head, hrng);
  return net;
}

LabeledSet random_set(std::size_t n, std::size_t classes, std::size_t length, Rng& rng) {
  LabeledSet s;
  s.modality = Modality::signal1d;
  s.x = Tensor::randn({n, 2, length}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    s.class_ids.push_back(static_cast<int>(i % classes));  // balanced
    s.example_ids.push_back(i);
    s.source_tasks.push_back(1);
  }
  return s;
}

}  // namespace

TEST_CASE("task_accuracy: perfect, chance, and counting oracle") {
  Rng rng(161);
  Network net = tiny_net(rng);
  std::vector<int> pos = {0, 1, 2, 3};

  SECTION("relabeling to the model's own predictions gives accuracy 1.0") {
    LabeledSet set = random_set(40, 4, 16, rng);
    Tensor logits = net.forward(set.x, 1, false);
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 4; ++j)
        if (logits[i * 4 + j] > logits[i * 4 + best]) best = j;
      set.class_ids[i] = static_cast<int>(best);
    }
    REQUIRE(task_accuracy(net, set, 1, pos) == 1.0);
  }

  SECTION("an untrained model on balanced random labels sits near chance") {
    LabeledSet set = random_set(1000, 4, 16, rng);
    const double acc = task_accuracy(net, set, 1, pos);
    REQUIRE(acc >= 0.20);
    REQUIRE(acc <= 0.30);
  }

  SECTION("matches an independent loop-and-count oracle exactly") {
    LabeledSet set = random_set(50, 4, 16, rng);
    const double acc = task_accuracy(net, set, 1, pos);
    Tensor logits = net.forward(set.x, 1, false);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < 4; ++j)
        if (logits[i * 4 + j] > logits[i * 4 + best]) best = j;
      if (static_cast<int>(best) == set.class_ids[i]) ++correct;
    }
    REQUIRE(acc == static_cast<double>(correct) / 50.0);
  }

  SECTION("order invariance") {
    LabeledSet set = random_set(30, 4, 16, rng);
    const double acc = task_accuracy(net, set, 1, pos);
    std::vector<std::size_t> perm(30);
    for (std::size_t i = 0; i < 30; ++i) perm[i] = 29 - i;
    REQUIRE(task_accuracy(net, set.subset(perm), 1, pos) == acc);
  }

  SECTION("empty test set rejected") {
    REQUIRE_THROWS_AS(task_accuracy(net, LabeledSet{}, 1, pos), ArgumentError);
  }
}

TEST_CASE("accuracy matrix shape rules") {
  AccuracyMatrix m;
  m.push_row({0.5});
  m.push_row({0.4, 0.9});
  REQUIRE(m.at(2, 1) == 0.4);
  REQUIRE_THROWS_AS(m.at(1, 2), ArgumentError);
  REQUIRE_THROWS_AS(m.push_row({0.1}), StateError);
  for (const auto& row : m.rows)
    for (double v : row) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
}

TEST_CASE("final_accuracy weighting") {
  AccuracyMatrix m;
  m.push_row({1.0});
  m.push_row({1.0, 0.5});

  SECTION("equal sizes degenerate to the arithmetic mean") {
    REQUIRE(final_accuracy(m, {100, 100}) == Catch::Approx(0.75));
    REQUIRE(final_accuracy_task_mean(m, 2) == Catch::Approx(0.75));
  }
  SECTION("unequal sizes 100/300 with accuracies 1.0/0.5 give 0.625") {
    REQUIRE(final_accuracy(m, {100, 300}) == Catch::Approx(0.625));
  }
  SECTION("single task equals A[1][1]") {
    AccuracyMatrix one;
    one.push_row({0.73});
    REQUIRE(final_accuracy(one, {50}) == 0.73);
  }
  SECTION("incomplete matrix is a state error") {
    REQUIRE_THROWS_AS(final_accuracy(m, {10, 10, 10}), StateError);
  }
  SECTION("pooled-count oracle identity") {
    // weighted mean equals pooled correct/total computed directly
    const std::vector<std::size_t> sizes = {37, 211};
    const double direct =
        (37.0 * m.at(2, 1) + 211.0 * m.at(2, 2)) / (37.0 + 211.0);
    REQUIRE(final_accuracy(m, sizes) == Catch::Approx(direct).epsilon(1e-15));
  }
}

TEST_CASE("alpha_histogram binning") {
  SECTION("all-zero alpha: one occupied bin at zero, mean zero") {
    AlphaTable t;
    t.entries[{0, 0, 1}] = std::vector<double>(kNumOps, 0.0);
    auto hists = alpha_histogram({t}, 10);
    REQUIRE(hists.size() == 1);
    REQUIRE(hists[0].mean == 0.0);
    REQUIRE(hists[0].mean_abs == 0.0);
    std::size_t occupied = 0, total = 0;
    for (const auto& b : hists[0].bins) {
      if (b.count > 0) {
        ++occupied;
        REQUIRE(b.lo <= 0.0);
        REQUIRE(b.hi >= 0.0);
      }
      total += b.count;
    }
    REQUIRE(occupied == 1);
    REQUIRE(total == kNumOps);
  }

  SECTION("counts sum to the entry count") {
    Rng rng(162);
    AlphaTable t;
    for (std::size_t e = 0; e < 5; ++e) {
      std::vector<double> v(kNumOps);
      for (auto& a : v) a = rng.normal();
      t.entries[{0, e, e + 1}] = v;
    }
    auto hists = alpha_histogram({t, t}, 7);
    for (const auto& h : hists) {
      std::size_t total = 0;
      for (const auto& b : h.bins) total += b.count;
      REQUIRE(total == 5 * kNumOps);
      REQUIRE(h.total == 5 * kNumOps);
    }
  }

  SECTION("uniform grid matches hand-computed bin counts") {
    AlphaTable t;
    t.entries[{0, 0, 1}] = {0, 1, 2, 3, 4, 5, 6, 7};  // grid over [0, 7]
    t.entries[{0, 0, 2}] = {8, 9, 0.5, 1.5, 2.5, 3.5, 4.5, 5.5};  // extends to [0, 9]
    auto hists = alpha_histogram({t}, 3);  // bins [0,3), [3,6), [6,9]
    REQUIRE(hists[0].bins.size() == 3);
    REQUIRE(hists[0].bins[0].count == 6);  // 0, 1, 2, 0.5, 1.5, 2.5
    REQUIRE(hists[0].bins[1].count == 6);  // 3, 4, 5, 3.5, 4.5, 5.5
    REQUIRE(hists[0].bins[2].count == 4);  // 6, 7, 8, 9
  }

  SECTION("bad bin count rejected") {
    REQUIRE_THROWS_AS(alpha_histogram({}, 0), ArgumentError);
  }

  SECTION("csv export shape") {
    AlphaTable t;
    t.entries[{0, 0, 1}] = {1, 2, 3, 4, 5, 6, 7, 8};
    const std::string csv = alpha_histogram_csv(alpha_histogram({t}, 4));
    REQUIRE(csv.rfind("task,bin_lo,bin_hi,count\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 bins
  }
}

TEST_CASE("timing conversions and accounting") {
  REQUIRE(seconds_to_days(86400.0) == 1.0);
  REQUIRE(seconds_to_days(43200.0) == 0.5);

  TimingLog log;
  {
    StageTimer t(log, "noop", 1);
  }
  REQUIRE(log.rows().size() == 1);
  REQUIRE(seconds_to_days(log.total_seconds()) < 1e-3);  // near-zero run

  log.add("task", 1, 100.0);
  log.add("task", 2, 50.0);
  double task_seconds = 0.0;
  for (const auto& r : log.rows())
    if (r.stage == "task") task_seconds += r.seconds;
  REQUIRE(task_seconds == 150.0);
}

TEST_CASE("metrics csv round trip preserves exact values") {
  MetricsSink sink;
  sink.add("eval", 2, 1, "accuracy", 1.0 / 3.0);
  sink.add("search", 1, 0, "loss_total", 1e-17);
  sink.add("summary", 2, 0, "final_accuracy_weighted", 0.123456789012345678);
  const std::string csv = sink.to_csv();
  auto rows = MetricsSink::parse_csv(csv);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].value == 1.0 / 3.0);  // exact round trip through %.17g
  REQUIRE(rows[1].value == 1e-17);
  REQUIRE(rows[2].stage == "summary");
  REQUIRE(rows[2].task_k == 2);
  // re-serialization is byte-stable
  MetricsSink sink2;
  for (const auto& r : rows) sink2.add(r.stage, r.task_k, r.task_n, r.metric, r.value);
  REQUIRE(sink2.to_csv() == csv);
}
