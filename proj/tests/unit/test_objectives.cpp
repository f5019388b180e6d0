#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "idarts/objectives.hpp"
#include "test_helpers.hpp"

using namespace idarts;

namespace {

// direct log-sum-exp oracle, written independently of ce_loss
double ce_oracle(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t b = logits.size(0), c = logits.size(1);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] - mx);
    total += std::log(z) + mx - logits[i * c + labels[i]];
  }
  return total / static_cast<double>(b);
}

// explicit sum p_t (log p_t - log p_s) oracle over tempered distributions
double kd_oracle(const Tensor& student, const Tensor& teacher, double temp) {
  const std::size_t b = student.size(0), cs = student.size(1), ct = teacher.size(1);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> ps(ct), pt(ct);
    double zs = 0.0, zt = 0.0;
    for (std::size_t j = 0; j < ct; ++j) {
      ps[j] = std::exp(student[i * cs + j] / temp);
      pt[j] = std::exp(teacher[i * ct + j] / temp);
      zs += ps[j];
      zt += pt[j];
    }
    for (std::size_t j = 0; j < ct; ++j) {
      ps[j] /= zs;
      pt[j] /= zt;
      if (pt[j] > 0.0) total += pt[j] * (std::log(pt[j]) - std::log(ps[j]));
    }
  }
  return total / static_cast<double>(b);
}

AlphaTable random_alpha(Rng& rng, std::size_t edges) {
  AlphaTable t;
  for (std::size_t e = 0; e < edges; ++e) {
    std::vector<double> v(kNumOps);
    for (auto& a : v) a = rng.normal();
    t.entries[{0, e, e + 1}] = v;
  }
  return t;
}

}  // namespace

TEST_CASE("ce_loss saturated, uniform, and oracle cases") {
  // one-hot +20 at the true class
  Tensor hot = Tensor::zeros({1, 4});
  hot[2] = 20.0;
  REQUIRE(ce_loss(hot, {2}) < 1e-6);

  // uniform logits, C = 4 -> ln 4
  Tensor uni = Tensor::zeros({3, 4});
  REQUIRE(ce_loss(uni, {0, 1, 3}) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

  Rng rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t b = 1 + rng.uniform_index(6), c = 2 + rng.uniform_index(7);
    Tensor logits = Tensor::randn({b, c}, rng, 3.0);
    std::vector<int> labels(b);
    for (auto& y : labels) y = static_cast<int>(rng.uniform_index(c));
    REQUIRE(std::abs(ce_loss(logits, labels) - ce_oracle(logits, labels)) < 1e-6);
  }

  REQUIRE_THROWS_AS(ce_loss(uni, {0, 1, 4}), ArgumentError);
  REQUIRE_THROWS_AS(ce_loss(uni, {0}), ArgumentError);
}

TEST_CASE("ce_loss gradient matches finite differences") {
  Rng rng(22);
  Tensor logits = Tensor::randn({4, 5}, rng);
  std::vector<int> labels = {1, 0, 4, 2};
  Tensor grad = Tensor::zeros({4, 5});
  ce_loss(logits, labels, &grad, 1.0);
  std::vector<double*> values;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    values.push_back(&logits[i]);
    analytic.push_back(grad[i]);
  }
  auto rep = idarts::testing::fd_check_values(values, analytic,
                                              [&] { return ce_loss(logits, labels); });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("kd_loss degeneracies and analytic value") {
  LossWeights w;
  SECTION("student equals teacher -> zero") {
    Rng rng(23);
    Tensor t = Tensor::randn({5, 3}, rng);
    Tensor s({5, 5});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) s[i * 5 + j] = t[i * 3 + j];
    REQUIRE(kd_loss(s, t, w) < 1e-7);
  }
  SECTION("first task has no teacher classes -> exactly zero") {
    Tensor s = Tensor::zeros({4, 3});
    REQUIRE(kd_loss(s, Tensor(), w) == 0.0);
    REQUIRE(kd_loss(s, Tensor::zeros({4, 0}), w) == 0.0);
  }
  SECTION("KL([1,0] || [1/2,1/2]) = ln 2") {
    Tensor teacher = Tensor::from({1, 2}, {20.0, -20.0});
    Tensor student = Tensor::zeros({1, 4});
    REQUIRE(kd_loss(student, teacher, w) == Catch::Approx(std::log(2.0)).margin(1e-3));
  }
  SECTION("tempered oracle, T = 2") {
    LossWeights w2;
    w2.temperature = 2.0;
    Rng rng(24);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t b = 1 + rng.uniform_index(5);
      const std::size_t c_old = 2 + rng.uniform_index(4);
      const std::size_t c_new = c_old + rng.uniform_index(4);
      Tensor teacher = Tensor::randn({b, c_old}, rng, 2.0);
      Tensor student = Tensor::randn({b, c_new}, rng, 2.0);
      REQUIRE(std::abs(kd_loss(student, teacher, w2) -
                       kd_oracle(student, teacher, 2.0)) < 1e-6);
    }
  }
  SECTION("nonnegative over random pairs") {
    Rng rng(25);
    for (int rep = 0; rep < 200; ++rep) {
      Tensor teacher = Tensor::randn({2, 3}, rng, 3.0);
      Tensor student = Tensor::randn({2, 5}, rng, 3.0);
      REQUIRE(kd_loss(student, teacher, w) >= 0.0);
    }
  }
  SECTION("teacher wider than student is an error") {
    REQUIRE_THROWS_AS(kd_loss(Tensor::zeros({1, 2}), Tensor::zeros({1, 3}), w), ArgumentError);
  }
}

TEST_CASE("alpha_reg closed forms and oracle") {
  AlphaTable zero;
  zero.entries[{0, 0, 1}] = std::vector<double>(kNumOps, 0.0);
  REQUIRE(alpha_reg(zero) == 0.0);

  AlphaTable one;
  one.entries[{0, 0, 1}] = {3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  REQUIRE(alpha_reg(one) == 5.0);

  Rng rng(26);
  for (int rep = 0; rep < 100; ++rep) {
    AlphaTable t = random_alpha(rng, 1 + rng.uniform_index(6));
    double sq = 0.0;
    for (const auto& [id, v] : t.entries)
      for (double a : v) sq += a * a;
    REQUIRE(std::abs(alpha_reg(t) - std::sqrt(sq)) < 1e-6);
  }

  SECTION("permutation invariance") {
    Rng prng(27);
    AlphaTable t = random_alpha(prng, 4);
    double base = alpha_reg(t);
    AlphaTable permuted;
    std::size_t e = 10;
    for (const auto& [id, v] : t.entries) {
      std::vector<double> rv(v.rbegin(), v.rend());
      permuted.entries[{1, e, e + 1}] = rv;
      ++e;
    }
    REQUIRE(alpha_reg(permuted) == Catch::Approx(base).epsilon(1e-12));
  }

  AlphaTable bad;
  bad.entries[{0, 0, 1}] = {std::numeric_limits<double>::quiet_NaN(), 0, 0, 0, 0, 0, 0, 0};
  REQUIRE_THROWS_AS(alpha_reg(bad), ArgumentError);
}

TEST_CASE("idarts_loss composition") {
  LossWeights w;  // mu 0.5, lambda 1e-3 defaults
  SECTION("analytic components: ln4 + mu ln2 + lambda 5") {
    Tensor logits = Tensor::zeros({1, 4});
    Tensor teacher = Tensor::from({1, 2}, {20.0, -20.0});
    AlphaTable alpha;
    alpha.entries[{0, 0, 1}] = {3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    auto b = idarts_loss(logits, {0}, teacher, &alpha, w);
    REQUIRE(b.ce == Catch::Approx(std::log(4.0)).epsilon(1e-12));
    REQUIRE(b.kd == Catch::Approx(std::log(2.0)).margin(1e-3));
    REQUIRE(b.alpha_reg == 5.0);
    REQUIRE(b.total ==
            Catch::Approx(std::log(4.0) + 0.5 * std::log(2.0) + 1e-3 * 5.0).margin(1e-3));
    // weighted-combination arithmetic at the published weights
    REQUIRE(1.0 + 0.5 * 0.4 + 1e-3 * 2.0 == Catch::Approx(1.202).epsilon(1e-12));
  }
  SECTION("mu=0 lambda=0 reduces exactly to ce_loss") {
    LossWeights off;
    off.mu = 0.0;
    off.lambda = 0.0;
    Rng rng(28);
    Tensor logits = Tensor::randn({4, 6}, rng);
    Tensor teacher = Tensor::randn({4, 3}, rng);
    std::vector<int> labels = {0, 5, 2, 3};
    auto b = idarts_loss(logits, labels, teacher, nullptr, off);
    REQUIRE(b.total == ce_loss(logits, labels));
  }
  SECTION("component identity within 1e-9") {
    Rng rng(29);
    for (int rep = 0; rep < 50; ++rep) {
      Tensor logits = Tensor::randn({3, 5}, rng, 2.0);
      Tensor teacher = Tensor::randn({3, 2}, rng, 2.0);
      AlphaTable alpha = random_alpha(rng, 3);
      std::vector<int> labels = {4, 1, 0};
      auto b = idarts_loss(logits, labels, teacher, &alpha, w);
      REQUIRE(std::abs(b.total - (b.ce + w.mu * b.kd + w.lambda * b.alpha_reg)) < 1e-9);
    }
  }
  SECTION("negative weights rejected") {
    LossWeights bad;
    bad.mu = -0.1;
    REQUIRE_THROWS_AS(idarts_loss(Tensor::zeros({1, 2}), {0}, Tensor(), nullptr, bad),
                      ArgumentError);
    LossWeights bad2;
    bad2.lambda = -1.0;
    REQUIRE_THROWS_AS(idarts_loss(Tensor::zeros({1, 2}), {0}, Tensor(), nullptr, bad2),
                      ArgumentError);
  }
}

TEST_CASE("loss gradient through a small model matches finite differences") {
  Rng rng(30);
  nn::Linear model(3, 5, rng);  // 20 parameters
  Tensor x = Tensor::randn({4, 3}, rng);
  Tensor teacher = Tensor::randn({4, 2}, rng);
  std::vector<int> labels = {1, 4, 0, 2};
  LossWeights w;

  auto loss = [&] {
    Tensor logits = model.forward(x, true);
    return idarts_loss(logits, labels, teacher, nullptr, w).total;
  };

  Tensor logits = model.forward(x, true);
  Tensor glogits = Tensor::zeros(logits.shape());
  ce_loss(logits, labels, &glogits, 1.0);
  kd_loss(logits, teacher, w, &glogits, w.mu);
  for (auto* p : model.parameters()) p->grad.zero();
  model.backward(glogits);

  std::vector<double*> values;
  std::vector<double> analytic;
  for (auto* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      values.push_back(&p->value[i]);
      analytic.push_back(p->grad[i]);
    }
  }
  auto rep = idarts::testing::fd_check_values(values, analytic, loss);
  REQUIRE(rep.max_rel_err < 1e-3);
  REQUIRE(rep.checked == 20);
}

TEST_CASE("kd contributes no gradient to new-task logits") {
  Rng rng(31);
  Tensor logits = Tensor::randn({3, 6}, rng);
  Tensor teacher = Tensor::randn({3, 4}, rng);
  std::vector<int> labels = {0, 3, 5};
  LossWeights w;

  Tensor g_with = Tensor::zeros(logits.shape());
  ce_loss(logits, labels, &g_with, 1.0);
  kd_loss(logits, teacher, w, &g_with, w.mu);

  Tensor g_without = Tensor::zeros(logits.shape());
  ce_loss(logits, labels, &g_without, 1.0);

  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 4; j < 6; ++j) {
      REQUIRE(g_with[i * 6 + j] == g_without[i * 6 + j]);
    }
  // and the old-class columns do receive a kd contribution
  bool any_diff = false;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) any_diff |= g_with[i * 6 + j] != g_without[i * 6 + j];
  REQUIRE(any_diff);
}
