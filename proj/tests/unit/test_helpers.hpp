#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

#include "idarts/nn.hpp"

namespace idarts::testing {

// central finite differences against analytic gradients through a scalar
// functional; returns the worst relative error over every checked coordinate
struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

// loss() must recompute the objective from current values each call
inline FdReport fd_check_values(std::vector<double*> values, const std::vector<double>& analytic,
                                const std::function<double()>& loss, double h = 1e-6) {
  FdReport rep;
  REQUIRE(values.size() == analytic.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = *values[i];
    *values[i] = orig + h;
    const double fp = loss();
    *values[i] = orig - h;
    const double fm = loss();
    *values[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[i], numeric));
    ++rep.checked;
  }
  return rep;
}

// gradient-checks a module through loss = <forward(x), r>
inline FdReport grad_check_module(nn::Module& m, Tensor x, const Tensor& r, double h = 1e-6,
                                  bool check_params = true) {
  auto loss = [&]() {
    Tensor y = m.forward(x, true);
    return y.dot(r);
  };
  Tensor y = m.forward(x, true);
  REQUIRE(y.same_shape(r));
  for (auto* p : m.parameters()) p->grad.zero();
  Tensor gx = m.backward(r);

  std::vector<double*> values;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    values.push_back(&x[i]);
    analytic.push_back(gx[i]);
  }
  if (check_params) {
    for (auto* p : m.parameters()) {
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        values.push_back(&p->value[i]);
        analytic.push_back(p->grad[i]);
      }
    }
  }
  return fd_check_values(values, analytic, loss, h);
}

// random input kept away from relu/pool kinks
inline Tensor smooth_randn(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t = Tensor::randn(std::move(shape), rng);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] += t[i] >= 0 ? 0.1 : -0.1;
  }
  return t;
}

}  // namespace idarts::testing
