#pragma once

#include <cmath>
#include <vector>

#include "idarts/supernet.hpp"

namespace idarts {

struct LossWeights {
  double mu = 0.5;        // knowledge-distillation weight
  double lambda = 1e-3;   // alpha-regularization weight
  double temperature = 1.0;

  void validate() const {
    if (mu < 0.0) throw ArgumentError("LossWeights: mu must be >= 0");
    if (lambda < 0.0) throw ArgumentError("LossWeights: lambda must be >= 0");
    if (!(temperature > 0.0)) throw ArgumentError("LossWeights: temperature must be > 0");
  }
};

struct LossBreakdown {
  double ce = 0.0;
  double kd = 0.0;
  double alpha_reg = 0.0;
  double total = 0.0;
};

// mean over the batch of -log softmax(logits)[label]
inline double ce_loss(const Tensor& logits, const std::vector<int>& labels,
                      Tensor* grad = nullptr, double grad_scale = 1.0) {
  if (logits.ndim() != 2) throw ArgumentError("ce_loss: logits must be (B,C)");
  const std::size_t b = logits.size(0), c = logits.size(1);
  if (labels.size() != b || b == 0) throw ArgumentError("ce_loss: batch/label size mismatch");
  std::vector<double> probs(c);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw ArgumentError("ce_loss: label " + std::to_string(y) + " out of range for C=" +
                          std::to_string(c));
    }
    const double* row = logits.data() + i * c;
    const double lse = nn::softmax_into(row, probs.data(), c);
    loss += lse - row[y];
    if (grad) {
      double* g = grad->data() + i * c;
      for (std::size_t j = 0; j < c; ++j) g[j] += grad_scale * inv_b * probs[j];
      g[y] -= grad_scale * inv_b;
    }
  }
  return loss * inv_b;
}

// mean over the batch of KL(softmax(teacher/T) || softmax(student[:,0:C_old]/T));
// only the first C_old student columns participate
inline double kd_loss(const Tensor& student, const Tensor& teacher, const LossWeights& w,
                      Tensor* grad = nullptr, double grad_scale = 1.0) {
  w.validate();
  if (teacher.numel() == 0) return 0.0;  // first task: no teacher classes
  if (student.ndim() != 2 || teacher.ndim() != 2) throw ArgumentError("kd_loss: logits must be (B,C)");
  const std::size_t b = student.size(0);
  const std::size_t c_old = teacher.size(1);
  if (c_old == 0) return 0.0;
  if (teacher.size(0) != b) throw ArgumentError("kd_loss: batch size mismatch");
  if (c_old > student.size(1)) {
    throw ArgumentError("kd_loss: teacher classes exceed student classes");
  }
  const double t = w.temperature;
  const std::size_t c_s = student.size(1);
  std::vector<double> ps(c_old), pt(c_old), srow(c_old), trow(c_old);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c_old; ++j) {
      srow[j] = student[i * c_s + j] / t;
      trow[j] = teacher[i * c_old + j] / t;
    }
    nn::softmax_into(srow.data(), ps.data(), c_old);
    nn::softmax_into(trow.data(), pt.data(), c_old);
    for (std::size_t j = 0; j < c_old; ++j) {
      if (pt[j] > 0.0) loss += pt[j] * (std::log(pt[j]) - std::log(ps[j])) * inv_b;
      if (grad) grad->data()[i * c_s + j] += grad_scale * inv_b * (ps[j] - pt[j]) / t;
    }
  }
  return loss;
}

// sqrt of the sum of squares of every scalar entry (global Frobenius norm)
inline double alpha_reg(const AlphaTable& alpha) {
  for (const auto& [id, v] : alpha.entries)
    for (double a : v)
      if (!std::isfinite(a)) throw ArgumentError("alpha_reg: alpha must be finite");
  return std::sqrt(alpha.frobenius_norm_sq());
}

inline double alpha_reg_from_params(const std::vector<nn::Parameter*>& alphas) {
  double s = 0.0;
  for (const auto* p : alphas)
    for (std::size_t i = 0; i < p->value.numel(); ++i) s += p->value[i] * p->value[i];
  return std::sqrt(s);
}

// accumulates d(scale * ||alpha||_F)/d(alpha) into the parameter grads;
// the norm's subgradient at zero is taken as zero
inline void alpha_reg_accumulate_grad(const std::vector<nn::Parameter*>& alphas, double scale) {
  const double norm = alpha_reg_from_params(alphas);
  if (norm == 0.0 || scale == 0.0) return;
  const double f = scale / norm;
  for (auto* p : alphas)
    for (std::size_t i = 0; i < p->value.numel(); ++i) p->grad[i] += f * p->value[i];
}

// CE + mu*KD + lambda*||alpha||: the combined search/retrain objective.
// teacher may be empty (first task); alpha may be null (discrete network).
inline LossBreakdown idarts_loss(const Tensor& logits, const std::vector<int>& labels,
                                 const Tensor& teacher_logits, const AlphaTable* alpha,
                                 const LossWeights& w, Tensor* glogits = nullptr) {
  w.validate();
  LossBreakdown out;
  out.ce = ce_loss(logits, labels, glogits, 1.0);
  out.kd = kd_loss(logits, teacher_logits, w, glogits, w.mu);
  out.alpha_reg = alpha ? alpha_reg(*alpha) : 0.0;
  out.total = out.ce + w.mu * out.kd + w.lambda * out.alpha_reg;
  return out;
}

}  // namespace idarts
