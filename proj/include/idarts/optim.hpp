#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "idarts/nn.hpp"

namespace idarts {

class Optimizer {
 public:
  Optimizer(std::vector<nn::Parameter*> params, double lr, double weight_decay)
      : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;

  void zero_grad() {
    for (auto* p : params_) p->grad.zero();
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  const std::vector<nn::Parameter*>& params() const { return params_; }

  // clips the global L2 norm of all gradients to max_norm (no-op if <= 0)
  void clip_grad_norm(double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (auto* p : params_)
      for (std::size_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double f = max_norm / norm;
    for (auto* p : params_) p->grad.scale(f);
  }

 protected:
  std::vector<nn::Parameter*> params_;
  double lr_;
  double weight_decay_;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<nn::Parameter*> params, double lr, double momentum, double weight_decay)
      : Optimizer(std::move(params), lr, weight_decay), momentum_(momentum) {
    bufs_.reserve(params_.size());
    for (auto* p : params_) bufs_.push_back(Tensor::zeros(p->value.shape()));
  }

  void step() override {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      auto& buf = bufs_[k];
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        const double g = p->grad[i] + weight_decay_ * p->value[i];
        buf[i] = momentum_ * buf[i] + g;
        if (lr_ != 0.0) p->value[i] -= lr_ * buf[i];
      }
    }
  }

 private:
  double momentum_;
  std::vector<Tensor> bufs_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<nn::Parameter*> params, double lr, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : Optimizer(std::move(params), lr, weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.push_back(Tensor::zeros(p->value.shape()));
      v_.push_back(Tensor::zeros(p->value.shape()));
    }
  }

  void step() override {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        const double g = p->grad[i] + weight_decay_ * p->value[i];
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        if (lr_ != 0.0) p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(const std::string& kind,
                                                 std::vector<nn::Parameter*> params, double lr,
                                                 double momentum, double weight_decay) {
  if (kind == "adam") return std::make_unique<Adam>(std::move(params), lr, weight_decay);
  if (kind == "sgd") return std::make_unique<Sgd>(std::move(params), lr, momentum, weight_decay);
  throw ConfigError("make_optimizer: unknown optimizer '" + kind + "'");
}

}  // namespace idarts
