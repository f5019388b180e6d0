#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "idarts/data.hpp"
#include "idarts/metrics.hpp"
#include "idarts/objectives.hpp"
#include "idarts/optim.hpp"

namespace idarts {

struct SearchConfig {
  std::size_t epochs_search = 50;
  std::size_t epochs_retrain = 125;
  double lr_w = 0.05;
  double lr_alpha = 5e-3;
  double weight_decay = 2e-4;
  std::size_t batch_size = 128;
  std::vector<std::size_t> lr_milestones = {50, 75, 100};
  double lr_decay = 0.1;
  std::size_t finetune_epochs = 30;
  double lr_finetune = 0.01;
  double val_fraction = 0.5;
  std::string optimizer_search = "adam";
  std::string optimizer_retrain = "sgd";
  double momentum = 0.9;
  double grad_clip = 0.0;     // 0 = off
  bool kd_in_finetune = false;
  bool augment_train = true;  // image modality only

  void validate() const {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
      throw ConfigError("search.val_fraction: must be in (0,1)");
    }
    if (batch_size == 0) throw ConfigError("search.batch_size: must be >= 1");
  }
};

// retrain-stage schedule: decay at each milestone epoch index
inline double lr_at_epoch(const SearchConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr_w;
  for (auto m : cfg.lr_milestones) {
    if (epoch >= m) lr *= cfg.lr_decay;
  }
  return lr;
}

struct Batch {
  Tensor x;
  std::vector<int> labels;  // head positions, not raw class ids
  std::size_t size() const { return labels.size(); }
};

// uniform draw with replacement over the pool; labels are remapped through
// class_position (global class id -> head position)
inline Batch sample_uniform_batch(const LabeledSet& pool, std::size_t batch_size,
                                  const std::vector<int>& class_position, Rng& rng,
                                  bool augment = false, Rng* aug_rng = nullptr,
                                  AuditLog* audit = nullptr, long task_k = 0,
                                  const std::string& stage = "") {
  if (pool.size() == 0) throw ArgumentError("sample_uniform_batch: empty pool");
  if (batch_size == 0) throw ArgumentError("sample_uniform_batch: batch_size must be >= 1");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.uniform_index(pool.size());
  Batch b;
  std::vector<std::size_t> xs = pool.x.shape();
  xs[0] = batch_size;
  b.x = Tensor(xs);
  const std::size_t n = pool.example_numel();
  const bool do_aug = augment && pool.modality == Modality::image2d && aug_rng != nullptr;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t i = idx[k];
    if (do_aug) {
      Tensor row = augment_image(pool.row(i), *aug_rng);
      std::copy(row.data(), row.data() + n, b.x.data() + k * n);
    } else {
      std::copy(pool.x.data() + i * n, pool.x.data() + (i + 1) * n, b.x.data() + k * n);
    }
    const int cls = pool.class_ids[i];
    if (cls < 0 || static_cast<std::size_t>(cls) >= class_position.size() ||
        class_position[cls] < 0) {
      throw StateError("sample_uniform_batch: class " + std::to_string(cls) +
                       " has no head position");
    }
    b.labels.push_back(class_position[cls]);
    if (audit && !pool.source_tasks.empty()) audit->record(task_k, stage, pool.source_tasks[i]);
  }
  return b;
}

// per-stage context threaded through the training loops
struct TrainContext {
  MetricsSink* metrics = nullptr;
  AuditLog* audit = nullptr;
  long task_k = 1;
  std::size_t upto_task = 1;
  std::vector<int> class_position;  // by global class id; -1 = unseen
};

// Alternating first-order bilevel optimization: mixture weights step on the
// holdout objective, op weights step on the train objective. The two
// optimizers hold disjoint parameter sets; weight decay applies to op
// weights only.
class BilevelDriver {
 public:
  BilevelDriver(Network& net, Network* teacher, const LossWeights& weights,
                const SearchConfig& cfg, std::size_t upto_task)
      : net_(net), teacher_(teacher), weights_(weights), cfg_(cfg), upto_(upto_task) {
    weights_.validate();
    cfg_.validate();
    opt_w_ = make_optimizer(cfg.optimizer_search, net.weight_params(), cfg.lr_w, cfg.momentum,
                            cfg.weight_decay);
    opt_alpha_ = make_optimizer(cfg.optimizer_search, net.alpha_params(), cfg.lr_alpha,
                                cfg.momentum, 0.0);
  }

  LossBreakdown alpha_step(const Batch& val) {
    LossBreakdown out = compute_and_backprop(val);
    opt_alpha_->clip_grad_norm(cfg_.grad_clip);
    opt_alpha_->step();
    return out;
  }

  LossBreakdown weight_step(const Batch& train) {
    LossBreakdown out = compute_and_backprop(train);
    opt_w_->clip_grad_norm(cfg_.grad_clip);
    opt_w_->step();
    return out;
  }

  // one alpha update on the holdout batch, then one weight update on the
  // train batch
  std::pair<LossBreakdown, LossBreakdown> bilevel_step(const Batch& train, const Batch& val) {
    LossBreakdown a = alpha_step(val);
    LossBreakdown w = weight_step(train);
    return {a, w};
  }

  const std::vector<nn::Parameter*>& weight_param_set() const { return opt_w_->params(); }
  const std::vector<nn::Parameter*>& alpha_param_set() const { return opt_alpha_->params(); }

  Tensor teacher_logits(const Batch& b) const {
    if (!teacher_) return Tensor();
    return teacher_->forward(b.x, teacher_->n_tasks(), false);
  }

 private:
  LossBreakdown compute_and_backprop(const Batch& b) {
    if (b.size() == 0) throw ArgumentError("bilevel step: empty batch");
    net_.zero_grad();
    Tensor logits = net_.forward(b.x, upto_, true);
    Tensor tlog = teacher_logits(b);
    Tensor glogits = Tensor::zeros(logits.shape());
    LossBreakdown out;
    out.ce = ce_loss(logits, b.labels, &glogits, 1.0);
    out.kd = kd_loss(logits, tlog, weights_, &glogits, weights_.mu);
    out.alpha_reg = alpha_reg_from_params(net_.alpha_params());
    out.total = out.ce + weights_.mu * out.kd + weights_.lambda * out.alpha_reg;
    net_.backward(glogits);
    alpha_reg_accumulate_grad(net_.alpha_params(), weights_.lambda);
    return out;
  }

  Network& net_;
  Network* teacher_;
  LossWeights weights_;
  SearchConfig cfg_;
  std::size_t upto_;
  std::unique_ptr<Optimizer> opt_w_, opt_alpha_;
};

// stratified per-class split of a pool into train/val index sets
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const LabeledSet& pool, double val_fraction, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool.class_ids[i]].push_back(i);
  std::vector<std::size_t> train, val;
  for (auto& [c, idx] : by_class) {
    rng.shuffle(idx);
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * val_fraction));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_val ? val : train).push_back(idx[i]);
    }
  }
  if (val.empty()) throw ConfigError("search.val_fraction: validation split is empty");
  if (train.empty()) throw ConfigError("search.val_fraction: train split is empty");
  return {train, val};
}

inline double mean_abs_alpha(Network& net) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto* p : net.alpha_params()) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) s += std::abs(p->value[i]);
    n += p->value.numel();
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

// Supernet search over the current task's pool (task data plus replayed
// exemplars). Runs epochs_search epochs of bilevel steps over a stratified
// train/holdout split and returns the final alpha snapshot.
inline AlphaTable search_phase(Network& net, const LabeledSet& pool, Network* teacher,
                               const LossWeights& weights, const SearchConfig& cfg,
                               const TrainContext& ctx, Rng& rng) {
  if (pool.size() == 0) throw ArgumentError("search_phase: empty task pool");
  auto [train_idx, val_idx] = stratified_split(pool, cfg.val_fraction, rng);
  LabeledSet train = pool.subset(train_idx);
  LabeledSet val = pool.subset(val_idx);
  BilevelDriver driver(net, teacher, weights, cfg, ctx.upto_task);
  const std::size_t steps = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs_search; ++epoch) {
    LossBreakdown acc_a{}, acc_w{};
    for (std::size_t s = 0; s < steps; ++s) {
      Batch vb = sample_uniform_batch(val, cfg.batch_size, ctx.class_position, rng,
                                      cfg.augment_train, &rng, ctx.audit, ctx.task_k, "search");
      Batch tb = sample_uniform_batch(train, cfg.batch_size, ctx.class_position, rng,
                                      cfg.augment_train, &rng, ctx.audit, ctx.task_k, "search");
      auto [la, lw] = driver.bilevel_step(tb, vb);
      acc_a.ce += la.ce; acc_a.kd += la.kd; acc_a.alpha_reg += la.alpha_reg; acc_a.total += la.total;
      acc_w.ce += lw.ce; acc_w.kd += lw.kd; acc_w.alpha_reg += lw.alpha_reg; acc_w.total += lw.total;
    }
    if (ctx.metrics) {
      const double inv = 1.0 / static_cast<double>(steps);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "loss_ce", acc_w.ce * inv);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "loss_kd", acc_w.kd * inv);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "loss_reg",
                       acc_w.alpha_reg * inv);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "loss_total",
                       acc_w.total * inv);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "val_loss_total",
                       acc_a.total * inv);
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "alpha_norm",
                       alpha_reg_from_params(net.alpha_params()));
      ctx.metrics->add("search", ctx.task_k, static_cast<long>(epoch), "alpha_mean_abs",
                       mean_abs_alpha(net));
    }
  }
  return net.alpha_table();
}

// single-level training of a discrete network on the task pool
inline void retrain_phase(Network& child, const LabeledSet& pool, Network* teacher,
                          const LossWeights& weights, const SearchConfig& cfg,
                          const TrainContext& ctx, Rng& rng) {
  if (pool.size() == 0) throw ArgumentError("retrain_phase: empty task pool");
  weights.validate();
  cfg.validate();
  auto opt = make_optimizer(cfg.optimizer_retrain, child.weight_params(), cfg.lr_w, cfg.momentum,
                            cfg.weight_decay);
  const std::size_t steps = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs_retrain; ++epoch) {
    opt->set_lr(lr_at_epoch(cfg, epoch));
    LossBreakdown acc{};
    for (std::size_t s = 0; s < steps; ++s) {
      Batch b = sample_uniform_batch(pool, cfg.batch_size, ctx.class_position, rng,
                                     cfg.augment_train, &rng, ctx.audit, ctx.task_k, "retrain");
      child.zero_grad();
      Tensor logits = child.forward(b.x, ctx.upto_task, true);
      Tensor tlog = teacher ? teacher->forward(b.x, teacher->n_tasks(), false) : Tensor();
      Tensor glogits = Tensor::zeros(logits.shape());
      LossBreakdown l;
      l.ce = ce_loss(logits, b.labels, &glogits, 1.0);
      l.kd = kd_loss(logits, tlog, weights, &glogits, weights.mu);
      l.total = l.ce + weights.mu * l.kd;  // discrete net has no alpha term
      child.backward(glogits);
      opt->clip_grad_norm(cfg.grad_clip);
      opt->step();
      acc.ce += l.ce; acc.kd += l.kd; acc.total += l.total;
    }
    if (ctx.metrics) {
      const double inv = 1.0 / static_cast<double>(steps);
      ctx.metrics->add("retrain", ctx.task_k, static_cast<long>(epoch), "loss_ce", acc.ce * inv);
      ctx.metrics->add("retrain", ctx.task_k, static_cast<long>(epoch), "loss_kd", acc.kd * inv);
      ctx.metrics->add("retrain", ctx.task_k, static_cast<long>(epoch), "loss_total",
                       acc.total * inv);
      ctx.metrics->add("retrain", ctx.task_k, static_cast<long>(epoch), "lr",
                       lr_at_epoch(cfg, epoch));
    }
  }
}

// Head-only calibration on the class-balanced exemplar set. Backbone
// parameters stay bitwise identical: the optimizer holds head parameters
// only and gradients never mutate values.
inline void class_balanced_finetune(Network& child, const LabeledSet& coreset_set,
                                    const SearchConfig& cfg, const LossWeights& weights,
                                    Network* teacher, const TrainContext& ctx, Rng& rng) {
  cfg.validate();
  if (coreset_set.size() == 0) {
    if (ctx.metrics) ctx.metrics->add("finetune", ctx.task_k, 0, "skipped_empty_coreset", 1.0);
    return;
  }
  auto opt = std::make_unique<Sgd>(child.head_params(), cfg.lr_finetune, cfg.momentum,
                                   cfg.weight_decay);
  Network* kd_teacher = cfg.kd_in_finetune ? teacher : nullptr;
  const std::size_t steps = (coreset_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    LossBreakdown acc{};
    for (std::size_t s = 0; s < steps; ++s) {
      Batch b = sample_uniform_batch(coreset_set, cfg.batch_size, ctx.class_position, rng,
                                     cfg.augment_train, &rng, ctx.audit, ctx.task_k, "finetune");
      child.zero_grad();
      Tensor logits = child.forward(b.x, ctx.upto_task, true);
      Tensor tlog = kd_teacher ? kd_teacher->forward(b.x, kd_teacher->n_tasks(), false) : Tensor();
      Tensor glogits = Tensor::zeros(logits.shape());
      LossBreakdown l;
      l.ce = ce_loss(logits, b.labels, &glogits, 1.0);
      l.kd = kd_loss(logits, tlog, weights, &glogits, weights.mu);
      l.total = l.ce + weights.mu * l.kd;
      child.backward(glogits);
      opt->clip_grad_norm(cfg.grad_clip);
      opt->step();
      acc.ce += l.ce; acc.total += l.total;
    }
    if (ctx.metrics) {
      const double inv = 1.0 / static_cast<double>(steps);
      ctx.metrics->add("finetune", ctx.task_k, static_cast<long>(epoch), "loss_ce", acc.ce * inv);
      ctx.metrics->add("finetune", ctx.task_k, static_cast<long>(epoch), "loss_total",
                       acc.total * inv);
    }
  }
}

}  // namespace idarts
