#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "idarts/data.hpp"
#include "idarts/metrics.hpp"
#include "idarts/supernet.hpp"

namespace idarts {

// A[k][n]: accuracy after task k on task-n test data, defined for n <= k.
// Indices are 1-based to match the task numbering.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;  // rows[k-1] has k entries

  std::size_t completed() const { return rows.size(); }

  double at(std::size_t k, std::size_t n) const {
    if (k == 0 || n == 0 || n > k || k > rows.size()) {
      throw ArgumentError("AccuracyMatrix: A[" + std::to_string(k) + "][" + std::to_string(n) +
                          "] undefined");
    }
    return rows[k - 1][n - 1];
  }

  void push_row(std::vector<double> row) {
    if (row.size() != rows.size() + 1) {
      throw StateError("AccuracyMatrix: row " + std::to_string(rows.size() + 1) + " needs " +
                       std::to_string(rows.size() + 1) + " entries");
    }
    rows.push_back(std::move(row));
  }

  bool operator==(const AccuracyMatrix&) const = default;
};

// fraction of examples whose argmax over all logits of tasks 1..k matches
// the true class; no task index is consumed at prediction time
inline double task_accuracy(Network& model, const LabeledSet& test_set, std::size_t k,
                            const std::vector<int>& class_position,
                            std::size_t eval_batch = 256) {
  if (test_set.size() == 0) throw ArgumentError("task_accuracy: empty test set");
  std::size_t correct = 0;
  const std::size_t n = test_set.size();
  for (std::size_t start = 0; start < n; start += eval_batch) {
    const std::size_t stop = std::min(n, start + eval_batch);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    LabeledSet chunk = test_set.subset(idx);
    Tensor logits = model.forward(chunk.x, k, false);
    const std::size_t c = logits.size(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits[i * c + j] > logits[i * c + best]) best = j;
      }
      const int cls = chunk.class_ids[i];
      if (cls >= 0 && static_cast<std::size_t>(cls) < class_position.size() &&
          class_position[cls] >= 0 && static_cast<std::size_t>(class_position[cls]) == best) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// example-weighted accuracy over the union of all task test sets at k = N
inline double final_accuracy(const AccuracyMatrix& m, const std::vector<std::size_t>& test_sizes) {
  const std::size_t n_tasks = test_sizes.size();
  if (m.completed() < n_tasks || n_tasks == 0) {
    throw StateError("final_accuracy: accuracy matrix row " + std::to_string(n_tasks) +
                     " incomplete");
  }
  double num = 0.0, den = 0.0;
  for (std::size_t n = 1; n <= n_tasks; ++n) {
    num += static_cast<double>(test_sizes[n - 1]) * m.at(n_tasks, n);
    den += static_cast<double>(test_sizes[n - 1]);
  }
  return num / den;
}

// unweighted mean over tasks; emitted alongside the weighted value
inline double final_accuracy_task_mean(const AccuracyMatrix& m, std::size_t n_tasks) {
  if (m.completed() < n_tasks || n_tasks == 0) {
    throw StateError("final_accuracy_task_mean: accuracy matrix incomplete");
  }
  double s = 0.0;
  for (std::size_t n = 1; n <= n_tasks; ++n) s += m.at(n_tasks, n);
  return s / static_cast<double>(n_tasks);
}

struct HistogramBin {
  double lo, hi;
  std::size_t count;
};

struct TaskAlphaHistogram {
  std::size_t task = 0;  // 1-based
  std::vector<HistogramBin> bins;
  double mean = 0.0;
  double mean_abs = 0.0;
  std::size_t total = 0;
};

// distribution of raw (pre-softmax) alpha entries, one histogram per task
inline std::vector<TaskAlphaHistogram> alpha_histogram(const std::vector<AlphaTable>& snapshots,
                                                       std::size_t bins) {
  if (bins < 1) throw ArgumentError("alpha_histogram: bins must be >= 1");
  std::vector<TaskAlphaHistogram> out;
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    std::vector<double> vals;
    for (const auto& [id, v] : snapshots[t].entries) vals.insert(vals.end(), v.begin(), v.end());
    TaskAlphaHistogram h;
    h.task = t + 1;
    h.total = vals.size();
    if (vals.empty()) {
      out.push_back(std::move(h));
      continue;
    }
    double lo = vals[0], hi = vals[0];
    for (double v : vals) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      h.mean += v;
      h.mean_abs += std::abs(v);
    }
    h.mean /= static_cast<double>(vals.size());
    h.mean_abs /= static_cast<double>(vals.size());
    if (lo == hi) {  // degenerate range: one centered bin span
      lo -= 0.5;
      hi += 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    h.bins.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      h.bins[b] = {lo + width * static_cast<double>(b), lo + width * static_cast<double>(b + 1), 0};
    }
    for (double v : vals) {
      auto b = static_cast<std::size_t>((v - lo) / width);
      if (b >= bins) b = bins - 1;
      ++h.bins[b].count;
    }
    out.push_back(std::move(h));
  }
  return out;
}

inline std::string alpha_histogram_csv(const std::vector<TaskAlphaHistogram>& hists) {
  std::string out = "task,bin_lo,bin_hi,count\n";
  for (const auto& h : hists) {
    for (const auto& b : h.bins) {
      out += std::to_string(h.task) + "," + format_value(b.lo) + "," + format_value(b.hi) + "," +
             std::to_string(b.count) + "\n";
    }
  }
  return out;
}

struct RunMetrics {
  double final_accuracy = 0.0;
  double final_accuracy_task_mean = 0.0;
  std::size_t max_params = 0;
  std::size_t final_params = 0;
  double wall_time_days = 0.0;
};

}  // namespace idarts
