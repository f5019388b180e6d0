#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "idarts/common.hpp"

namespace idarts {

// %.17g round-trips doubles exactly, so string equality of emitted files
// implies bitwise equality of the values.
inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct MetricRow {
  std::string stage;
  long task_k = 0;
  // task index for eval rows; epoch index for training-stage rows
  long task_n = 0;
  std::string metric;
  double value = 0.0;
};

// Deterministic run metrics. Wall-clock timings are kept separately (see
// TimingLog) so that two runs with the same config and seed emit identical
// metrics files.
class MetricsSink {
 public:
  void add(const std::string& stage, long task_k, long task_n, const std::string& metric,
           double value) {
    rows_.push_back({stage, task_k, task_n, metric, value});
  }

  const std::vector<MetricRow>& rows() const { return rows_; }

  void clear() { rows_.clear(); }

  std::string to_csv() const {
    std::string out = "stage,task_k,task_n,metric,value\n";
    for (const auto& r : rows_) {
      out += r.stage + "," + std::to_string(r.task_k) + "," + std::to_string(r.task_n) + "," +
             r.metric + "," + format_value(r.value) + "\n";
    }
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("MetricsSink: cannot write " + path);
    f << to_csv();
  }

  static std::vector<MetricRow> parse_csv(const std::string& text) {
    std::vector<MetricRow> rows;
    std::size_t pos = text.find('\n');
    if (pos == std::string::npos) return rows;
    ++pos;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      if (line.empty()) continue;
      MetricRow r;
      std::size_t a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1),
                  d = line.find(',', c + 1);
      if (d == std::string::npos) throw IoError("MetricsSink: malformed csv line: " + line);
      r.stage = line.substr(0, a);
      r.task_k = std::stol(line.substr(a + 1, b - a - 1));
      r.task_n = std::stol(line.substr(b + 1, c - b - 1));
      r.metric = line.substr(c + 1, d - c - 1);
      r.value = std::stod(line.substr(d + 1));
      rows.push_back(std::move(r));
    }
    return rows;
  }

 private:
  std::vector<MetricRow> rows_;
};

// wall-clock accounting per (stage, task); excluded from metrics.csv
class TimingLog {
 public:
  void add(const std::string& stage, long task_k, double seconds) {
    rows_.push_back({stage, task_k, seconds});
  }

  struct Row {
    std::string stage;
    long task_k;
    double seconds;
  };

  const std::vector<Row>& rows() const { return rows_; }

  double total_seconds() const {
    double s = 0.0;
    for (const auto& r : rows_) s += r.seconds;
    return s;
  }

  std::string to_csv() const {
    std::string out = "stage,task_k,seconds\n";
    for (const auto& r : rows_) {
      out += r.stage + "," + std::to_string(r.task_k) + "," + format_value(r.seconds) + "\n";
    }
    return out;
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("TimingLog: cannot write " + path);
    f << to_csv();
  }

  static std::vector<Row> parse_csv(const std::string& text) {
    std::vector<Row> rows;
    std::size_t pos = text.find('\n');
    if (pos == std::string::npos) return rows;
    ++pos;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      if (line.empty()) continue;
      const std::size_t a = line.find(','), b = line.find(',', a + 1);
      if (b == std::string::npos) throw IoError("TimingLog: malformed csv line: " + line);
      rows.push_back({line.substr(0, a), std::stol(line.substr(a + 1, b - a - 1)),
                      std::stod(line.substr(b + 1))});
    }
    return rows;
  }

  void add_rows(const std::vector<Row>& rows) {
    rows_.insert(rows_.end(), rows.begin(), rows.end());
  }

 private:
  std::vector<Row> rows_;
};

class StageTimer {
 public:
  StageTimer(TimingLog& log, std::string stage, long task_k)
      : log_(log), stage_(std::move(stage)), task_k_(task_k),
        start_(std::chrono::steady_clock::now()) {}

  ~StageTimer() {
    const auto end = std::chrono::steady_clock::now();
    log_.add(stage_, task_k_, std::chrono::duration<double>(end - start_).count());
  }

 private:
  TimingLog& log_;
  std::string stage_;
  long task_k_;
  std::chrono::steady_clock::time_point start_;
};

inline double seconds_to_days(double seconds) { return seconds / 86400.0; }

// Records which source tasks' training examples each stage touched; the
// naive baseline's isolation contract is asserted against this log.
class AuditLog {
 public:
  void record(long task_k, const std::string& stage, std::size_t source_task) {
    touched_[{task_k, stage}].insert(source_task);
  }

  std::set<std::size_t> touched(long task_k, const std::string& stage) const {
    auto it = touched_.find({task_k, stage});
    return it == touched_.end() ? std::set<std::size_t>{} : it->second;
  }

  // union over all training stages of task k
  std::set<std::size_t> touched(long task_k) const {
    std::set<std::size_t> out;
    for (const auto& [key, tasks] : touched_) {
      if (key.first == task_k) out.insert(tasks.begin(), tasks.end());
    }
    return out;
  }

 private:
  std::map<std::pair<long, std::string>, std::set<std::size_t>> touched_;
};

}  // namespace idarts
