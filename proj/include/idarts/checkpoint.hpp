#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "idarts/config.hpp"

namespace idarts {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// binary containers (little-endian, fixed layouts)

// named tensors: "IDNT" | u32 version | u64 count |
//   per tensor: u32 name_len | name | u32 ndim | u64 dims[] | f64 data[]
inline std::string serialize_named_tensors(const std::map<std::string, Tensor>& named) {
  std::string buf = "IDNT";
  detail::put<std::uint32_t>(buf, 1);
  detail::put<std::uint64_t>(buf, named.size());
  for (const auto& [name, t] : named) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
  }
  return buf;
}

inline std::map<std::string, Tensor> parse_named_tensors(const std::string& buf,
                                                         const std::string& what) {
  if (buf.size() < 4 || buf.substr(0, 4) != "IDNT") {
    throw IoError("checkpoint " + what + ": bad magic");
  }
  std::size_t pos = 4;
  if (detail::take<std::uint32_t>(buf, pos) != 1) {
    throw IoError("checkpoint " + what + ": unsupported version");
  }
  std::map<std::string, Tensor> out;
  const auto count = detail::take<std::uint64_t>(buf, pos);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::take<std::uint32_t>(buf, pos);
    if (pos + name_len > buf.size()) throw IoError("checkpoint " + what + ": truncated");
    const std::string name = buf.substr(pos, name_len);
    pos += name_len;
    const auto ndim = detail::take<std::uint32_t>(buf, pos);
    std::vector<std::size_t> dims(ndim);
    std::size_t numel = 1;
    for (auto& d : dims) {
      d = detail::take<std::uint64_t>(buf, pos);
      numel *= d;
    }
    Tensor t(dims);
    const std::size_t bytes = numel * sizeof(double);
    if (pos + bytes > buf.size()) throw IoError("checkpoint " + what + ": truncated");
    std::memcpy(t.data(), buf.data() + pos, bytes);
    pos += bytes;
    out[name] = std::move(t);
  }
  return out;
}

inline void save_network(Network& net, const std::string& path) {
  detail::write_file(path, serialize_named_tensors(net.named_params()));
}

inline void load_network_params(Network& net, const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint missing: " + path);
  auto named = parse_named_tensors(detail::read_file(path), path);
  const std::size_t copied = net.load_named_params(named);
  if (copied != named.size() || copied != net.all_params().size()) {
    throw IoError("checkpoint " + path + ": parameter set mismatch");
  }
}

// alpha table: "IDAT" | u32 version | u64 edges |
//   per edge: u64 cell,from,to | f64 alpha[8]
inline std::string serialize_alpha(const AlphaTable& t) {
  std::string buf = "IDAT";
  detail::put<std::uint32_t>(buf, 1);
  detail::put<std::uint64_t>(buf, t.entries.size());
  for (const auto& [id, v] : t.entries) {
    detail::put<std::uint64_t>(buf, id.cell);
    detail::put<std::uint64_t>(buf, id.from);
    detail::put<std::uint64_t>(buf, id.to);
    for (double a : v) detail::put<double>(buf, a);
  }
  return buf;
}

inline AlphaTable parse_alpha(const std::string& buf) {
  if (buf.size() < 4 || buf.substr(0, 4) != "IDAT") throw IoError("alpha snapshot: bad magic");
  std::size_t pos = 4;
  if (detail::take<std::uint32_t>(buf, pos) != 1) throw IoError("alpha snapshot: bad version");
  AlphaTable t;
  const auto n = detail::take<std::uint64_t>(buf, pos);
  for (std::uint64_t i = 0; i < n; ++i) {
    EdgeId id;
    id.cell = detail::take<std::uint64_t>(buf, pos);
    id.from = detail::take<std::uint64_t>(buf, pos);
    id.to = detail::take<std::uint64_t>(buf, pos);
    std::vector<double> v(kNumOps);
    for (auto& a : v) a = detail::take<double>(buf, pos);
    t.entries[id] = std::move(v);
  }
  return t;
}

// accuracy matrix: "IDAM" | u32 version | u64 rows | per row: u64 len | f64[]
inline std::string serialize_matrix(const AccuracyMatrix& m) {
  std::string buf = "IDAM";
  detail::put<std::uint32_t>(buf, 1);
  detail::put<std::uint64_t>(buf, m.rows.size());
  for (const auto& row : m.rows) {
    detail::put<std::uint64_t>(buf, row.size());
    for (double v : row) detail::put<double>(buf, v);
  }
  return buf;
}

inline AccuracyMatrix parse_matrix(const std::string& buf) {
  if (buf.size() < 4 || buf.substr(0, 4) != "IDAM") throw IoError("accuracy matrix: bad magic");
  std::size_t pos = 4;
  if (detail::take<std::uint32_t>(buf, pos) != 1) throw IoError("accuracy matrix: bad version");
  AccuracyMatrix m;
  const auto rows = detail::take<std::uint64_t>(buf, pos);
  for (std::uint64_t r = 0; r < rows; ++r) {
    const auto len = detail::take<std::uint64_t>(buf, pos);
    std::vector<double> row(len);
    for (auto& v : row) v = detail::take<double>(buf, pos);
    m.rows.push_back(std::move(row));
  }
  return m;
}

// ---------------------------------------------------------------------------
// run directory

inline std::string task_dir_name(std::size_t task) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "task_%03zu", task);
  return buf;
}

// exclusive run-directory ownership for the process lifetime
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir) : path_(run_dir + "/.lock") {
    if (fs::exists(path_)) {
      throw StateError("run directory is locked by another process: " + path_);
    }
    detail::write_file(path_, "locked\n");
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

struct TaskCheckpointInfo {
  std::size_t task = 0;
  bool completed = false;
  std::vector<std::size_t> head_sizes;
  std::size_t max_params_seen = 0;
};

inline void save_task_checkpoint(const ContinualState& st, const std::string& run_dir) {
  auto& state = const_cast<ContinualState&>(st);
  const std::size_t n = st.completed_tasks;
  const std::string dir = run_dir + "/" + task_dir_name(n);
  fs::create_directories(dir);
  if (state.supernet) {
    save_network(*state.supernet, dir + "/supernet.bin");
    detail::write_file(dir + "/alpha.bin", serialize_alpha(st.alpha_snapshots.back()));
  }
  save_network(*state.deployed, dir + "/deployed.bin");
  detail::write_file(dir + "/genotype.json", st.genotype_history.back().serialize());
  if (st.cfg.strategy.replay_mode != ReplayMode::none) {
    const auto& train = st.dataset->split("train");
    save_coreset(st.coreset, train.modality, train.example_shape(), dir + "/coreset.bin");
  }
  detail::write_file(dir + "/matrix.bin", serialize_matrix(st.matrix));
  nlohmann::ordered_json j;
  j["task"] = n;
  j["completed"] = true;
  j["head_sizes"] = state.deployed->head_sizes();
  j["max_params_seen"] = st.max_params_seen;
  detail::write_file(dir + "/state.json", j.dump(2) + "\n");
  // metrics and timing reflect everything up to and including this task
  st.metrics.write_csv(run_dir + "/metrics.csv");
  st.timing.write_csv(run_dir + "/timing.csv");
}

inline std::optional<TaskCheckpointInfo> read_task_checkpoint_info(const std::string& run_dir,
                                                                   std::size_t task) {
  const std::string path = run_dir + "/" + task_dir_name(task) + "/state.json";
  if (!fs::exists(path)) return std::nullopt;
  const auto j = nlohmann::json::parse(detail::read_file(path));
  TaskCheckpointInfo info;
  info.task = j.at("task").get<std::size_t>();
  info.completed = j.at("completed").get<bool>();
  for (const auto& h : j.at("head_sizes")) info.head_sizes.push_back(h.get<std::size_t>());
  info.max_params_seen = j.at("max_params_seen").get<std::size_t>();
  return info;
}

inline std::size_t last_completed_task(const std::string& run_dir, std::size_t n_tasks) {
  std::size_t last = 0;
  for (std::size_t t = 1; t <= n_tasks; ++t) {
    auto info = read_task_checkpoint_info(run_dir, t);
    if (info && info->completed) {
      last = t;
    } else {
      break;
    }
  }
  return last;
}

// Restores a run's state from the last completed task checkpoint. All
// randomness is derived per task from the master seed, so no generator state
// needs to be persisted.
inline void restore_state(ContinualState& st, const std::string& run_dir, std::size_t upto_task) {
  const auto& cfg = st.cfg;
  const std::string dir = run_dir + "/" + task_dir_name(upto_task);
  const auto info = read_task_checkpoint_info(run_dir, upto_task);
  if (!info || !info->completed) {
    throw IoError("resume: checkpoint " + dir + "/state.json missing or incomplete");
  }
  if (cfg.strategy.use_nas) {
    NetworkRecipe r{cfg.dim, cfg.in_channels, cfg.cell_spec, cfg.stem_kernel, cfg.stem_stride,
                    info->head_sizes, std::nullopt};
    Rng dummy(0);
    st.supernet = std::make_unique<Network>(r, dummy);
    load_network_params(*st.supernet, dir + "/supernet.bin");
  }
  Genotype g = Genotype::parse(detail::read_file(dir + "/genotype.json"));
  {
    NetworkRecipe r{cfg.dim, cfg.in_channels, cfg.cell_spec, cfg.stem_kernel, cfg.stem_stride,
                    g.head_sizes, g};
    Rng dummy(0);
    st.deployed = std::make_unique<Network>(r, dummy);
    load_network_params(*st.deployed, dir + "/deployed.bin");
  }
  for (std::size_t t = 1; t <= upto_task; ++t) {
    const std::string tdir = run_dir + "/" + task_dir_name(t);
    st.genotype_history.push_back(Genotype::parse(detail::read_file(tdir + "/genotype.json")));
    if (cfg.strategy.use_nas) {
      st.alpha_snapshots.push_back(parse_alpha(detail::read_file(tdir + "/alpha.bin")));
    }
  }
  if (cfg.strategy.replay_mode != ReplayMode::none) {
    st.coreset = load_coreset(dir + "/coreset.bin");
  }
  st.matrix = parse_matrix(detail::read_file(dir + "/matrix.bin"));
  st.max_params_seen = info->max_params_seen;
  st.completed_tasks = upto_task;
  // the teacher is the deployed model frozen at the checkpoint boundary
  snapshot_teacher(st);
  // head positions for everything seen so far
  std::size_t pos = 0;
  for (std::size_t t = 1; t <= upto_task; ++t) {
    for (int c : st.schedule.tasks[t - 1]) st.class_position[c] = static_cast<int>(pos++);
  }
  if (fs::exists(run_dir + "/metrics.csv")) {
    for (const auto& row : MetricsSink::parse_csv(detail::read_file(run_dir + "/metrics.csv"))) {
      if (row.stage == "summary") continue;  // rewritten at run end
      st.metrics.add(row.stage, row.task_k, row.task_n, row.metric, row.value);
    }
  }
}

}  // namespace idarts
