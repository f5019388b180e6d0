#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "idarts/data.hpp"

namespace idarts {

enum class ReplayMode { none, random, herding };

inline const char* replay_mode_name(ReplayMode m) {
  switch (m) {
    case ReplayMode::none: return "none";
    case ReplayMode::random: return "random";
    case ReplayMode::herding: return "herding";
  }
  throw ArgumentError("replay_mode_name: unknown mode");
}

inline ReplayMode replay_mode_from_name(const std::string& s) {
  if (s == "none") return ReplayMode::none;
  if (s == "random") return ReplayMode::random;
  if (s == "herding") return ReplayMode::herding;
  throw ConfigError("strategy.replay_mode: unknown mode '" + s + "'");
}

// Greedy herding order: step k picks the example whose inclusion brings the
// running exemplar mean closest to the class feature mean. Rows must already
// be L2-normalized. Ties go to the lowest index.
inline std::vector<std::size_t> herding_select(const Tensor& features, std::size_t m) {
  if (features.ndim() != 2 || features.size(0) == 0) {
    throw ArgumentError("herding_select: features must be (N,D) with N >= 1");
  }
  const std::size_t n = features.size(0), d = features.size(1);
  const std::size_t count = std::min(m, n);
  std::vector<std::size_t> order;
  if (count == 0) return order;
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += features[i * d + j];
  for (auto& v : mu) v /= static_cast<double>(n);

  std::vector<bool> taken(n, false);
  std::vector<double> sum(d, 0.0);  // sum of selected feature rows
  for (std::size_t k = 1; k <= count; ++k) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = mu[j] - (sum[j] + features[i * d + j]) * inv_k;
        dist += v * v;
      }
      if (dist < best) {
        best = dist;
        best_i = i;
      }
    }
    taken[best_i] = true;
    for (std::size_t j = 0; j < d; ++j) sum[j] += features[best_i * d + j];
    order.push_back(best_i);
  }
  return order;
}

// Per-class exemplar store. Exemplars keep raw inputs (re-embeddable by
// future models) in selection rank order; truncation takes a rank prefix.
struct Coreset {
  std::size_t budget = 0;
  std::map<int, LabeledSet> per_class;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [c, set] : per_class) n += set.size();
    return n;
  }

  std::size_t class_size(int c) const {
    auto it = per_class.find(c);
    return it == per_class.end() ? 0 : it->second.size();
  }

  bool empty() const { return total_size() == 0; }

  // all exemplars, classes in ascending id order, rank order within a class
  LabeledSet as_set() const {
    LabeledSet out;
    for (const auto& [c, set] : per_class) out = LabeledSet::concat(out, set);
    return out;
  }
};

// maps (B, C, spatial...) input rows to L2-normalized (B, D) feature rows
using FeatureFn = std::function<Tensor(const Tensor&)>;

inline void l2_normalize_rows(Tensor& feats) {
  const std::size_t n = feats.size(0), d = feats.size(1);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += feats[i * d + j] * feats[i * d + j];
    const double norm = std::sqrt(sq);
    if (norm > 1e-12) {
      for (std::size_t j = 0; j < d; ++j) feats[i * d + j] /= norm;
    }
  }
}

// per-class quota for a total budget: floor share, remainder to lowest ids
inline std::map<int, std::size_t> coreset_quotas(std::size_t budget,
                                                 const std::vector<int>& classes_seen) {
  if (classes_seen.empty()) throw ArgumentError("coreset_quotas: no classes");
  const std::size_t m = budget / classes_seen.size();
  if (m == 0) {
    throw ConfigError("strategy.coreset_budget: budget " + std::to_string(budget) +
                      " too small for " + std::to_string(classes_seen.size()) + " classes");
  }
  std::size_t rem = budget - m * classes_seen.size();
  std::vector<int> sorted = classes_seen;
  std::sort(sorted.begin(), sorted.end());
  std::map<int, std::size_t> quota;
  for (int c : sorted) {
    quota[c] = m + (rem > 0 ? 1 : 0);
    if (rem > 0) --rem;
  }
  return quota;
}

// Rebalances the store for the grown class set: old classes truncate to the
// new quota by rank prefix; classes of the new task are selected from
// new_data, by herding in the deployed model's feature space (or by a seeded
// shuffle for the random-replay baseline).
inline Coreset update_coreset(const Coreset& core, const LabeledSet& new_data,
                              const FeatureFn& features, const std::vector<int>& classes_seen,
                              ReplayMode mode, Rng& rng) {
  if (mode == ReplayMode::none) return Coreset{core.budget, {}};
  const auto quota = coreset_quotas(core.budget, classes_seen);
  Coreset out;
  out.budget = core.budget;
  for (const auto& [c, set] : core.per_class) {
    if (quota.find(c) == quota.end()) {
      throw StateError("update_coreset: stored class " + std::to_string(c) +
                       " missing from classes_seen");
    }
    const std::size_t q = std::min<std::size_t>(quota.at(c), set.size());
    std::vector<std::size_t> prefix(q);
    for (std::size_t i = 0; i < q; ++i) prefix[i] = i;
    out.per_class[c] = set.subset(prefix);
  }
  // group the new task's examples by class
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < new_data.size(); ++i) by_class[new_data.class_ids[i]].push_back(i);
  for (const auto& [c, idx] : by_class) {
    if (out.per_class.count(c)) continue;  // already stored
    auto qit = quota.find(c);
    if (qit == quota.end()) {
      throw StateError("update_coreset: new class " + std::to_string(c) +
                       " missing from classes_seen");
    }
    LabeledSet class_set = new_data.subset(idx);
    std::vector<std::size_t> order;
    if (mode == ReplayMode::herding) {
      Tensor feats = features(class_set.x);
      l2_normalize_rows(feats);
      order = herding_select(feats, qit->second);
    } else {
      std::vector<std::size_t> perm(class_set.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      perm.resize(std::min<std::size_t>(qit->second, perm.size()));
      order = perm;
    }
    out.per_class[c] = class_set.subset(order);
  }
  return out;
}

// ---------------------------------------------------------------------------
// binary checkpoint container
//
// layout (little-endian):
//   magic "IDCS" | u32 version | u64 budget | u8 modality | u32 ndim |
//   u64 dims[ndim] (per-example shape) | u64 n_classes |
//   per class: i32 class_id | u64 count | u64 example_ids[count] |
//              u64 source_tasks[count] | f64 inputs[count * numel]
// exemplars are stored in rank order

namespace detail {

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IoError("coreset file truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_coreset(const Coreset& core, Modality modality,
                                     const std::vector<std::size_t>& example_shape) {
  std::string buf = "IDCS";
  detail::put<std::uint32_t>(buf, 1);
  detail::put<std::uint64_t>(buf, core.budget);
  detail::put<std::uint8_t>(buf, modality == Modality::signal1d ? 0 : 1);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(example_shape.size()));
  for (auto d : example_shape) detail::put<std::uint64_t>(buf, d);
  detail::put<std::uint64_t>(buf, core.per_class.size());
  for (const auto& [c, set] : core.per_class) {
    detail::put<std::int32_t>(buf, c);
    detail::put<std::uint64_t>(buf, set.size());
    for (auto id : set.example_ids) detail::put<std::uint64_t>(buf, id);
    for (auto t : set.source_tasks) detail::put<std::uint64_t>(buf, t);
    buf.append(reinterpret_cast<const char*>(set.x.data()), set.x.numel() * sizeof(double));
  }
  return buf;
}

inline Coreset parse_coreset(const std::string& buf) {
  std::size_t pos = 0;
  if (buf.size() < 4 || buf.substr(0, 4) != "IDCS") throw IoError("coreset file: bad magic");
  pos = 4;
  const auto version = detail::take<std::uint32_t>(buf, pos);
  if (version != 1) throw IoError("coreset file: unsupported version");
  Coreset core;
  core.budget = detail::take<std::uint64_t>(buf, pos);
  const auto modality = detail::take<std::uint8_t>(buf, pos) == 0 ? Modality::signal1d
                                                                  : Modality::image2d;
  const auto ndim = detail::take<std::uint32_t>(buf, pos);
  std::vector<std::size_t> shape(ndim);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = detail::take<std::uint64_t>(buf, pos);
    numel *= d;
  }
  const auto n_classes = detail::take<std::uint64_t>(buf, pos);
  for (std::uint64_t k = 0; k < n_classes; ++k) {
    const auto c = detail::take<std::int32_t>(buf, pos);
    const auto count = detail::take<std::uint64_t>(buf, pos);
    LabeledSet set;
    set.modality = modality;
    for (std::uint64_t i = 0; i < count; ++i) {
      set.example_ids.push_back(detail::take<std::uint64_t>(buf, pos));
    }
    for (std::uint64_t i = 0; i < count; ++i) {
      set.source_tasks.push_back(detail::take<std::uint64_t>(buf, pos));
    }
    set.class_ids.assign(count, c);
    std::vector<std::size_t> xs = {count};
    xs.insert(xs.end(), shape.begin(), shape.end());
    set.x = Tensor(xs);
    const std::size_t bytes = count * numel * sizeof(double);
    if (pos + bytes > buf.size()) throw IoError("coreset file truncated");
    std::memcpy(set.x.data(), buf.data() + pos, bytes);
    pos += bytes;
    core.per_class[c] = std::move(set);
  }
  return core;
}

inline void save_coreset(const Coreset& core, Modality modality,
                         const std::vector<std::size_t>& example_shape, const std::string& path) {
  detail::write_file(path, serialize_coreset(core, modality, example_shape));
}

inline Coreset load_coreset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("coreset file missing: " + path);
  return parse_coreset(detail::read_file(path));
}

}  // namespace idarts
