#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "idarts/rng.hpp"
#include "idarts/tensor.hpp"

#include <json.hpp>

namespace idarts {

enum class Modality { signal1d, image2d };

inline const char* modality_name(Modality m) {
  return m == Modality::signal1d ? "signal1d" : "image2d";
}

inline Modality modality_from_name(const std::string& s) {
  if (s == "signal1d") return Modality::signal1d;
  if (s == "image2d") return Modality::image2d;
  throw ConfigError("modality_from_name: unknown modality '" + s + "'");
}

// A stack of labeled examples. x rows are examples; class_ids are global
// class indices; example_ids and source_tasks feed the data-access audit.
struct LabeledSet {
  Modality modality = Modality::signal1d;
  Tensor x;
  std::vector<int> class_ids;
  std::vector<std::size_t> example_ids;
  std::vector<std::size_t> source_tasks;

  std::size_t size() const { return class_ids.size(); }

  std::size_t example_numel() const {
    return size() == 0 ? 0 : x.numel() / size();
  }

  std::vector<std::size_t> example_shape() const {
    std::vector<std::size_t> s(x.shape().begin() + 1, x.shape().end());
    return s;
  }

  Tensor row(std::size_t i) const {
    const std::size_t n = example_numel();
    Tensor out(example_shape());
    std::copy(x.data() + i * n, x.data() + (i + 1) * n, out.data());
    return out;
  }

  LabeledSet subset(const std::vector<std::size_t>& idx) const {
    LabeledSet out;
    out.modality = modality;
    std::vector<std::size_t> s = x.shape();
    s[0] = idx.size();
    out.x = Tensor(s);
    const std::size_t n = example_numel();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      std::copy(x.data() + i * n, x.data() + (i + 1) * n, out.x.data() + k * n);
      out.class_ids.push_back(class_ids[i]);
      out.example_ids.push_back(example_ids[i]);
      out.source_tasks.push_back(source_tasks.empty() ? 0 : source_tasks[i]);
    }
    return out;
  }

  static LabeledSet concat(const LabeledSet& a, const LabeledSet& b) {
    if (a.size() == 0) return b;
    if (b.size() == 0) return a;
    if (a.example_shape() != b.example_shape()) {
      throw ArgumentError("LabeledSet::concat: example shapes differ");
    }
    LabeledSet out;
    out.modality = a.modality;
    std::vector<std::size_t> s = a.x.shape();
    s[0] = a.size() + b.size();
    out.x = Tensor(s);
    std::copy(a.x.data(), a.x.data() + a.x.numel(), out.x.data());
    std::copy(b.x.data(), b.x.data() + b.x.numel(), out.x.data() + a.x.numel());
    auto append = [](auto& dst, const auto& u, const auto& v) {
      dst = u;
      dst.insert(dst.end(), v.begin(), v.end());
    };
    append(out.class_ids, a.class_ids, b.class_ids);
    append(out.example_ids, a.example_ids, b.example_ids);
    append(out.source_tasks, a.source_tasks, b.source_tasks);
    return out;
  }
};

// ---------------------------------------------------------------------------
// task schedule

struct TaskSchedule {
  std::vector<std::vector<int>> tasks;  // task n -> class ids (disjoint partition)

  std::size_t n_tasks() const { return tasks.size(); }

  std::size_t classes_through(std::size_t upto) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < upto && i < tasks.size(); ++i) n += tasks[i].size();
    return n;
  }

  // classes in introduction order; a class's head position is its index here
  std::vector<int> class_order() const {
    std::vector<int> out;
    for (const auto& t : tasks) out.insert(out.end(), t.begin(), t.end());
    return out;
  }

  void validate(std::size_t n_classes) const {
    std::vector<int> seen(n_classes, 0);
    for (const auto& t : tasks) {
      if (t.empty()) throw ConfigError("tasks.grouping: a task has no classes");
      for (int c : t) {
        if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
          throw ConfigError("tasks.grouping: class id " + std::to_string(c) + " out of range");
        }
        if (seen[c]++) {
          throw ConfigError("tasks.grouping: class id " + std::to_string(c) +
                            " assigned to more than one task");
        }
      }
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (!seen[c]) {
        throw ConfigError("tasks.grouping: class id " + std::to_string(c) +
                          " not assigned to any task");
      }
    }
  }
};

// modulation family table used by the `family` grouping
inline const std::map<std::string, std::string>& modulation_families() {
  static const std::map<std::string, std::string> fam = {
      {"BPSK", "psk"},  {"QPSK", "psk"},   {"8PSK", "psk"}, {"16QAM", "qam"},
      {"64QAM", "qam"}, {"GFSK", "fsk"},   {"AM-DSB", "analog"}, {"FM", "analog"},
  };
  return fam;
}

inline TaskSchedule split_tasks(std::size_t n_classes, std::size_t n_tasks,
                                const std::string& grouping,
                                const std::vector<std::vector<int>>& explicit_groups = {},
                                const std::vector<std::string>& class_names = {}) {
  if (n_tasks == 0) throw ConfigError("tasks.n_tasks: must be >= 1");
  TaskSchedule sched;
  if (grouping == "explicit") {
    sched.tasks = explicit_groups;
  } else if (grouping == "contiguous") {
    if (n_classes % n_tasks != 0) {
      throw ConfigError("tasks.grouping: contiguous grouping needs n_tasks to divide " +
                        std::to_string(n_classes) + " classes");
    }
    const std::size_t per = n_classes / n_tasks;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      std::vector<int> g;
      for (std::size_t i = 0; i < per; ++i) g.push_back(static_cast<int>(t * per + i));
      sched.tasks.push_back(std::move(g));
    }
  } else if (grouping == "family") {
    if (class_names.size() != n_classes) {
      throw ConfigError("tasks.grouping: family grouping needs class names");
    }
    // fixed family order: psk, qam, fsk, analog
    const std::vector<std::string> order = {"psk", "qam", "fsk", "analog"};
    std::map<std::string, std::vector<int>> by_family;
    for (std::size_t c = 0; c < n_classes; ++c) {
      auto it = modulation_families().find(class_names[c]);
      if (it == modulation_families().end()) {
        throw ConfigError("tasks.grouping: class '" + class_names[c] + "' has no known family");
      }
      by_family[it->second].push_back(static_cast<int>(c));
    }
    for (const auto& f : order) {
      auto it = by_family.find(f);
      if (it != by_family.end()) sched.tasks.push_back(it->second);
    }
    if (sched.tasks.size() != n_tasks) {
      throw ConfigError("tasks.grouping: family grouping yields " +
                        std::to_string(sched.tasks.size()) + " tasks, config requests " +
                        std::to_string(n_tasks));
    }
  } else {
    throw ConfigError("tasks.grouping: unknown grouping '" + grouping + "'");
  }
  sched.validate(n_classes);
  return sched;
}

// ---------------------------------------------------------------------------
// synthetic RF generation

inline const std::vector<std::string>& supported_modulations() {
  static const std::vector<std::string> mods = {"BPSK",  "QPSK", "8PSK",   "16QAM",
                                                "64QAM", "GFSK", "AM-DSB", "FM"};
  return mods;
}

struct RfGenOptions {
  bool random_phase = true;
  std::size_t samples_per_symbol = 8;
  double rrc_rolloff = 0.35;
  std::size_t rrc_span_symbols = 6;
};

// root-raised-cosine taps, unit symbol period, 2*span*sps+1 samples
inline std::vector<double> rrc_taps(double beta, std::size_t sps, std::size_t span) {
  const long n = static_cast<long>(span * sps);
  std::vector<double> h(2 * n + 1);
  for (long i = -n; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(sps);
    double v;
    if (std::abs(t) < 1e-12) {
      v = 1.0 - beta + 4.0 * beta / M_PI;
    } else if (std::abs(std::abs(4.0 * beta * t) - 1.0) < 1e-9) {
      v = (beta / std::sqrt(2.0)) * ((1.0 + 2.0 / M_PI) * std::sin(M_PI / (4.0 * beta)) +
                                     (1.0 - 2.0 / M_PI) * std::cos(M_PI / (4.0 * beta)));
    } else {
      v = (std::sin(M_PI * t * (1.0 - beta)) + 4.0 * beta * t * std::cos(M_PI * t * (1.0 + beta))) /
          (M_PI * t * (1.0 - 16.0 * beta * beta * t * t));
    }
    h[static_cast<std::size_t>(i + n)] = v;
  }
  return h;
}

using cplx = std::complex<double>;

// diagnostics for tests: the clean/noise decomposition and symbol stream
struct RfExampleDebug {
  std::vector<cplx> clean;
  std::vector<cplx> noise;
  std::vector<cplx> symbols;   // digital modulations only
  std::size_t sps = 0;         // symbol stride in the cropped frame (centers at 0, sps, ...)
};

namespace detail {

inline std::vector<cplx> psk_symbols(std::size_t count, std::size_t m, double rot, Rng& rng) {
  std::vector<cplx> s(count);
  for (auto& v : s) {
    const double ang = rot + 2.0 * M_PI * static_cast<double>(rng.uniform_index(m)) /
                                 static_cast<double>(m);
    v = cplx(std::cos(ang), std::sin(ang));
  }
  return s;
}

inline std::vector<cplx> qam_symbols(std::size_t count, std::size_t side, Rng& rng) {
  // square grid {-(side-1), ..., side-1} in steps of 2, unit mean energy
  std::vector<double> levels(side);
  for (std::size_t i = 0; i < side; ++i) levels[i] = -static_cast<double>(side - 1) + 2.0 * i;
  double e = 0.0;
  for (double a : levels)
    for (double b : levels) e += a * a + b * b;
  const double norm = std::sqrt(e / static_cast<double>(side * side));
  std::vector<cplx> s(count);
  for (auto& v : s) {
    v = cplx(levels[rng.uniform_index(side)], levels[rng.uniform_index(side)]) / norm;
  }
  return s;
}

inline std::vector<cplx> pulse_shape(const std::vector<cplx>& symbols, std::size_t sps,
                                     const std::vector<double>& taps, std::size_t out_len,
                                     std::size_t crop_offset) {
  std::vector<cplx> out(out_len, cplx(0.0, 0.0));
  // out[i] = sum_k sym[k] * taps[i + crop_offset - k*sps]
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    const long base = static_cast<long>(crop_offset) - static_cast<long>(k * sps);
    for (std::size_t i = 0; i < out_len; ++i) {
      const long ti = static_cast<long>(i) + base;
      if (ti >= 0 && ti < static_cast<long>(taps.size())) {
        out[i] += symbols[k] * taps[static_cast<std::size_t>(ti)];
      }
    }
  }
  return out;
}

// three seeded low-frequency tones, peak-normalized; analog message source
inline std::vector<double> analog_message(std::size_t len, Rng& rng) {
  std::vector<double> m(len, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double f = rng.uniform(0.005, 0.04);
    const double a = rng.uniform(0.4, 1.0);
    const double ph = rng.uniform(0.0, 2.0 * M_PI);
    for (std::size_t i = 0; i < len; ++i) m[i] += a * std::cos(2.0 * M_PI * f * i + ph);
  }
  double peak = 1e-12;
  for (double v : m) peak = std::max(peak, std::abs(v));
  for (double& v : m) v /= peak;
  return m;
}

inline double mean_power(const std::vector<cplx>& s) {
  double p = 0.0;
  for (const auto& v : s) p += std::norm(v);
  return p / static_cast<double>(s.size());
}

}  // namespace detail

inline Tensor generate_rf_example(const std::string& mod, std::size_t length, double snr_db,
                                  Rng& rng, const RfGenOptions& opts = {},
                                  RfExampleDebug* dbg = nullptr) {
  const std::size_t sps = opts.samples_per_symbol;
  std::vector<cplx> clean;
  std::vector<cplx> symbols;
  if (mod == "BPSK" || mod == "QPSK" || mod == "8PSK" || mod == "16QAM" || mod == "64QAM") {
    const auto taps = rrc_taps(opts.rrc_rolloff, sps, opts.rrc_span_symbols);
    const std::size_t n_sym = length / sps + 2 * opts.rrc_span_symbols + 2;
    if (mod == "BPSK") symbols = detail::psk_symbols(n_sym, 2, 0.0, rng);
    else if (mod == "QPSK") symbols = detail::psk_symbols(n_sym, 4, M_PI / 4.0, rng);
    else if (mod == "8PSK") symbols = detail::psk_symbols(n_sym, 8, 0.0, rng);
    else if (mod == "16QAM") symbols = detail::qam_symbols(n_sym, 4, rng);
    else symbols = detail::qam_symbols(n_sym, 8, rng);
    // crop so that symbol k's pulse center lands at sample k*sps
    clean = detail::pulse_shape(symbols, sps, taps, length, opts.rrc_span_symbols * sps);
  } else if (mod == "GFSK") {
    const std::size_t n_sym = length / sps + 8;
    std::vector<double> nrz(n_sym * sps);
    for (std::size_t k = 0; k < n_sym; ++k) {
      const double b = rng.bernoulli(0.5) ? 1.0 : -1.0;
      for (std::size_t i = 0; i < sps; ++i) nrz[k * sps + i] = b;
    }
    // gaussian filter, BT = 0.35, span 3 symbols
    const double bt = 0.35;
    const long gn = static_cast<long>(3 * sps);
    std::vector<double> g(2 * gn + 1);
    const double sigma = std::sqrt(std::log(2.0)) / (2.0 * M_PI * bt) * static_cast<double>(sps);
    double gsum = 0.0;
    for (long i = -gn; i <= gn; ++i) {
      g[i + gn] = std::exp(-0.5 * (i / sigma) * (i / sigma));
      gsum += g[i + gn];
    }
    for (double& v : g) v /= gsum;
    clean.resize(length);
    const double h_index = 0.5;
    double phase = 0.0;
    const std::size_t off = 4 * sps;  // skip filter transient
    for (std::size_t i = 0; i < length; ++i) {
      double f = 0.0;
      for (long t = -gn; t <= gn; ++t) {
        const long src = static_cast<long>(i + off) + t;
        if (src >= 0 && src < static_cast<long>(nrz.size())) f += g[t + gn] * nrz[src];
      }
      phase += M_PI * h_index * f / static_cast<double>(sps);
      clean[i] = cplx(std::cos(phase), std::sin(phase));
    }
  } else if (mod == "AM-DSB") {
    const auto m = detail::analog_message(length, rng);
    clean.resize(length);
    for (std::size_t i = 0; i < length; ++i) clean[i] = cplx(1.0 + 0.7 * m[i], 0.0);
  } else if (mod == "FM") {
    const auto m = detail::analog_message(length, rng);
    clean.resize(length);
    double phase = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      phase += 2.0 * M_PI * 0.05 * m[i];
      clean[i] = cplx(std::cos(phase), std::sin(phase));
    }
  } else {
    throw ArgumentError("generate_rf_example: unsupported modulation '" + mod + "'");
  }

  // exact empirical power normalization, then noise scaled to the exact
  // requested ratio so measured SNR matches requested SNR
  const double ps = detail::mean_power(clean);
  const double s_scale = 1.0 / std::sqrt(ps);
  for (auto& v : clean) v *= s_scale;
  if (opts.random_phase) {
    const double ph = rng.uniform(0.0, 2.0 * M_PI);
    const cplx rot(std::cos(ph), std::sin(ph));
    for (auto& v : clean) v *= rot;
  }
  std::vector<cplx> noise(length);
  for (auto& v : noise) v = cplx(rng.normal(), rng.normal()) / std::sqrt(2.0);
  const double pn = detail::mean_power(noise);
  const double target = std::pow(10.0, -snr_db / 10.0);
  const double n_scale = std::sqrt(target / pn);
  for (auto& v : noise) v *= n_scale;

  Tensor out({2, length});
  for (std::size_t i = 0; i < length; ++i) {
    const cplx v = clean[i] + noise[i];
    out[i] = v.real();
    out[length + i] = v.imag();
  }
  if (dbg) {
    dbg->clean = clean;
    dbg->noise = noise;
    dbg->symbols = symbols;
    dbg->sps = sps;
  }
  return out;
}

// balanced synthetic RF dataset: n_per_class examples per modulation, fully
// determined by (mod_set, n_per_class, length, snr_db, seed)
inline LabeledSet generate_rf_dataset(const std::vector<std::string>& mod_set,
                                      std::size_t n_per_class, std::size_t length, double snr_db,
                                      std::uint64_t seed, const RfGenOptions& opts = {}) {
  for (const auto& m : mod_set) {
    if (std::find(supported_modulations().begin(), supported_modulations().end(), m) ==
        supported_modulations().end()) {
      throw ArgumentError("generate_rf_dataset: unsupported modulation '" + m + "'");
    }
  }
  if (n_per_class == 0) throw ArgumentError("generate_rf_dataset: n_per_class must be >= 1");
  LabeledSet ds;
  ds.modality = Modality::signal1d;
  ds.x = Tensor({mod_set.size() * n_per_class, 2, length});
  std::size_t row = 0;
  for (std::size_t c = 0; c < mod_set.size(); ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Rng ex_rng(mix_seed(mix_seed(seed, mod_set[c]), "ex" + std::to_string(i)));
      Tensor iq = generate_rf_example(mod_set[c], length, snr_db, ex_rng, opts);
      std::copy(iq.data(), iq.data() + iq.numel(), ds.x.data() + row * 2 * length);
      ds.class_ids.push_back(static_cast<int>(c));
      ds.example_ids.push_back(row);
      ds.source_tasks.push_back(0);
      ++row;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// image augmentation

inline Tensor flip_horizontal(const Tensor& x) {
  if (x.ndim() != 3) throw ArgumentError("flip_horizontal: expected (C,H,W)");
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  Tensor out(x.shape());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi)
        out[(ci * h + hi) * w + wi] = x[(ci * h + hi) * w + (w - 1 - wi)];
  return out;
}

// zero-pads by `pad` on each side then crops back at offset (dy, dx)
inline Tensor pad_crop(const Tensor& x, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (x.ndim() != 3) throw ArgumentError("pad_crop: expected (C,H,W)");
  if (dy > 2 * pad || dx > 2 * pad) throw ArgumentError("pad_crop: offset exceeds padding");
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  Tensor out(x.shape());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t wi = 0; wi < w; ++wi) {
        const long sy = static_cast<long>(hi + dy) - static_cast<long>(pad);
        const long sx = static_cast<long>(wi + dx) - static_cast<long>(pad);
        double v = 0.0;
        if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w)) {
          v = x[(ci * h + sy) * w + sx];
        }
        out[(ci * h + hi) * w + wi] = v;
      }
  return out;
}

// train-time image augmentation: horizontal flip w.p. 0.5 and a random crop
// from 4-pixel zero padding
inline Tensor augment_image(const Tensor& x, Rng& rng) {
  Tensor out = rng.bernoulli(0.5) ? flip_horizontal(x) : x;
  const std::size_t pad = 4;
  const std::size_t dy = rng.uniform_index(2 * pad + 1);
  const std::size_t dx = rng.uniform_index(2 * pad + 1);
  return pad_crop(out, pad, dy, dx);
}

// ---------------------------------------------------------------------------
// manifests and binary containers

struct SplitFiles {
  std::size_t count = 0;
  std::string x_path;  // raw row-major values, dtype per manifest
  std::string y_path;  // int32 labels
};

struct DatasetManifest {
  std::string name;
  Modality modality = Modality::signal1d;
  std::vector<std::string> classes;
  std::vector<std::pair<std::string, SplitFiles>> splits;  // manifest order
  std::uint64_t seed = 0;
  std::string dtype = "f64";
  std::vector<std::size_t> shape;  // per-example

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["modality"] = modality_name(modality);
    j["classes"] = classes;
    nlohmann::ordered_json js;
    for (const auto& [split, f] : splits) {
      js[split] = {{"count", f.count}, {"x", f.x_path}, {"y", f.y_path}};
    }
    j["splits"] = js;
    j["seed"] = seed;
    j["dtype"] = dtype;
    j["shape"] = shape;
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.modality = modality_from_name(j.at("modality").get<std::string>());
    for (const auto& c : j.at("classes")) m.classes.push_back(c.get<std::string>());
    for (const auto& [split, f] : j.at("splits").items()) {
      SplitFiles sf;
      sf.count = f.at("count").get<std::size_t>();
      sf.x_path = f.at("x").get<std::string>();
      sf.y_path = f.at("y").get<std::string>();
      m.splits.emplace_back(split, sf);
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dtype = j.at("dtype").get<std::string>();
    for (const auto& s : j.at("shape")) m.shape.push_back(s.get<std::size_t>());
    return m;
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, LabeledSet> splits;

  const LabeledSet& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw StateError("Dataset: no split named '" + name + "'");
    return it->second;
  }

  std::size_t n_classes() const { return manifest.classes.size(); }
};

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

}  // namespace detail

// writes manifest.json plus per-split binaries into dir
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir + "/manifest.json", ds.manifest.to_json().dump(2) + "\n");
  for (const auto& [split, files] : ds.manifest.splits) {
    const auto& set = ds.split(split);
    const std::size_t n = set.size();
    std::string xbuf;
    if (ds.manifest.dtype == "f64") {
      xbuf.assign(reinterpret_cast<const char*>(set.x.data()), set.x.numel() * sizeof(double));
    } else if (ds.manifest.dtype == "f32") {
      std::vector<float> tmp(set.x.numel());
      for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<float>(set.x[i]);
      xbuf.assign(reinterpret_cast<const char*>(tmp.data()), tmp.size() * sizeof(float));
    } else {
      throw ConfigError("save_dataset: unsupported dtype '" + ds.manifest.dtype + "'");
    }
    detail::write_file(dir + "/" + files.x_path, xbuf);
    std::vector<std::int32_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = set.class_ids[i];
    std::string ybuf(reinterpret_cast<const char*>(y.data()), n * sizeof(std::int32_t));
    detail::write_file(dir + "/" + files.y_path, ybuf);
  }
}

// loads a dataset directory; image datasets are normalized per channel with
// statistics of the training split
inline Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(nlohmann::json::parse(detail::read_file(manifest_path)));
  const std::string dir = fs::path(manifest_path).parent_path().string();
  std::size_t ex_numel = 1;
  for (auto s : ds.manifest.shape) ex_numel *= s;
  const std::size_t dtype_size = ds.manifest.dtype == "f64" ? 8 : 4;
  if (ds.manifest.dtype != "f64" && ds.manifest.dtype != "f32") {
    throw IoError("load_dataset: unsupported dtype '" + ds.manifest.dtype + "'");
  }
  std::size_t id_offset = 0;
  for (const auto& [split, files] : ds.manifest.splits) {
    const std::string xbuf = detail::read_file(dir.empty() ? files.x_path : dir + "/" + files.x_path);
    const std::string ybuf = detail::read_file(dir.empty() ? files.y_path : dir + "/" + files.y_path);
    const std::size_t rec_bytes = ex_numel * dtype_size;
    if (xbuf.size() != files.count * rec_bytes) {
      throw IoError("load_dataset: split '" + split + "' record " +
                    std::to_string(xbuf.size() / rec_bytes) + " truncated (file " + files.x_path +
                    " holds " + std::to_string(xbuf.size()) + " bytes, expected " +
                    std::to_string(files.count * rec_bytes) + ")");
    }
    if (ybuf.size() != files.count * sizeof(std::int32_t)) {
      throw IoError("load_dataset: split '" + split + "' label file " + files.y_path +
                    " has wrong size");
    }
    LabeledSet set;
    set.modality = ds.manifest.modality;
    std::vector<std::size_t> xs = {files.count};
    xs.insert(xs.end(), ds.manifest.shape.begin(), ds.manifest.shape.end());
    set.x = Tensor(xs);
    if (ds.manifest.dtype == "f64") {
      std::memcpy(set.x.data(), xbuf.data(), xbuf.size());
    } else {
      const float* src = reinterpret_cast<const float*>(xbuf.data());
      for (std::size_t i = 0; i < set.x.numel(); ++i) set.x[i] = static_cast<double>(src[i]);
    }
    const auto* y = reinterpret_cast<const std::int32_t*>(ybuf.data());
    for (std::size_t i = 0; i < files.count; ++i) {
      if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= ds.manifest.classes.size()) {
        throw IoError("load_dataset: split '" + split + "' record " + std::to_string(i) +
                      " has label " + std::to_string(y[i]) + " out of range");
      }
      set.class_ids.push_back(y[i]);
      set.example_ids.push_back(id_offset + i);
      set.source_tasks.push_back(0);
    }
    id_offset += files.count;
    ds.splits[split] = std::move(set);
  }
  if (ds.manifest.modality == Modality::image2d) {
    auto it = ds.splits.find("train");
    if (it != ds.splits.end() && it->second.size() > 0) {
      const auto& train = it->second;
      const std::size_t c = train.x.size(1);
      const std::size_t per_ch = train.x.numel() / (train.size() * c);
      std::vector<double> mean(c, 0.0), var(c, 0.0);
      for (std::size_t i = 0; i < train.size(); ++i)
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double* p = train.x.data() + (i * c + ci) * per_ch;
          for (std::size_t k = 0; k < per_ch; ++k) mean[ci] += p[k];
        }
      const double denom = static_cast<double>(train.size() * per_ch);
      for (std::size_t ci = 0; ci < c; ++ci) mean[ci] /= denom;
      for (std::size_t i = 0; i < train.size(); ++i)
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double* p = train.x.data() + (i * c + ci) * per_ch;
          for (std::size_t k = 0; k < per_ch; ++k) {
            var[ci] += (p[k] - mean[ci]) * (p[k] - mean[ci]);
          }
        }
      std::vector<double> stddev(c);
      for (std::size_t ci = 0; ci < c; ++ci) stddev[ci] = std::sqrt(var[ci] / denom) + 1e-12;
      for (auto& [split, set] : ds.splits) {
        for (std::size_t i = 0; i < set.size(); ++i)
          for (std::size_t ci = 0; ci < c; ++ci) {
            double* p = set.x.data() + (i * c + ci) * per_ch;
            for (std::size_t k = 0; k < per_ch; ++k) p[k] = (p[k] - mean[ci]) / stddev[ci];
          }
      }
    }
  }
  return ds;
}

// convenience: synthetic RF dataset with train/test splits as a Dataset
inline Dataset make_rf_dataset(const std::vector<std::string>& mod_set, std::size_t n_train,
                               std::size_t n_test, std::size_t length, double snr_db,
                               std::uint64_t seed, const std::string& name = "rf-synth") {
  Dataset ds;
  ds.manifest.name = name;
  ds.manifest.modality = Modality::signal1d;
  ds.manifest.classes = mod_set;
  ds.manifest.seed = seed;
  ds.manifest.dtype = "f64";
  ds.manifest.shape = {2, length};
  ds.manifest.splits = {{"train", {n_train * mod_set.size(), "train_x.bin", "train_y.bin"}},
                        {"test", {n_test * mod_set.size(), "test_x.bin", "test_y.bin"}}};
  ds.splits["train"] =
      generate_rf_dataset(mod_set, n_train, length, snr_db, mix_seed(seed, "train"));
  ds.splits["test"] = generate_rf_dataset(mod_set, n_test, length, snr_db, mix_seed(seed, "test"));
  std::size_t off = ds.splits["train"].size();
  for (auto& id : ds.splits["test"].example_ids) id += off;
  return ds;
}

}  // namespace idarts
