#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "idarts/nn.hpp"

#include <json.hpp>

namespace idarts {

// Candidate operation set. Index order is fixed and part of the public
// contract (genotype files and alpha vectors index into it).
enum class OpKind : int {
  sep_conv_3 = 0,
  sep_conv_5 = 1,
  dil_conv_3 = 2,
  dil_conv_5 = 3,
  max_pool_3 = 4,
  avg_pool_3 = 5,
  identity = 6,
  zero = 7,
};

inline constexpr int kNumOps = 8;
inline constexpr int kZeroOpIndex = static_cast<int>(OpKind::zero);

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::sep_conv_3: return "sep_conv_3";
    case OpKind::sep_conv_5: return "sep_conv_5";
    case OpKind::dil_conv_3: return "dil_conv_3";
    case OpKind::dil_conv_5: return "dil_conv_5";
    case OpKind::max_pool_3: return "max_pool_3";
    case OpKind::avg_pool_3: return "avg_pool_3";
    case OpKind::identity: return "identity";
    case OpKind::zero: return "zero";
  }
  throw ArgumentError("op_name: unknown op kind");
}

inline OpKind op_from_name(const std::string& s) {
  for (int i = 0; i < kNumOps; ++i) {
    if (s == op_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
  }
  throw ArgumentError("op_from_name: unknown op '" + s + "'");
}

enum class Dim { conv1d, conv2d };

inline const char* dim_name(Dim d) { return d == Dim::conv1d ? "conv1d" : "conv2d"; }

inline Dim dim_from_name(const std::string& s) {
  if (s == "conv1d") return Dim::conv1d;
  if (s == "conv2d") return Dim::conv2d;
  throw ArgumentError("dim_from_name: unknown modality '" + s + "'");
}

struct EdgeId {
  std::size_t cell, from, to;
  auto operator<=>(const EdgeId&) const = default;
};

struct CellSpec {
  std::size_t n_nodes = 2;
  std::size_t n_cells = 2;
  std::size_t channels = 8;
  std::set<std::size_t> reduction_positions;

  // default reduction placement at n/3 and 2n/3
  static std::set<std::size_t> default_reductions(std::size_t n_cells) {
    std::set<std::size_t> r;
    r.insert(n_cells / 3);
    r.insert(2 * n_cells / 3);
    return r;
  }

  void validate() const {
    if (n_nodes < 1 || n_cells < 1 || channels < 1) {
      throw ConfigError("CellSpec: n_nodes, n_cells and channels must all be >= 1");
    }
    for (auto r : reduction_positions) {
      if (r >= n_cells) throw ConfigError("CellSpec: reduction position out of range");
    }
  }

  bool is_reduction(std::size_t cell) const { return reduction_positions.count(cell) > 0; }

  // width of cell c: base channels doubled at each reduction at or before c
  std::size_t cell_width(std::size_t cell) const {
    std::size_t w = channels;
    for (auto r : reduction_positions) {
      if (r <= cell) w *= 2;
    }
    return w;
  }

  // canonical edge order: cells ascending, then destination node, then source
  std::vector<EdgeId> edges() const {
    std::vector<EdgeId> out;
    for (std::size_t c = 0; c < n_cells; ++c)
      for (std::size_t to = 1; to <= n_nodes; ++to)
        for (std::size_t from = 0; from < to; ++from) out.push_back({c, from, to});
    return out;
  }

  std::size_t edges_per_cell() const { return n_nodes * (n_nodes + 1) / 2; }

  bool operator==(const CellSpec&) const = default;
};

// Raw per-edge mixture logits. Values are unnormalized; softmax happens at
// the point of use.
struct AlphaTable {
  std::map<EdgeId, std::vector<double>> entries;

  double frobenius_norm_sq() const {
    double s = 0.0;
    for (const auto& [id, v] : entries)
      for (double a : v) s += a * a;
    return s;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [id, v] : entries) n += v.size();
    return n;
  }
};

struct GenotypeEdge {
  std::size_t cell, from, to;
  OpKind op;
  bool operator==(const GenotypeEdge&) const = default;
};

struct Genotype {
  int version = 1;
  CellSpec cell_spec;
  std::vector<GenotypeEdge> edges;
  std::vector<std::size_t> head_sizes;

  bool operator==(const Genotype&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["cell_spec"] = {{"n_nodes", cell_spec.n_nodes},
                      {"n_cells", cell_spec.n_cells},
                      {"channels", cell_spec.channels},
                      {"reduction_positions",
                       std::vector<std::size_t>(cell_spec.reduction_positions.begin(),
                                                cell_spec.reduction_positions.end())}};
    j["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : edges) {
      j["edges"].push_back(
          {{"cell", e.cell}, {"from", e.from}, {"to", e.to}, {"op", op_name(e.op)}});
    }
    j["head_sizes"] = head_sizes;
    return j;
  }

  std::string serialize() const { return to_json().dump(2) + "\n"; }

  static Genotype from_json(const nlohmann::json& j) {
    Genotype g;
    g.version = j.at("version").get<int>();
    const auto& cs = j.at("cell_spec");
    g.cell_spec.n_nodes = cs.at("n_nodes").get<std::size_t>();
    g.cell_spec.n_cells = cs.at("n_cells").get<std::size_t>();
    g.cell_spec.channels = cs.at("channels").get<std::size_t>();
    for (auto r : cs.at("reduction_positions")) {
      g.cell_spec.reduction_positions.insert(r.get<std::size_t>());
    }
    for (const auto& je : j.at("edges")) {
      g.edges.push_back({je.at("cell").get<std::size_t>(), je.at("from").get<std::size_t>(),
                         je.at("to").get<std::size_t>(), op_from_name(je.at("op").get<std::string>())});
    }
    for (auto h : j.at("head_sizes")) g.head_sizes.push_back(h.get<std::size_t>());
    g.cell_spec.validate();
    return g;
  }

  static Genotype parse(const std::string& text) {
    return from_json(nlohmann::json::parse(text));
  }
};

// ---------------------------------------------------------------------------
// op modules

// pass-through; subsamples every stride-th position on reduction edges
class IdentityOp : public nn::Module {
 public:
  explicit IdentityOp(std::size_t stride) : stride_(stride) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    if (stride_ == 1) return x;
    std::vector<std::size_t> os = x.shape();
    for (std::size_t d = 2; d < os.size(); ++d) os[d] = (os[d] - 1) / stride_ + 1;
    Tensor out(os);
    const std::size_t nc = os[0] * os[1];
    if (os.size() == 3) {
      const std::size_t li = x.size(2), lo = os[2];
      for (std::size_t bc = 0; bc < nc; ++bc)
        for (std::size_t l = 0; l < lo; ++l) out[bc * lo + l] = x[bc * li + l * stride_];
    } else {
      const std::size_t hi = x.size(2), wi = x.size(3), ho = os[2], wo = os[3];
      for (std::size_t bc = 0; bc < nc; ++bc)
        for (std::size_t h = 0; h < ho; ++h)
          for (std::size_t w = 0; w < wo; ++w)
            out[(bc * ho + h) * wo + w] = x[(bc * hi + h * stride_) * wi + w * stride_];
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    if (stride_ == 1) return gy;
    Tensor gx(in_shape_);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    if (in_shape_.size() == 3) {
      const std::size_t li = in_shape_[2], lo = gy.size(2);
      for (std::size_t bc = 0; bc < nc; ++bc)
        for (std::size_t l = 0; l < lo; ++l) gx[bc * li + l * stride_] = gy[bc * lo + l];
    } else {
      const std::size_t hi = in_shape_[2], wi = in_shape_[3], ho = gy.size(2), wo = gy.size(3);
      for (std::size_t bc = 0; bc < nc; ++bc)
        for (std::size_t h = 0; h < ho; ++h)
          for (std::size_t w = 0; w < wo; ++w)
            gx[(bc * hi + h * stride_) * wi + w * stride_] = gy[(bc * ho + h) * wo + w];
    }
    return gx;
  }

 private:
  std::size_t stride_;
  std::vector<std::size_t> in_shape_;
};

// maps any input to all-zeros of the edge's output shape
class ZeroOp : public nn::Module {
 public:
  explicit ZeroOp(std::size_t stride) : stride_(stride) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    std::vector<std::size_t> os = x.shape();
    for (std::size_t d = 2; d < os.size(); ++d) os[d] = (os[d] - 1) / stride_ + 1;
    return Tensor::zeros(os);
  }

  Tensor backward(const Tensor&) override { return Tensor::zeros(in_shape_); }

 private:
  std::size_t stride_;
  std::vector<std::size_t> in_shape_;
};

// ReLU -> depthwise conv -> pointwise conv; dilation 2 for the dil_conv pair
inline std::unique_ptr<nn::Module> make_conv_op(Dim dim, std::size_t channels, std::size_t k,
                                                std::size_t dil, std::size_t stride, Rng& rng,
                                                const std::string& name) {
  auto seq = std::make_unique<nn::Sequential>();
  seq->add(std::make_unique<nn::ReLU>());
  const std::size_t pad = dil * (k - 1) / 2;
  if (dim == Dim::conv1d) {
    seq->add(std::make_unique<nn::Conv1d>(channels, channels, k, stride, pad, dil, channels,
                                          /*bias=*/false, rng, name + ".dw"));
    seq->add(std::make_unique<nn::Conv1d>(channels, channels, 1, 1, 0, 1, 1,
                                          /*bias=*/true, rng, name + ".pw"));
  } else {
    seq->add(std::make_unique<nn::Conv2d>(channels, channels, k, stride, pad, dil, channels,
                                          /*bias=*/false, rng, name + ".dw"));
    seq->add(std::make_unique<nn::Conv2d>(channels, channels, 1, 1, 0, 1, 1,
                                          /*bias=*/true, rng, name + ".pw"));
  }
  return seq;
}

inline std::unique_ptr<nn::Module> make_op(OpKind kind, Dim dim, std::size_t channels,
                                           std::size_t stride, Rng& rng, const std::string& name) {
  switch (kind) {
    case OpKind::sep_conv_3: return make_conv_op(dim, channels, 3, 1, stride, rng, name);
    case OpKind::sep_conv_5: return make_conv_op(dim, channels, 5, 1, stride, rng, name);
    case OpKind::dil_conv_3: return make_conv_op(dim, channels, 3, 2, stride, rng, name);
    case OpKind::dil_conv_5: return make_conv_op(dim, channels, 5, 2, stride, rng, name);
    case OpKind::max_pool_3:
      if (dim == Dim::conv1d) return std::make_unique<nn::MaxPool1d>(3, stride, 1);
      return std::make_unique<nn::MaxPool2d>(3, stride, 1);
    case OpKind::avg_pool_3:
      if (dim == Dim::conv1d) return std::make_unique<nn::AvgPool1d>(3, stride, 1);
      return std::make_unique<nn::AvgPool2d>(3, stride, 1);
    case OpKind::identity: return std::make_unique<IdentityOp>(stride);
    case OpKind::zero: return std::make_unique<ZeroOp>(stride);
  }
  throw ArgumentError("make_op: unknown op kind");
}

// Softmax-weighted sum of all candidate ops on one edge. Owns the edge's raw
// alpha vector; exposed separately from the op weights so the two optimizers
// hold disjoint parameter sets.
class MixedEdge : public nn::Module {
 public:
  MixedEdge(Dim dim, std::size_t channels, std::size_t stride, Rng& rng, const std::string& name) {
    alpha_ = nn::Parameter(name + ".alpha", Tensor::zeros({static_cast<std::size_t>(kNumOps)}));
    for (int i = 0; i < kNumOps; ++i) alpha_.value[i] = 1e-3 * rng.normal();
    for (int i = 0; i < kNumOps; ++i) {
      ops_[i] = make_op(static_cast<OpKind>(i), dim, channels, stride, rng,
                        name + ".op" + std::to_string(i));
    }
  }

  Tensor forward(const Tensor& x, bool training) override {
    probs_.resize(kNumOps);
    nn::softmax_into(alpha_.value.data(), probs_.data(), kNumOps);
    outs_.clear();
    outs_.reserve(kNumOps);
    for (int i = 0; i < kNumOps; ++i) outs_.push_back(ops_[i]->forward(x, training));
    for (int i = 1; i < kNumOps; ++i) {
      if (!outs_[i].same_shape(outs_[0])) {
        throw ConfigError("MixedEdge: op output shapes disagree: " + outs_[0].shape_str() +
                          " vs " + outs_[i].shape_str());
      }
    }
    Tensor out(outs_[0].shape());
    for (int i = 0; i < kNumOps; ++i) out.axpy(probs_[i], outs_[i]);
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    // d loss / d alpha through the softmax
    std::array<double, kNumOps> g{};
    double mean = 0.0;
    for (int i = 0; i < kNumOps; ++i) {
      g[i] = gy.dot(outs_[i]);
      mean += probs_[i] * g[i];
    }
    for (int i = 0; i < kNumOps; ++i) alpha_.grad[i] += probs_[i] * (g[i] - mean);

    Tensor gx;
    for (int i = 0; i < kNumOps; ++i) {
      Tensor scaled = gy;
      scaled.scale(probs_[i]);
      Tensor gxi = ops_[i]->backward(scaled);
      if (i == 0)
        gx = std::move(gxi);
      else
        gx.axpy(1.0, gxi);
    }
    return gx;
  }

  void collect_params(std::vector<nn::Parameter*>& out) override {
    for (auto& op : ops_) op->collect_params(out);
  }

  nn::Parameter* alpha_param() { return &alpha_; }
  const nn::Parameter* alpha_param() const { return &alpha_; }
  const std::vector<double>& last_probs() const { return probs_; }

 private:
  nn::Parameter alpha_;
  std::array<std::unique_ptr<nn::Module>, kNumOps> ops_;
  std::vector<Tensor> outs_;
  std::vector<double> probs_;
  friend class Network;
};

// single retained op on an edge of a derived architecture
class FixedEdge : public nn::Module {
 public:
  FixedEdge(OpKind kind, Dim dim, std::size_t channels, std::size_t stride, Rng& rng,
            const std::string& name)
      : kind_(kind),
        op_(make_op(kind, dim, channels, stride, rng, name + ".op" +
                                                          std::to_string(static_cast<int>(kind)))) {}

  Tensor forward(const Tensor& x, bool training) override { return op_->forward(x, training); }
  Tensor backward(const Tensor& gy) override { return op_->backward(gy); }
  void collect_params(std::vector<nn::Parameter*>& out) override { op_->collect_params(out); }
  OpKind kind() const { return kind_; }

 private:
  OpKind kind_;
  std::unique_ptr<nn::Module> op_;
};

// ---------------------------------------------------------------------------
// cell and network

struct CellEdge {
  std::size_t from, to;
  std::unique_ptr<nn::Module> mod;
};

// One DAG cell: 1x1 input projection to the cell width, edges between the
// input node (0) and intermediate nodes (1..n), output = channel concat of
// the intermediate node values. Reduction cells stride 2 on edges leaving
// node 0.
class Cell {
 public:
  Cell(Dim dim, std::size_t in_ch, std::size_t width, std::size_t n_nodes, bool reduction,
       Rng& rng, const std::string& name)
      : dim_(dim), width_(width), n_nodes_(n_nodes), reduction_(reduction) {
    if (dim == Dim::conv1d) {
      pre_ = std::make_unique<nn::Conv1d>(in_ch, width, 1, 1, 0, 1, 1, true, rng, name + ".pre");
    } else {
      pre_ = std::make_unique<nn::Conv2d>(in_ch, width, 1, 1, 0, 1, 1, true, rng, name + ".pre");
    }
  }

  void add_edge(std::size_t from, std::size_t to, std::unique_ptr<nn::Module> mod) {
    edges_.push_back({from, to, std::move(mod)});
  }

  std::size_t edge_stride(std::size_t from) const { return (reduction_ && from == 0) ? 2 : 1; }

  Tensor forward(const Tensor& x, bool training) {
    node_vals_.assign(n_nodes_ + 1, Tensor());
    node_vals_[0] = pre_->forward(x, training);
    for (std::size_t j = 1; j <= n_nodes_; ++j) {
      Tensor acc;
      for (auto& e : edges_) {
        if (e.to != j) continue;
        Tensor y = e.mod->forward(node_vals_[e.from], training);
        if (acc.empty())
          acc = std::move(y);
        else
          acc.axpy(1.0, y);
      }
      if (acc.empty()) throw ConfigError("Cell: node " + std::to_string(j) + " has no incoming edges");
      node_vals_[j] = std::move(acc);
    }
    return concat_nodes();
  }

  Tensor backward(const Tensor& gy) {
    std::vector<Tensor> gnode(n_nodes_ + 1);
    split_concat_grad(gy, gnode);
    for (std::size_t j = n_nodes_; j >= 1; --j) {
      for (auto it = edges_.rbegin(); it != edges_.rend(); ++it) {
        if (it->to != j) continue;
        Tensor gx = it->mod->backward(gnode[j]);
        if (gnode[it->from].empty())
          gnode[it->from] = std::move(gx);
        else
          gnode[it->from].axpy(1.0, gx);
      }
    }
    return pre_->backward(gnode[0]);
  }

  void collect_params(std::vector<nn::Parameter*>& out) {
    pre_->collect_params(out);
    for (auto& e : edges_) e.mod->collect_params(out);
  }

  std::size_t out_channels() const { return width_ * n_nodes_; }
  std::size_t width() const { return width_; }
  bool reduction() const { return reduction_; }
  std::vector<CellEdge>& edges() { return edges_; }

 private:
  Tensor concat_nodes() {
    const Tensor& first = node_vals_[1];
    std::vector<std::size_t> os = first.shape();
    os[1] = width_ * n_nodes_;
    Tensor out(os);
    std::size_t sp = 1;
    for (std::size_t d = 2; d < os.size(); ++d) sp *= os[d];
    const std::size_t n = os[0];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < n_nodes_; ++j) {
        const Tensor& src = node_vals_[j + 1];
        for (std::size_t c = 0; c < width_; ++c) {
          const double* s = src.data() + (b * width_ + c) * sp;
          double* d = out.data() + (b * out.size(1) + j * width_ + c) * sp;
          std::copy(s, s + sp, d);
        }
      }
    return out;
  }

  void split_concat_grad(const Tensor& gy, std::vector<Tensor>& gnode) {
    std::vector<std::size_t> ns = gy.shape();
    ns[1] = width_;
    std::size_t sp = 1;
    for (std::size_t d = 2; d < ns.size(); ++d) sp *= ns[d];
    const std::size_t n = ns[0];
    for (std::size_t j = 0; j < n_nodes_; ++j) {
      Tensor g(ns);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < width_; ++c) {
          const double* s = gy.data() + (b * gy.size(1) + j * width_ + c) * sp;
          double* d = g.data() + (b * width_ + c) * sp;
          std::copy(s, s + sp, d);
        }
      gnode[j + 1] = std::move(g);
    }
  }

  Dim dim_;
  std::size_t width_, n_nodes_;
  bool reduction_;
  std::unique_ptr<nn::Module> pre_;
  std::vector<CellEdge> edges_;
  std::vector<Tensor> node_vals_;
};

struct NetworkRecipe {
  Dim dim = Dim::conv1d;
  std::size_t in_channels = 2;
  CellSpec spec;
  std::size_t stem_kernel = 5;
  std::size_t stem_stride = 2;
  std::vector<std::size_t> head_sizes;
  std::optional<Genotype> genotype;  // absent -> supernet with mixed edges

  bool is_supernet() const { return !genotype.has_value(); }
};

// Stacked-cell classifier: stem conv -> cells -> global average pool ->
// per-task linear head blocks. Covers both the supernet (mixed edges) and a
// derived child (fixed edges), selected by the recipe.
class Network {
 public:
  Network(NetworkRecipe recipe, Rng& rng) : recipe_(std::move(recipe)) {
    recipe_.spec.validate();
    const auto& spec = recipe_.spec;
    const std::size_t pad = (recipe_.stem_kernel - 1) / 2;
    if (recipe_.dim == Dim::conv1d) {
      stem_ = std::make_unique<nn::Conv1d>(recipe_.in_channels, spec.channels, recipe_.stem_kernel,
                                           recipe_.stem_stride, pad, 1, 1, true, rng, "stem");
    } else {
      stem_ = std::make_unique<nn::Conv2d>(recipe_.in_channels, spec.channels, recipe_.stem_kernel,
                                           recipe_.stem_stride, pad, 1, 1, true, rng, "stem");
    }
    stem_relu_ = std::make_unique<nn::ReLU>();

    std::size_t in_ch = spec.channels;
    for (std::size_t c = 0; c < spec.n_cells; ++c) {
      const std::size_t width = spec.cell_width(c);
      const bool red = spec.is_reduction(c);
      const std::string cname = "cell" + std::to_string(c);
      auto cell = std::make_unique<Cell>(recipe_.dim, in_ch, width, spec.n_nodes, red, rng, cname);
      for (std::size_t to = 1; to <= spec.n_nodes; ++to) {
        for (std::size_t from = 0; from < to; ++from) {
          const std::size_t stride = cell->edge_stride(from);
          const std::string ename = cname + ".e" + std::to_string(from) + "_" + std::to_string(to);
          if (recipe_.is_supernet()) {
            cell->add_edge(from, to,
                           std::make_unique<MixedEdge>(recipe_.dim, width, stride, rng, ename));
          } else {
            auto it = std::find_if(recipe_.genotype->edges.begin(), recipe_.genotype->edges.end(),
                                   [&](const GenotypeEdge& e) {
                                     return e.cell == c && e.from == from && e.to == to;
                                   });
            if (it == recipe_.genotype->edges.end()) continue;  // pruned edge
            cell->add_edge(from, to, std::make_unique<FixedEdge>(it->op, recipe_.dim, width, stride,
                                                                 rng, ename));
          }
        }
      }
      cells_.push_back(std::move(cell));
      in_ch = cells_.back()->out_channels();
    }
    gap_ = std::make_unique<nn::GlobalAvgPool>();
    feature_dim_ = in_ch;
    for (std::size_t i = 0; i < recipe_.head_sizes.size(); ++i) {
      heads_.push_back(std::make_unique<nn::Linear>(feature_dim_, recipe_.head_sizes[i], rng,
                                                    "head" + std::to_string(i)));
    }
  }

  const NetworkRecipe& recipe() const { return recipe_; }
  const CellSpec& spec() const { return recipe_.spec; }
  Dim dim() const { return recipe_.dim; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t n_tasks() const { return heads_.size(); }
  const std::vector<std::size_t>& head_sizes() const { return recipe_.head_sizes; }

  std::size_t logit_width(std::size_t upto_task) const {
    std::size_t w = 0;
    for (std::size_t i = 0; i < upto_task; ++i) w += recipe_.head_sizes[i];
    return w;
  }

  // adds one head block of the given width; earlier blocks untouched
  void expand_head(std::size_t n_new, Rng& rng) {
    if (n_new == 0) throw ArgumentError("expand_head: n_new must be >= 1");
    heads_.push_back(std::make_unique<nn::Linear>(feature_dim_, n_new, rng,
                                                  "head" + std::to_string(heads_.size())));
    recipe_.head_sizes.push_back(n_new);
  }

  // backbone through global average pooling; the herding feature space
  Tensor features(const Tensor& x, bool training = false) {
    Tensor h = stem_->forward(x, training);
    h = stem_relu_->forward(h, training);
    for (auto& c : cells_) h = c->forward(h, training);
    return gap_->forward(h, training);
  }

  Tensor forward(const Tensor& x, std::size_t upto_task, bool training) {
    if (upto_task > heads_.size() || upto_task == 0) {
      throw std::out_of_range("forward: upto_task " + std::to_string(upto_task) + " out of range (" +
                              std::to_string(heads_.size()) + " known tasks)");
    }
    Tensor feat = features(x, training);
    last_upto_ = upto_task;
    const std::size_t n = feat.size(0);
    Tensor logits({n, logit_width(upto_task)});
    std::size_t off = 0;
    for (std::size_t t = 0; t < upto_task; ++t) {
      Tensor block = heads_[t]->forward(feat, training);
      const std::size_t w = block.size(1);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < w; ++c) logits[b * logits.size(1) + off + c] = block[b * w + c];
      off += w;
    }
    return logits;
  }

  // gradient wrt input; parameter grads accumulate in place
  Tensor backward(const Tensor& glogits) {
    const std::size_t n = glogits.size(0);
    Tensor gfeat({n, feature_dim_});
    std::size_t off = 0;
    for (std::size_t t = 0; t < last_upto_; ++t) {
      const std::size_t w = recipe_.head_sizes[t];
      Tensor gblock({n, w});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < w; ++c) gblock[b * w + c] = glogits[b * glogits.size(1) + off + c];
      gfeat.axpy(1.0, heads_[t]->backward(gblock));
      off += w;
    }
    Tensor g = gap_->backward(gfeat);
    for (auto it = cells_.rbegin(); it != cells_.rend(); ++it) g = (*it)->backward(g);
    g = stem_relu_->backward(g);
    return stem_->backward(g);
  }

  // ordinary trainable weights; excludes mixture logits
  std::vector<nn::Parameter*> weight_params() {
    std::vector<nn::Parameter*> out;
    stem_->collect_params(out);
    for (auto& c : cells_) c->collect_params(out);
    for (auto& h : heads_) h->collect_params(out);
    return out;
  }

  std::vector<nn::Parameter*> alpha_params() {
    std::vector<nn::Parameter*> out;
    for (auto& c : cells_)
      for (auto& e : c->edges())
        if (auto* m = dynamic_cast<MixedEdge*>(e.mod.get())) out.push_back(m->alpha_param());
    return out;
  }

  std::vector<nn::Parameter*> head_params() {
    std::vector<nn::Parameter*> out;
    for (auto& h : heads_) h->collect_params(out);
    return out;
  }

  std::vector<nn::Parameter*> backbone_params() {
    std::vector<nn::Parameter*> out;
    stem_->collect_params(out);
    for (auto& c : cells_) c->collect_params(out);
    return out;
  }

  std::vector<nn::Parameter*> all_params() {
    auto out = weight_params();
    auto a = alpha_params();
    out.insert(out.end(), a.begin(), a.end());
    return out;
  }

  void zero_grad() {
    for (auto* p : all_params()) p->grad.zero();
  }

  AlphaTable alpha_table() const {
    AlphaTable t;
    std::size_t ci = 0;
    for (const auto& c : cells_) {
      for (const auto& e : const_cast<Cell&>(*c).edges()) {
        if (auto* m = dynamic_cast<const MixedEdge*>(e.mod.get())) {
          const auto& v = m->alpha_param()->value;
          t.entries[{ci, e.from, e.to}] = std::vector<double>(v.data(), v.data() + v.numel());
        }
      }
      ++ci;
    }
    return t;
  }

  void set_alpha(const AlphaTable& t) {
    std::size_t ci = 0;
    for (auto& c : cells_) {
      for (auto& e : c->edges()) {
        if (auto* m = dynamic_cast<MixedEdge*>(e.mod.get())) {
          auto it = t.entries.find({ci, e.from, e.to});
          if (it == t.entries.end()) throw ConfigError("set_alpha: missing edge entry");
          for (int i = 0; i < kNumOps; ++i) m->alpha_param()->value[i] = it->second[i];
        }
      }
      ++ci;
    }
  }

  std::map<std::string, Tensor> named_params() {
    std::map<std::string, Tensor> out;
    for (auto* p : all_params()) out[p->name] = p->value;
    return out;
  }

  // copies values for every name with a matching shape; returns copied count
  std::size_t load_named_params(const std::map<std::string, Tensor>& named) {
    std::size_t copied = 0;
    for (auto* p : all_params()) {
      auto it = named.find(p->name);
      if (it != named.end() && it->second.shape() == p->value.shape()) {
        p->value = it->second;
        ++copied;
      }
    }
    return copied;
  }

  std::uint64_t param_checksum() {
    std::uint64_t h = 1469598103934665603ull;
    for (auto* p : all_params()) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->value.data(), p->value.numel() * sizeof(double), h);
    }
    return h;
  }

  std::uint64_t backbone_checksum() {
    std::uint64_t h = 1469598103934665603ull;
    for (auto* p : backbone_params()) {
      h = fnv1a(p->name, h);
      h = fnv1a(p->value.data(), p->value.numel() * sizeof(double), h);
    }
    return h;
  }

  Network clone() const {
    Rng dummy(0);
    Network out(recipe_, dummy);
    auto& self = const_cast<Network&>(*this);
    out.load_named_params(self.named_params());
    return out;
  }

 private:
  NetworkRecipe recipe_;
  std::unique_ptr<nn::Module> stem_;
  std::unique_ptr<nn::ReLU> stem_relu_;
  std::vector<std::unique_ptr<Cell>> cells_;
  std::unique_ptr<nn::GlobalAvgPool> gap_;
  std::vector<std::unique_ptr<nn::Linear>> heads_;
  std::size_t feature_dim_ = 0;
  std::size_t last_upto_ = 0;
};

// ---------------------------------------------------------------------------
// genotype inference and child derivation

struct GenotypeOptions {
  // the literal highest-alpha rule can pick `zero`, disconnecting a node;
  // excluded by default
  bool allow_zero = false;
  // 0 = keep every edge; k > 0 keeps the k strongest incoming edges per node
  std::size_t top_k_edges = 0;
};

inline Genotype infer_genotype(const AlphaTable& alpha, const CellSpec& spec,
                               const GenotypeOptions& opts = {}) {
  spec.validate();
  Genotype g;
  g.cell_spec = spec;
  struct Scored {
    GenotypeEdge e;
    double score;
  };
  std::map<std::pair<std::size_t, std::size_t>, std::vector<Scored>> per_node;
  for (const auto& id : spec.edges()) {
    auto it = alpha.entries.find(id);
    if (it == alpha.entries.end()) {
      throw ConfigError("infer_genotype: alpha table missing edge");
    }
    const auto& v = it->second;
    if (v.size() != static_cast<std::size_t>(kNumOps)) {
      throw ConfigError("infer_genotype: alpha vector must have 8 entries");
    }
    for (double a : v) {
      if (!std::isfinite(a)) throw ArgumentError("infer_genotype: alpha must be finite");
    }
    int best = -1;
    for (int i = 0; i < kNumOps; ++i) {
      if (!opts.allow_zero && i == kZeroOpIndex) continue;
      if (best < 0 || v[i] > v[best]) best = i;  // ties keep the lower index
    }
    std::array<double, kNumOps> probs{};
    nn::softmax_into(v.data(), probs.data(), kNumOps);
    per_node[{id.cell, id.to}].push_back(
        {{id.cell, id.from, id.to, static_cast<OpKind>(best)}, probs[best]});
  }
  for (const auto& id : spec.edges()) {
    auto& cands = per_node[{id.cell, id.to}];
    for (const auto& s : cands) {
      if (s.e.from != id.from) continue;
      if (opts.top_k_edges == 0 || cands.size() <= opts.top_k_edges) {
        g.edges.push_back(s.e);
      } else {
        // keep iff among the top-k scores of this destination node
        std::size_t stronger = 0;
        for (const auto& o : cands) {
          if (o.e.from == s.e.from) continue;
          if (o.score > s.score || (o.score == s.score && o.e.from < s.e.from)) ++stronger;
        }
        if (stronger < opts.top_k_edges) g.edges.push_back(s.e);
      }
    }
  }
  return g;
}

struct DeriveOptions {
  // copy supernet weights into the child where shapes match
  bool inherit_weights = true;
};

// Instantiates the discrete architecture. Matching parameters (stem, cell
// projections, selected op weights, heads) are copied from the supernet;
// anything else keeps its fresh fan-in-scaled init.
inline Network derive_child(Network& supernet, const Genotype& g, Rng& rng,
                            const DeriveOptions& opts = {}) {
  if (!supernet.recipe().is_supernet()) {
    throw ConfigError("derive_child: source network is not a supernet");
  }
  if (!(g.cell_spec == supernet.spec())) {
    throw ConfigError("derive_child: genotype cell_spec does not match the supernet");
  }
  NetworkRecipe r = supernet.recipe();
  r.genotype = g;
  r.head_sizes = g.head_sizes.empty() ? supernet.recipe().head_sizes : g.head_sizes;
  Network child(r, rng);
  if (opts.inherit_weights) child.load_named_params(supernet.named_params());
  return child;
}

// total scalar parameter count; alpha entries included for supernets
struct ParamCount {
  std::size_t weights = 0;
  std::size_t alpha = 0;
  std::size_t total() const { return weights + alpha; }
};

inline ParamCount param_count(Network& net) {
  ParamCount pc;
  for (auto* p : net.weight_params()) pc.weights += p->value.numel();
  for (auto* p : net.alpha_params()) pc.alpha += p->value.numel();
  return pc;
}

}  // namespace idarts
