#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "idarts/tensor.hpp"

namespace idarts::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape());
  }
};

// Layer with explicit reverse-mode gradients. forward() caches whatever the
// matching backward() needs; the training loop runs exactly one backward per
// forward. Parameter gradients accumulate until zero_grad().
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Parameter*>& out) {}

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    collect_params(out);
    return out;
  }
};

inline std::size_t conv_out_len(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t pad, std::size_t dil) {
  const std::size_t eff = dil * (k - 1) + 1;
  if (in + 2 * pad < eff) throw ConfigError("conv_out_len: kernel larger than padded input");
  return (in + 2 * pad - eff) / stride + 1;
}

// fan-in scaled uniform init, bound 1/sqrt(fan_in)
inline void init_uniform_fanin(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
}

class Conv1d : public Module {
 public:
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
         std::size_t pad, std::size_t dil, std::size_t groups, bool bias, Rng& rng,
         const std::string& name = "conv1d")
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), dil_(dil),
        groups_(groups), has_bias_(bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0) {
      throw ConfigError("Conv1d: channels not divisible by groups");
    }
    weight_ = Parameter(name + ".weight", Tensor::zeros({out_ch, in_ch / groups, k}));
    init_uniform_fanin(weight_.value, (in_ch / groups) * k, rng);
    if (has_bias_) {
      bias_ = Parameter(name + ".bias", Tensor::zeros({out_ch}));
      init_uniform_fanin(bias_.value, (in_ch / groups) * k, rng);
    }
  }

  Tensor forward(const Tensor& x, bool) override {
    if (x.ndim() != 3 || x.size(1) != in_ch_) {
      throw ConfigError("Conv1d: expected (N," + std::to_string(in_ch_) + ",L), got " + x.shape_str());
    }
    x_ = x;
    const std::size_t n = x.size(0), li = x.size(2);
    const std::size_t lo = conv_out_len(li, k_, stride_, pad_, dil_);
    Tensor out({n, out_ch_, lo});
    const std::size_t icpg = in_ch_ / groups_, ocpg = out_ch_ / groups_;
    const double* xp = x.data();
    const double* wp = weight_.value.data();
    double* op = out.data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t g = 0; g < groups_; ++g) {
        for (std::size_t oc = 0; oc < ocpg; ++oc) {
          const std::size_t ocg = g * ocpg + oc;
          double* orow = op + (b * out_ch_ + ocg) * lo;
          for (std::size_t ic = 0; ic < icpg; ++ic) {
            const std::size_t icg = g * icpg + ic;
            const double* xrow = xp + (b * in_ch_ + icg) * li;
            const double* wrow = wp + (ocg * icpg + ic) * k_;
            for (std::size_t t = 0; t < k_; ++t) {
              const double w = wrow[t];
              // valid output range for this tap
              const long off = static_cast<long>(t * dil_) - static_cast<long>(pad_);
              for (std::size_t l = 0; l < lo; ++l) {
                const long src = static_cast<long>(l * stride_) + off;
                if (src >= 0 && src < static_cast<long>(li)) orow[l] += w * xrow[src];
              }
            }
          }
        }
      }
    }
    if (has_bias_) {
      const double* bp = bias_.value.data();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < out_ch_; ++c) {
          double* orow = op + (b * out_ch_ + c) * lo;
          for (std::size_t l = 0; l < lo; ++l) orow[l] += bp[c];
        }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = x_.size(0), li = x_.size(2), lo = gy.size(2);
    Tensor gx(x_.shape());
    const std::size_t icpg = in_ch_ / groups_, ocpg = out_ch_ / groups_;
    const double* xp = x_.data();
    const double* wp = weight_.value.data();
    const double* gp = gy.data();
    double* gxp = gx.data();
    double* gwp = weight_.grad.data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t g = 0; g < groups_; ++g) {
        for (std::size_t oc = 0; oc < ocpg; ++oc) {
          const std::size_t ocg = g * ocpg + oc;
          const double* grow = gp + (b * out_ch_ + ocg) * lo;
          for (std::size_t ic = 0; ic < icpg; ++ic) {
            const std::size_t icg = g * icpg + ic;
            const double* xrow = xp + (b * in_ch_ + icg) * li;
            double* gxrow = gxp + (b * in_ch_ + icg) * li;
            const double* wrow = wp + (ocg * icpg + ic) * k_;
            double* gwrow = gwp + (ocg * icpg + ic) * k_;
            for (std::size_t t = 0; t < k_; ++t) {
              const long off = static_cast<long>(t * dil_) - static_cast<long>(pad_);
              const double w = wrow[t];
              double gw = 0.0;
              for (std::size_t l = 0; l < lo; ++l) {
                const long src = static_cast<long>(l * stride_) + off;
                if (src >= 0 && src < static_cast<long>(li)) {
                  gw += grow[l] * xrow[src];
                  gxrow[src] += w * grow[l];
                }
              }
              gwrow[t] += gw;
            }
          }
        }
      }
    }
    if (has_bias_) {
      double* gbp = bias_.grad.data();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < out_ch_; ++c) {
          const double* grow = gp + (b * out_ch_ + c) * lo;
          double s = 0.0;
          for (std::size_t l = 0; l < lo; ++l) s += grow[l];
          gbp[c] += s;
        }
    }
    return gx;
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  std::size_t in_ch_, out_ch_, k_, stride_, pad_, dil_, groups_;
  bool has_bias_;
  Parameter weight_, bias_;
  Tensor x_;
};

class Conv2d : public Module {
 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t stride,
         std::size_t pad, std::size_t dil, std::size_t groups, bool bias, Rng& rng,
         const std::string& name = "conv2d")
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), dil_(dil),
        groups_(groups), has_bias_(bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0) {
      throw ConfigError("Conv2d: channels not divisible by groups");
    }
    weight_ = Parameter(name + ".weight", Tensor::zeros({out_ch, in_ch / groups, k, k}));
    init_uniform_fanin(weight_.value, (in_ch / groups) * k * k, rng);
    if (has_bias_) {
      bias_ = Parameter(name + ".bias", Tensor::zeros({out_ch}));
      init_uniform_fanin(bias_.value, (in_ch / groups) * k * k, rng);
    }
  }

  Tensor forward(const Tensor& x, bool) override {
    if (x.ndim() != 4 || x.size(1) != in_ch_) {
      throw ConfigError("Conv2d: expected (N," + std::to_string(in_ch_) + ",H,W), got " + x.shape_str());
    }
    x_ = x;
    const std::size_t n = x.size(0), hi = x.size(2), wi = x.size(3);
    const std::size_t ho = conv_out_len(hi, k_, stride_, pad_, dil_);
    const std::size_t wo = conv_out_len(wi, k_, stride_, pad_, dil_);
    Tensor out({n, out_ch_, ho, wo});
    const std::size_t icpg = in_ch_ / groups_, ocpg = out_ch_ / groups_;
    const double* xp = x.data();
    const double* wp = weight_.value.data();
    double* op = out.data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t g = 0; g < groups_; ++g) {
        for (std::size_t oc = 0; oc < ocpg; ++oc) {
          const std::size_t ocg = g * ocpg + oc;
          double* oplane = op + (b * out_ch_ + ocg) * ho * wo;
          for (std::size_t ic = 0; ic < icpg; ++ic) {
            const std::size_t icg = g * icpg + ic;
            const double* xplane = xp + (b * in_ch_ + icg) * hi * wi;
            const double* wk = wp + ((ocg * icpg + ic) * k_) * k_;
            for (std::size_t th = 0; th < k_; ++th) {
              const long hoff = static_cast<long>(th * dil_) - static_cast<long>(pad_);
              for (std::size_t tw = 0; tw < k_; ++tw) {
                const long woff = static_cast<long>(tw * dil_) - static_cast<long>(pad_);
                const double w = wk[th * k_ + tw];
                for (std::size_t oh = 0; oh < ho; ++oh) {
                  const long sh = static_cast<long>(oh * stride_) + hoff;
                  if (sh < 0 || sh >= static_cast<long>(hi)) continue;
                  const double* xrow = xplane + sh * wi;
                  double* orow = oplane + oh * wo;
                  for (std::size_t ow = 0; ow < wo; ++ow) {
                    const long sw = static_cast<long>(ow * stride_) + woff;
                    if (sw >= 0 && sw < static_cast<long>(wi)) orow[ow] += w * xrow[sw];
                  }
                }
              }
            }
          }
        }
      }
    }
    if (has_bias_) {
      const double* bp = bias_.value.data();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < out_ch_; ++c) {
          double* oplane = op + (b * out_ch_ + c) * ho * wo;
          for (std::size_t i = 0; i < ho * wo; ++i) oplane[i] += bp[c];
        }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = x_.size(0), hi = x_.size(2), wi = x_.size(3);
    const std::size_t ho = gy.size(2), wo = gy.size(3);
    Tensor gx(x_.shape());
    const std::size_t icpg = in_ch_ / groups_, ocpg = out_ch_ / groups_;
    const double* xp = x_.data();
    const double* wp = weight_.value.data();
    const double* gp = gy.data();
    double* gxp = gx.data();
    double* gwp = weight_.grad.data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t g = 0; g < groups_; ++g) {
        for (std::size_t oc = 0; oc < ocpg; ++oc) {
          const std::size_t ocg = g * ocpg + oc;
          const double* gplane = gp + (b * out_ch_ + ocg) * ho * wo;
          for (std::size_t ic = 0; ic < icpg; ++ic) {
            const std::size_t icg = g * icpg + ic;
            const double* xplane = xp + (b * in_ch_ + icg) * hi * wi;
            double* gxplane = gxp + (b * in_ch_ + icg) * hi * wi;
            const double* wk = wp + ((ocg * icpg + ic) * k_) * k_;
            double* gwk = gwp + ((ocg * icpg + ic) * k_) * k_;
            for (std::size_t th = 0; th < k_; ++th) {
              const long hoff = static_cast<long>(th * dil_) - static_cast<long>(pad_);
              for (std::size_t tw = 0; tw < k_; ++tw) {
                const long woff = static_cast<long>(tw * dil_) - static_cast<long>(pad_);
                const double w = wk[th * k_ + tw];
                double gw = 0.0;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                  const long sh = static_cast<long>(oh * stride_) + hoff;
                  if (sh < 0 || sh >= static_cast<long>(hi)) continue;
                  const double* xrow = xplane + sh * wi;
                  double* gxrow = gxplane + sh * wi;
                  const double* grow = gplane + oh * wo;
                  for (std::size_t ow = 0; ow < wo; ++ow) {
                    const long sw = static_cast<long>(ow * stride_) + woff;
                    if (sw >= 0 && sw < static_cast<long>(wi)) {
                      gw += grow[ow] * xrow[sw];
                      gxrow[sw] += w * grow[ow];
                    }
                  }
                }
                gwk[th * k_ + tw] += gw;
              }
            }
          }
        }
      }
    }
    if (has_bias_) {
      double* gbp = bias_.grad.data();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < out_ch_; ++c) {
          const double* gplane = gp + (b * out_ch_ + c) * ho * wo;
          double s = 0.0;
          for (std::size_t i = 0; i < ho * wo; ++i) s += gplane[i];
          gbp[c] += s;
        }
    }
    return gx;
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  std::size_t in_ch_, out_ch_, k_, stride_, pad_, dil_, groups_;
  bool has_bias_;
  Parameter weight_, bias_;
  Tensor x_;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x, bool) override {
    x_ = x;
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i)
      if (out[i] < 0.0) out[i] = 0.0;
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i)
      if (x_[i] <= 0.0) gx[i] = 0.0;
    return gx;
  }

 private:
  Tensor x_;
};

// Max pooling; out-of-range window positions are ignored (-inf padding).
class MaxPool1d : public Module {
 public:
  MaxPool1d(std::size_t k, std::size_t stride, std::size_t pad) : k_(k), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.size(0), c = x.size(1), li = x.size(2);
    const std::size_t lo = conv_out_len(li, k_, stride_, pad_, 1);
    Tensor out({n, c, lo});
    argmax_.assign(out.numel(), 0);
    const double* xp = x.data();
    double* op = out.data();
    for (std::size_t bc = 0; bc < n * c; ++bc) {
      const double* xrow = xp + bc * li;
      double* orow = op + bc * lo;
      for (std::size_t l = 0; l < lo; ++l) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t t = 0; t < k_; ++t) {
          const long src = static_cast<long>(l * stride_ + t) - static_cast<long>(pad_);
          if (src < 0 || src >= static_cast<long>(li)) continue;
          if (xrow[src] > best) {
            best = xrow[src];
            bi = static_cast<std::size_t>(src);
          }
        }
        orow[l] = best;
        argmax_[bc * lo + l] = bi;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t li = in_shape_[2];
    const std::size_t lo = gy.size(2);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    double* gxp = gx.data();
    const double* gp = gy.data();
    for (std::size_t bc = 0; bc < nc; ++bc)
      for (std::size_t l = 0; l < lo; ++l)
        gxp[bc * li + argmax_[bc * lo + l]] += gp[bc * lo + l];
    return gx;
  }

 private:
  std::size_t k_, stride_, pad_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// Average pooling; zero padding counts toward the divisor (divisor = k).
class AvgPool1d : public Module {
 public:
  AvgPool1d(std::size_t k, std::size_t stride, std::size_t pad) : k_(k), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.size(0), c = x.size(1), li = x.size(2);
    const std::size_t lo = conv_out_len(li, k_, stride_, pad_, 1);
    Tensor out({n, c, lo});
    const double inv = 1.0 / static_cast<double>(k_);
    const double* xp = x.data();
    double* op = out.data();
    for (std::size_t bc = 0; bc < n * c; ++bc) {
      const double* xrow = xp + bc * li;
      double* orow = op + bc * lo;
      for (std::size_t l = 0; l < lo; ++l) {
        double s = 0.0;
        for (std::size_t t = 0; t < k_; ++t) {
          const long src = static_cast<long>(l * stride_ + t) - static_cast<long>(pad_);
          if (src >= 0 && src < static_cast<long>(li)) s += xrow[src];
        }
        orow[l] = s * inv;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t li = in_shape_[2], lo = gy.size(2);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    const double inv = 1.0 / static_cast<double>(k_);
    double* gxp = gx.data();
    const double* gp = gy.data();
    for (std::size_t bc = 0; bc < nc; ++bc) {
      double* gxrow = gxp + bc * li;
      const double* grow = gp + bc * lo;
      for (std::size_t l = 0; l < lo; ++l) {
        const double g = grow[l] * inv;
        for (std::size_t t = 0; t < k_; ++t) {
          const long src = static_cast<long>(l * stride_ + t) - static_cast<long>(pad_);
          if (src >= 0 && src < static_cast<long>(li)) gxrow[src] += g;
        }
      }
    }
    return gx;
  }

 private:
  std::size_t k_, stride_, pad_;
  std::vector<std::size_t> in_shape_;
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(std::size_t k, std::size_t stride, std::size_t pad) : k_(k), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.size(0), c = x.size(1), hi = x.size(2), wi = x.size(3);
    const std::size_t ho = conv_out_len(hi, k_, stride_, pad_, 1);
    const std::size_t wo = conv_out_len(wi, k_, stride_, pad_, 1);
    Tensor out({n, c, ho, wo});
    argmax_.assign(out.numel(), 0);
    const double* xp = x.data();
    double* op = out.data();
    for (std::size_t bc = 0; bc < n * c; ++bc) {
      const double* xpl = xp + bc * hi * wi;
      double* opl = op + bc * ho * wo;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t bi = 0;
          for (std::size_t th = 0; th < k_; ++th) {
            const long sh = static_cast<long>(oh * stride_ + th) - static_cast<long>(pad_);
            if (sh < 0 || sh >= static_cast<long>(hi)) continue;
            for (std::size_t tw = 0; tw < k_; ++tw) {
              const long sw = static_cast<long>(ow * stride_ + tw) - static_cast<long>(pad_);
              if (sw < 0 || sw >= static_cast<long>(wi)) continue;
              const std::size_t idx = static_cast<std::size_t>(sh) * wi + static_cast<std::size_t>(sw);
              if (xpl[idx] > best) {
                best = xpl[idx];
                bi = idx;
              }
            }
          }
          opl[oh * wo + ow] = best;
          argmax_[bc * ho * wo + oh * wo + ow] = bi;
        }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    const std::size_t out_hw = gy.size(2) * gy.size(3);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    double* gxp = gx.data();
    const double* gp = gy.data();
    for (std::size_t bc = 0; bc < nc; ++bc)
      for (std::size_t i = 0; i < out_hw; ++i)
        gxp[bc * hw + argmax_[bc * out_hw + i]] += gp[bc * out_hw + i];
    return gx;
  }

 private:
  std::size_t k_, stride_, pad_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

class AvgPool2d : public Module {
 public:
  AvgPool2d(std::size_t k, std::size_t stride, std::size_t pad) : k_(k), stride_(stride), pad_(pad) {}

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.size(0), c = x.size(1), hi = x.size(2), wi = x.size(3);
    const std::size_t ho = conv_out_len(hi, k_, stride_, pad_, 1);
    const std::size_t wo = conv_out_len(wi, k_, stride_, pad_, 1);
    Tensor out({n, c, ho, wo});
    const double inv = 1.0 / static_cast<double>(k_ * k_);
    const double* xp = x.data();
    double* op = out.data();
    for (std::size_t bc = 0; bc < n * c; ++bc) {
      const double* xpl = xp + bc * hi * wi;
      double* opl = op + bc * ho * wo;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          double s = 0.0;
          for (std::size_t th = 0; th < k_; ++th) {
            const long sh = static_cast<long>(oh * stride_ + th) - static_cast<long>(pad_);
            if (sh < 0 || sh >= static_cast<long>(hi)) continue;
            for (std::size_t tw = 0; tw < k_; ++tw) {
              const long sw = static_cast<long>(ow * stride_ + tw) - static_cast<long>(pad_);
              if (sw >= 0 && sw < static_cast<long>(wi)) s += xpl[sh * wi + sw];
            }
          }
          opl[oh * wo + ow] = s * inv;
        }
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    const std::size_t hi = in_shape_[2], wi = in_shape_[3];
    const std::size_t ho = gy.size(2), wo = gy.size(3);
    const std::size_t nc = in_shape_[0] * in_shape_[1];
    const double inv = 1.0 / static_cast<double>(k_ * k_);
    double* gxp = gx.data();
    const double* gp = gy.data();
    for (std::size_t bc = 0; bc < nc; ++bc) {
      double* gxpl = gxp + bc * hi * wi;
      const double* gpl = gp + bc * ho * wo;
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          const double g = gpl[oh * wo + ow] * inv;
          for (std::size_t th = 0; th < k_; ++th) {
            const long sh = static_cast<long>(oh * stride_ + th) - static_cast<long>(pad_);
            if (sh < 0 || sh >= static_cast<long>(hi)) continue;
            for (std::size_t tw = 0; tw < k_; ++tw) {
              const long sw = static_cast<long>(ow * stride_ + tw) - static_cast<long>(pad_);
              if (sw >= 0 && sw < static_cast<long>(wi)) gxpl[sh * wi + sw] += g;
            }
          }
        }
    }
    return gx;
  }

 private:
  std::size_t k_, stride_, pad_;
  std::vector<std::size_t> in_shape_;
};

// (N, C, spatial...) -> (N, C): mean over all spatial positions.
class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const std::size_t n = x.size(0), c = x.size(1);
    std::size_t sp = 1;
    for (std::size_t i = 2; i < x.ndim(); ++i) sp *= x.size(i);
    Tensor out({n, c});
    const double inv = 1.0 / static_cast<double>(sp);
    const double* xp = x.data();
    for (std::size_t bc = 0; bc < n * c; ++bc) {
      double s = 0.0;
      for (std::size_t i = 0; i < sp; ++i) s += xp[bc * sp + i];
      out[bc] = s * inv;
    }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(in_shape_);
    std::size_t sp = 1;
    for (std::size_t i = 2; i < in_shape_.size(); ++i) sp *= in_shape_[i];
    const double inv = 1.0 / static_cast<double>(sp);
    for (std::size_t bc = 0; bc < in_shape_[0] * in_shape_[1]; ++bc) {
      const double g = gy[bc] * inv;
      for (std::size_t i = 0; i < sp; ++i) gx[bc * sp + i] = g;
    }
    return gx;
  }

 private:
  std::vector<std::size_t> in_shape_;
};

class Linear : public Module {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name = "linear")
      : in_(in), out_(out) {
    weight_ = Parameter(name + ".weight", Tensor::zeros({out, in}));
    bias_ = Parameter(name + ".bias", Tensor::zeros({out}));
    init_uniform_fanin(weight_.value, in, rng);
    init_uniform_fanin(bias_.value, in, rng);
  }

  Tensor forward(const Tensor& x, bool) override {
    if (x.ndim() != 2 || x.size(1) != in_) {
      throw ConfigError("Linear: expected (N," + std::to_string(in_) + "), got " + x.shape_str());
    }
    x_ = x;
    const std::size_t n = x.size(0);
    Tensor out({n, out_});
    const double* xp = x.data();
    const double* wp = weight_.value.data();
    const double* bp = bias_.value.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_; ++o) {
        double s = bp[o];
        const double* wrow = wp + o * in_;
        const double* xrow = xp + b * in_;
        for (std::size_t i = 0; i < in_; ++i) s += wrow[i] * xrow[i];
        out[b * out_ + o] = s;
      }
    return out;
  }

  Tensor backward(const Tensor& gy) override {
    const std::size_t n = x_.size(0);
    Tensor gx(x_.shape());
    const double* gp = gy.data();
    const double* xp = x_.data();
    const double* wp = weight_.value.data();
    double* gwp = weight_.grad.data();
    double* gbp = bias_.grad.data();
    double* gxp = gx.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_; ++o) {
        const double g = gp[b * out_ + o];
        gbp[o] += g;
        const double* xrow = xp + b * in_;
        const double* wrow = wp + o * in_;
        double* gwrow = gwp + o * in_;
        double* gxrow = gxp + b * in_;
        for (std::size_t i = 0; i < in_; ++i) {
          gwrow[i] += g * xrow[i];
          gxrow[i] += g * wrow[i];
        }
      }
    return gx;
  }

  void collect_params(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor x_;
};

class Sequential : public Module {
 public:
  Sequential() = default;

  void add(std::unique_ptr<Module> m) { mods_.push_back(std::move(m)); }

  Tensor forward(const Tensor& x, bool training) override {
    Tensor h = x;
    for (auto& m : mods_) h = m->forward(h, training);
    return h;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor g = gy;
    for (auto it = mods_.rbegin(); it != mods_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_params(std::vector<Parameter*>& out) override {
    for (auto& m : mods_) m->collect_params(out);
  }

 private:
  std::vector<std::unique_ptr<Module>> mods_;
};

inline double softmax_into(const double* logits, double* probs, std::size_t n) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    z += probs[i];
  }
  for (std::size_t i = 0; i < n; ++i) probs[i] /= z;
  // returns log(sum exp(logits)) for reuse in log-prob computations
  return mx + std::log(z);
}

}  // namespace idarts::nn
