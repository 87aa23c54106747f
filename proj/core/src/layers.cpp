#include "empssl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include "empssl/errors.hpp"
#include "empssl/rng.hpp"
#include "empssl/threading.hpp"

namespace empssl {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::L2Normalize: return "l2_normalize";
  }
  return "?";
}

LayerSpec LayerSpec::linear(std::size_t out_dim) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.out_dim = out_dim;
  return s;
}
LayerSpec LayerSpec::conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}
LayerSpec LayerSpec::batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::Relu}; }
LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}
LayerSpec LayerSpec::global_avg_pool() { return LayerSpec{LayerKind::GlobalAvgPool}; }
LayerSpec LayerSpec::l2_normalize() { return LayerSpec{LayerKind::L2Normalize}; }

std::size_t Shape::count() const {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ')';
  return os.str();
}

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kNormFloor = 1e-12;
// Conv/linear weight-gradient accumulation runs over fixed-size sample
// groups so results never depend on the worker-thread count.
constexpr std::size_t kGradGroup = 8;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeMismatch(msg);
}

}  // namespace

namespace detail {

class Layer {
 public:
  explicit Layer(const LayerSpec& spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  Shape in_shape, out_shape;  // per-sample, fixed at composition

  virtual void init_params(Rng& /*rng*/) {}
  virtual Tensor forward(const Tensor& x, LayerCache* cache, bool train,
                         bool update_stats) = 0;
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // extra persistent tensors beyond params (batchnorm running stats)
  virtual std::vector<std::pair<std::string, Tensor*>> extra_state() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  LayerSpec spec_;
};

namespace {

std::vector<std::size_t> with_batch(std::size_t n, const Shape& s) {
  std::vector<std::size_t> dims{n};
  dims.insert(dims.end(), s.dims.begin(), s.dims.end());
  return dims;
}

class LinearLayer final : public Layer {
 public:
  LinearLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 1, "linear expects rank-1 input, got " + in.str());
    require(spec.out_dim >= 1, "linear out_dim must be >= 1");
    in_shape = in;
    out_shape = Shape{{spec.out_dim}};
    weight_.name = "weight";
    weight_.value = Tensor({spec.out_dim, in.dims[0]});
    weight_.grad = Tensor({spec.out_dim, in.dims[0]});
    weight_.decay = true;
    bias_.name = "bias";
    bias_.value = Tensor({spec.out_dim});
    bias_.grad = Tensor({spec.out_dim});
    bias_.decay = false;
  }

  void init_params(Rng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_shape.dims[0]));
    for (std::size_t i = 0; i < weight_.value.size(); ++i)
      weight_.value[i] = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    const std::size_t n = x.dim(0), fi = in_shape.dims[0], fo = spec_.out_dim;
    Tensor y(with_batch(n, out_shape));
    parallel_for(n, [&](std::size_t s) {
      const double* xs = x.data() + s * fi;
      double* ys = y.data() + s * fo;
      for (std::size_t o = 0; o < fo; ++o) {
        const double* w = weight_.value.data() + o * fi;
        double acc = bias_.value[o];
        for (std::size_t f = 0; f < fi; ++f) acc += w[f] * xs[f];
        ys[o] = acc;
      }
    });
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const Tensor& x = cache.input;
    const std::size_t n = x.dim(0), fi = in_shape.dims[0], fo = spec_.out_dim;
    Tensor dx(x.dims());
    parallel_for(n, [&](std::size_t s) {
      const double* gs = g.data() + s * fo;
      double* dxs = dx.data() + s * fi;
      for (std::size_t o = 0; o < fo; ++o) {
        const double go = gs[o];
        if (go == 0.0) continue;
        const double* w = weight_.value.data() + o * fi;
        for (std::size_t f = 0; f < fi; ++f) dxs[f] += go * w[f];
      }
    });
    // weight/bias grads: fixed sample order keeps runs reproducible
    for (std::size_t s = 0; s < n; ++s) {
      const double* gs = g.data() + s * fo;
      const double* xs = x.data() + s * fi;
      for (std::size_t o = 0; o < fo; ++o) {
        const double go = gs[o];
        bias_.grad[o] += go;
        if (go == 0.0) continue;
        double* dw = weight_.grad.data() + o * fi;
        for (std::size_t f = 0; f < fi; ++f) dw[f] += go * xs[f];
      }
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<LinearLayer>(*this);
  }

 private:
  Param weight_, bias_;
};

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 3, "conv2d expects rank-3 input, got " + in.str());
    require(spec.kernel >= 1 && spec.stride >= 1 && spec.out_channels >= 1,
            "conv2d parameters must be >= 1");
    in_shape = in;
    const std::size_t h = in.dims[1], w = in.dims[2];
    pad_ = (spec.kernel - 1) / 2;
    const std::int64_t oh =
        (static_cast<std::int64_t>(h) + 2 * pad_ - static_cast<std::int64_t>(spec.kernel)) /
            static_cast<std::int64_t>(spec.stride) +
        1;
    const std::int64_t ow =
        (static_cast<std::int64_t>(w) + 2 * pad_ - static_cast<std::int64_t>(spec.kernel)) /
            static_cast<std::int64_t>(spec.stride) +
        1;
    require(oh >= 1 && ow >= 1, "conv2d output collapses below 1x1 for input " + in.str());
    out_shape = Shape{{spec.out_channels, static_cast<std::size_t>(oh),
                       static_cast<std::size_t>(ow)}};
    weight_.name = "weight";
    weight_.value = Tensor({spec.out_channels, in.dims[0], spec.kernel, spec.kernel});
    weight_.grad = Tensor(weight_.value.dims());
    weight_.decay = true;
    bias_.name = "bias";
    bias_.value = Tensor({spec.out_channels});
    bias_.grad = Tensor({spec.out_channels});
    bias_.decay = false;
  }

  void init_params(Rng& rng) override {
    const double fan_in =
        static_cast<double>(in_shape.dims[0] * spec_.kernel * spec_.kernel);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < weight_.value.size(); ++i)
      weight_.value[i] = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    const std::size_t n = x.dim(0);
    Tensor y(with_batch(n, out_shape));
    parallel_for(n, [&](std::size_t s) { forward_sample(x, y, s); });
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const Tensor& x = cache.input;
    const std::size_t n = x.dim(0);
    Tensor dx(x.dims());
    parallel_for(n, [&](std::size_t s) { backward_input_sample(g, dx, s); });

    const std::size_t groups = (n + kGradGroup - 1) / kGradGroup;
    std::vector<Tensor> dw(groups), db(groups);
    parallel_for(groups, [&](std::size_t gi) {
      dw[gi] = Tensor(weight_.value.dims());
      db[gi] = Tensor(bias_.value.dims());
      const std::size_t lo = gi * kGradGroup, hi = std::min(n, lo + kGradGroup);
      for (std::size_t s = lo; s < hi; ++s) backward_params_sample(g, x, s, dw[gi], db[gi]);
    });
    for (std::size_t gi = 0; gi < groups; ++gi) {
      for (std::size_t i = 0; i < weight_.grad.size(); ++i) weight_.grad[i] += dw[gi][i];
      for (std::size_t i = 0; i < bias_.grad.size(); ++i) bias_.grad[i] += db[gi][i];
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2dLayer>(*this);
  }

 private:
  // Valid output range [lo, hi) for one kernel tap: input row ih = oh*stride
  // + tap - pad must fall in [0, extent).
  void tap_range(std::size_t tap, std::size_t extent, std::size_t out_extent,
                 std::int64_t& lo, std::int64_t& hi) const {
    const std::int64_t offset =
        static_cast<std::int64_t>(tap) - static_cast<std::int64_t>(pad_);
    const std::int64_t stride = static_cast<std::int64_t>(spec_.stride);
    lo = std::max<std::int64_t>(0, ceil_div(-offset, stride));
    hi = std::min<std::int64_t>(static_cast<std::int64_t>(out_extent) - 1,
                                (static_cast<std::int64_t>(extent) - 1 - offset) / stride) +
         1;
    if (hi < lo) hi = lo;
  }

  void forward_sample(const Tensor& x, Tensor& y, std::size_t s) const {
    const std::size_t ci = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t co = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
    const std::size_t k = spec_.kernel, stride = spec_.stride;
    const double* xs = x.data() + s * ci * h * w;
    double* ys = y.data() + s * co * oh * ow;
    for (std::size_t o = 0; o < co; ++o) {
      double* plane = ys + o * oh * ow;
      const double b = bias_.value[o];
      for (std::size_t i = 0; i < oh * ow; ++i) plane[i] = b;
      for (std::size_t c = 0; c < ci; ++c) {
        const double* xc = xs + c * h * w;
        const double* wk = weight_.value.data() + (o * ci + c) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          std::int64_t rlo, rhi;
          tap_range(kh, h, oh, rlo, rhi);
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = wk[kh * k + kw];
            if (wv == 0.0) continue;
            std::int64_t clo, chi;
            tap_range(kw, w, ow, clo, chi);
            const std::int64_t roff = static_cast<std::int64_t>(kh) - pad_;
            const std::int64_t coff = static_cast<std::int64_t>(kw) - pad_;
            for (std::int64_t r = rlo; r < rhi; ++r) {
              const double* xrow = xc + (r * stride + roff) * w + coff;
              double* yrow = plane + r * ow;
              for (std::int64_t q = clo; q < chi; ++q)
                yrow[q] += wv * xrow[q * stride];
            }
          }
        }
      }
    }
  }

  void backward_input_sample(const Tensor& g, Tensor& dx, std::size_t s) const {
    const std::size_t ci = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t co = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
    const std::size_t k = spec_.kernel, stride = spec_.stride;
    const double* gs = g.data() + s * co * oh * ow;
    double* dxs = dx.data() + s * ci * h * w;
    for (std::size_t o = 0; o < co; ++o) {
      const double* gplane = gs + o * oh * ow;
      for (std::size_t c = 0; c < ci; ++c) {
        double* dxc = dxs + c * h * w;
        const double* wk = weight_.value.data() + (o * ci + c) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          std::int64_t rlo, rhi;
          tap_range(kh, h, oh, rlo, rhi);
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = wk[kh * k + kw];
            if (wv == 0.0) continue;
            std::int64_t clo, chi;
            tap_range(kw, w, ow, clo, chi);
            const std::int64_t roff = static_cast<std::int64_t>(kh) - pad_;
            const std::int64_t coff = static_cast<std::int64_t>(kw) - pad_;
            for (std::int64_t r = rlo; r < rhi; ++r) {
              double* dxrow = dxc + (r * stride + roff) * w + coff;
              const double* grow = gplane + r * ow;
              for (std::int64_t q = clo; q < chi; ++q)
                dxrow[q * stride] += wv * grow[q];
            }
          }
        }
      }
    }
  }

  void backward_params_sample(const Tensor& g, const Tensor& x, std::size_t s, Tensor& dw,
                              Tensor& db) const {
    const std::size_t ci = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t co = out_shape.dims[0], oh = out_shape.dims[1], ow = out_shape.dims[2];
    const std::size_t k = spec_.kernel, stride = spec_.stride;
    const double* gs = g.data() + s * co * oh * ow;
    const double* xs = x.data() + s * ci * h * w;
    for (std::size_t o = 0; o < co; ++o) {
      const double* gplane = gs + o * oh * ow;
      double acc = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
      db[o] += acc;
      for (std::size_t c = 0; c < ci; ++c) {
        const double* xc = xs + c * h * w;
        double* dwk = dw.data() + (o * ci + c) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          std::int64_t rlo, rhi;
          tap_range(kh, h, oh, rlo, rhi);
          for (std::size_t kw = 0; kw < k; ++kw) {
            std::int64_t clo, chi;
            tap_range(kw, w, ow, clo, chi);
            const std::int64_t roff = static_cast<std::int64_t>(kh) - pad_;
            const std::int64_t coff = static_cast<std::int64_t>(kw) - pad_;
            double sum = 0.0;
            for (std::int64_t r = rlo; r < rhi; ++r) {
              const double* xrow = xc + (r * stride + roff) * w + coff;
              const double* grow = gplane + r * ow;
              for (std::int64_t q = clo; q < chi; ++q)
                sum += grow[q] * xrow[q * stride];
            }
            dwk[kh * k + kw] += sum;
          }
        }
      }
    }
  }

  Param weight_, bias_;
  std::size_t pad_ = 0;
};

class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 3 || in.dims.size() == 1,
            "batchnorm expects rank-1 or rank-3 input, got " + in.str());
    in_shape = in;
    out_shape = in;
    channels_ = in.dims[0];
    gamma_.name = "gamma";
    gamma_.value = Tensor({channels_});
    gamma_.value.fill(1.0);
    gamma_.grad = Tensor({channels_});
    gamma_.decay = false;
    beta_.name = "beta";
    beta_.value = Tensor({channels_});
    beta_.grad = Tensor({channels_});
    beta_.decay = false;
    running_mean_ = Tensor({channels_});
    running_var_ = Tensor({channels_});
    running_var_.fill(1.0);
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool train, bool update_stats) override {
    const std::size_t n = x.dim(0);
    const std::size_t plane = in_shape.count() / channels_;  // H*W, or 1 for rank-1
    const std::size_t m = n * plane;
    Tensor y(x.dims());

    std::vector<double> mean(channels_), var(channels_);
    if (train) {
      batch_stats(x, n, plane, mean, var);
      if (update_stats) {
        for (std::size_t c = 0; c < channels_; ++c) {
          const double unbiased =
              m > 1 ? var[c] * static_cast<double>(m) / static_cast<double>(m - 1) : var[c];
          running_mean_[c] = (1.0 - kBnMomentum) * running_mean_[c] + kBnMomentum * mean[c];
          running_var_[c] = (1.0 - kBnMomentum) * running_var_[c] + kBnMomentum * unbiased;
        }
      }
    } else {
      for (std::size_t c = 0; c < channels_; ++c) {
        mean[c] = running_mean_[c];
        var[c] = running_var_[c];
      }
    }

    parallel_for(n, [&](std::size_t s) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double istd = 1.0 / std::sqrt(var[c] + kBnEps);
        const double scale = gamma_.value[c] * istd;
        const double shift = beta_.value[c] - scale * mean[c];
        const double* xp = x.data() + (s * channels_ + c) * plane;
        double* yp = y.data() + (s * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) yp[i] = scale * xp[i] + shift;
      }
    });

    if (cache) {
      cache->input = x;
      cache->ch_mean = std::move(mean);
      cache->ch_var = std::move(var);
      cache->train_mode = train;
    }
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const Tensor& x = cache.input;
    const std::size_t n = x.dim(0);
    const std::size_t plane = in_shape.count() / channels_;
    const std::size_t m = n * plane;
    Tensor dx(x.dims());

    // Per-channel reductions sum_g and sum_g_xhat; per-sample partials are
    // combined in fixed sample order.
    std::vector<double> sum_g(channels_), sum_gx(channels_);
    std::vector<double> part_g(n * channels_), part_gx(n * channels_);
    parallel_for(n, [&](std::size_t s) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double mu = cache.ch_mean[c];
        const double istd = 1.0 / std::sqrt(cache.ch_var[c] + kBnEps);
        const double* gp = g.data() + (s * channels_ + c) * plane;
        const double* xp = x.data() + (s * channels_ + c) * plane;
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          a += gp[i];
          b += gp[i] * (xp[i] - mu) * istd;
        }
        part_g[s * channels_ + c] = a;
        part_gx[s * channels_ + c] = b;
      }
    });
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < channels_; ++c) {
        sum_g[c] += part_g[s * channels_ + c];
        sum_gx[c] += part_gx[s * channels_ + c];
      }

    for (std::size_t c = 0; c < channels_; ++c) {
      gamma_.grad[c] += sum_gx[c];
      beta_.grad[c] += sum_g[c];
    }

    if (cache.train_mode) {
      parallel_for(n, [&](std::size_t s) {
        for (std::size_t c = 0; c < channels_; ++c) {
          const double mu = cache.ch_mean[c];
          const double istd = 1.0 / std::sqrt(cache.ch_var[c] + kBnEps);
          const double k1 = gamma_.value[c] * istd;
          const double mg = sum_g[c] / static_cast<double>(m);
          const double mgx = sum_gx[c] / static_cast<double>(m);
          const double* gp = g.data() + (s * channels_ + c) * plane;
          const double* xp = x.data() + (s * channels_ + c) * plane;
          double* dp = dx.data() + (s * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - mu) * istd;
            dp[i] = k1 * (gp[i] - mg - xhat * mgx);
          }
        }
      });
    } else {
      parallel_for(n, [&](std::size_t s) {
        for (std::size_t c = 0; c < channels_; ++c) {
          const double istd = 1.0 / std::sqrt(cache.ch_var[c] + kBnEps);
          const double k1 = gamma_.value[c] * istd;
          const double* gp = g.data() + (s * channels_ + c) * plane;
          double* dp = dx.data() + (s * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dp[i] = k1 * gp[i];
        }
      });
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&gamma_, &beta_}; }

  std::vector<std::pair<std::string, Tensor*>> extra_state() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<BatchNormLayer>(*this);
  }

 private:
  void batch_stats(const Tensor& x, std::size_t n, std::size_t plane,
                   std::vector<double>& mean, std::vector<double>& var) const {
    const std::size_t m = n * plane;
    std::vector<double> part(n * channels_);
    parallel_for(n, [&](std::size_t s) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double* xp = x.data() + (s * channels_ + c) * plane;
        double a = 0.0;
        for (std::size_t i = 0; i < plane; ++i) a += xp[i];
        part[s * channels_ + c] = a;
      }
    });
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < channels_; ++c) mean[c] += part[s * channels_ + c];
    for (std::size_t c = 0; c < channels_; ++c) mean[c] /= static_cast<double>(m);

    parallel_for(n, [&](std::size_t s) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const double mu = mean[c];
        const double* xp = x.data() + (s * channels_ + c) * plane;
        double a = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = xp[i] - mu;
          a += d * d;
        }
        part[s * channels_ + c] = a;
      }
    });
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < channels_; ++c) var[c] += part[s * channels_ + c];
    for (std::size_t c = 0; c < channels_; ++c) var[c] /= static_cast<double>(m);
  }

  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  std::size_t channels_ = 0;
};

class ReluLayer final : public Layer {
 public:
  ReluLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    in_shape = in;
    out_shape = in;
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    Tensor y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    Tensor dx(g.dims());
    for (std::size_t i = 0; i < g.size(); ++i)
      dx[i] = cache.input[i] > 0.0 ? g[i] : 0.0;
    return dx;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ReluLayer>(*this);
  }
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 3, "maxpool expects rank-3 input, got " + in.str());
    require(spec.kernel >= 1 && spec.stride >= 1, "maxpool parameters must be >= 1");
    require(in.dims[1] >= spec.kernel && in.dims[2] >= spec.kernel,
            "maxpool kernel exceeds input " + in.str());
    in_shape = in;
    const std::size_t oh = (in.dims[1] - spec.kernel) / spec.stride + 1;
    const std::size_t ow = (in.dims[2] - spec.kernel) / spec.stride + 1;
    out_shape = Shape{{in.dims[0], oh, ow}};
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    const std::size_t n = x.dim(0), c = in_shape.dims[0];
    const std::size_t h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t oh = out_shape.dims[1], ow = out_shape.dims[2];
    const std::size_t k = spec_.kernel, stride = spec_.stride;
    Tensor y(with_batch(n, out_shape));
    std::vector<std::uint32_t> argmax(cache ? y.size() : 0);
    parallel_for(n, [&](std::size_t s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + (s * c + ch) * h * w;
        double* yp = y.data() + (s * c + ch) * oh * ow;
        std::uint32_t* ap = cache ? argmax.data() + (s * c + ch) * oh * ow : nullptr;
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t q = 0; q < ow; ++q) {
            double best = -std::numeric_limits<double>::infinity();
            std::uint32_t best_idx = 0;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::size_t ih = r * stride + kh;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::size_t iw = q * stride + kw;
                const double v = xp[ih * w + iw];
                if (v > best) {  // first maximum wins ties
                  best = v;
                  best_idx = static_cast<std::uint32_t>(ih * w + iw);
                }
              }
            }
            yp[r * ow + q] = best;
            if (ap) ap[r * ow + q] = best_idx;
          }
        }
      }
    });
    if (cache) {
      cache->input = x;
      cache->argmax = std::move(argmax);
    }
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const std::size_t n = g.dim(0), c = in_shape.dims[0];
    const std::size_t h = in_shape.dims[1], w = in_shape.dims[2];
    const std::size_t oh = out_shape.dims[1], ow = out_shape.dims[2];
    Tensor dx(cache.input.dims());
    parallel_for(n, [&](std::size_t s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* gp = g.data() + (s * c + ch) * oh * ow;
        const std::uint32_t* ap = cache.argmax.data() + (s * c + ch) * oh * ow;
        double* dp = dx.data() + (s * c + ch) * h * w;
        for (std::size_t i = 0; i < oh * ow; ++i) dp[ap[i]] += gp[i];
      }
    });
    return dx;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MaxPoolLayer>(*this);
  }
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  GlobalAvgPoolLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 3, "global_avg_pool expects rank-3 input, got " + in.str());
    in_shape = in;
    out_shape = Shape{{in.dims[0]}};
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    const std::size_t n = x.dim(0), c = in_shape.dims[0];
    const std::size_t plane = in_shape.dims[1] * in_shape.dims[2];
    Tensor y({n, c});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xp = x.data() + (s * c + ch) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xp[i];
        y[s * c + ch] = acc / static_cast<double>(plane);
      }
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const std::size_t n = g.dim(0), c = in_shape.dims[0];
    const std::size_t plane = in_shape.dims[1] * in_shape.dims[2];
    Tensor dx(cache.input.dims());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = g[s * c + ch] / static_cast<double>(plane);
        double* dp = dx.data() + (s * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) dp[i] = v;
      }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPoolLayer>(*this);
  }
};

class L2NormalizeLayer final : public Layer {
 public:
  L2NormalizeLayer(const LayerSpec& spec, const Shape& in) : Layer(spec) {
    require(in.dims.size() == 1, "l2_normalize expects rank-1 input, got " + in.str());
    in_shape = in;
    out_shape = in;
  }

  Tensor forward(const Tensor& x, LayerCache* cache, bool, bool) override {
    const std::size_t n = x.dim(0), f = in_shape.dims[0];
    Tensor y(x.dims());
    std::vector<double> norms(n);
    for (std::size_t s = 0; s < n; ++s) {
      const double* xs = x.data() + s * f;
      double nrm = 0.0;
      for (std::size_t i = 0; i < f; ++i) nrm += xs[i] * xs[i];
      nrm = std::sqrt(nrm);
      norms[s] = nrm;
      double* ys = y.data() + s * f;
      if (nrm < kNormFloor) continue;  // degenerate sample maps to zero
      for (std::size_t i = 0; i < f; ++i) ys[i] = xs[i] / nrm;
    }
    if (cache) {
      cache->input = x;
      cache->row_norm = std::move(norms);
    }
    return y;
  }

  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    const std::size_t n = g.dim(0), f = in_shape.dims[0];
    Tensor dx(g.dims());
    for (std::size_t s = 0; s < n; ++s) {
      const double nrm = cache.row_norm[s];
      if (nrm < kNormFloor) continue;  // zero gradient for the guarded case
      const double* xs = cache.input.data() + s * f;
      const double* gs = g.data() + s * f;
      double* ds = dx.data() + s * f;
      double dot = 0.0;
      for (std::size_t i = 0; i < f; ++i) dot += xs[i] * gs[i];
      dot /= nrm * nrm;
      for (std::size_t i = 0; i < f; ++i) ds[i] = (gs[i] - xs[i] * dot) / nrm;
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<L2NormalizeLayer>(*this);
  }
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::Linear: return std::make_unique<LinearLayer>(spec, in);
    case LayerKind::Conv2d: return std::make_unique<Conv2dLayer>(spec, in);
    case LayerKind::BatchNorm: return std::make_unique<BatchNormLayer>(spec, in);
    case LayerKind::Relu: return std::make_unique<ReluLayer>(spec, in);
    case LayerKind::MaxPool: return std::make_unique<MaxPoolLayer>(spec, in);
    case LayerKind::GlobalAvgPool: return std::make_unique<GlobalAvgPoolLayer>(spec, in);
    case LayerKind::L2Normalize: return std::make_unique<L2NormalizeLayer>(spec, in);
  }
  throw ShapeMismatch("unknown layer kind");
}

}  // namespace
}  // namespace detail

Network::Network(Shape input_shape, std::vector<LayerSpec> specs, Precision precision,
                 std::uint64_t init_seed)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)), precision_(precision) {
  Shape shape = input_shape_;
  Rng root(init_seed);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    auto layer = detail::make_layer(specs_[i], shape);
    Rng layer_rng = root.derive(i);
    layer->init_params(layer_rng);
    shape = layer->out_shape;
    layers_.push_back(std::move(layer));
  }
  output_shape_ = shape;
  if (precision_ == Precision::Single) {
    for (Param* p : params()) p->value.round_to_f32();
  }
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

Network Network::clone() const {
  Network copy;
  copy.input_shape_ = input_shape_;
  copy.output_shape_ = output_shape_;
  copy.specs_ = specs_;
  copy.precision_ = precision_;
  copy.mode_ = mode_;
  for (const auto& l : layers_) copy.layers_.push_back(l->clone());
  return copy;
}

Tensor Network::forward(const Tensor& batch, ForwardCache* cache, bool update_stats) {
  if (batch.rank() != input_shape_.dims.size() + 1)
    throw ShapeMismatch("forward: batch rank " + std::to_string(batch.rank()) +
                        " does not match input shape " + input_shape_.str());
  for (std::size_t i = 0; i < input_shape_.dims.size(); ++i)
    if (batch.dim(i + 1) != input_shape_.dims[i])
      throw ShapeMismatch("forward: batch dims do not match input shape " +
                          input_shape_.str());

  if (cache) {
    cache->owner = this;
    cache->input_dims = batch.dims();
    cache->layers.assign(layers_.size(), LayerCache{});
  }
  const bool train = mode_ == Mode::Train;
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, cache ? &cache->layers[i] : nullptr, train, update_stats);
    if (precision_ == Precision::Single) x.round_to_f32();
    if (!x.all_finite())
      throw NonFiniteActivation(i, "non-finite activation leaving layer " +
                                       std::to_string(i) + " (" +
                                       layer_kind_name(specs_[i].kind) + ")");
  }
  return x;
}

Tensor Network::forward_tapped(const Tensor& batch, std::size_t tap_layer, Tensor* tap,
                               bool update_stats) {
  if (tap_layer > layers_.size()) throw ShapeMismatch("forward_tapped: tap out of range");
  if (batch.rank() != input_shape_.dims.size() + 1)
    throw ShapeMismatch("forward_tapped: bad batch rank");
  const bool train = mode_ == Mode::Train;
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i == tap_layer && tap) *tap = x;
    x = layers_[i]->forward(x, nullptr, train, update_stats);
    if (precision_ == Precision::Single) x.round_to_f32();
    if (!x.all_finite())
      throw NonFiniteActivation(i, "non-finite activation leaving layer " +
                                       std::to_string(i));
  }
  if (tap_layer == layers_.size() && tap) *tap = x;
  return x;
}

Tensor Network::backward(const ForwardCache& cache, const Tensor& grad_output) {
  if (cache.owner != this)
    throw CacheMismatch("backward: cache was produced by a different network");
  if (cache.layers.size() != layers_.size())
    throw CacheMismatch("backward: cache layer count mismatch");
  if (grad_output.rank() != output_shape_.dims.size() + 1 ||
      grad_output.dim(0) != cache.input_dims[0])
    throw ShapeMismatch("backward: grad_output shape does not match network output");
  for (std::size_t i = 0; i < output_shape_.dims.size(); ++i)
    if (grad_output.dim(i + 1) != output_shape_.dims[i])
      throw ShapeMismatch("backward: grad_output shape does not match network output");

  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;)
    g = layers_[i]->backward(g, cache.layers[i]);
  return g;
}

void Network::zero_grads() {
  for (Param* p : params()) p->grad.fill(0.0);
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

std::vector<const Param*> Network::params() const {
  std::vector<const Param*> out;
  for (const auto& l : layers_)
    for (Param* p : const_cast<detail::Layer&>(*l).params()) out.push_back(p);
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Param* p : params()) n += p->value.size();
  return n;
}

std::vector<std::pair<std::string, Tensor*>> Network::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    for (Param* p : layers_[i]->params()) out.emplace_back(prefix + p->name, &p->value);
    for (auto& [name, t] : layers_[i]->extra_state()) out.emplace_back(prefix + name, t);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Network::state_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<Network*>(this)->state_tensors())
    out.emplace_back(name, t);
  return out;
}

}  // namespace empssl
