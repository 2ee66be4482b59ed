#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "atsc/rng.hpp"
#include "atsc/tensor.hpp"

namespace atsc {

/// Trainable parameter with its gradient accumulator.
/// `decay` marks conv/affine weights; BN affine terms and biases are exempt from weight decay.
template <class S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool decay = false;

  Param() = default;
  Param(std::string n, Tensor<S> v, bool d)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), decay(d) {}

  void zero_grad() { grad.fill(S(0)); }
};

namespace layers {

template <class S>
void he_normal(Tensor<S>& w, std::size_t fan_in, Engine& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.data) v = static_cast<S>(dist(rng));
}

template <class S>
void fan_in_uniform(Tensor<S>& w, std::size_t fan_in, Engine& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.data) v = static_cast<S>(dist(rng));
}

/// k×k convolution, stride 1, zero padding k/2, no bias. Weight layout (k, k, ch_in, ch_out).
template <class S>
struct Conv2d {
  std::size_t k = 1, ch_in = 1, ch_out = 1;
  Param<S> weight;
  Tensor<S> input;

  Conv2d() = default;
  Conv2d(std::string name, std::size_t kernel, std::size_t cin, std::size_t cout)
      : k(kernel), ch_in(cin), ch_out(cout),
        weight(std::move(name) + ".weight", Tensor<S>({kernel, kernel, cin, cout}), true) {
    if (kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
  }

  void init(Engine& rng) { he_normal(weight.value, k * k * ch_in, rng); }

  Tensor<S> forward(const Tensor<S>& x, bool /*training*/) {
    require_feature_map(x.shape, "conv2d");
    if (x.dim(3) != ch_in)
      throw ContractViolation("conv2d: expected " + std::to_string(ch_in) + " input channels, got " +
                              std::to_string(x.dim(3)));
    input = x;
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    const long pad = static_cast<long>(k / 2);
    Tensor<S> y({n, h, w, ch_out});
    const S* wt = weight.value.data.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          S* out = &y.at(b, i, j, 0);
          for (std::size_t ki = 0; ki < k; ++ki) {
            const long si = static_cast<long>(i) + static_cast<long>(ki) - pad;
            if (si < 0 || si >= static_cast<long>(h)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long sj = static_cast<long>(j) + static_cast<long>(kj) - pad;
              if (sj < 0 || sj >= static_cast<long>(w)) continue;
              const S* in = &x.at(b, static_cast<std::size_t>(si), static_cast<std::size_t>(sj), 0);
              const S* wk = wt + (ki * k + kj) * ch_in * ch_out;
              for (std::size_t ci = 0; ci < ch_in; ++ci) {
                const S xv = in[ci];
                const S* wrow = wk + ci * ch_out;
                for (std::size_t co = 0; co < ch_out; ++co) out[co] += xv * wrow[co];
              }
            }
          }
        }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const auto& x = input;
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    const long pad = static_cast<long>(k / 2);
    Tensor<S> dx(x.shape);
    const S* wt = weight.value.data.data();
    S* gw = weight.grad.data.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const S* g = &dy.at(b, i, j, 0);
          for (std::size_t ki = 0; ki < k; ++ki) {
            const long si = static_cast<long>(i) + static_cast<long>(ki) - pad;
            if (si < 0 || si >= static_cast<long>(h)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long sj = static_cast<long>(j) + static_cast<long>(kj) - pad;
              if (sj < 0 || sj >= static_cast<long>(w)) continue;
              const auto ui = static_cast<std::size_t>(si), uj = static_cast<std::size_t>(sj);
              const S* in = &x.at(b, ui, uj, 0);
              S* din = &dx.at(b, ui, uj, 0);
              const std::size_t off = (ki * k + kj) * ch_in * ch_out;
              for (std::size_t ci = 0; ci < ch_in; ++ci) {
                const S* wrow = wt + off + ci * ch_out;
                S* gwrow = gw + off + ci * ch_out;
                const S xv = in[ci];
                S acc = S(0);
                for (std::size_t co = 0; co < ch_out; ++co) {
                  gwrow[co] += xv * g[co];
                  acc += wrow[co] * g[co];
                }
                din[ci] += acc;
              }
            }
          }
        }
    return dx;
  }

  template <class F>
  void for_each_param(F&& f) { f(weight); }
  template <class F>
  void for_each_param(F&& f) const { f(weight); }
};

/// Affine map over the flattened (H, W, Ch) extent of each sample. Output is (batch, 1, 1, out).
template <class S>
struct Dense {
  std::size_t in = 1, out = 1;
  bool has_bias = false;
  Param<S> weight;
  Param<S> bias;
  Tensor<S> input;

  Dense() = default;
  Dense(std::string name, std::size_t din, std::size_t dout, bool with_bias)
      : in(din), out(dout), has_bias(with_bias),
        weight(name + ".weight", Tensor<S>({din, dout}), true) {
    if (with_bias) bias = Param<S>(name + ".bias", Tensor<S>({dout}), false);
  }

  void init_he(Engine& rng) { he_normal(weight.value, in, rng); }
  void init_uniform(Engine& rng) {
    fan_in_uniform(weight.value, in, rng);
    if (has_bias) fan_in_uniform(bias.value, in, rng);
  }

  Tensor<S> forward(const Tensor<S>& x, bool /*training*/) {
    const std::size_t n = x.dim(0);
    if (x.size() != n * in)
      throw ContractViolation("dense: expected " + std::to_string(in) + " features per sample, got " +
                              shape_str(x.shape));
    input = x;
    Tensor<S> y({n, 1, 1, out});
    const S* wt = weight.value.data.data();
    for (std::size_t b = 0; b < n; ++b) {
      S* yr = y.data.data() + b * out;
      if (has_bias)
        for (std::size_t o = 0; o < out; ++o) yr[o] = bias.value[o];
      const S* xr = x.data.data() + b * in;
      for (std::size_t i = 0; i < in; ++i) {
        const S xv = xr[i];
        const S* wr = wt + i * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const std::size_t n = input.dim(0);
    Tensor<S> dx(input.shape);
    const S* wt = weight.value.data.data();
    S* gw = weight.grad.data.data();
    for (std::size_t b = 0; b < n; ++b) {
      const S* g = dy.data.data() + b * out;
      if (has_bias)
        for (std::size_t o = 0; o < out; ++o) bias.grad[o] += g[o];
      const S* xr = input.data.data() + b * in;
      S* dxr = dx.data.data() + b * in;
      for (std::size_t i = 0; i < in; ++i) {
        const S* wr = wt + i * out;
        S* gwr = gw + i * out;
        S acc = S(0);
        for (std::size_t o = 0; o < out; ++o) {
          gwr[o] += xr[i] * g[o];
          acc += wr[o] * g[o];
        }
        dxr[i] = acc;
      }
    }
    return dx;
  }

  template <class F>
  void for_each_param(F&& f) {
    f(weight);
    if (has_bias) f(bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(weight);
    if (has_bias) f(bias);
  }
};

/// Per-channel batch normalization over (batch, H, W). Running statistics are buffers, not parameters.
template <class S>
struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  std::size_t ch = 1;
  Param<S> gamma;
  Param<S> beta;
  std::vector<S> running_mean;
  std::vector<S> running_var;

  Tensor<S> xhat;
  std::vector<S> inv_std;
  bool cached_training = false;

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels)
      : ch(channels),
        gamma(name + ".gamma", Tensor<S>({channels}, S(1)), false),
        beta(name + ".beta", Tensor<S>({channels}, S(0)), false),
        running_mean(channels, S(0)),
        running_var(channels, S(1)) {}

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    if (x.shape.back() != ch)
      throw ContractViolation("batchnorm: expected " + std::to_string(ch) + " channels, got " +
                              shape_str(x.shape));
    const std::size_t m = x.size() / ch;
    xhat = Tensor<S>(x.shape);
    inv_std.assign(ch, S(0));
    cached_training = training;
    Tensor<S> y(x.shape);
    if (training) {
      std::vector<double> mean(ch, 0.0), var(ch, 0.0);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) mean[c] += x[r * ch + c];
      for (auto& v : mean) v /= static_cast<double>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) {
          const double d = x[r * ch + c] - mean[c];
          var[c] += d * d;
        }
      for (std::size_t c = 0; c < ch; ++c) {
        const double biased = var[c] / static_cast<double>(m);
        const double unbiased = m > 1 ? var[c] / static_cast<double>(m - 1) : biased;
        inv_std[c] = static_cast<S>(1.0 / std::sqrt(biased + kEps));
        running_mean[c] = static_cast<S>((1.0 - kMomentum) * running_mean[c] + kMomentum * mean[c]);
        running_var[c] = static_cast<S>((1.0 - kMomentum) * running_var[c] + kMomentum * unbiased);
      }
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = r * ch + c;
          xhat[i] = static_cast<S>((x[i] - mean[c]) * inv_std[c]);
          y[i] = gamma.value[c] * xhat[i] + beta.value[c];
        }
    } else {
      for (std::size_t c = 0; c < ch; ++c)
        inv_std[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + kEps));
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = r * ch + c;
          xhat[i] = (x[i] - running_mean[c]) * inv_std[c];
          y[i] = gamma.value[c] * xhat[i] + beta.value[c];
        }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const std::size_t m = dy.size() / ch;
    std::vector<S> sum_dy(ch, S(0)), sum_dy_xhat(ch, S(0));
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t i = r * ch + c;
        sum_dy[c] += dy[i];
        sum_dy_xhat[c] += dy[i] * xhat[i];
      }
    for (std::size_t c = 0; c < ch; ++c) {
      gamma.grad[c] += sum_dy_xhat[c];
      beta.grad[c] += sum_dy[c];
    }
    Tensor<S> dx(dy.shape);
    if (cached_training) {
      const S inv_m = S(1) / static_cast<S>(m);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = r * ch + c;
          dx[i] = gamma.value[c] * inv_std[c] *
                  (dy[i] - inv_m * sum_dy[c] - xhat[i] * inv_m * sum_dy_xhat[c]);
        }
    } else {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = r * ch + c;
          dx[i] = dy[i] * gamma.value[c] * inv_std[c];
        }
    }
    return dx;
  }

  template <class F>
  void for_each_param(F&& f) {
    f(gamma);
    f(beta);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(gamma);
    f(beta);
  }
};

template <class S>
struct Relu {
  Tensor<S> output;

  Tensor<S> forward(const Tensor<S>& x, bool /*training*/) {
    output = x;
    for (auto& v : output.data) v = v > S(0) ? v : S(0);
    return output;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.shape);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = output[i] > S(0) ? dy[i] : S(0);
    return dx;
  }

  template <class F>
  void for_each_param(F&&) {}
  template <class F>
  void for_each_param(F&&) const {}
};

/// Non-overlapping average pooling with window (kh, kw) and equal stride.
template <class S>
struct AvgPool {
  std::size_t kh = 2, kw = 2;
  Shape input_shape;

  Tensor<S> forward(const Tensor<S>& x, bool /*training*/) {
    require_feature_map(x.shape, "avg_pool");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % kh != 0 || w % kw != 0)
      throw UnsupportedShape("avg_pool: spatial dims " + shape_str(x.shape) +
                             " not divisible by window " + std::to_string(kh) + "x" +
                             std::to_string(kw));
    input_shape = x.shape;
    const std::size_t oh = h / kh, ow = w / kw;
    Tensor<S> y({n, oh, ow, c});
    const S scale = S(1) / static_cast<S>(kh * kw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t ci = 0; ci < c; ++ci) {
            S acc = S(0);
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t d = 0; d < kw; ++d) acc += x.at(b, i * kh + a, j * kw + d, ci);
            y.at(b, i, j, ci) = acc * scale;
          }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(input_shape);
    const std::size_t n = dy.dim(0), oh = dy.dim(1), ow = dy.dim(2), c = dy.dim(3);
    const S scale = S(1) / static_cast<S>(kh * kw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const S g = dy.at(b, i, j, ci) * scale;
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t d = 0; d < kw; ++d) dx.at(b, i * kh + a, j * kw + d, ci) += g;
          }
    return dx;
  }

  template <class F>
  void for_each_param(F&&) {}
  template <class F>
  void for_each_param(F&&) const {}
};

/// (batch, H, W, Ch) -> (batch, 1, 1, Ch) spatial mean.
template <class S>
struct GlobalAvgPool {
  Shape input_shape;

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    require_feature_map(x.shape, "global_avg_pool");
    AvgPool<S> p{x.dim(1), x.dim(2), {}};
    input_shape = x.shape;
    return p.forward(x, training);
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    AvgPool<S> p{input_shape[1], input_shape[2], input_shape};
    return p.backward(dy);
  }

  template <class F>
  void for_each_param(F&&) {}
  template <class F>
  void for_each_param(F&&) const {}
};

template <class S>
using Layer = std::variant<Conv2d<S>, Dense<S>, BatchNorm<S>, Relu<S>, AvgPool<S>, GlobalAvgPool<S>>;

/// Ordered layer stack with shared forward/backward plumbing.
template <class S>
struct Sequential {
  std::vector<Layer<S>> layers;

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    Tensor<S> h = x;
    for (auto& l : layers) h = std::visit([&](auto& layer) { return layer.forward(h, training); }, l);
    return h;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> g = dy;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
      g = std::visit([&](auto& layer) { return layer.backward(g); }, *it);
    return g;
  }

  template <class F>
  void for_each_param(F&& f) {
    for (auto& l : layers) std::visit([&](auto& layer) { layer.for_each_param(f); }, l);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const auto& l : layers) std::visit([&](const auto& layer) { layer.for_each_param(f); }, l);
  }

  template <class F>
  void for_each_batchnorm(F&& f) {
    for (auto& l : layers)
      if (auto* bn = std::get_if<BatchNorm<S>>(&l)) f(*bn);
  }
  template <class F>
  void for_each_batchnorm(F&& f) const {
    for (const auto& l : layers)
      if (const auto* bn = std::get_if<BatchNorm<S>>(&l)) f(*bn);
  }
};

}  // namespace layers
}  // namespace atsc
