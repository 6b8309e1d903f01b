#include "paal/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "paal/random.hpp"

namespace paal::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

[[noreturn]] void shape_error(std::size_t index, const LayerSpec& layer, const std::string& detail) {
  throw std::invalid_argument("layer " + std::to_string(index) + " (" + layer_name(layer) +
                              "): " + detail);
}

// col[(c*9 + ky*3 + kx), y*W + x] = in[c, y+ky-1, x+kx-1], zero outside.
void im2col(const float* in, std::size_t channels, std::size_t h, std::size_t w, float* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = in + c * hw;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        float* row = col + (c * kTaps + ky * kKernel + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          float* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0f : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, std::size_t channels, std::size_t h, std::size_t w, float* out) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    float* plane = out + c * hw;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const float* row = col + (c * kTaps + ky * kKernel + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          float* dst = plane + static_cast<std::size_t>(sy) * w;
          const float* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

// Rank-4 [B, C, H, W] or rank-2 [B, C] (treated as H = W = 1).
struct ChannelView {
  std::size_t batch, channels, spatial;
};

ChannelView channel_view(const Tensor& t, std::size_t index, const LayerSpec& layer) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
  shape_error(index, layer, "expected rank 2 or 4 input, got " + to_string(t.shape()));
}

struct ForwardVisitor {
  const Network& net;
  const std::vector<Param>& params;
  std::size_t index;
  const Tensor& in;

  Tensor operator()(const Conv2D& spec) const {
    if (in.rank() != 4 || in.dim(1) != spec.in_channels) {
      shape_error(index, spec, "expected [B, " + std::to_string(spec.in_channels) +
                                   ", H, W] input, got " + to_string(in.shape()));
    }
    const std::size_t batch = in.dim(0), h = in.dim(2), w = in.dim(3), hw = h * w;
    const std::size_t k = spec.in_channels * kTaps;
    const Param& weight = params[net.param_index(index)];
    const Param& bias = params[net.param_index(index) + 1];
    Tensor out({batch, spec.out_channels, h, w});
    std::vector<float> col(k * hw);
    ConstMapMat wm(weight.value.ptr(), spec.out_channels, k);
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(in.slice(n).data(), spec.in_channels, h, w, col.data());
      MapMat om(out.slice(n).data(), spec.out_channels, hw);
      om.noalias() = wm * ConstMapMat(col.data(), k, hw);
      for (std::size_t o = 0; o < spec.out_channels; ++o) om.row(o).array() += bias.value[o];
    }
    return out;
  }

  Tensor operator()(const Dense& spec) const {
    if (in.rank() != 2 || in.dim(1) != spec.in_features) {
      shape_error(index, spec, "expected [B, " + std::to_string(spec.in_features) +
                                   "] input, got " + to_string(in.shape()));
    }
    const std::size_t batch = in.dim(0);
    const Param& weight = params[net.param_index(index)];
    const Param& bias = params[net.param_index(index) + 1];
    Tensor out({batch, spec.out_features});
    MapMat om(out.ptr(), batch, spec.out_features);
    om.noalias() = ConstMapMat(in.ptr(), batch, spec.in_features) *
                   ConstMapMat(weight.value.ptr(), spec.out_features, spec.in_features).transpose();
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < spec.out_features; ++o) om(n, o) += bias.value[o];
    }
    return out;
  }

  Tensor operator()(const ReLU&) const {
    Tensor out = in;
    for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
    return out;
  }

  Tensor operator()(const Sigmoid&) const {
    Tensor out = in;
    for (auto& v : out.data()) v = 1.0f / (1.0f + std::exp(-v));
    return out;
  }

  Tensor operator()(const ChannelSoftmax& spec) const {
    const auto view = channel_view(in, index, spec);
    Tensor out = in;
    float* data = out.ptr();
    for (std::size_t n = 0; n < view.batch; ++n) {
      float* base = data + n * view.channels * view.spatial;
      for (std::size_t s = 0; s < view.spatial; ++s) {
        float mx = base[s];
        for (std::size_t c = 1; c < view.channels; ++c) mx = std::max(mx, base[c * view.spatial + s]);
        float sum = 0.0f;
        for (std::size_t c = 0; c < view.channels; ++c) {
          float& v = base[c * view.spatial + s];
          v = std::exp(v - mx);
          sum += v;
        }
        const float inv = 1.0f / sum;
        for (std::size_t c = 0; c < view.channels; ++c) base[c * view.spatial + s] *= inv;
      }
    }
    return out;
  }

  Tensor operator()(const GlobalAvgPool& spec) const {
    if (in.rank() != 4) shape_error(index, spec, "expected [B, C, H, W] input, got " + to_string(in.shape()));
    const std::size_t batch = in.dim(0), channels = in.dim(1), hw = in.dim(2) * in.dim(3);
    Tensor out({batch, channels});
    const float* src = in.ptr();
    for (std::size_t i = 0; i < batch * channels; ++i) {
      double sum = 0.0;
      for (std::size_t s = 0; s < hw; ++s) sum += src[i * hw + s];
      out[i] = static_cast<float>(sum / static_cast<double>(hw));
    }
    return out;
  }
};

struct BackwardVisitor {
  const Network& net;
  std::vector<Param>& params;
  std::size_t index;
  const Tensor& in;
  const Tensor& out;
  const Tensor& grad_out;
  bool want_input_grad;

  Tensor operator()(const Conv2D& spec) const {
    const std::size_t batch = in.dim(0), h = in.dim(2), w = in.dim(3), hw = h * w;
    const std::size_t k = spec.in_channels * kTaps;
    Param& weight = params[net.param_index(index)];
    Param& bias = params[net.param_index(index) + 1];
    Tensor grad_in;
    if (want_input_grad) grad_in = Tensor(in.shape());
    std::vector<float> col(k * hw);
    std::vector<float> dcol(want_input_grad ? k * hw : 0);
    MapMat dw(weight.grad.ptr(), spec.out_channels, k);
    ConstMapMat wm(weight.value.ptr(), spec.out_channels, k);
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(in.slice(n).data(), spec.in_channels, h, w, col.data());
      ConstMapMat go(grad_out.slice(n).data(), spec.out_channels, hw);
      dw.noalias() += go * ConstMapMat(col.data(), k, hw).transpose();
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        double sum = 0.0;
        const float* row = go.data() + o * hw;
        for (std::size_t s = 0; s < hw; ++s) sum += row[s];
        bias.grad[o] += static_cast<float>(sum);
      }
      if (want_input_grad) {
        MapMat(dcol.data(), k, hw).noalias() = wm.transpose() * go;
        col2im_add(dcol.data(), spec.in_channels, h, w, grad_in.slice(n).data());
      }
    }
    return grad_in;
  }

  Tensor operator()(const Dense& spec) const {
    const std::size_t batch = in.dim(0);
    Param& weight = params[net.param_index(index)];
    Param& bias = params[net.param_index(index) + 1];
    ConstMapMat go(grad_out.ptr(), batch, spec.out_features);
    MapMat(weight.grad.ptr(), spec.out_features, spec.in_features).noalias() +=
        go.transpose() * ConstMapMat(in.ptr(), batch, spec.in_features);
    for (std::size_t o = 0; o < spec.out_features; ++o) {
      double sum = 0.0;
      for (std::size_t n = 0; n < batch; ++n) sum += go(n, o);
      bias.grad[o] += static_cast<float>(sum);
    }
    if (!want_input_grad) return {};
    Tensor grad_in(in.shape());
    MapMat(grad_in.ptr(), batch, spec.in_features).noalias() =
        go * ConstMapMat(weight.value.ptr(), spec.out_features, spec.in_features);
    return grad_in;
  }

  Tensor operator()(const ReLU&) const {
    if (!want_input_grad) return {};
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.size(); ++i) {
      if (!(in[i] > 0.0f)) grad_in[i] = 0.0f;
    }
    return grad_in;
  }

  Tensor operator()(const Sigmoid&) const {
    if (!want_input_grad) return {};
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] *= out[i] * (1.0f - out[i]);
    return grad_in;
  }

  Tensor operator()(const ChannelSoftmax& spec) const {
    if (!want_input_grad) return {};
    const auto view = channel_view(in, index, spec);
    Tensor grad_in(in.shape());
    for (std::size_t n = 0; n < view.batch; ++n) {
      const std::size_t base = n * view.channels * view.spatial;
      for (std::size_t s = 0; s < view.spatial; ++s) {
        float dot = 0.0f;
        for (std::size_t c = 0; c < view.channels; ++c) {
          const std::size_t i = base + c * view.spatial + s;
          dot += out[i] * grad_out[i];
        }
        for (std::size_t c = 0; c < view.channels; ++c) {
          const std::size_t i = base + c * view.spatial + s;
          grad_in[i] = out[i] * (grad_out[i] - dot);
        }
      }
    }
    return grad_in;
  }

  Tensor operator()(const GlobalAvgPool&) const {
    if (!want_input_grad) return {};
    const std::size_t batch = in.dim(0), channels = in.dim(1), hw = in.dim(2) * in.dim(3);
    Tensor grad_in(in.shape());
    const float scale = 1.0f / static_cast<float>(hw);
    for (std::size_t i = 0; i < batch * channels; ++i) {
      const float g = grad_out[i] * scale;
      std::fill(grad_in.ptr() + i * hw, grad_in.ptr() + (i + 1) * hw, g);
    }
    return grad_in;
  }
};

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  std::uniform_real_distribution<float> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  struct {
    std::string operator()(const Conv2D& c) const {
      return "Conv2D(" + std::to_string(c.in_channels) + "->" + std::to_string(c.out_channels) + ")";
    }
    std::string operator()(const Dense& d) const {
      return "Dense(" + std::to_string(d.in_features) + "->" + std::to_string(d.out_features) + ")";
    }
    std::string operator()(const ReLU&) const { return "ReLU"; }
    std::string operator()(const Sigmoid&) const { return "Sigmoid"; }
    std::string operator()(const ChannelSoftmax&) const { return "ChannelSoftmax"; }
    std::string operator()(const GlobalAvgPool&) const { return "GlobalAvgPool"; }
  } namer;
  return std::visit(namer, layer);
}

Param::Param(Tensor init)
    : value(std::move(init)), grad(value.shape()), m(value.shape()), v(value.shape()) {}

Network::Network(std::vector<LayerSpec> layers, std::uint64_t seed) : layers_(std::move(layers)) {
  Rng rng(seed);
  param_index_.assign(layers_.size(), npos);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* conv = std::get_if<Conv2D>(&layers_[i])) {
      if (conv->in_channels == 0 || conv->out_channels == 0) shape_error(i, layers_[i], "zero channels");
      param_index_[i] = params_.size();
      params_.emplace_back(glorot({conv->out_channels, conv->in_channels, kKernel, kKernel},
                                  conv->in_channels * kTaps, conv->out_channels * kTaps, rng));
      params_.emplace_back(Tensor({conv->out_channels}));
    } else if (const auto* dense = std::get_if<Dense>(&layers_[i])) {
      if (dense->in_features == 0 || dense->out_features == 0) shape_error(i, layers_[i], "zero features");
      param_index_[i] = params_.size();
      params_.emplace_back(glorot({dense->out_features, dense->in_features}, dense->in_features,
                                  dense->out_features, rng));
      params_.emplace_back(Tensor({dense->out_features}));
    }
  }
}

void Network::add_tap(const std::string& name, std::size_t layer) {
  if (layer >= layers_.size()) {
    throw std::out_of_range("tap '" + name + "' refers to layer " + std::to_string(layer) +
                            " but the network has " + std::to_string(layers_.size()) + " layers");
  }
  taps_[name] = layer;
}

std::size_t Network::tap(const std::string& name) const {
  auto it = taps_.find(name);
  if (it == taps_.end()) throw std::out_of_range("no tap named '" + name + "'");
  return it->second;
}

const Tensor& Network::tapped(const ForwardCache& cache, const std::string& name) const {
  if (!cache.valid()) throw std::logic_error("tapped activation requested from an empty forward cache");
  return cache.outputs.at(tap(name));
}

ForwardCache Network::forward(const Tensor& input) const {
  if (layers_.empty()) throw std::logic_error("forward on an empty network");
  if (input.rank() == 0) throw std::invalid_argument("forward input must have a leading batch axis");
  ForwardCache cache;
  cache.input = input;
  cache.outputs.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& in = i == 0 ? cache.input : cache.outputs.back();
    Tensor out = std::visit(ForwardVisitor{*this, params_, i, in}, layers_[i]);
    out.check_finite("output of layer " + std::to_string(i) + " (" + layer_name(layers_[i]) + ")");
    cache.outputs.push_back(std::move(out));
  }
  return cache;
}

Tensor Network::backward(const ForwardCache& cache, const Tensor& output_grad, std::size_t top,
                         bool want_input_grad) {
  if (!cache.valid() || cache.outputs.size() != layers_.size()) {
    throw std::logic_error("backward called without a cached forward pass");
  }
  if (top == 0 || top > layers_.size()) throw std::out_of_range("backward top layer out of range");
  if (output_grad.shape() != cache.outputs[top - 1].shape()) {
    throw std::invalid_argument("output gradient shape " + to_string(output_grad.shape()) +
                                " does not match layer " + std::to_string(top - 1) + " output " +
                                to_string(cache.outputs[top - 1].shape()));
  }
  Tensor grad = output_grad;
  for (std::size_t i = top; i-- > 0;) {
    const Tensor& in = i == 0 ? cache.input : cache.outputs[i - 1];
    const bool need = i > 0 || want_input_grad;
    grad = std::visit(BackwardVisitor{*this, params_, i, in, cache.outputs[i], grad, need}, layers_[i]);
  }
  return grad;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0f);
}

void adamw_step(std::vector<Param>& params, double lr, const AdamWOptions& opts) {
  for (const auto& p : params) p.grad.check_finite("parameter gradient");
  for (auto& p : params) {
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double bc1 = 1.0 - std::pow(opts.beta1, t);
    const double bc2 = 1.0 - std::pow(opts.beta2, t);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = opts.beta1 * p.m[i] + (1.0 - opts.beta1) * g;
      const double v = opts.beta2 * p.v[i] + (1.0 - opts.beta2) * g * g;
      p.m[i] = static_cast<float>(m);
      p.v[i] = static_cast<float>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      double value = p.value[i];
      value -= lr * (m_hat / (std::sqrt(v_hat) + opts.eps) + opts.weight_decay * value);
      p.value[i] = static_cast<float>(value);
    }
  }
}

double cosine_lr(int epoch, int total_epochs, const LrSchedule& s) {
  if (s.warmup < 0) throw std::invalid_argument("warm-up must be non-negative");
  if (total_epochs <= s.warmup) {
    throw std::invalid_argument("total epochs (" + std::to_string(total_epochs) +
                                ") must exceed warm-up epochs (" + std::to_string(s.warmup) + ")");
  }
  if (epoch < 0 || epoch > total_epochs) throw std::out_of_range("epoch outside [0, total_epochs]");
  if (epoch < s.warmup) return s.lr0 * static_cast<double>(epoch) / static_cast<double>(s.warmup);
  const double progress =
      static_cast<double>(epoch - s.warmup) / static_cast<double>(total_epochs - s.warmup);
  return s.lr_min + 0.5 * (s.lr0 - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

bool relu_pattern_changed(const Network& net, const ForwardCache& a, const ForwardCache& b) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (!std::holds_alternative<ReLU>(net.layers()[i])) continue;
    const Tensor& in_a = i == 0 ? a.input : a.outputs[i - 1];
    const Tensor& in_b = i == 0 ? b.input : b.outputs[i - 1];
    for (std::size_t k = 0; k < in_a.size(); ++k) {
      if ((in_a[k] > 0.0f) != (in_b[k] > 0.0f)) return true;
    }
  }
  return false;
}

}  // namespace

GradCheckResult finite_diff_check(Network& net, const Tensor& input, const LossFn& loss, double eps,
                                  double abs_floor) {
  net.zero_grad();
  const auto base = net.forward(input);
  const Tensor input_grad = net.backward(base, loss(base.output()).second);

  GradCheckResult result;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  auto begin_tensor = [&] { diff_sq = analytic_sq = numeric_sq = 0.0; };
  auto end_tensor = [&] {
    const double denom = std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), abs_floor});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff_sq) / denom);
  };
  // Perturbs `slot` by +/-eps and accumulates the comparison for one entry.
  auto probe = [&](float& slot, const Tensor& x, double analytic) {
    const float original = slot;
    const float up = original + static_cast<float>(eps);
    const float down = original - static_cast<float>(eps);
    slot = up;
    const auto cache_up = net.forward(x);
    slot = down;
    const auto cache_down = net.forward(x);
    slot = original;
    if (relu_pattern_changed(net, base, cache_up) || relu_pattern_changed(net, base, cache_down)) {
      ++result.skipped;
      return;
    }
    const double numeric = (loss(cache_up.output()).first - loss(cache_down.output()).first) /
                           (static_cast<double>(up) - static_cast<double>(down));
    const double d = analytic - numeric;
    diff_sq += d * d;
    analytic_sq += analytic * analytic;
    numeric_sq += numeric * numeric;
    result.max_abs_error = std::max(result.max_abs_error, std::abs(d));
    ++result.checked;
  };

  for (auto& p : net.params()) {
    begin_tensor();
    for (std::size_t i = 0; i < p.value.size(); ++i) probe(p.value[i], input, p.grad[i]);
    end_tensor();
  }
  Tensor x = input;
  begin_tensor();
  for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], x, input_grad[i]);
  end_tensor();
  return result;
}

}  // namespace paal::nn
