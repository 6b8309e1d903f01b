#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "paal/tensor.hpp"

namespace paal::nn {

/// 3x3 correlation, stride 1, zero "same" padding. Input [B, in, H, W].
struct Conv2D {
  std::size_t in_channels;
  std::size_t out_channels;
};
/// Fully connected layer. Input [B, in].
struct Dense {
  std::size_t in_features;
  std::size_t out_features;
};
struct ReLU {};
struct Sigmoid {};
/// Softmax across axis 1 at every spatial position ([B, C, H, W] or [B, C]).
struct ChannelSoftmax {};
/// Spatial mean per channel: [B, C, H, W] -> [B, C].
struct GlobalAvgPool {};

using LayerSpec = std::variant<Conv2D, Dense, ReLU, Sigmoid, ChannelSoftmax, GlobalAvgPool>;

std::string layer_name(const LayerSpec& layer);

struct Param {
  explicit Param(Tensor init);

  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
};

/// Activations of one forward pass, kept for the backward pass.
struct ForwardCache {
  Tensor input;
  std::vector<Tensor> outputs;  // outputs[i] is the output of layer i

  bool valid() const noexcept { return !outputs.empty(); }
  const Tensor& output() const { return outputs.back(); }
};

class Network {
 public:
  Network() = default;
  /// Weights get Glorot-uniform init from `seed`; biases start at zero.
  Network(std::vector<LayerSpec> layers, std::uint64_t seed);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  void add_tap(const std::string& name, std::size_t layer);
  std::size_t tap(const std::string& name) const;
  const std::map<std::string, std::size_t>& taps() const noexcept { return taps_; }
  const Tensor& tapped(const ForwardCache& cache, const std::string& name) const;

  ForwardCache forward(const Tensor& input) const;

  /// Back-propagates `output_grad`, the gradient with respect to the output of
  /// layer `top - 1`, down through layers [0, top). Parameter gradients are
  /// accumulated into Param::grad. Returns the input gradient, or an empty
  /// tensor when `want_input_grad` is false.
  Tensor backward(const ForwardCache& cache, const Tensor& output_grad, std::size_t top,
                  bool want_input_grad = true);
  Tensor backward(const ForwardCache& cache, const Tensor& output_grad) {
    return backward(cache, output_grad, layers_.size());
  }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  /// Index of the weight Param of `layer`, or npos for parameter-free layers.
  /// The bias Param immediately follows the weight.
  std::size_t param_index(std::size_t layer) const { return param_index_.at(layer); }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> param_index_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> taps_;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Decoupled-weight-decay Adam. Leaves gradients in place; the caller zeroes them.
void adamw_step(std::vector<Param>& params, double lr, const AdamWOptions& opts = {});

struct LrSchedule {
  int warmup = 10;
  double lr0 = 1e-3;
  double lr_min = 1e-6;
};

/// Linear warm-up from 0 at epoch 0 to lr0 at `warmup`, then cosine decay to
/// lr_min at `total_epochs`.
double cosine_lr(int epoch, int total_epochs, const LrSchedule& schedule = {});

/// Loss as a function of the network output: returns (loss, dloss/doutput).
using LossFn = std::function<std::pair<double, Tensor>(const Tensor& output)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst per-tensor relative error
  double max_abs_error = 0.0;  // worst single-entry absolute error
  std::size_t checked = 0;
  std::size_t skipped = 0;     // perturbations that crossed a ReLU kink
};

/// Compares analytic gradients of every parameter tensor and of the input
/// against central differences. For each tensor the relative error is
/// ||a - n|| / max(||a||, ||n||, abs_floor); the worst tensor is reported.
/// Entries whose +/-eps perturbation flips any ReLU's active set are skipped,
/// since the loss is not differentiable across that step.
GradCheckResult finite_diff_check(Network& net, const Tensor& input, const LossFn& loss,
                                  double eps = 1e-3, double abs_floor = 1e-6);

}  // namespace paal::nn
