#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include "paal/data.hpp"
#include "paal/nn.hpp"

namespace paal::models {

/// Toy segmentation network:
///   Conv(C'->8) ReLU Conv(8->16) ReLU[features] Conv(16->C) ChannelSoftmax
/// The feature embedding is the global average of the tapped 16-channel map.
class SegModel {
 public:
  static constexpr std::size_t kFeatureDim = 16;
  static constexpr std::size_t kFeatureLayer = 3;

  SegModel(std::size_t image_channels, std::size_t num_classes, std::uint32_t height, std::uint32_t width,
           std::uint64_t seed);
  /// Adopts a network with the SegModel layout (e.g. one read from a checkpoint).
  SegModel(nn::Network net, std::uint32_t height, std::uint32_t width);

  nn::Network& net() noexcept { return net_; }
  const nn::Network& net() const noexcept { return net_; }
  std::size_t image_channels() const noexcept { return image_channels_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_foreground() const noexcept { return num_classes_ - 1; }
  std::uint32_t height() const noexcept { return height_; }
  std::uint32_t width() const noexcept { return width_; }

  /// Throws unless `images` is [B, C', H, W] at this model's resolution.
  void check_input(const Tensor& images) const;

 private:
  nn::Network net_;
  std::size_t image_channels_;
  std::size_t num_classes_;
  std::uint32_t height_;
  std::uint32_t width_;
};

struct SegOutput {
  Tensor probs;     // O1: [B, C, H, W]
  Tensor features;  // F:  [B, 16]
};

SegOutput seg_forward(const SegModel& model, const Tensor& images);

/// Spatial mean of the tapped feature activation in a forward cache.
Tensor pooled_features(const SegModel& model, const nn::ForwardCache& cache);

/// Accuracy predictor:
///   Conv(C'+C -> 8) ReLU GlobalAvgPool Dense(8 -> C_fg) Sigmoid
/// Outputs one predicted Dice score per foreground class.
class APModel {
 public:
  APModel(std::size_t image_channels, std::size_t num_classes, std::uint64_t seed);
  explicit APModel(nn::Network net);

  nn::Network& net() noexcept { return net_; }
  const nn::Network& net() const noexcept { return net_; }
  std::size_t input_channels() const noexcept { return input_channels_; }
  std::size_t num_foreground() const noexcept { return num_foreground_; }

 private:
  nn::Network net_;
  std::size_t input_channels_;
  std::size_t num_foreground_;
};

/// [B, C', H, W] ++ [B, C, H, W] -> [B, C'+C, H, W], image channels first.
Tensor concat_channels(const Tensor& image, const Tensor& probs);

/// O2: [B, C_fg] predicted per-class Dice in [0, 1]. `probs` is copied into
/// the AP input, so nothing flows back into the segmentation model.
Tensor ap_forward(const APModel& ap, const Tensor& image, const Tensor& probs);

/// Gray levels scaled by 1/255 into a [ids.size(), 1, H, W] tensor.
Tensor normalized_images(const data::Dataset& dataset, std::span<const std::uint32_t> ids);

/// Binary checkpoint: "PAALNN1\0", u32 layer count, per layer a u32 tag plus
/// two u32 extents for Conv2D/Dense, then every parameter buffer as raw
/// little-endian float32 in layer order (weight before bias).
void save_network(const std::filesystem::path& path, const nn::Network& net);
nn::Network load_network(const std::filesystem::path& path);

inline constexpr std::array<char, 8> kCheckpointMagic = {'P', 'A', 'A', 'L', 'N', 'N', '1', '\0'};

enum class LayerTag : std::uint32_t {
  Conv2D = 1,
  Dense = 2,
  ReLU = 3,
  Sigmoid = 4,
  ChannelSoftmax = 5,
  GlobalAvgPool = 6,
};

}  // namespace paal::models
