#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "paal/tensor.hpp"

namespace paal::metrics {

/// Per-foreground-class Dice scores, index j-1 holds class j.
using ClassDSC = std::vector<double>;

/// DSC_j = 2|P_j ∩ G_j| / (|P_j| + |G_j|) for j = 1..num_fg; 1.0 when both
/// masks lack class j. Labels must lie in 0..num_fg.
ClassDSC dsc_per_class(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                       std::size_t num_fg);

double mean(const ClassDSC& dsc);

/// Per-pixel argmax over channels of one sample's [C, H, W] probabilities.
std::vector<std::uint8_t> argmax_labels(std::span<const float> probs, std::size_t channels);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Cross-entropy (mean over pixels) plus one minus the soft Dice averaged over
/// foreground classes. Soft Dice sums over the whole batch per class with a
/// 1e-5 smoothing term. `probs` is [B, C, H, W] softmax output, `labels` holds
/// B*H*W class indices; the returned gradient is with respect to the logits
/// that produced `probs`.
LossResult dice_ce_loss(const Tensor& probs, std::span<const std::uint8_t> labels);

struct DiceCeTerms {
  double cross_entropy = 0.0;
  double dice = 0.0;  // 1 - mean soft Dice
};
DiceCeTerms dice_ce_terms(const Tensor& probs, std::span<const std::uint8_t> labels);

inline constexpr double kDiceSmooth = 1e-5;

/// Mean squared error over all entries; gradient with respect to `pred`.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

enum class Uncertainty { MaxEntropy, LeastConfidence, Margin, VariationRatio };

Uncertainty parse_uncertainty(std::string_view name);

/// Pixel-averaged uncertainty of one sample's [C, H*W] probabilities; higher
/// means more uncertain.
///   max_entropy: -sum_c p ln p
///   least_conf:  1 - max_c p
///   margin:      -(p_top1 - p_top2)
///   var_ratio:   1 - fraction of pixels whose top probability exceeds 0.5
double uncertainty_score(Uncertainty kind, std::span<const float> probs, std::size_t channels);

}  // namespace paal::metrics
