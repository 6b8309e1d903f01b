#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paal/tensor.hpp"

namespace paal::query {

using Weights = std::vector<double>;

/// w_i = mean over foreground classes of -ln(clip(p_ij, eps, 1)) for the
/// predicted per-class Dice scores O2 [N, C_fg].
Weights query_weights(const Tensor& predicted, double eps = 1e-6);

/// K = floor(log2(4b) + 1).
std::size_t cluster_count(std::size_t b);

/// Round-robin over clusters ordered by their largest member weight (ties to
/// the lower cluster index); each visit takes that cluster's heaviest
/// remaining member (ties to the lower position). Returns positions into
/// `assignments`/`weights` in pick order.
std::vector<std::size_t> weighted_polling(std::span<const std::uint32_t> assignments, std::span<const double> weights,
                                          std::size_t b);

/// Greedy k-center: repeatedly takes the unlabeled point farthest from
/// labeled plus already-picked points. With nothing labeled the first pick is
/// the point farthest from the unlabeled centroid. `labeled` may be an empty
/// tensor. Returns positions into `unlabeled` in pick order.
std::vector<std::size_t> coreset_select(const Tensor& labeled, const Tensor& unlabeled, std::size_t b);

enum class Strategy {
  Random,
  MaxEntropy,
  LeastConfidence,
  Margin,
  VariationRatio,
  KMeansDiversity,
  EntropyKMeans,
  CoreSet,
  PaalApOnly,
  PaalFull,
};

Strategy parse_strategy(std::string_view name);
std::string strategy_name(Strategy s);
/// Strategies that need the accuracy predictor trained during the run.
bool uses_predictor(Strategy s);

inline constexpr std::size_t kEntropyKMeansFactor = 4;

struct QueryContext {
  std::vector<std::uint32_t> ids;         // unlabeled pool, ascending
  std::optional<Tensor> probs;            // O1 [N, C, H, W]
  std::optional<Tensor> features;         // F [N, Dim]
  std::optional<Tensor> predicted;        // O2 [N, C_fg]
  std::optional<Tensor> labeled_features; // [L, Dim], coreset only
  std::size_t b = 1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> clusters;    // overrides cluster_count(b) for paal_full
};

struct Selection {
  std::vector<std::uint32_t> ids;  // pick order
  std::vector<int> clusters;       // cluster of each pick, -1 when the strategy has none
  std::vector<double> weights;     // ranking score of each pick, NaN when the strategy has none
};

/// Picks b distinct ids from ctx.ids.
Selection select_detailed(Strategy strategy, const QueryContext& ctx);
std::vector<std::uint32_t> select(Strategy strategy, const QueryContext& ctx);

}  // namespace paal::query
