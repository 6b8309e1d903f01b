#include "paal/query.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "paal/kmeans.hpp"
#include "paal/metrics.hpp"
#include "paal/random.hpp"

namespace paal::query {

namespace {

constexpr std::array<std::pair<std::string_view, Strategy>, 10> kNames = {{
    {"random", Strategy::Random},
    {"max_entropy", Strategy::MaxEntropy},
    {"least_conf", Strategy::LeastConfidence},
    {"margin", Strategy::Margin},
    {"var_ratio", Strategy::VariationRatio},
    {"kmeans_diversity", Strategy::KMeansDiversity},
    {"entropy_kmeans", Strategy::EntropyKMeans},
    {"coreset", Strategy::CoreSet},
    {"paal_ap_only", Strategy::PaalApOnly},
    {"paal_full", Strategy::PaalFull},
}};

// Positions of the b largest scores, ties to the lower position.
std::vector<std::size_t> top_b(std::span<const double> scores, std::size_t b) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  order.resize(b);
  return order;
}

double squared_distance(const float* a, const float* b, std::size_t dim) {
  double d = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double t = static_cast<double>(a[j]) - b[j];
    d += t * t;
  }
  return d;
}

const Tensor& require(const std::optional<Tensor>& t, std::size_t n, const char* what, Strategy s) {
  if (!t) throw std::invalid_argument(strategy_name(s) + " needs " + what);
  if (t->rank() < 2 || t->dim(0) != n) {
    throw std::invalid_argument(std::string(what) + " " + to_string(t->shape()) + " is not aligned with " +
                                std::to_string(n) + " pool samples");
  }
  return *t;
}

std::vector<double> uncertainty_scores(metrics::Uncertainty kind, const Tensor& probs) {
  std::vector<double> scores(probs.dim(0));
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = metrics::uncertainty_score(kind, probs.slice(i), probs.dim(1));
  return scores;
}

// K-means with K = b, then for each centroid in order the nearest point not yet taken.
std::vector<std::size_t> diversity_pick(const Tensor& features, std::size_t b, std::uint64_t seed) {
  const auto model = kmeans::kmeans_fit(features, b, seed);
  const std::size_t n = features.dim(0), dim = features.dim(1);
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picks;
  for (std::size_t c = 0; c < b; ++c) {
    const auto centroid = model.centroid(c);
    std::size_t best = n;
    double best_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double t = static_cast<double>(features[i * dim + j]) - centroid[j];
        d += t * t;
      }
      if (best == n || d < best_d) best = i, best_d = d;
    }
    taken[best] = 1;
    picks.push_back(best);
  }
  return picks;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t row = t.slice_size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.ptr() + rows[r] * row, row, out.ptr() + r * row);
  }
  return out;
}

}  // namespace

Weights query_weights(const Tensor& predicted, double eps) {
  if (predicted.rank() != 2) throw std::invalid_argument("predicted accuracies must be [N, C_fg]");
  const std::size_t n = predicted.dim(0), c = predicted.dim(1);
  Weights w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::clamp(static_cast<double>(predicted[i * c + j]), eps, 1.0);
      sum -= std::log(p);
    }
    w[i] = sum / static_cast<double>(c);
    if (!std::isfinite(w[i])) throw NumericalError("non-finite query weight for pool sample " + std::to_string(i));
  }
  return w;
}

std::size_t cluster_count(std::size_t b) {
  if (b == 0) throw std::invalid_argument("cluster_count needs b >= 1");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::log2(4.0 * static_cast<double>(b)) + 1.0)));
}

std::vector<std::size_t> weighted_polling(std::span<const std::uint32_t> assignments, std::span<const double> weights,
                                          std::size_t b) {
  const std::size_t n = assignments.size();
  if (weights.size() != n) throw std::invalid_argument("weights and assignments differ in length");
  if (b > n) throw std::invalid_argument("cannot poll " + std::to_string(b) + " of " + std::to_string(n) + " samples");
  if (b == 0) return {};

  const std::size_t k = *std::max_element(assignments.begin(), assignments.end()) + std::size_t{1};
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) members[assignments[i]].push_back(i);
  for (auto& m : members) {
    std::stable_sort(m.begin(), m.end(), [&](std::size_t a, std::size_t c) { return weights[a] > weights[c]; });
  }
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < k; ++c) {
    if (!members[c].empty()) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    return weights[members[a].front()] > weights[members[c].front()];
  });

  std::vector<std::size_t> next(k, 0);
  std::vector<std::size_t> picks;
  picks.reserve(b);
  while (picks.size() < b) {
    for (std::size_t c : order) {
      if (picks.size() == b) break;
      if (next[c] < members[c].size()) picks.push_back(members[c][next[c]++]);
    }
  }
  return picks;
}

std::vector<std::size_t> coreset_select(const Tensor& labeled, const Tensor& unlabeled, std::size_t b) {
  if (unlabeled.rank() != 2) throw std::invalid_argument("coreset expects [N, Dim] unlabeled features");
  const std::size_t n = unlabeled.dim(0), dim = unlabeled.dim(1);
  if (b > n) throw std::invalid_argument("cannot select " + std::to_string(b) + " of " + std::to_string(n) + " samples");
  const bool have_labeled = !labeled.empty();
  if (have_labeled && (labeled.rank() != 2 || labeled.dim(1) != dim)) {
    throw std::invalid_argument("labeled features " + to_string(labeled.shape()) + " do not match dimension " +
                                std::to_string(dim));
  }

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  if (have_labeled) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < labeled.dim(0); ++l) {
        min_d[i] = std::min(min_d[i], squared_distance(unlabeled.ptr() + i * dim, labeled.ptr() + l * dim, dim));
      }
    }
  } else if (n > 0) {
    std::vector<float> mean(dim, 0.0f);
    for (std::size_t j = 0; j < dim; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += unlabeled[i * dim + j];
      mean[j] = static_cast<float>(s / static_cast<double>(n));
    }
    for (std::size_t i = 0; i < n; ++i) min_d[i] = squared_distance(unlabeled.ptr() + i * dim, mean.data(), dim);
  }

  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picks;
  for (std::size_t s = 0; s < b; ++s) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && (best == n || min_d[i] > min_d[best])) best = i;
    }
    taken[best] = 1;
    picks.push_back(best);
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(unlabeled.ptr() + i * dim, unlabeled.ptr() + best * dim, dim));
    }
  }
  return picks;
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [key, value] : kNames) {
    if (key == name) return value;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

std::string strategy_name(Strategy s) {
  for (const auto& [key, value] : kNames) {
    if (value == s) return std::string(key);
  }
  return "unknown";
}

bool uses_predictor(Strategy s) { return s == Strategy::PaalApOnly || s == Strategy::PaalFull; }

Selection select_detailed(Strategy strategy, const QueryContext& ctx) {
  const std::size_t n = ctx.ids.size();
  if (ctx.b == 0) throw std::invalid_argument("query batch size must be at least 1");
  if (ctx.b > n) {
    throw std::invalid_argument("query batch " + std::to_string(ctx.b) + " exceeds pool of " + std::to_string(n));
  }
  if (!std::is_sorted(ctx.ids.begin(), ctx.ids.end()) ||
      std::adjacent_find(ctx.ids.begin(), ctx.ids.end()) != ctx.ids.end()) {
    throw std::invalid_argument("pool ids must be strictly ascending");
  }

  std::vector<std::size_t> picks;
  std::vector<int> clusters;
  std::vector<double> scores;  // per pool position, empty when not applicable
  switch (strategy) {
    case Strategy::Random: {
      picks.resize(n);
      std::iota(picks.begin(), picks.end(), 0);
      Rng rng(ctx.seed);
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(ctx.b);
      break;
    }
    case Strategy::MaxEntropy:
    case Strategy::LeastConfidence:
    case Strategy::Margin:
    case Strategy::VariationRatio: {
      const auto kind = metrics::parse_uncertainty(strategy_name(strategy));
      scores = uncertainty_scores(kind, require(ctx.probs, n, "segmentation probabilities", strategy));
      picks = top_b(scores, ctx.b);
      break;
    }
    case Strategy::KMeansDiversity:
      picks = diversity_pick(require(ctx.features, n, "features", strategy), ctx.b, ctx.seed);
      for (std::size_t c = 0; c < picks.size(); ++c) clusters.push_back(static_cast<int>(c));
      break;
    case Strategy::EntropyKMeans: {
      const Tensor& features = require(ctx.features, n, "features", strategy);
      scores =
          uncertainty_scores(metrics::Uncertainty::MaxEntropy, require(ctx.probs, n, "segmentation probabilities", strategy));
      auto candidates = top_b(scores, std::min(n, kEntropyKMeansFactor * ctx.b));
      std::sort(candidates.begin(), candidates.end());
      for (std::size_t p : diversity_pick(gather_rows(features, candidates), ctx.b, ctx.seed)) {
        clusters.push_back(static_cast<int>(picks.size()));
        picks.push_back(candidates[p]);
      }
      break;
    }
    case Strategy::CoreSet:
      picks = coreset_select(ctx.labeled_features.value_or(Tensor{}), require(ctx.features, n, "features", strategy),
                             ctx.b);
      break;
    case Strategy::PaalApOnly:
      scores = query_weights(require(ctx.predicted, n, "predicted accuracies", strategy));
      picks = top_b(scores, ctx.b);
      break;
    case Strategy::PaalFull: {
      scores = query_weights(require(ctx.predicted, n, "predicted accuracies", strategy));
      const Tensor& features = require(ctx.features, n, "features", strategy);
      const std::size_t k = std::min(n, ctx.clusters.value_or(cluster_count(ctx.b)));
      const auto model = kmeans::kmeans_fit(features, k, ctx.seed);
      picks = weighted_polling(model.assignments, scores, ctx.b);
      for (std::size_t p : picks) clusters.push_back(static_cast<int>(model.assignments[p]));
      break;
    }
  }

  Selection out;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    out.ids.push_back(ctx.ids[picks[i]]);
    out.clusters.push_back(clusters.empty() ? -1 : clusters[i]);
    out.weights.push_back(scores.empty() ? std::numeric_limits<double>::quiet_NaN() : scores[picks[i]]);
  }
  return out;
}

std::vector<std::uint32_t> select(Strategy strategy, const QueryContext& ctx) {
  return select_detailed(strategy, ctx).ids;
}

}  // namespace paal::query
