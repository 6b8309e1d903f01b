#include "paal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace paal::metrics {

ClassDSC dsc_per_class(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                       std::size_t num_fg) {
  if (pred.size() != truth.size()) throw std::invalid_argument("DSC masks differ in size");
  std::vector<std::size_t> pred_count(num_fg + 1, 0), true_count(num_fg + 1, 0), overlap(num_fg + 1, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i];
    const auto t = truth[i];
    if (p > num_fg || t > num_fg) {
      throw std::out_of_range("label " + std::to_string(std::max(p, t)) + " exceeds class count " +
                              std::to_string(num_fg));
    }
    ++pred_count[p];
    ++true_count[t];
    if (p == t) ++overlap[p];
  }
  ClassDSC dsc(num_fg);
  for (std::size_t j = 1; j <= num_fg; ++j) {
    const std::size_t denom = pred_count[j] + true_count[j];
    dsc[j - 1] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(overlap[j]) / static_cast<double>(denom);
  }
  return dsc;
}

double mean(const ClassDSC& dsc) {
  if (dsc.empty()) return 0.0;
  double sum = 0.0;
  for (double d : dsc) sum += d;
  return sum / static_cast<double>(dsc.size());
}

std::vector<std::uint8_t> argmax_labels(std::span<const float> probs, std::size_t channels) {
  if (channels == 0 || probs.size() % channels != 0) throw std::invalid_argument("bad channel count");
  const std::size_t spatial = probs.size() / channels;
  std::vector<std::uint8_t> labels(spatial, 0);
  for (std::size_t s = 0; s < spatial; ++s) {
    float best = probs[s];
    for (std::size_t c = 1; c < channels; ++c) {
      if (probs[c * spatial + s] > best) {
        best = probs[c * spatial + s];
        labels[s] = static_cast<std::uint8_t>(c);
      }
    }
  }
  return labels;
}

namespace {

struct BatchLayout {
  std::size_t batch, channels, spatial;
};

BatchLayout check_layout(const Tensor& probs, std::span<const std::uint8_t> labels) {
  if (probs.rank() != 4 || probs.dim(1) < 2) {
    throw std::invalid_argument("expected [B, C>=2, H, W] probabilities, got " + to_string(probs.shape()));
  }
  BatchLayout l{probs.dim(0), probs.dim(1), probs.dim(2) * probs.dim(3)};
  if (labels.size() != l.batch * l.spatial) throw std::invalid_argument("label count does not match probabilities");
  for (auto y : labels) {
    if (y >= l.channels) throw std::out_of_range("label " + std::to_string(y) + " out of range");
  }
  return l;
}

struct DiceStats {
  std::vector<double> intersection, denom;  // per class, index 0 unused
};

DiceStats dice_stats(const Tensor& probs, std::span<const std::uint8_t> labels, const BatchLayout& l) {
  DiceStats st{std::vector<double>(l.channels, 0.0), std::vector<double>(l.channels, 0.0)};
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t c = 1; c < l.channels; ++c) {
      const float* p = probs.ptr() + (n * l.channels + c) * l.spatial;
      const std::uint8_t* y = labels.data() + n * l.spatial;
      double inter = 0.0, psum = 0.0, ysum = 0.0;
      for (std::size_t s = 0; s < l.spatial; ++s) {
        psum += p[s];
        if (y[s] == c) {
          inter += p[s];
          ysum += 1.0;
        }
      }
      st.intersection[c] += inter;
      st.denom[c] += psum + ysum;
    }
  }
  return st;
}

double cross_entropy(const Tensor& probs, std::span<const std::uint8_t> labels, const BatchLayout& l) {
  double ce = 0.0;
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t s = 0; s < l.spatial; ++s) {
      const auto y = labels[n * l.spatial + s];
      const double p = probs[(n * l.channels + y) * l.spatial + s];
      ce -= std::log(std::max(p, std::numeric_limits<double>::min()));
    }
  }
  return ce / static_cast<double>(l.batch * l.spatial);
}

double dice_term(const DiceStats& st, std::size_t channels) {
  double sum = 0.0;
  for (std::size_t c = 1; c < channels; ++c) {
    sum += (2.0 * st.intersection[c] + kDiceSmooth) / (st.denom[c] + kDiceSmooth);
  }
  return 1.0 - sum / static_cast<double>(channels - 1);
}

}  // namespace

DiceCeTerms dice_ce_terms(const Tensor& probs, std::span<const std::uint8_t> labels) {
  const auto l = check_layout(probs, labels);
  return {cross_entropy(probs, labels, l), dice_term(dice_stats(probs, labels, l), l.channels)};
}

LossResult dice_ce_loss(const Tensor& probs, std::span<const std::uint8_t> labels) {
  const auto l = check_layout(probs, labels);
  const auto st = dice_stats(probs, labels, l);
  LossResult result{cross_entropy(probs, labels, l) + dice_term(st, l.channels), Tensor(probs.shape())};

  const double inv_pixels = 1.0 / static_cast<double>(l.batch * l.spatial);
  const double inv_fg = 1.0 / static_cast<double>(l.channels - 1);
  // dDice/dp_c(i) = -(1/C_fg) (2 y_c(i) (S_c + s) - (2 I_c + s)) / (S_c + s)^2
  std::vector<double> on_target(l.channels, 0.0), off_target(l.channels, 0.0);
  for (std::size_t c = 1; c < l.channels; ++c) {
    const double denom = st.denom[c] + kDiceSmooth;
    const double numer = 2.0 * st.intersection[c] + kDiceSmooth;
    off_target[c] = inv_fg * numer / (denom * denom);
    on_target[c] = off_target[c] - inv_fg * 2.0 / denom;
  }

  std::vector<double> dp(l.channels);
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t s = 0; s < l.spatial; ++s) {
      const auto y = labels[n * l.spatial + s];
      double dot = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) {
        const double p = probs[(n * l.channels + c) * l.spatial + s];
        dp[c] = c == 0 ? 0.0 : (c == y ? on_target[c] : off_target[c]);
        dot += p * dp[c];
      }
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t i = (n * l.channels + c) * l.spatial + s;
        const double p = probs[i];
        const double ce = (p - (c == y ? 1.0 : 0.0)) * inv_pixels;
        result.grad[i] = static_cast<float>(ce + p * (dp[c] - dot));
      }
    }
  }
  if (!std::isfinite(result.loss)) throw NumericalError("non-finite Dice+CE loss");
  return result;
}

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("MSE shapes differ: " + to_string(pred.shape()) + " vs " +
                                to_string(target.shape()));
  }
  LossResult result{0.0, Tensor(pred.shape())};
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    result.loss += d * d;
    result.grad[i] = static_cast<float>(2.0 * d / n);
  }
  result.loss /= n;
  if (!std::isfinite(result.loss)) throw NumericalError("non-finite MSE loss");
  return result;
}

Uncertainty parse_uncertainty(std::string_view name) {
  if (name == "max_entropy") return Uncertainty::MaxEntropy;
  if (name == "least_conf") return Uncertainty::LeastConfidence;
  if (name == "margin") return Uncertainty::Margin;
  if (name == "var_ratio") return Uncertainty::VariationRatio;
  throw std::invalid_argument("unknown uncertainty kind '" + std::string(name) + "'");
}

double uncertainty_score(Uncertainty kind, std::span<const float> probs, std::size_t channels) {
  if (channels < 2 || probs.empty() || probs.size() % channels != 0) {
    throw std::invalid_argument("uncertainty_score needs [C>=2, H*W] probabilities");
  }
  const std::size_t spatial = probs.size() / channels;
  double total = 0.0;
  for (std::size_t s = 0; s < spatial; ++s) {
    double top1 = -1.0, top2 = -1.0, entropy = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double p = probs[c * spatial + s];
      if (p > 0.0) entropy -= p * std::log(p);
      if (p > top1) {
        top2 = top1;
        top1 = p;
      } else if (p > top2) {
        top2 = p;
      }
    }
    switch (kind) {
      case Uncertainty::MaxEntropy: total += entropy; break;
      case Uncertainty::LeastConfidence: total += 1.0 - top1; break;
      case Uncertainty::Margin: total += -(top1 - top2); break;
      case Uncertainty::VariationRatio: total += top1 > 0.5 ? 0.0 : 1.0; break;
    }
  }
  return total / static_cast<double>(spatial);
}

}  // namespace paal::metrics
