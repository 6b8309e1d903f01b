#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "paal/metrics.hpp"
#include "paal/random.hpp"

using namespace paal;
using namespace paal::metrics;

namespace {

// Set-based reference: DSC_j from explicit pixel-index sets.
ClassDSC brute_force_dsc(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                         std::size_t num_fg) {
  ClassDSC out;
  for (std::size_t j = 1; j <= num_fg; ++j) {
    std::set<std::size_t> p, g, both;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == j) p.insert(i);
      if (truth[i] == j) g.insert(i);
    }
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(both, both.begin()));
    out.push_back(p.empty() && g.empty() ? 1.0 : 2.0 * both.size() / double(p.size() + g.size()));
  }
  return out;
}

std::vector<double> softmax_logits(const std::vector<double>& z, std::size_t batch, std::size_t channels,
                                   std::size_t spatial) {
  std::vector<double> p(z.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) {
      double mx = -1e300, sum = 0.0;
      for (std::size_t c = 0; c < channels; ++c) mx = std::max(mx, z[(n * channels + c) * spatial + s]);
      for (std::size_t c = 0; c < channels; ++c) sum += std::exp(z[(n * channels + c) * spatial + s] - mx);
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = (n * channels + c) * spatial + s;
        p[i] = std::exp(z[i] - mx) / sum;
      }
    }
  }
  return p;
}

// Straightforward scalar restatement of the Dice+CE loss in double precision.
double reference_dice_ce(const std::vector<double>& p, const std::vector<std::uint8_t>& y, std::size_t batch,
                         std::size_t channels, std::size_t spatial) {
  double ce = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) ce += -std::log(p[(n * channels + y[n * spatial + s]) * spatial + s]);
  }
  ce /= double(batch * spatial);
  double dice_sum = 0.0;
  for (std::size_t c = 1; c < channels; ++c) {
    double inter = 0.0, denom = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const double pc = p[(n * channels + c) * spatial + s];
        const double yc = y[n * spatial + s] == c ? 1.0 : 0.0;
        inter += pc * yc;
        denom += pc + yc;
      }
    }
    dice_sum += (2.0 * inter + 1e-5) / (denom + 1e-5);
  }
  return ce + 1.0 - dice_sum / double(channels - 1);
}

}  // namespace

TEST_CASE("DSC edge values") {
  const std::vector<std::uint8_t> a = {0, 1, 1, 2, 3, 3, 0, 0};
  CHECK(dsc_per_class(a, a, 3) == ClassDSC{1.0, 1.0, 1.0});

  const std::vector<std::uint8_t> p = {1, 1, 0, 0};
  const std::vector<std::uint8_t> g = {0, 0, 1, 1};
  CHECK(dsc_per_class(p, g, 1)[0] == 0.0);

  const std::vector<std::uint8_t> half_p = {1, 1, 0, 0};
  const std::vector<std::uint8_t> half_g = {1, 0, 1, 0};
  CHECK(dsc_per_class(half_p, half_g, 1)[0] == 0.5);

  const std::vector<std::uint8_t> empty(16, 0);
  CHECK(dsc_per_class(empty, empty, 3) == ClassDSC{1.0, 1.0, 1.0});
  CHECK_THROWS_AS(dsc_per_class(std::vector<std::uint8_t>{4}, std::vector<std::uint8_t>{0}, 3), std::out_of_range);
  CHECK_THROWS_AS(dsc_per_class(std::vector<std::uint8_t>{0, 0}, std::vector<std::uint8_t>{0}, 3),
                  std::invalid_argument);
}

TEST_CASE("DSC matches set counting and is symmetric") {
  Rng rng(42);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint8_t> pred(64), truth(64);
    for (auto& v : pred) v = static_cast<std::uint8_t>(label(rng));
    for (auto& v : truth) v = static_cast<std::uint8_t>(label(rng));
    if (trial % 10 == 0) std::replace(pred.begin(), pred.end(), std::uint8_t{3}, std::uint8_t{0});
    if (trial % 10 == 0) std::replace(truth.begin(), truth.end(), std::uint8_t{3}, std::uint8_t{0});
    const auto d = dsc_per_class(pred, truth, 3);
    CHECK(d == brute_force_dsc(pred, truth, 3));
    CHECK(d == dsc_per_class(truth, pred, 3));
    const bool identical = pred == truth;
    CHECK((mean(d) == 1.0) == identical);
  }
}

TEST_CASE("Dice+CE limits") {
  SUBCASE("one-hot correct probabilities") {
    Tensor probs({1, 4, 2, 2});
    const std::vector<std::uint8_t> labels = {0, 1, 2, 3};
    for (std::size_t s = 0; s < 4; ++s) probs[labels[s] * 4 + s] = 1.0f;
    const auto terms = dice_ce_terms(probs, labels);
    CHECK(terms.cross_entropy == 0.0);
    CHECK(terms.dice == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(dice_ce_loss(probs, labels).loss == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform probabilities") {
    Tensor probs({2, 4, 3, 3}, 0.25f);
    std::vector<std::uint8_t> labels(18);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 4);
    CHECK(dice_ce_terms(probs, labels).cross_entropy == doctest::Approx(std::log(4.0)));
  }
}

TEST_CASE("Dice+CE matches an independent scalar implementation and finite differences") {
  Rng rng(7);
  std::normal_distribution<double> logit(0.0, 2.0);
  std::uniform_int_distribution<int> label(0, 3);
  const std::size_t batch = 2, channels = 4, spatial = 16;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(batch * channels * spatial);
    for (auto& v : z) v = logit(rng);
    std::vector<std::uint8_t> y(batch * spatial);
    for (auto& v : y) v = static_cast<std::uint8_t>(label(rng));

    const auto p = softmax_logits(z, batch, channels, spatial);
    Tensor probs({batch, channels, 4, 4});
    for (std::size_t i = 0; i < p.size(); ++i) probs[i] = static_cast<float>(p[i]);
    std::vector<double> pf(probs.data().begin(), probs.data().end());

    const auto result = dice_ce_loss(probs, y);
    CHECK(std::abs(result.loss - reference_dice_ce(pf, y, batch, channels, spatial)) < 1e-6);

    double diff_sq = 0.0, ref_sq = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double h = 1e-6;
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double numeric = (reference_dice_ce(softmax_logits(zp, batch, channels, spatial), y, batch, channels, spatial) -
                              reference_dice_ce(softmax_logits(zm, batch, channels, spatial), y, batch, channels, spatial)) /
                             (2 * h);
      diff_sq += (numeric - result.grad[i]) * (numeric - result.grad[i]);
      ref_sq += numeric * numeric;
    }
    CHECK(std::sqrt(diff_sq / ref_sq) < 1e-3);
  }
}

TEST_CASE("MSE loss") {
  Tensor a({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  CHECK(mse_loss(a, a).loss == 0.0);
  CHECK(mse_loss(Tensor({3, 2}), Tensor({3, 2}, 1.0f)).loss == 1.0);
  const auto r = mse_loss(Tensor({1, 2}, {0.2f, 0.8f}), Tensor({1, 2}, {0.0f, 1.0f}));
  CHECK(r.loss == doctest::Approx(0.04));
  CHECK(r.grad[0] == doctest::Approx(0.2));
  CHECK(r.grad[1] == doctest::Approx(-0.2));
  CHECK_THROWS_AS(mse_loss(Tensor({1, 2}), Tensor({2, 1})), std::invalid_argument);
}

TEST_CASE("uncertainty scores") {
  const std::vector<float> uniform(4 * 9, 0.25f);
  CHECK(uncertainty_score(Uncertainty::MaxEntropy, uniform, 4) == doctest::Approx(std::log(4.0)));
  CHECK(uncertainty_score(Uncertainty::MaxEntropy, uniform, 4) == doctest::Approx(1.3863).epsilon(1e-4));

  std::vector<float> onehot(4 * 9, 0.0f);
  for (std::size_t s = 0; s < 9; ++s) onehot[(s % 4) * 9 + s] = 1.0f;
  CHECK(uncertainty_score(Uncertainty::LeastConfidence, onehot, 4) == 0.0);
  CHECK(uncertainty_score(Uncertainty::Margin, onehot, 4) == -1.0);
  CHECK(uncertainty_score(Uncertainty::VariationRatio, onehot, 4) == 0.0);
  CHECK(uncertainty_score(Uncertainty::MaxEntropy, onehot, 4) == 0.0);

  const std::vector<float> two = {0.6f, 0.4f};
  CHECK(uncertainty_score(Uncertainty::Margin, two, 2) == doctest::Approx(-0.2));
  CHECK(uncertainty_score(Uncertainty::LeastConfidence, two, 2) == doctest::Approx(0.4));
  CHECK(uncertainty_score(Uncertainty::VariationRatio, two, 2) == 0.0);
  CHECK(uncertainty_score(Uncertainty::VariationRatio, uniform, 4) == 1.0);

  CHECK(parse_uncertainty("margin") == Uncertainty::Margin);
  CHECK_THROWS_AS(parse_uncertainty("bald"), std::invalid_argument);
}

TEST_CASE("uncertainty scores are invariant to pixel permutation") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(0.01f, 1.0f);
  const std::size_t channels = 3, spatial = 25;
  std::vector<float> probs(channels * spatial);
  for (std::size_t s = 0; s < spatial; ++s) {
    float sum = 0.0f;
    for (std::size_t c = 0; c < channels; ++c) sum += probs[c * spatial + s] = u(rng);
    for (std::size_t c = 0; c < channels; ++c) probs[c * spatial + s] /= sum;
  }
  std::vector<std::size_t> perm(spatial);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<float> shuffled(probs.size());
  for (std::size_t s = 0; s < spatial; ++s) {
    for (std::size_t c = 0; c < channels; ++c) shuffled[c * spatial + s] = probs[c * spatial + perm[s]];
  }
  for (auto kind : {Uncertainty::MaxEntropy, Uncertainty::LeastConfidence, Uncertainty::Margin,
                    Uncertainty::VariationRatio}) {
    CHECK(uncertainty_score(kind, probs, channels) ==
          doctest::Approx(uncertainty_score(kind, shuffled, channels)).epsilon(1e-12));
  }
}
