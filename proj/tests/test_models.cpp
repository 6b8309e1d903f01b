#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "paal/metrics.hpp"
#include "paal/models.hpp"
#include "paal/random.hpp"

using namespace paal;
using namespace paal::models;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float lo, float hi) {
  Rng rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> dist(0, 3);
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = static_cast<std::uint8_t>(dist(rng));
  return out;
}

}  // namespace

TEST_CASE("segmentation model shapes") {
  SegModel model(1, 4, 32, 32, 1);
  const auto out = seg_forward(model, random_tensor({3, 1, 32, 32}, 2, 0.0f, 1.0f));
  CHECK(out.probs.shape() == Shape{3, 4, 32, 32});
  CHECK(out.features.shape() == Shape{3, SegModel::kFeatureDim});
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t s = 0; s < 32 * 32; ++s) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) sum += out.probs[(n * 4 + c) * 1024 + s];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  for (float f : out.features.data()) CHECK(f >= 0.0f);
  CHECK_THROWS_WITH_AS(seg_forward(model, Tensor({1, 1, 16, 32})), doctest::Contains("1x1x16x32"),
                       std::invalid_argument);
  CHECK_THROWS_AS(SegModel(1, 1, 32, 32, 1), std::invalid_argument);
}

TEST_CASE("accuracy predictor shapes and range") {
  APModel ap(1, 4, 3);
  const Tensor image = random_tensor({2, 1, 32, 32}, 4, 0.0f, 1.0f);
  SegModel seg(1, 4, 32, 32, 5);
  const Tensor probs = seg_forward(seg, image).probs;
  const Tensor o2 = ap_forward(ap, image, probs);
  CHECK(o2.shape() == Shape{2, 3});
  for (float v : o2.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK_THROWS_AS(ap_forward(ap, image, Tensor({2, 3, 32, 32})), std::invalid_argument);
}

TEST_CASE("channel concatenation puts image channels first") {
  Tensor image({2, 1, 1, 2}, {1, 2, 3, 4});
  Tensor probs({2, 2, 1, 2}, {10, 11, 12, 13, 20, 21, 22, 23});
  const Tensor cat = concat_channels(image, probs);
  CHECK(cat.shape() == Shape{2, 3, 1, 2});
  CHECK(std::vector<float>(cat.data().begin(), cat.data().end()) ==
        std::vector<float>{1, 2, 10, 11, 12, 13, 3, 4, 20, 21, 22, 23});
}

TEST_CASE("accuracy predictor loss leaves segmentation gradients untouched") {
  SegModel seg(1, 4, 16, 16, 6);
  APModel ap(1, 4, 7);
  const Tensor image = random_tensor({2, 1, 16, 16}, 8, 0.0f, 1.0f);
  const Tensor probs = seg_forward(seg, image).probs;

  seg.net().zero_grad();
  ap.net().zero_grad();
  const Tensor input = concat_channels(image, probs);
  const auto cache = ap.net().forward(input);
  const auto mse = metrics::mse_loss(cache.output(), Tensor({2, 3}, 0.5f));
  ap.net().backward(cache, mse.grad, ap.net().layer_count(), false);

  double seg_grad = 0.0, ap_grad = 0.0;
  for (const auto& p : seg.net().params()) {
    for (float g : p.grad.data()) seg_grad += std::abs(g);
  }
  for (const auto& p : ap.net().params()) {
    for (float g : p.grad.data()) ap_grad += std::abs(g);
  }
  CHECK(seg_grad == 0.0);
  CHECK(ap_grad > 0.0);
}

TEST_CASE("segmentation gradients match finite differences under Dice+CE") {
  // The training path backpropagates the logit gradient from the loss, so check
  // the network up to its logits with softmax applied inside the loss. A 3e-3
  // step keeps float32 rounding well under the tolerance without crossing many
  // ReLU kinks.
  const std::vector<nn::LayerSpec> logits_layers = {nn::Conv2D{1, 8}, nn::ReLU{}, nn::Conv2D{8, 16},
                                                    nn::ReLU{},       nn::Conv2D{16, 4}};
  nn::Network softmax({nn::ChannelSoftmax{}}, 0);
  const auto labels = random_labels(2 * 5 * 5, 10);
  const nn::LossFn loss = [&](const Tensor& logits) {
    const auto r = metrics::dice_ce_loss(softmax.forward(logits).output(), labels);
    return std::pair{r.loss, r.grad};
  };
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    nn::Network net(logits_layers, seed);
    const auto result = nn::finite_diff_check(net, random_tensor({2, 1, 5, 5}, seed + 100, 0.0f, 1.0f), loss, 3e-3);
    CAPTURE(seed);
    CAPTURE(result.max_rel_error);
    CHECK(result.max_rel_error < 1e-3);
    CHECK(result.skipped * 4 < result.checked);
  }
}

TEST_CASE("accuracy predictor gradients match finite differences under MSE") {
  const Tensor target({2, 3}, {0.9f, 0.2f, 0.5f, 0.1f, 0.7f, 0.4f});
  const nn::LossFn loss = [&](const Tensor& out) {
    const auto r = metrics::mse_loss(out, target);
    return std::pair{r.loss, r.grad};
  };
  // Pooled gradients here are small next to the float32 loss resolution, so the
  // step is larger than for the segmentation net.
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    APModel ap(1, 4, seed);
    const auto result = nn::finite_diff_check(ap.net(), random_tensor({2, 5, 5, 5}, seed + 100, 0.0f, 1.0f), loss, 1e-2);
    CAPTURE(seed);
    CAPTURE(result.max_rel_error);
    CHECK(result.max_rel_error < 1e-3);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto path = fs::temp_directory_path() / "paal_test_models_ckpt.bin";
  SegModel seg(1, 4, 32, 32, 30);
  save_network(path, seg.net());
  SegModel restored(load_network(path), 32, 32);
  const Tensor image = random_tensor({1, 1, 32, 32}, 31, 0.0f, 1.0f);
  CHECK(seg_forward(seg, image).probs == seg_forward(restored, image).probs);
  CHECK(restored.num_classes() == 4);

  APModel ap(1, 4, 32);
  save_network(path, ap.net());
  APModel ap2(load_network(path));
  CHECK(ap2.num_foreground() == 3);
  CHECK_THROWS_AS(SegModel(load_network(path), 32, 32), std::invalid_argument);

  std::ofstream(path, std::ios::app | std::ios::binary).put('\0');
  CHECK_THROWS_WITH(load_network(path), doctest::Contains("trailing"));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('Q');
  }
  CHECK_THROWS_WITH(load_network(path), doctest::Contains("bad magic"));
  fs::remove(path);
}

TEST_CASE("image normalization") {
  data::Dataset ds{1, 2, {{0, {0, 255}, {0, 1}}, {1, {51, 102}, {0, 0}}}};
  const std::vector<std::uint32_t> ids = {1, 0};
  const Tensor t = normalized_images(ds, ids);
  CHECK(t.shape() == Shape{2, 1, 1, 2});
  CHECK(t[0] == doctest::Approx(0.2));
  CHECK(t[1] == doctest::Approx(0.4));
  CHECK(t[3] == 1.0f);
}
