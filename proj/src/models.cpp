#include "paal/models.hpp"

#include <bit>
#include <fstream>
#include <stdexcept>
#include <string>

namespace paal::models {

using namespace paal::nn;

namespace {

std::vector<LayerSpec> seg_layers(std::size_t image_channels, std::size_t num_classes) {
  return {Conv2D{image_channels, 8}, ReLU{},          Conv2D{8, SegModel::kFeatureDim}, ReLU{},
          Conv2D{SegModel::kFeatureDim, num_classes}, ChannelSoftmax{}};
}

std::vector<LayerSpec> ap_layers(std::size_t input_channels, std::size_t num_foreground) {
  return {Conv2D{input_channels, 8}, ReLU{}, GlobalAvgPool{}, Dense{8, num_foreground}, Sigmoid{}};
}

bool same_layout(const std::vector<LayerSpec>& a, const std::vector<LayerSpec>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (layer_name(a[i]) != layer_name(b[i])) return false;
  }
  return true;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated checkpoint");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

SegModel::SegModel(std::size_t image_channels, std::size_t num_classes, std::uint32_t height,
                   std::uint32_t width, std::uint64_t seed)
    : net_(seg_layers(image_channels, num_classes), seed),
      image_channels_(image_channels),
      num_classes_(num_classes),
      height_(height),
      width_(width) {
  if (num_classes < 2) throw std::invalid_argument("segmentation needs background plus at least one class");
  net_.add_tap("features", kFeatureLayer);
}

SegModel::SegModel(Network net, std::uint32_t height, std::uint32_t width)
    : net_(std::move(net)), height_(height), width_(width) {
  const auto& layers = net_.layers();
  const auto* first = layers.empty() ? nullptr : std::get_if<Conv2D>(&layers.front());
  const auto* last = layers.size() < 2 ? nullptr : std::get_if<Conv2D>(&layers[layers.size() - 2]);
  if (!first || !last || !same_layout(layers, seg_layers(first->in_channels, last->out_channels))) {
    throw std::invalid_argument("network does not have the segmentation model layout");
  }
  image_channels_ = first->in_channels;
  num_classes_ = last->out_channels;
  net_.add_tap("features", kFeatureLayer);
}

void SegModel::check_input(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != image_channels_ || images.dim(2) != height_ ||
      images.dim(3) != width_) {
    throw std::invalid_argument("segmentation input " + to_string(images.shape()) + " does not match [B, " +
                                std::to_string(image_channels_) + ", " + std::to_string(height_) + ", " +
                                std::to_string(width_) + "]");
  }
}

Tensor pooled_features(const SegModel& model, const ForwardCache& cache) {
  const Tensor& act = model.net().tapped(cache, "features");
  const std::size_t batch = act.dim(0), channels = act.dim(1), hw = act.dim(2) * act.dim(3);
  Tensor features({batch, channels});
  for (std::size_t i = 0; i < batch * channels; ++i) {
    double sum = 0.0;
    for (std::size_t s = 0; s < hw; ++s) sum += act[i * hw + s];
    features[i] = static_cast<float>(sum / static_cast<double>(hw));
  }
  return features;
}

SegOutput seg_forward(const SegModel& model, const Tensor& images) {
  model.check_input(images);
  auto cache = model.net().forward(images);
  Tensor features = pooled_features(model, cache);
  return {std::move(cache.outputs.back()), std::move(features)};
}

APModel::APModel(std::size_t image_channels, std::size_t num_classes, std::uint64_t seed)
    : net_(ap_layers(image_channels + num_classes, num_classes - 1), seed),
      input_channels_(image_channels + num_classes),
      num_foreground_(num_classes - 1) {
  if (num_classes < 2) throw std::invalid_argument("accuracy predictor needs at least one foreground class");
}

APModel::APModel(Network net) : net_(std::move(net)) {
  const auto& layers = net_.layers();
  const auto* first = layers.empty() ? nullptr : std::get_if<Conv2D>(&layers.front());
  const auto* dense = layers.size() < 4 ? nullptr : std::get_if<Dense>(&layers[3]);
  if (!first || !dense || !same_layout(layers, ap_layers(first->in_channels, dense->out_features))) {
    throw std::invalid_argument("network does not have the accuracy predictor layout");
  }
  input_channels_ = first->in_channels;
  num_foreground_ = dense->out_features;
}

Tensor concat_channels(const Tensor& image, const Tensor& probs) {
  if (image.rank() != 4 || probs.rank() != 4 || image.dim(0) != probs.dim(0) || image.dim(2) != probs.dim(2) ||
      image.dim(3) != probs.dim(3)) {
    throw std::invalid_argument("cannot concatenate " + to_string(image.shape()) + " with " +
                                to_string(probs.shape()));
  }
  const std::size_t batch = image.dim(0), ci = image.dim(1), cp = probs.dim(1);
  Tensor out({batch, ci + cp, image.dim(2), image.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    auto dst = out.slice(n);
    auto a = image.slice(n);
    auto b = probs.slice(n);
    std::copy(a.begin(), a.end(), dst.begin());
    std::copy(b.begin(), b.end(), dst.begin() + static_cast<long>(a.size()));
  }
  return out;
}

Tensor ap_forward(const APModel& ap, const Tensor& image, const Tensor& probs) {
  Tensor input = concat_channels(image, probs);
  if (input.dim(1) != ap.input_channels()) {
    throw std::invalid_argument("accuracy predictor expects " + std::to_string(ap.input_channels()) +
                                " input channels, got " + std::to_string(input.dim(1)));
  }
  return ap.net().forward(input).output();
}

Tensor normalized_images(const data::Dataset& dataset, std::span<const std::uint32_t> ids) {
  if (ids.empty()) throw std::invalid_argument("normalized_images needs at least one id");
  const std::size_t pixels = dataset.pixels();
  Tensor out({ids.size(), 1, dataset.height, dataset.width});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const auto& img = dataset.samples.at(ids[n]).image;
    float* dst = out.ptr() + n * pixels;
    for (std::size_t p = 0; p < pixels; ++p) dst[p] = static_cast<float>(img[p]) / 255.0f;
  }
  return out;
}

void save_network(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put_u32(out, static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& layer : net.layers()) {
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::Conv2D));
      put_u32(out, static_cast<std::uint32_t>(c->in_channels));
      put_u32(out, static_cast<std::uint32_t>(c->out_channels));
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::Dense));
      put_u32(out, static_cast<std::uint32_t>(d->in_features));
      put_u32(out, static_cast<std::uint32_t>(d->out_features));
    } else if (std::holds_alternative<ReLU>(layer)) {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::ReLU));
    } else if (std::holds_alternative<Sigmoid>(layer)) {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::Sigmoid));
    } else if (std::holds_alternative<ChannelSoftmax>(layer)) {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::ChannelSoftmax));
    } else {
      put_u32(out, static_cast<std::uint32_t>(LayerTag::GlobalAvgPool));
    }
  }
  for (const auto& p : net.params()) {
    for (float v : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw std::runtime_error("bad magic in checkpoint " + path.string());
  const std::uint32_t count = get_u32(in);
  if (count == 0 || count > 4096) throw std::runtime_error("implausible layer count in checkpoint");
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    switch (static_cast<LayerTag>(get_u32(in))) {
      case LayerTag::Conv2D: {
        const auto a = get_u32(in), b = get_u32(in);
        layers.emplace_back(Conv2D{a, b});
        break;
      }
      case LayerTag::Dense: {
        const auto a = get_u32(in), b = get_u32(in);
        layers.emplace_back(Dense{a, b});
        break;
      }
      case LayerTag::ReLU: layers.emplace_back(ReLU{}); break;
      case LayerTag::Sigmoid: layers.emplace_back(Sigmoid{}); break;
      case LayerTag::ChannelSoftmax: layers.emplace_back(ChannelSoftmax{}); break;
      case LayerTag::GlobalAvgPool: layers.emplace_back(GlobalAvgPool{}); break;
      default: throw std::runtime_error("unknown layer tag in checkpoint");
    }
  }
  Network net(std::move(layers), 0);
  for (auto& p : net.params()) {
    for (auto& v : p.value.data()) v = std::bit_cast<float>(get_u32(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in checkpoint");
  return net;
}

}  // namespace paal::models
