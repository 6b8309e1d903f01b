#include "paal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "paal/random.hpp"

namespace paal::data {

namespace {

constexpr int kMaxPlacementAttempts = 200;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

struct Ellipse {
  double cx, cy, ax, ay;

  bool covers(std::uint32_t x, std::uint32_t y) const {
    const double dx = (static_cast<double>(x) - cx) / ax;
    const double dy = (static_cast<double>(y) - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  }
};

}  // namespace

std::uint8_t Dataset::max_label() const {
  std::uint8_t m = 0;
  for (const auto& s : samples) {
    for (auto v : s.mask) m = std::max(m, v);
  }
  return m;
}

void ClassProfile::validate() const {
  if (classes.empty() || classes.size() > 254) throw std::invalid_argument("profile needs 1..254 classes");
  for (std::size_t j = 0; j < classes.size(); ++j) {
    const auto& c = classes[j];
    const std::string which = "class " + std::to_string(j + 1);
    if (!(c.occurrence > 0.0 && c.occurrence <= 1.0)) throw std::invalid_argument(which + ": occurrence must be in (0, 1]");
    if (!(c.axis_min >= 1.0 && c.axis_max >= c.axis_min)) throw std::invalid_argument(which + ": need 1 <= axis_min <= axis_max");
    if (c.intensity_jitter < 0.0) throw std::invalid_argument(which + ": negative intensity jitter");
  }
}

ClassProfile ClassProfile::default_profile() {
  return ClassProfile{{
      {0.90, 5.0, 10.0, 120.0, 15.0},
      {0.60, 3.0, 7.0, 180.0, 15.0},
      {0.15, 2.0, 4.0, 220.0, 15.0},
  }};
}

std::size_t component_count(std::span<const std::uint8_t> mask, std::uint32_t height, std::uint32_t width,
                            std::uint8_t label) {
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t components = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (mask[start] != label || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const long y = static_cast<long>(i / width), x = static_cast<long>(i % width);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(height) || nx >= static_cast<long>(width)) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
          if (mask[j] == label && !seen[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
      }
    }
  }
  return components;
}

bool contains_label(std::span<const std::uint8_t> mask, std::uint8_t label) {
  return std::find(mask.begin(), mask.end(), label) != mask.end();
}

Dataset generate(std::uint64_t seed, std::size_t n, const ClassProfile& profile, std::uint32_t height,
                 std::uint32_t width) {
  profile.validate();
  if (height == 0 || width == 0) throw std::invalid_argument("image extents must be positive");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("too many samples");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> pick_x(0, width - 1), pick_y(0, height - 1);
  std::normal_distribution<double> noise(0.0, kPixelNoiseSigma);

  Dataset ds{height, width, {}};
  ds.samples.reserve(n);
  const std::size_t pixels = ds.pixels();
  std::vector<double> intensity(pixels);
  std::vector<std::uint8_t> candidate(pixels);

  for (std::size_t i = 0; i < n; ++i) {
    Sample s{static_cast<std::uint32_t>(i), std::vector<std::uint8_t>(pixels), std::vector<std::uint8_t>(pixels, 0)};
    std::fill(intensity.begin(), intensity.end(), kBackgroundIntensity);
    std::vector<std::uint8_t> present;

    for (std::size_t j = 0; j < profile.classes.size(); ++j) {
      const auto& spec = profile.classes[j];
      if (unit(rng) >= spec.occurrence) continue;
      const auto label = static_cast<std::uint8_t>(j + 1);
      std::uniform_real_distribution<double> axis(spec.axis_min, spec.axis_max);
      std::uniform_real_distribution<double> jitter(-spec.intensity_jitter, spec.intensity_jitter);
      for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        const std::uint32_t cx = pick_x(rng), cy = pick_y(rng);
        Ellipse e{static_cast<double>(cx), static_cast<double>(cy), axis(rng), axis(rng)};
        e.ax = std::min({e.ax, static_cast<double>(cx), static_cast<double>(width - 1 - cx)});
        e.ay = std::min({e.ay, static_cast<double>(cy), static_cast<double>(height - 1 - cy)});
        if (e.ax < 1.0 || e.ay < 1.0) continue;  // degenerate after clamping

        candidate = s.mask;
        for (std::uint32_t y = 0; y < height; ++y) {
          for (std::uint32_t x = 0; x < width; ++x) {
            if (e.covers(x, y)) candidate[std::size_t{y} * width + x] = label;
          }
        }
        const bool keeps_earlier = std::all_of(present.begin(), present.end(), [&](std::uint8_t k) {
          return component_count(candidate, height, width, k) == 1;
        });
        if (!keeps_earlier) continue;

        const double level = spec.intensity + jitter(rng);
        for (std::size_t p = 0; p < pixels; ++p) {
          if (candidate[p] == label) intensity[p] = level;
        }
        s.mask = candidate;
        present.push_back(label);
        break;
      }
    }

    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = std::round(intensity[p] + noise(rng));
      s.image[p] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.samples.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("dataset too large for the file format");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kDatasetMagic.data(), kDatasetMagic.size());
  put_u32(out, static_cast<std::uint32_t>(dataset.samples.size()));
  put_u32(out, dataset.height);
  put_u32(out, dataset.width);
  const std::size_t pixels = dataset.pixels();
  for (const auto& s : dataset.samples) {
    if (s.image.size() != pixels || s.mask.size() != pixels) {
      throw std::invalid_argument("sample " + std::to_string(s.id) + " does not match dataset extents");
    }
    out.write(reinterpret_cast<const char*>(s.image.data()), static_cast<std::streamsize>(pixels));
    out.write(reinterpret_cast<const char*>(s.mask.data()), static_cast<std::streamsize>(pixels));
  }
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> header(kDatasetHeaderBytes);
  in.read(reinterpret_cast<char*>(header.data()), static_cast<std::streamsize>(header.size()));
  if (in.gcount() < static_cast<std::streamsize>(kDatasetMagic.size()) ||
      !std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), header.begin(),
                  [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
    throw FormatError("bad magic in " + path.string());
  }
  if (in.gcount() != static_cast<std::streamsize>(kDatasetHeaderBytes)) {
    throw FormatError("truncated header in " + path.string());
  }
  const std::uint32_t n = get_u32(&header[8]);
  Dataset ds{get_u32(&header[12]), get_u32(&header[16]), {}};
  const std::uint64_t pixels = std::uint64_t{ds.height} * ds.width;
  if (n > 0 && pixels == 0) throw FormatError("zero image extents with nonzero sample count");
  const std::uint64_t record = 2 * pixels;
  if (n > 0 && record > std::numeric_limits<std::uint64_t>::max() / n) throw FormatError("extent overflow");

  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected = kDatasetHeaderBytes + record * n;
  if (file_size < expected) throw FormatError("truncated dataset file " + path.string());
  if (file_size > expected) throw FormatError("trailing bytes after dataset records in " + path.string());
  in.seekg(static_cast<std::streamoff>(kDatasetHeaderBytes));

  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s{i, std::vector<std::uint8_t>(pixels), std::vector<std::uint8_t>(pixels)};
    in.read(reinterpret_cast<char*>(s.image.data()), static_cast<std::streamsize>(pixels));
    in.read(reinterpret_cast<char*>(s.mask.data()), static_cast<std::streamsize>(pixels));
    if (!in) throw FormatError("truncated dataset file " + path.string());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

FoldSplit split_folds(std::size_t n, std::uint64_t seed) {
  if (n < kFolds) throw std::invalid_argument("five-fold split needs at least 5 samples, got " + std::to_string(n));
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  FoldSplit split;
  for (std::size_t k = 0; k < kFolds; ++k) {
    const std::size_t lo = k * n / kFolds, hi = (k + 1) * n / kFolds;
    auto& fold = split.folds[k];
    fold.val.assign(perm.begin() + static_cast<long>(lo), perm.begin() + static_cast<long>(hi));
    fold.train.assign(perm.begin(), perm.begin() + static_cast<long>(lo));
    fold.train.insert(fold.train.end(), perm.begin() + static_cast<long>(hi), perm.end());
    std::sort(fold.val.begin(), fold.val.end());
    std::sort(fold.train.begin(), fold.train.end());
  }
  return split;
}

}  // namespace paal::data
