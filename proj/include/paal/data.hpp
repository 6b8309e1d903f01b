#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace paal::data {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::uint32_t id = 0;
  std::vector<std::uint8_t> image;  // h*w grayscale
  std::vector<std::uint8_t> mask;   // h*w labels, 0 = background

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t pixels() const noexcept { return std::size_t{height} * width; }
  const Sample& operator[](std::size_t i) const { return samples[i]; }
  /// Largest label present in any mask.
  std::uint8_t max_label() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct ClassSpec {
  double occurrence;        // probability the class appears in an image, (0, 1]
  double axis_min;          // ellipse semi-axis range in pixels
  double axis_max;
  double intensity;         // mean gray level of the object
  double intensity_jitter;  // per-object uniform offset in [-jitter, +jitter]
};

/// Per-foreground-class generation parameters; entry j-1 describes label j.
struct ClassProfile {
  std::vector<ClassSpec> classes;

  std::size_t num_foreground() const noexcept { return classes.size(); }
  void validate() const;

  /// Three classes with occurrence 0.9 / 0.6 / 0.15 and intensities
  /// 120 / 180 / 220 (+-15); class 3 is the small, rare minority.
  static ClassProfile default_profile();
};

inline constexpr double kBackgroundIntensity = 40.0;
inline constexpr double kPixelNoiseSigma = 10.0;

/// Background at gray 40 with Gaussian pixel noise (sigma 10); each class
/// independently appears with its occurrence probability as one filled ellipse.
/// Later classes are painted over earlier ones; a placement that would split or
/// erase an earlier class is redrawn. Fully determined by `seed`.
Dataset generate(std::uint64_t seed, std::size_t n, const ClassProfile& profile = ClassProfile::default_profile(),
                 std::uint32_t height = 32, std::uint32_t width = 32);

/// Little-endian file: "PAALDS1\0", u32 n, u32 h, u32 w, then per sample
/// h*w image bytes followed by h*w mask bytes.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

inline constexpr std::array<char, 8> kDatasetMagic = {'P', 'A', 'A', 'L', 'D', 'S', '1', '\0'};
inline constexpr std::size_t kDatasetHeaderBytes = 20;

inline constexpr std::size_t kFolds = 5;

struct Fold {
  std::vector<std::uint32_t> train;  // ascending
  std::vector<std::uint32_t> val;    // ascending
};

struct FoldSplit {
  std::array<Fold, kFolds> folds;
};

/// Seeded permutation of 0..n-1 cut into five validation chunks whose sizes
/// differ by at most one; each fold trains on the complement.
FoldSplit split_folds(std::size_t n, std::uint64_t seed);

/// Number of connected components (8-connectivity) of `label` in a mask.
std::size_t component_count(std::span<const std::uint8_t> mask, std::uint32_t height, std::uint32_t width,
                            std::uint8_t label);

/// True when the mask contains at least one pixel of `label`.
bool contains_label(std::span<const std::uint8_t> mask, std::uint8_t label);

}  // namespace paal::data
