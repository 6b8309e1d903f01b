#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "paal/data.hpp"

using namespace paal::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("paal_test_data_" + name);
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate(11, 40);
  const auto b = generate(11, 40);
  const auto c = generate(12, 40);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.size() == 40);
  CHECK(a.height == 32);
  CHECK(a.width == 32);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == i);
}

TEST_CASE("every present class forms exactly one connected component") {
  const auto ds = generate(5, 400);
  CHECK(ds.max_label() <= 3);
  for (const auto& s : ds.samples) {
    for (std::uint8_t j = 1; j <= 3; ++j) {
      const auto comps = component_count(s.mask, ds.height, ds.width, j);
      CHECK(comps == (contains_label(s.mask, j) ? 1u : 0u));
    }
  }
}

TEST_CASE("class occurrence tracks the profile") {
  const auto profile = ClassProfile::default_profile();
  const auto ds = generate(2024, 10000, profile);
  for (std::uint8_t j = 1; j <= 3; ++j) {
    std::size_t hits = 0;
    for (const auto& s : ds.samples) hits += contains_label(s.mask, j);
    const double freq = double(hits) / double(ds.size());
    CAPTURE(int(j));
    CHECK(std::abs(freq - profile.classes[j - 1].occurrence) <= 0.02);
  }
}

TEST_CASE("objects are brighter than background") {
  const auto ds = generate(9, 200);
  double bg = 0.0, c3 = 0.0;
  std::size_t nbg = 0, n3 = 0;
  for (const auto& s : ds.samples) {
    for (std::size_t p = 0; p < ds.pixels(); ++p) {
      if (s.mask[p] == 0) bg += s.image[p], ++nbg;
      if (s.mask[p] == 3) c3 += s.image[p], ++n3;
    }
  }
  REQUIRE(n3 > 0);
  CHECK(bg / nbg == doctest::Approx(40.0).epsilon(0.05));
  CHECK(c3 / n3 == doctest::Approx(220.0).epsilon(0.05));
}

TEST_CASE("profile validation") {
  ClassProfile p = ClassProfile::default_profile();
  p.classes[1].occurrence = 0.0;
  CHECK_THROWS_AS(generate(1, 2, p), std::invalid_argument);
  p = ClassProfile::default_profile();
  p.classes[0].axis_max = 0.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ClassProfile{}.validate(), std::invalid_argument);
}

TEST_CASE("dataset file round trip and rejection") {
  const auto ds = generate(3, 25, ClassProfile::default_profile(), 16, 24);
  const auto path = temp_file("rt.bin");
  write_dataset(path, ds);
  CHECK(fs::file_size(path) == kDatasetHeaderBytes + 25 * 2 * 16 * 24);
  CHECK(read_dataset(path) == ds);

  SUBCASE("bad magic") {
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.put('X');
    }
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("bad magic"), FormatError);
  }
  SUBCASE("truncated records") {
    fs::resize_file(path, fs::file_size(path) - 1);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream(path, std::ios::app | std::ios::binary).put('\0');
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("trailing"), FormatError);
  }
  SUBCASE("empty file") {
    std::ofstream(path, std::ios::trunc);
    CHECK_THROWS_AS(read_dataset(path), FormatError);
  }
  fs::remove(path);
}

TEST_CASE("a header with zero samples is an empty dataset") {
  const auto path = temp_file("empty.bin");
  write_dataset(path, Dataset{32, 32, {}});
  CHECK(fs::file_size(path) == 20);
  const auto ds = read_dataset(path);
  CHECK(ds.size() == 0);
  CHECK(ds.height == 32);
  fs::remove(path);
}

TEST_CASE("missing file is an I/O error, not a format error") {
  CHECK_THROWS_AS(read_dataset(temp_file("does_not_exist.bin")), std::runtime_error);
}

TEST_CASE("five folds partition the sample ids") {
  for (std::size_t n : {5u, 7u, 23u, 100u}) {
    const auto split = split_folds(n, 99);
    std::vector<std::uint32_t> all_val;
    for (const auto& fold : split.folds) {
      CHECK(std::is_sorted(fold.val.begin(), fold.val.end()));
      CHECK(std::is_sorted(fold.train.begin(), fold.train.end()));
      CHECK(fold.train.size() + fold.val.size() == n);
      CHECK(fold.val.size() >= n / 5);
      CHECK(fold.val.size() <= n / 5 + 1);
      std::vector<std::uint32_t> overlap;
      std::set_intersection(fold.train.begin(), fold.train.end(), fold.val.begin(), fold.val.end(),
                            std::back_inserter(overlap));
      CHECK(overlap.empty());
      all_val.insert(all_val.end(), fold.val.begin(), fold.val.end());
    }
    std::sort(all_val.begin(), all_val.end());
    CHECK(all_val.size() == n);
    CHECK(std::adjacent_find(all_val.begin(), all_val.end()) == all_val.end());
  }
  CHECK(split_folds(50, 1).folds[0].val == split_folds(50, 1).folds[0].val);
  CHECK_FALSE(split_folds(50, 1).folds[0].val == split_folds(50, 2).folds[0].val);
  CHECK_THROWS_AS(split_folds(4, 1), std::invalid_argument);
}

TEST_CASE("component counting uses 8-connectivity") {
  // diagonal neighbours join, separated blobs do not
  const std::vector<std::uint8_t> mask = {
      1, 0, 0, 0,
      0, 1, 0, 1,
      0, 0, 0, 1,
      2, 0, 0, 0,
  };
  CHECK(component_count(mask, 4, 4, 1) == 2);
  CHECK(component_count(mask, 4, 4, 2) == 1);
  CHECK(component_count(mask, 4, 4, 3) == 0);
}
