#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "exmap/data.hpp"
#include "exmap/error.hpp"
#include "exmap/idx.hpp"
#include "oracles.hpp"

using namespace exmap;

namespace {

data::SpuriousSpec small_spec(double rho, std::size_t n, std::uint64_t seed = 0) {
  data::SpuriousSpec s;
  s.correlation = rho;
  s.train_size = n;
  s.val_size = 200;
  s.test_size = 200;
  s.seed = seed;
  return s;
}

// |count - n p| <= 3 sqrt(n p (1-p))
bool within_3_sigma(std::size_t count, std::size_t n, double p) {
  const double mean = static_cast<double>(n) * p;
  return std::abs(static_cast<double>(count) - mean) <= 3.0 * std::sqrt(mean * (1.0 - p));
}

}  // namespace

TEST_CASE("rho 0.99 on 50k training samples puts ~0.5% in each minority group") {
  auto spec = small_spec(0.99, 50000);
  const auto d = data::gen_single_shortcut(spec);
  const auto counts = d.train.group_counts();
  REQUIRE(counts.size() == 4);
  // group = class * 2 + attr; minority cells are (0,1) and (1,0).
  CHECK(within_3_sigma(counts[1], 50000, 0.005));
  CHECK(within_3_sigma(counts[2], 50000, 0.005));
  std::size_t total = 0;
  for (auto c : counts) total += c;
  CHECK(total == 50000);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) agree += d.train.agrees(i, 0) ? 1 : 0;
  CHECK(within_3_sigma(agree, 50000, 0.99));
}

TEST_CASE("rho 0.5 fills all four groups evenly") {
  const auto d = data::gen_single_shortcut(small_spec(0.5, 8000, 3));
  for (auto c : d.train.group_counts()) CHECK(within_3_sigma(c, 8000, 0.25));
}

TEST_CASE("rho 1 leaves exactly two nonempty groups") {
  const auto d = data::gen_single_shortcut(small_spec(1.0, 2000));
  const auto counts = d.train.group_counts();
  CHECK(counts[1] == 0);
  CHECK(counts[2] == 0);
  CHECK(counts[0] + counts[3] == 2000);
}

TEST_CASE("multi-shortcut data has eight groups with independent attributes") {
  auto spec = small_spec(0.95, 20000, 1);
  spec.val_size = spec.test_size = 1000;
  spec.shortcuts = {data::ShortcutKind::kTint, data::ShortcutKind::kGlyph};
  const auto d = data::gen_multi_shortcut(spec);
  CHECK(d.train.num_groups() == 8);
  std::size_t both_uncommon = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    both_uncommon += (!d.train.agrees(i, 0) && !d.train.agrees(i, 1)) ? 1 : 0;
  }
  CHECK(within_3_sigma(both_uncommon, 20000, 0.05 * 0.05));

  spec.correlation = 0.5;
  const auto even = data::gen_multi_shortcut(spec);
  for (auto c : even.train.group_counts()) CHECK(within_3_sigma(c, 20000, 0.125));
}

TEST_CASE("too few samples for a minority group is an error") {
  CHECK_THROWS_AS(data::gen_single_shortcut(small_spec(0.99, 150)), Error);
  CHECK_NOTHROW(data::gen_single_shortcut(small_spec(0.99, 200)));
  CHECK_THROWS_AS(data::gen_single_shortcut(small_spec(0.4, 1000)), Error);
}

TEST_CASE("pixels encode the class pattern and the planted attributes") {
  auto spec = small_spec(0.7, 400, 5);
  spec.core_noise = 0.0;
  spec.shortcuts = {data::ShortcutKind::kTint, data::ShortcutKind::kGlyph};
  const auto d = data::gen_multi_shortcut(spec);
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    CHECK(oracle::decode_class(d.train, i) == d.train.class_labels[i]);
    CHECK(oracle::decode_tint(d.train, i) == d.train.attr(i, 0));
    CHECK(oracle::decode_glyph(d.train, i) == d.train.attr(i, 1));
  }
}

TEST_CASE("core noise swaps the drawn pattern at the configured rate") {
  auto spec = small_spec(0.5, 4000, 2);
  spec.core_noise = 0.2;
  const auto d = data::gen_single_shortcut(spec);
  std::size_t swapped = 0;
  for (std::size_t i = 0; i < d.train.size(); ++i) swapped += oracle::decode_class(d.train, i) != d.train.class_labels[i];
  CHECK(within_3_sigma(swapped, 4000, 0.2));
}

TEST_CASE("generation is a pure function of the spec") {
  const auto a = data::generate(small_spec(0.9, 300, 11));
  const auto b = data::generate(small_spec(0.9, 300, 11));
  const auto c = data::generate(small_spec(0.9, 300, 12));
  CHECK(a.train.images == b.train.images);
  CHECK(a.test.group_ids == b.test.group_ids);
  CHECK_FALSE(a.train.images == c.train.images);
}

TEST_CASE("stripping removes the tint but keeps labels") {
  const auto d = data::gen_single_shortcut(small_spec(0.9, 300));
  const auto s = data::strip_spurious(d.test, data::ShortcutKind::kTint);
  CHECK(s.class_labels == d.test.class_labels);
  CHECK(s.group_ids == d.test.group_ids);
  const std::size_t plane = 28 * 28;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto row = s.images.row(i);
    for (std::size_t p = 0; p < plane; ++p) CHECK(row[p] == row[plane + p]);
  }
  CHECK_THROWS_AS(data::strip_spurious(d.test, data::ShortcutKind::kGlyph), Error);
}

TEST_CASE("IDX round trip quantises to 256 levels") {
  CHECK(io::quantize(0.0) == 0);
  CHECK(io::quantize(1.0) == 255);
  CHECK(io::quantize(2.0) == 255);
  CHECK(io::quantize(-1.0) == 0);
  CHECK(io::quantize(0.5) == 128);
  const auto d = data::gen_single_shortcut(small_spec(0.9, 300));
  const auto back = io::idx_to_images(io::images_to_idx(d.val.images));
  CHECK(back.shape() == d.val.images.shape());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::abs(back[i] - d.val.images[i]) <= 0.5 / 255 + 1e-12);
  CHECK(io::idx_to_images(io::images_to_idx(back)) == back);
}

TEST_CASE("datasets survive a save/load cycle") {
  const auto dir = std::filesystem::temp_directory_path() / "exmap_test_data_io";
  std::filesystem::remove_all(dir);
  auto spec = small_spec(0.95, 1000, 4);
  spec.val_size = spec.test_size = 1000;
  spec.shortcuts = {data::ShortcutKind::kTint, data::ShortcutKind::kTexture};
  const auto d = data::generate(spec);
  io::save_dataset(dir, d.val);
  CHECK(io::dataset_exists(dir, data::Split::kVal));
  CHECK_FALSE(io::dataset_exists(dir, data::Split::kTest));
  const auto back = io::load_dataset(dir, data::Split::kVal);
  CHECK(back.class_labels == d.val.class_labels);
  CHECK(back.attr_values == d.val.attr_values);
  CHECK(back.group_ids == d.val.group_ids);
  CHECK(back.attr_kinds == d.val.attr_kinds);
  CHECK(back.images == io::idx_to_images(io::images_to_idx(d.val.images)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed IDX bytes are format errors") {
  std::vector<std::uint8_t> bad{0, 0, 9, 1, 0, 0, 0, 1, 7};
  try {
    io::decode_idx(bad);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
  std::vector<std::uint8_t> short_payload{0, 0, 8, 1, 0, 0, 0, 3, 7};
  CHECK_THROWS_AS(io::decode_idx(short_payload), Error);
}
