#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/tensor.hpp"

namespace exmap::data {

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);

/// Spurious signal families the generator can plant.
enum class ShortcutKind {
  kTint,     // whole-image red-vs-green channel bias
  kGlyph,    // 6x6 patch in the top-left (attr 0) or top-right (attr 1) corner
  kTexture,  // low-amplitude diagonal stripes in the border band
};
std::string_view shortcut_name(ShortcutKind kind);
ShortcutKind parse_shortcut(std::string_view name);

/// One split of a spurious-correlation dataset.
///
/// Attributes are binary. With a attributes per sample the combined
/// attribute index is row-major over them (attr[0] most significant), so
/// |A| = 2^a and group_id = class * |A| + attr_index.
struct GroupedDataset {
  Split split = Split::kTrain;
  Tensor images;  // (N, C, H, W), values in [0, 1]
  std::vector<int> class_labels;
  std::vector<ShortcutKind> attr_kinds;
  std::vector<int> attr_values;  // N x attr_kinds.size(), row-major
  std::vector<int> group_ids;
  std::size_t num_classes = 2;

  std::size_t size() const noexcept { return class_labels.size(); }
  std::size_t num_attrs() const noexcept { return attr_kinds.size(); }
  std::size_t attr_cardinality() const noexcept { return std::size_t{1} << attr_kinds.size(); }
  std::size_t num_groups() const noexcept { return num_classes * attr_cardinality(); }

  int attr(std::size_t sample, std::size_t which) const {
    return attr_values[sample * attr_kinds.size() + which];
  }
  /// Combined attribute index of one sample.
  int attr_index(std::size_t sample) const;
  /// Per-sample value of one attribute.
  std::vector<int> attribute(std::size_t which) const;
  /// True if attribute `which` agrees with the class (a common cell).
  bool agrees(std::size_t sample, std::size_t which) const {
    return attr(sample, which) == class_labels[sample];
  }
  std::size_t attr_position(ShortcutKind kind) const;

  /// Count per group id (length num_groups()).
  std::vector<std::size_t> group_counts() const;

  /// Checks the size and group-id bookkeeping invariants; throws kShape.
  void validate() const;

  /// Subset of samples in the given order.
  GroupedDataset subset(const std::vector<std::size_t>& indices) const;
};

/// Recomputes group ids from classes and attributes.
std::vector<int> compute_group_ids(const std::vector<int>& classes,
                                   const std::vector<int>& attr_values, std::size_t num_attrs);

struct SpuriousSpec {
  std::size_t num_classes = 2;
  double correlation = 0.99;
  std::optional<double> val_correlation;   // defaults to `correlation`
  std::optional<double> test_correlation;  // defaults to `correlation`
  std::size_t channels = 3;
  std::size_t side = 28;
  std::size_t train_size = 20000;
  std::size_t val_size = 2000;
  std::size_t test_size = 4000;
  double noise_sigma = 0.05;
  /// Probability that a sample shows the other class's stroke pattern, so
  /// the class signal is less predictive than the shortcut.
  double core_noise = 0.03;
  std::uint64_t seed = 0;
  std::vector<ShortcutKind> shortcuts{ShortcutKind::kTint};

  void validate() const;
};

struct DatasetSplits {
  GroupedDataset train;
  GroupedDataset val;
  GroupedDataset test;
};

/// Single spurious attribute (shortcuts[0], tint by default).
DatasetSplits gen_single_shortcut(const SpuriousSpec& spec);

/// Two spurious attributes, each independently agreeing with the class with
/// probability rho; 8 groups.
DatasetSplits gen_multi_shortcut(const SpuriousSpec& spec);

/// Either of the above depending on spec.shortcuts.size().
DatasetSplits generate(const SpuriousSpec& spec);

/// Copy with the pixel signal of one shortcut neutralized. Labels are kept.
/// Tint: red and green replaced by their per-pixel mean. Glyph: both corner
/// patches reset to background. Texture: border band reset to background.
GroupedDataset strip_spurious(const GroupedDataset& data, ShortcutKind which);

/// Pixel layout shared by the generator, stripping and tests.
namespace layout {
inline constexpr double kBackground = 0.1;
inline constexpr double kStroke = 0.85;
inline constexpr double kTint = 0.1;
inline constexpr double kGlyph = 0.6;
inline constexpr double kTexture = 0.12;
inline constexpr std::size_t kGlyphSide = 6;
inline constexpr std::size_t kBorder = 4;  // class pattern stays inside [kBorder, side-kBorder)

/// True if (y, x) lies in one of the two glyph corner patches.
bool in_glyph_patch(std::size_t y, std::size_t x, std::size_t side);
/// True if (y, x) lies in the texture band (border, minus glyph corners).
bool in_texture_band(std::size_t y, std::size_t x, std::size_t side);
}  // namespace layout

/// Class stroke template (side x side, values in {0,1}) for a class and one
/// of its variants; shared with tests that decode the class from pixels.
std::vector<double> class_template(int cls, std::size_t variant, std::size_t side);
std::size_t num_class_variants();

/// Human-readable group-count table, e.g. for sidecar metadata.
std::map<int, std::size_t> group_count_map(const GroupedDataset& data);

}  // namespace exmap::data
