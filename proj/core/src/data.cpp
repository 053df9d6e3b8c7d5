#include "exmap/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "exmap/error.hpp"
#include "exmap/rng.hpp"

namespace exmap::data {
namespace {

// Seven-segment strokes. Class 0 renders digits 0-4, class 1 digits 5-9.
enum Segment : unsigned { kA = 1, kB = 2, kC = 4, kD = 8, kE = 16, kF = 32, kG = 64 };

constexpr std::array<unsigned, 10> kDigitSegments{
    kA | kB | kC | kD | kE | kF,       // 0
    kB | kC,                           // 1
    kA | kB | kG | kE | kD,            // 2
    kA | kB | kG | kC | kD,            // 3
    kF | kG | kB | kC,                 // 4
    kA | kF | kG | kC | kD,            // 5
    kA | kF | kG | kE | kC | kD,       // 6
    kA | kB | kC,                      // 7
    kA | kB | kC | kD | kE | kF | kG,  // 8
    kA | kB | kC | kD | kF | kG,       // 9
};

constexpr std::size_t kDigitTop = 5, kDigitLeft = 9;
constexpr std::size_t kDigitHeight = 18, kDigitWidth = 10, kThick = 2;
constexpr int kJitterY = 1, kJitterX = 2;

void paint(std::vector<double>& canvas, std::size_t side, std::size_t y0, std::size_t x0,
           std::size_t h, std::size_t w) {
  for (std::size_t y = y0; y < y0 + h && y < side; ++y) {
    for (std::size_t x = x0; x < x0 + w && x < side; ++x) canvas[y * side + x] = 1.0;
  }
}

std::vector<double> render_digit(int digit, std::size_t side) {
  std::vector<double> canvas(side * side, 0.0);
  const unsigned seg = kDigitSegments[static_cast<std::size_t>(digit)];
  const std::size_t top = kDigitTop * side / 28, left = kDigitLeft * side / 28;
  const std::size_t h = kDigitHeight * side / 28, w = kDigitWidth * side / 28;
  const std::size_t mid = top + h / 2 - kThick / 2;
  const std::size_t half = h / 2;
  if (seg & kA) paint(canvas, side, top, left, kThick, w);
  if (seg & kG) paint(canvas, side, mid, left, kThick, w);
  if (seg & kD) paint(canvas, side, top + h - kThick, left, kThick, w);
  if (seg & kF) paint(canvas, side, top, left, half, kThick);
  if (seg & kB) paint(canvas, side, top, left + w - kThick, half, kThick);
  if (seg & kE) paint(canvas, side, top + half, left, h - half, kThick);
  if (seg & kC) paint(canvas, side, top + half, left + w - kThick, h - half, kThick);
  return canvas;
}

double glyph_value(std::size_t dy, std::size_t dx) {
  // Hollow square with a centre dot: a compact, high-contrast mark.
  const bool edge = dy == 0 || dx == 0 || dy + 1 == layout::kGlyphSide || dx + 1 == layout::kGlyphSide;
  const bool centre = (dy == 2 || dy == 3) && (dx == 2 || dx == 3);
  return edge || centre ? layout::kGlyph : 0.0;
}

bool texture_on(int attr, std::size_t y, std::size_t x) {
  return attr == 0 ? ((x + y) % 4) < 2 : ((x + 4 * 64 - y) % 4) < 2;
}

void check_rho(double rho, std::string_view which) {
  if (!(rho >= 0.5 && rho <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string(which) + " correlation must lie in [0.5, 1.0], got " + std::to_string(rho));
  }
}

GroupedDataset generate_split(const SpuriousSpec& spec, Split split, std::size_t n, double rho,
                              std::size_t num_attrs) {
  // Smallest cell: every attribute disagrees with the class.
  const double smallest =
      static_cast<double>(n) / static_cast<double>(spec.num_classes) * std::pow(1.0 - rho, num_attrs);
  if (rho < 1.0 && smallest < 1.0) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string(split_name(split)) + " split of " + std::to_string(n) +
                    " samples cannot realize the minority groups at rho=" + std::to_string(rho) +
                    " (expected smallest group " + std::to_string(smallest) + " < 1)");
  }

  const std::size_t side = spec.side, ch = spec.channels;
  const std::size_t plane = side * side;
  GroupedDataset out;
  out.split = split;
  out.num_classes = spec.num_classes;
  out.attr_kinds.assign(spec.shortcuts.begin(), spec.shortcuts.begin() + static_cast<std::ptrdiff_t>(num_attrs));
  out.images = Tensor({n, ch, side, side});
  out.class_labels.resize(n);
  out.attr_values.resize(n * num_attrs);

  std::vector<std::vector<double>> digits(10);
  for (int d = 0; d < 10; ++d) digits[static_cast<std::size_t>(d)] = render_digit(d, side);

  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(split) + 1));
  std::vector<double> pix(ch * plane);
  for (std::size_t s = 0; s < n; ++s) {
    const int cls = static_cast<int>(rng.below(spec.num_classes));
    out.class_labels[s] = cls;
    for (std::size_t a = 0; a < num_attrs; ++a) {
      const bool agree = rng.bernoulli(rho);
      out.attr_values[s * num_attrs + a] = agree ? (cls & 1) : 1 - (cls & 1);
    }

    // The drawn pattern belongs to the other class with probability core_noise.
    const int pattern = rng.bernoulli(spec.core_noise) ? 1 - cls : cls;
    const std::size_t variant = rng.below(num_class_variants());
    const auto& digit = digits[static_cast<std::size_t>(pattern) * num_class_variants() + variant];
    const int jy = static_cast<int>(rng.below(2 * kJitterY + 1)) - kJitterY;
    const int jx = static_cast<int>(rng.below(2 * kJitterX + 1)) - kJitterX;
    const double intensity = layout::kStroke * rng.uniform(0.75, 1.0);

    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const int sy = static_cast<int>(y) - jy, sx = static_cast<int>(x) - jx;
        double base = layout::kBackground;
        if (sy >= 0 && sx >= 0 && sy < static_cast<int>(side) && sx < static_cast<int>(side)) {
          base += intensity * digit[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)];
        }
        for (std::size_t c = 0; c < ch; ++c) pix[c * plane + y * side + x] = base;
      }
    }

    for (std::size_t a = 0; a < num_attrs; ++a) {
      const int attr = out.attr_values[s * num_attrs + a];
      switch (out.attr_kinds[a]) {
        case ShortcutKind::kTint:
          for (std::size_t p = 0; p < plane; ++p) pix[(attr == 0 ? 0 : 1) * plane + p] += layout::kTint;
          break;
        case ShortcutKind::kGlyph: {
          const std::size_t x0 = attr == 0 ? 0 : side - layout::kGlyphSide;
          for (std::size_t dy = 0; dy < layout::kGlyphSide; ++dy) {
            for (std::size_t dx = 0; dx < layout::kGlyphSide; ++dx) {
              for (std::size_t c = 0; c < ch; ++c) pix[c * plane + dy * side + x0 + dx] += glyph_value(dy, dx);
            }
          }
          break;
        }
        case ShortcutKind::kTexture:
          for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
              if (layout::in_texture_band(y, x, side) && texture_on(attr, y, x)) {
                for (std::size_t c = 0; c < ch; ++c) pix[c * plane + y * side + x] += layout::kTexture;
              }
            }
          }
          break;
      }
    }

    auto dst = out.images.row(s);
    for (std::size_t i = 0; i < pix.size(); ++i) {
      dst[i] = std::clamp(pix[i] + spec.noise_sigma * rng.normal(), 0.0, 1.0);
    }
  }
  out.group_ids = compute_group_ids(out.class_labels, out.attr_values, num_attrs);
  return out;
}

DatasetSplits generate_all(const SpuriousSpec& spec, std::size_t num_attrs) {
  spec.validate();
  if (spec.shortcuts.size() < num_attrs) {
    throw Error(ErrorKind::kInvalidArgument, "spec lists " + std::to_string(spec.shortcuts.size()) +
                                                 " shortcut kinds, need " + std::to_string(num_attrs));
  }
  if (num_attrs == 2 && spec.shortcuts[0] == spec.shortcuts[1]) {
    throw Error(ErrorKind::kInvalidArgument, "multi-shortcut data needs two distinct shortcut kinds");
  }
  DatasetSplits splits;
  splits.train = generate_split(spec, Split::kTrain, spec.train_size, spec.correlation, num_attrs);
  splits.val = generate_split(spec, Split::kVal, spec.val_size,
                              spec.val_correlation.value_or(spec.correlation), num_attrs);
  splits.test = generate_split(spec, Split::kTest, spec.test_size,
                               spec.test_correlation.value_or(spec.correlation), num_attrs);
  return splits;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::string_view shortcut_name(ShortcutKind kind) {
  switch (kind) {
    case ShortcutKind::kTint: return "tint";
    case ShortcutKind::kGlyph: return "glyph";
    case ShortcutKind::kTexture: return "texture";
  }
  return "?";
}

ShortcutKind parse_shortcut(std::string_view name) {
  if (name == "tint") return ShortcutKind::kTint;
  if (name == "glyph") return ShortcutKind::kGlyph;
  if (name == "texture") return ShortcutKind::kTexture;
  throw Error(ErrorKind::kInvalidArgument, "unknown attribute kind '" + std::string(name) + "'");
}

int GroupedDataset::attr_index(std::size_t sample) const {
  int idx = 0;
  for (std::size_t a = 0; a < num_attrs(); ++a) idx = idx * 2 + attr(sample, a);
  return idx;
}

std::vector<int> GroupedDataset::attribute(std::size_t which) const {
  std::vector<int> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = attr(i, which);
  return out;
}

std::size_t GroupedDataset::attr_position(ShortcutKind kind) const {
  for (std::size_t a = 0; a < attr_kinds.size(); ++a) {
    if (attr_kinds[a] == kind) return a;
  }
  throw Error(ErrorKind::kInvalidArgument,
              "attribute kind '" + std::string(shortcut_name(kind)) + "' not present in dataset");
}

std::vector<std::size_t> GroupedDataset::group_counts() const {
  std::vector<std::size_t> counts(num_groups(), 0);
  for (int g : group_ids) ++counts.at(static_cast<std::size_t>(g));
  return counts;
}

void GroupedDataset::validate() const {
  const std::size_t n = class_labels.size();
  if (images.rank() != 4 || images.dim(0) != n || group_ids.size() != n ||
      attr_values.size() != n * num_attrs()) {
    throw Error(ErrorKind::kShape, "dataset sizes disagree: images " + to_string(images.shape()) +
                                       ", " + std::to_string(n) + " labels, " +
                                       std::to_string(group_ids.size()) + " group ids");
  }
  if (compute_group_ids(class_labels, attr_values, num_attrs()) != group_ids) {
    throw Error(ErrorKind::kShape, "group ids inconsistent with class/attribute labels");
  }
}

GroupedDataset GroupedDataset::subset(const std::vector<std::size_t>& indices) const {
  GroupedDataset out;
  out.split = split;
  out.num_classes = num_classes;
  out.attr_kinds = attr_kinds;
  out.images = gather_rows(images, indices);
  out.class_labels.reserve(indices.size());
  out.group_ids.reserve(indices.size());
  for (std::size_t i : indices) {
    out.class_labels.push_back(class_labels.at(i));
    out.group_ids.push_back(group_ids.at(i));
    for (std::size_t a = 0; a < num_attrs(); ++a) out.attr_values.push_back(attr(i, a));
  }
  return out;
}

std::vector<int> compute_group_ids(const std::vector<int>& classes, const std::vector<int>& attr_values,
                                   std::size_t num_attrs) {
  std::vector<int> out(classes.size());
  const int card = 1 << num_attrs;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    int idx = 0;
    for (std::size_t a = 0; a < num_attrs; ++a) idx = idx * 2 + attr_values[i * num_attrs + a];
    out[i] = classes[i] * card + idx;
  }
  return out;
}

void SpuriousSpec::validate() const {
  if (num_classes != 2) {
    throw Error(ErrorKind::kInvalidArgument, "only binary classification is supported");
  }
  check_rho(correlation, "train");
  if (val_correlation) check_rho(*val_correlation, "val");
  if (test_correlation) check_rho(*test_correlation, "test");
  if (train_size < 1 || val_size < 1 || test_size < 1) {
    throw Error(ErrorKind::kInvalidArgument, "split sizes must be >= 1");
  }
  if (channels < 2 && std::find(shortcuts.begin(), shortcuts.end(), ShortcutKind::kTint) != shortcuts.end()) {
    throw Error(ErrorKind::kInvalidArgument, "tint shortcut needs at least 2 channels");
  }
  if (side < 2 * layout::kGlyphSide + 4 || side < 16) {
    throw Error(ErrorKind::kInvalidArgument, "image side too small: " + std::to_string(side));
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "noise sigma must be >= 0");
  if (!(core_noise >= 0.0 && core_noise <= 0.5)) {
    throw Error(ErrorKind::kInvalidArgument, "core noise must lie in [0, 0.5]");
  }
  if (shortcuts.empty()) throw Error(ErrorKind::kInvalidArgument, "at least one shortcut kind required");
}

DatasetSplits gen_single_shortcut(const SpuriousSpec& spec) { return generate_all(spec, 1); }

DatasetSplits gen_multi_shortcut(const SpuriousSpec& spec) { return generate_all(spec, 2); }

DatasetSplits generate(const SpuriousSpec& spec) {
  return spec.shortcuts.size() >= 2 ? gen_multi_shortcut(spec) : gen_single_shortcut(spec);
}

GroupedDataset strip_spurious(const GroupedDataset& data, ShortcutKind which) {
  data.attr_position(which);  // throws if absent
  GroupedDataset out = data;
  const std::size_t n = data.size();
  const std::size_t ch = data.images.dim(1), side = data.images.dim(2);
  const std::size_t plane = side * side;
  for (std::size_t s = 0; s < n; ++s) {
    auto px = out.images.row(s);
    switch (which) {
      case ShortcutKind::kTint:
        for (std::size_t p = 0; p < plane; ++p) {
          const double m = 0.5 * (px[p] + px[plane + p]);
          px[p] = m;
          px[plane + p] = m;
        }
        break;
      case ShortcutKind::kGlyph:
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t x = 0; x < side; ++x) {
            if (!layout::in_glyph_patch(y, x, side)) continue;
            for (std::size_t c = 0; c < ch; ++c) px[c * plane + y * side + x] = layout::kBackground;
          }
        }
        break;
      case ShortcutKind::kTexture:
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t x = 0; x < side; ++x) {
            if (!layout::in_texture_band(y, x, side)) continue;
            for (std::size_t c = 0; c < ch; ++c) px[c * plane + y * side + x] = layout::kBackground;
          }
        }
        break;
    }
  }
  return out;
}

namespace layout {

bool in_glyph_patch(std::size_t y, std::size_t x, std::size_t side) {
  return y < kGlyphSide && (x < kGlyphSide || x >= side - kGlyphSide);
}

bool in_texture_band(std::size_t y, std::size_t x, std::size_t side) {
  const bool band = y < kBorder || x < kBorder || y >= side - kBorder || x >= side - kBorder;
  return band && !in_glyph_patch(y, x, side);
}

}  // namespace layout

std::vector<double> class_template(int cls, std::size_t variant, std::size_t side) {
  if (cls < 0 || cls > 1 || variant >= num_class_variants()) {
    throw Error(ErrorKind::kInvalidArgument, "no class template for class " + std::to_string(cls) +
                                                 " variant " + std::to_string(variant));
  }
  return render_digit(cls * static_cast<int>(num_class_variants()) + static_cast<int>(variant), side);
}

std::size_t num_class_variants() { return 5; }

std::map<int, std::size_t> group_count_map(const GroupedDataset& data) {
  std::map<int, std::size_t> out;
  const auto counts = data.group_counts();
  for (std::size_t g = 0; g < counts.size(); ++g) out[static_cast<int>(g)] = counts[g];
  return out;
}

}  // namespace exmap::data
