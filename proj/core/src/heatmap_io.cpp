#include <algorithm>
#include <string>

#include "bytes.hpp"
#include "exmap/error.hpp"
#include "exmap/idx.hpp"
#include "exmap/lrp.hpp"

namespace exmap::lrp {

namespace {
constexpr std::uint16_t kHeatmapVersion = 1;
}

std::vector<std::uint8_t> encode_heatmaps(const HeatmapSet& set) {
  detail::ByteWriter w;
  w.raw("EXHM");
  w.u16(kHeatmapVersion);
  w.u64(set.maps.size());
  Shape shape = set.maps.empty() ? Shape{1, 0, 0} : set.maps.front().relevance.shape();
  if (shape.size() != 3) throw Error(ErrorKind::kShape, "EXHM stores (C,H,W) maps");
  w.u32(static_cast<std::uint32_t>(shape[0]));
  w.u32(static_cast<std::uint32_t>(shape[1]));
  w.u32(static_cast<std::uint32_t>(shape[2]));
  for (const auto& m : set.maps) {
    if (m.relevance.shape() != shape) throw Error(ErrorKind::kShape, "EXHM maps must share one shape");
    w.u64(m.sample_index);
    w.i32(m.target);
    for (double v : m.relevance.data()) w.f64(v);
  }
  return w.take();
}

HeatmapSet decode_heatmaps(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "EXHM heatmap store");
  if (bytes.size() < 4 || r.raw(4) != "EXHM") throw Error(ErrorKind::kFormat, "not an EXHM store (bad magic)");
  const auto version = r.u16();
  if (version != kHeatmapVersion) throw Error(ErrorKind::kFormat, "unsupported EXHM version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  const Shape shape{r.u32(), r.u32(), r.u32()};
  const std::size_t per_map = shape_numel(shape);
  const std::size_t record = 12 + 8 * per_map;
  if (count > 0 && (per_map == 0 || r.remaining() / record < count)) {
    throw Error(ErrorKind::kFormat, "truncated EXHM store: " + std::to_string(count) + " maps declared");
  }
  HeatmapSet set;
  set.maps.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    RelevanceMap m;
    m.sample_index = r.u64();
    m.target = r.i32();
    std::vector<double> v(per_map);
    for (auto& x : v) x = r.f64();
    m.relevance = Tensor(shape, std::move(v));
    set.maps.push_back(std::move(m));
  }
  if (!r.done()) throw Error(ErrorKind::kFormat, "EXHM: trailing bytes");
  return set;
}

void save_heatmaps(const std::filesystem::path& path, const HeatmapSet& set) {
  io::write_bytes(path, encode_heatmaps(set));
}

HeatmapSet load_heatmaps(const std::filesystem::path& path) { return decode_heatmaps(io::read_bytes(path)); }

std::vector<std::uint8_t> encode_pgm(const RelevanceMap& map) {
  const Tensor& r = map.relevance;
  if (r.rank() != 3) throw Error(ErrorKind::kShape, "PGM export expects a (C,H,W) map");
  const std::size_t ch = r.dim(0), h = r.dim(1), w = r.dim(2);
  std::vector<double> plane(h * w, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) plane[p] += r[c * h * w + p];
  }
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  const double range = *hi - *lo;
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : plane) out.push_back(range > 0.0 ? io::quantize((v - *lo) / range) : 0);
  return out;
}

void export_pgm(const std::filesystem::path& path, const RelevanceMap& map) {
  io::write_bytes(path, encode_pgm(map));
}

}  // namespace exmap::lrp
