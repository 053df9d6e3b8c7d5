#include "exmap/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "exmap/error.hpp"

namespace exmap::io {
namespace {

constexpr std::uint8_t kUnsignedByte = 0x08;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::filesystem::path file_for(const std::filesystem::path& dir, data::Split split,
                               const std::string& what) {
  return dir / (std::string(data::split_name(split)) + "-" + what + ".idx");
}

}  // namespace

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) {
    throw Error(ErrorKind::kInvalidArgument, "IDX arrays need 1..255 dimensions");
  }
  if (shape_numel(array.dims) != array.bytes.size()) {
    throw Error(ErrorKind::kShape, "IDX payload size does not match dims " + to_string(array.dims));
  }
  std::vector<std::uint8_t> out{0, 0, kUnsignedByte, static_cast<std::uint8_t>(array.dims.size())};
  for (std::size_t d : array.dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorKind::kInvalidArgument, "IDX dimension exceeds u32");
    }
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(d >> shift));
  }
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

IdxArray decode_idx(const std::vector<std::uint8_t>& raw) {
  if (raw.size() < 4 || raw[0] != 0 || raw[1] != 0) {
    throw Error(ErrorKind::kFormat, "bad IDX magic");
  }
  if (raw[2] != kUnsignedByte) {
    throw Error(ErrorKind::kFormat, "unsupported IDX element type 0x" + std::to_string(raw[2]) +
                                        " (only unsigned byte)");
  }
  const std::size_t ndims = raw[3];
  if (ndims == 0) throw Error(ErrorKind::kFormat, "IDX file declares zero dimensions");
  if (raw.size() < 4 + 4 * ndims) throw Error(ErrorKind::kFormat, "truncated IDX header");
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    std::size_t d = 0;
    for (std::size_t b = 0; b < 4; ++b) d = (d << 8) | raw[4 + 4 * i + b];
    if (d != 0 && total > std::numeric_limits<std::size_t>::max() / d) {
      throw Error(ErrorKind::kFormat, "IDX dimension product overflows");
    }
    total *= d;
    out.dims.push_back(d);
  }
  const std::size_t header = 4 + 4 * ndims;
  if (raw.size() - header < total) {
    throw Error(ErrorKind::kFormat, "truncated IDX payload: expected " + std::to_string(total) +
                                        " bytes, found " + std::to_string(raw.size() - header));
  }
  if (raw.size() - header > total) throw Error(ErrorKind::kFormat, "trailing bytes after IDX payload");
  out.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header), raw.end());
  return out;
}

std::uint8_t quantize(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

IdxArray images_to_idx(const Tensor& images) {
  IdxArray out{images.shape(), {}};
  out.bytes.reserve(images.size());
  for (double v : images.data()) out.bytes.push_back(quantize(v));
  return out;
}

Tensor idx_to_images(const IdxArray& array) {
  std::vector<double> values(array.bytes.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = array.bytes[i] / 255.0;
  return Tensor(array.dims, std::move(values));
}

IdxArray labels_to_idx(const std::vector<int>& labels, std::size_t columns) {
  if (columns == 0 || labels.size() % columns != 0) {
    throw Error(ErrorKind::kShape, "label count not divisible by column count");
  }
  IdxArray out;
  out.dims = columns == 1 ? Shape{labels.size()} : Shape{labels.size() / columns, columns};
  for (int v : labels) {
    if (v < 0 || v > 255) throw Error(ErrorKind::kInvalidArgument, "label outside u8 range");
    out.bytes.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::vector<int> idx_to_labels(const IdxArray& array) {
  return std::vector<int>(array.bytes.begin(), array.bytes.end());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  write_bytes(path, encode_idx(array));
}

IdxArray read_idx(const std::filesystem::path& path) { return decode_idx(read_bytes(path)); }

std::string format_metadata(const Metadata& meta) {
  std::ostringstream out;
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
  return out.str();
}

Metadata parse_metadata(const std::string& text) {
  Metadata meta;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kFormat, "metadata line " + std::to_string(lineno) + ": expected key=value");
    }
    meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return meta;
}

void save_dataset(const std::filesystem::path& dir, const data::GroupedDataset& data,
                  const Metadata& extra) {
  data.validate();
  write_idx(file_for(dir, data.split, "images"), images_to_idx(data.images));
  write_idx(file_for(dir, data.split, "classes"), labels_to_idx(data.class_labels));
  if (data.num_attrs() > 0) {
    write_idx(file_for(dir, data.split, "attrs"), labels_to_idx(data.attr_values, data.num_attrs()));
  }
  write_idx(file_for(dir, data.split, "groups"), labels_to_idx(data.group_ids));

  Metadata meta = extra;
  meta["split"] = std::string(data::split_name(data.split));
  meta["count"] = std::to_string(data.size());
  meta["num_classes"] = std::to_string(data.num_classes);
  std::string kinds;
  for (auto k : data.attr_kinds) kinds += (kinds.empty() ? "" : ",") + std::string(data::shortcut_name(k));
  meta["attr_kinds"] = kinds;
  for (const auto& [g, c] : data::group_count_map(data)) meta["group_count." + std::to_string(g)] = std::to_string(c);
  write_text(dir / (std::string(data::split_name(data.split)) + ".meta"), format_metadata(meta));
}

bool dataset_exists(const std::filesystem::path& dir, data::Split split) {
  return std::filesystem::exists(file_for(dir, split, "images")) &&
         std::filesystem::exists(dir / (std::string(data::split_name(split)) + ".meta"));
}

data::GroupedDataset load_dataset(const std::filesystem::path& dir, data::Split split) {
  const auto meta = parse_metadata(read_text(dir / (std::string(data::split_name(split)) + ".meta")));
  data::GroupedDataset out;
  out.split = split;
  out.num_classes = std::stoul(meta.at("num_classes"));
  const std::string kinds = meta.count("attr_kinds") ? meta.at("attr_kinds") : "";
  std::stringstream ks(kinds);
  std::string k;
  while (std::getline(ks, k, ',')) {
    if (!k.empty()) out.attr_kinds.push_back(data::parse_shortcut(k));
  }
  out.images = idx_to_images(read_idx(file_for(dir, split, "images")));
  out.class_labels = idx_to_labels(read_idx(file_for(dir, split, "classes")));
  if (!out.attr_kinds.empty()) out.attr_values = idx_to_labels(read_idx(file_for(dir, split, "attrs")));
  out.group_ids = idx_to_labels(read_idx(file_for(dir, split, "groups")));
  out.validate();
  return out;
}

}  // namespace exmap::io
