#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/tensor.hpp"

namespace exmap::io {

/// Unsigned-byte IDX array: magic 0x00 0x00 0x08 <ndims>, big-endian u32
/// dimensions, then the payload.
struct IdxArray {
  Shape dims;
  std::vector<std::uint8_t> bytes;
};

std::vector<std::uint8_t> encode_idx(const IdxArray& array);
IdxArray decode_idx(const std::vector<std::uint8_t>& raw);

/// Values are clamped to [0,1] and rounded to the nearest of 256 levels.
std::uint8_t quantize(double value);
IdxArray images_to_idx(const Tensor& images);
Tensor idx_to_images(const IdxArray& array);
IdxArray labels_to_idx(const std::vector<int>& labels, std::size_t columns = 1);
std::vector<int> idx_to_labels(const IdxArray& array);

void write_idx(const std::filesystem::path& path, const IdxArray& array);
IdxArray read_idx(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// key=value sidecar text, one pair per line, '#' comments allowed.
using Metadata = std::map<std::string, std::string>;
std::string format_metadata(const Metadata& meta);
Metadata parse_metadata(const std::string& text);

/// Writes <dir>/<split>-{images,classes,attrs,groups}.idx and <split>.meta.
void save_dataset(const std::filesystem::path& dir, const data::GroupedDataset& data,
                  const Metadata& extra = {});
data::GroupedDataset load_dataset(const std::filesystem::path& dir, data::Split split);
bool dataset_exists(const std::filesystem::path& dir, data::Split split);

}  // namespace exmap::io
