#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/matrix.hpp"
#include "exmap/nn.hpp"

namespace exmap::lrp {

enum class Rule {
  kEpsilon,  // z_kl = a_k w_kl, denominator z_l + eps * sign(z_l)
  kGamma,    // z_kl = a_k (w_kl + gamma * max(w_kl, 0)), bias b + gamma * max(b, 0)
};

enum class TargetPolicy { kPredicted, kGiven };

struct LrpConfig {
  double epsilon = 1e-6;
  double gamma = 0.25;
  Rule dense_rule = Rule::kEpsilon;
  Rule conv_rule = Rule::kGamma;
  TargetPolicy target_policy = TargetPolicy::kPredicted;
  /// Side of the square heatmap after channel-summing and pooling; nullopt
  /// keeps full-resolution, per-channel maps.
  std::optional<std::size_t> downsize = 14;

  void validate() const;
};

/// Signed relevance of every input value for one sample.
struct RelevanceMap {
  std::size_t sample_index = 0;
  Tensor relevance;  // (C, H, W), or (1, side, side) once downsized
  int target = 0;
};

/// Relevance maps aligned one-to-one with the samples of a split.
struct HeatmapSet {
  std::vector<RelevanceMap> maps;

  std::size_t size() const noexcept { return maps.size(); }
  /// One row per map (flattened relevance).
  Matrix flattened() const;
};

/// Propagates an output-layer relevance (batch, C) back through a network
/// whose activations are recorded in `trace`; returns input relevance with
/// the batch's shape.
Tensor propagate_relevance(const nn::Network& net, const nn::ForwardTrace& trace,
                           const Tensor& output_relevance, const LrpConfig& config);

/// Relevance of one sample (shape = network input shape) for `target`, or
/// for the argmax logit when no target is given. The output relevance is
/// initialised to the target logit's value.
RelevanceMap lrp_heatmap(const nn::Network& net, const Tensor& x, const LrpConfig& config,
                         std::optional<int> target = std::nullopt);

/// Heatmaps for every sample of `data`, in order. The target class follows
/// config.target_policy; maps are downsized when config.downsize is set.
HeatmapSet heatmap_set(const nn::Network& net, const data::GroupedDataset& data,
                       const LrpConfig& config, std::size_t batch = 64);

/// Sums channels to one plane, then average-pools to side x side. Bins are
/// [floor(i*H/side), floor((i+1)*H/side)), so side need not divide H. The
/// result's sum equals the plane sum divided by the bin area when side
/// divides H.
RelevanceMap downsize(const RelevanceMap& map, std::size_t side);

/// EXHM store: "EXHM" u16 version, u64 count, u32 channels, u32 height,
/// u32 width, then per map u64 sample index, i32 target, f64 payload.
std::vector<std::uint8_t> encode_heatmaps(const HeatmapSet& set);
HeatmapSet decode_heatmaps(const std::vector<std::uint8_t>& bytes);
void save_heatmaps(const std::filesystem::path& path, const HeatmapSet& set);
HeatmapSet load_heatmaps(const std::filesystem::path& path);

/// Binary PGM (P5, 8-bit) of the channel-summed map, min-max normalised.
std::vector<std::uint8_t> encode_pgm(const RelevanceMap& map);
void export_pgm(const std::filesystem::path& path, const RelevanceMap& map);

}  // namespace exmap::lrp
