#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/cluster.hpp"
#include "exmap/data.hpp"
#include "exmap/lrp.hpp"
#include "exmap/nn.hpp"

namespace exmap::pseudo {

enum class Source { kGExMap, kLExMap, kGeorge, kTrueLabels };
std::string_view source_name(Source source);
Source parse_source(std::string_view name);

/// Pseudo-groups from crossing class labels with inferred attributes:
/// group_id = class * attr_range + attr.
struct PseudoGroupLabels {
  std::vector<int> attr_labels;
  std::vector<int> class_labels;
  std::vector<int> group_ids;
  std::size_t num_classes = 0;
  std::size_t attr_range = 0;
  std::vector<bool> empty_cells;  // per group id
  Source source = Source::kGExMap;

  std::size_t size() const noexcept { return group_ids.size(); }
  std::size_t num_groups() const noexcept { return num_classes * attr_range; }
  std::size_t num_nonempty() const;
  /// Sample indices per group id, in sample order.
  std::vector<std::vector<std::size_t>> members() const;
  /// Checks the crossing formula and the empty-cell flags; throws kShape.
  void validate() const;
};

/// Crosses classes with attributes and flags empty cells.
PseudoGroupLabels cross(std::vector<int> class_labels, std::vector<int> attr_labels,
                        std::size_t num_classes, std::size_t attr_range, Source source);

/// How attribute clusters are formed from the vectors.
struct ClusterChoice {
  cluster::Method method = cluster::Method::kSpectral;
  std::size_t kmeans_k = 4;
  cluster::SpectralOptions spectral{};
  std::uint64_t seed = 0;
};

/// Attribute clusters of one vector set. Spectral ignores the seed.
cluster::ClusterAssignment cluster_vectors(const Matrix& vectors, const ClusterChoice& choice);

/// Heatmaps flattened and scaled to unit L2 norm, one row per sample.
Matrix heatmap_vectors(const lrp::HeatmapSet& heatmaps);

/// Clusters all heatmaps at once, then crosses with the true classes.
PseudoGroupLabels gexmap(const lrp::HeatmapSet& heatmaps, std::span<const int> class_labels,
                         std::size_t num_classes, const ClusterChoice& choice = {});

inline constexpr std::size_t kMinClassSize = 4;

/// Clusters heatmaps separately within each class; attribute ids are local
/// to their class. Each class needs at least kMinClassSize samples.
PseudoGroupLabels lexmap(const lrp::HeatmapSet& heatmaps, std::span<const int> class_labels,
                         std::size_t num_classes, const ClusterChoice& choice = {});

/// Penultimate activations, each row divided by its max absolute entry
/// (all-zero rows stay zero).
Matrix george_features(const nn::Network& net, const data::GroupedDataset& data);

/// Clusters George features globally and crosses with the true classes.
PseudoGroupLabels george(const nn::Network& net, const data::GroupedDataset& data,
                         const ClusterChoice& choice = {});

/// The dataset's own groups, for oracle runs.
PseudoGroupLabels from_true_groups(const data::GroupedDataset& data);

/// CSV with header sample_index,class,attr,group_id,source.
std::string to_csv(const PseudoGroupLabels& labels);
PseudoGroupLabels parse_csv(std::string_view text, std::size_t num_classes);

}  // namespace exmap::pseudo
