#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/lrp.hpp"
#include "exmap/pseudo_label.hpp"
#include "exmap/retrain.hpp"
#include "exmap/train.hpp"

namespace exmap::config {

enum class Strategy { kDfr, kJtt, kNone };
std::string_view strategy_name(Strategy strategy);
Strategy parse_strategy(std::string_view name);

/// Everything one pipeline run needs. Per-run seeds come from `seeds`; the
/// seed fields inside the sub-configs are overwritten by for_seed().
struct PipelineConfig {
  data::SpuriousSpec data;
  nn::TrainConfig train;
  lrp::LrpConfig lrp;
  pseudo::ClusterChoice cluster;
  pseudo::Source source = pseudo::Source::kGExMap;
  Strategy strategy = Strategy::kDfr;
  retrain::DfrConfig dfr;
  retrain::JttConfig jtt;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "exmap-out";

  /// Validates every sub-config; throws kConfig naming the section.
  void validate() const;
  /// Copy with every seed field set to `seed`.
  PipelineConfig for_seed(std::uint64_t seed) const;
};

/// Parses the sectioned key = value format described in configs/schema.md.
/// Errors are kConfig and start with "line N:". Keys not given keep their
/// defaults.
PipelineConfig parse_config(std::string_view text);

/// Applies one "section.key=value" override on top of a parsed config.
void apply_override(PipelineConfig& config, std::string_view assignment);

/// Reads a config file, then lets EXMAP_OUT replace the output directory.
PipelineConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const PipelineConfig& config);

}  // namespace exmap::config
