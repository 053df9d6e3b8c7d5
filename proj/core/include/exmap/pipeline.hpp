#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/config.hpp"
#include "exmap/eval.hpp"

namespace exmap::pipeline {

namespace fs = std::filesystem;

enum class Stage { kGenData, kTrainErm, kHeatmaps, kCluster, kPseudoLabel, kRetrain, kEvaluate };
std::string_view stage_name(Stage stage);

/// Receives one-line progress messages; none are emitted by default.
using Logger = std::function<void(const std::string&)>;
void set_logger(Logger logger);

/// Artifact locations inside one run directory (<output>/seed_<s>).
struct RunPaths {
  fs::path root;

  fs::path data_dir() const { return root / "data"; }
  fs::path erm() const { return root / "erm.exnn"; }
  fs::path erm_log() const { return root / "erm_train.json"; }
  fs::path heatmaps() const { return root / "heatmaps_val.exhm"; }
  fs::path clusters() const { return root / "clusters.csv"; }
  fs::path eigenvalues() const { return root / "eigenvalues.csv"; }
  fs::path pseudo_labels() const { return root / "pseudo_labels.csv"; }
  fs::path retrained(config::Strategy strategy) const;
  fs::path retrain_report(config::Strategy strategy) const;
  fs::path report() const { return root / "report.json"; }
};

/// Directory of one seed's run under the config's output directory.
RunPaths run_paths(const config::PipelineConfig& config, std::uint64_t seed);

// Each stage reads its inputs from the run directory, throwing
// kMissingArtifact (naming the stage to run first) when one is absent.
// `config` must already be specialised with for_seed().

void gen_data(const config::PipelineConfig& config, const RunPaths& run);
void train_erm(const config::PipelineConfig& config, const RunPaths& run);
void heatmaps(const config::PipelineConfig& config, const RunPaths& run);
/// clusters.csv (sample_index,cluster,method) over the validation split, plus
/// eigenvalues.csv for global spectral clustering.
void cluster(const config::PipelineConfig& config, const RunPaths& run);
void pseudo_label(const config::PipelineConfig& config, const RunPaths& run);
/// No-op for strategy none.
void retrain(const config::PipelineConfig& config, const RunPaths& run);

enum class Model { kErm, kRetrained };

struct EvalOptions {
  Model model = Model::kRetrained;
  eval::GroupSource groups = eval::GroupSource::kTrue;
  data::Split split = data::Split::kTest;
  /// Evaluate on a copy with every shortcut stripped from the images.
  bool fg_only = false;
};

/// Pseudo groups exist only for the validation split.
eval::EvalReport evaluate(const config::PipelineConfig& config, const RunPaths& run, const EvalOptions& options);
/// evaluate() plus writing eval_<model>_<split>_<groups>[_fgonly].json.
eval::EvalReport evaluate_and_save(const config::PipelineConfig& config, const RunPaths& run,
                                   const EvalOptions& options);

/// Row label such as "DFR+G-ExMap" or "JTT+GEORGE".
std::string method_label(const config::PipelineConfig& config);

/// Everything the per-seed report holds.
struct SeedResult {
  std::uint64_t seed = 0;
  eval::EvalReport erm;
  std::optional<eval::EvalReport> retrained;
  double erm_fgonly_drop = 0.0;
  std::optional<double> retrained_fgonly_drop;
  std::optional<eval::GapReport> erm_gaps;
  std::optional<eval::GapReport> retrained_gaps;
  std::size_t pseudo_groups = 0;   // nonempty pseudo-groups on val
  std::optional<double> pseudo_ari;  // pseudo attribute vs true attribute index
};

/// Runs the report stage of one seed (all upstream artifacts must exist)
/// and writes report.json.
SeedResult report(const config::PipelineConfig& config, const RunPaths& run);

/// Every stage for one seed.
SeedResult run_seed(const config::PipelineConfig& config, std::uint64_t seed);

struct PipelineSummary {
  std::vector<SeedResult> seeds;
  std::vector<eval::ResultRow> rows;
};

/// All seeds, then summary.md / summary.csv / summary.json in the output
/// directory (mean +- unbiased std over seeds).
PipelineSummary run_pipeline(const config::PipelineConfig& config);

std::string seed_report_json(const config::PipelineConfig& config, const SeedResult& result);
std::string summary_json(const PipelineSummary& summary);

/// Heatmap `index` of the stored validation heatmaps as an 8-bit PGM.
void export_heatmap(const RunPaths& run, std::size_t index, const fs::path& out);

}  // namespace exmap::pipeline
