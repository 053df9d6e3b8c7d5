// exmap: stage-by-stage or end-to-end runs of the heatmap-clustering
// pipeline. Every stage reads and writes artifacts under
// <output>/seed_<s>/, so the subcommands can be chained by hand.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <nlohmann/json.hpp>

#include "exmap/config.hpp"
#include "exmap/error.hpp"
#include "exmap/pipeline.hpp"

namespace {

using namespace exmap;
using json = nlohmann::ordered_json;

// Stable exit codes, one per error category.
int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return 10;
    case ErrorKind::kInvalidArgument: return 11;
    case ErrorKind::kDegenerate: return 12;
    case ErrorKind::kConvergence: return 13;
    case ErrorKind::kIo: return 14;
    case ErrorKind::kFormat: return 15;
    case ErrorKind::kConfig: return 16;
    case ErrorKind::kMissingArtifact: return 17;
  }
  return 1;
}

data::Split parse_split(const std::string& s) {
  for (auto split : {data::Split::kTrain, data::Split::kVal, data::Split::kTest}) {
    if (s == data::split_name(split)) return split;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown split '" + s + "' (expected train|val|test)");
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool json_out = false;
  bool quiet = false;
};

config::PipelineConfig load(const Options& o) {
  auto c = o.config_path.empty() ? config::PipelineConfig{} : config::load_config(o.config_path);
  for (const auto& s : o.overrides) config::apply_override(c, s);
  c.validate();
  return c;
}

std::uint64_t chosen_seed(const Options& o, const config::PipelineConfig& c) { return o.seed.value_or(c.seeds.front()); }

void print_eval(const eval::EvalReport& r, bool as_json) {
  if (as_json) {
    std::cout << eval::report_json(r);
    return;
  }
  std::printf("split %s, %s groups, %zu samples\n", std::string(data::split_name(r.split)).c_str(),
              std::string(eval::group_source_name(r.source)).c_str(), r.count);
  std::printf("worst-group accuracy %.2f%%  mean %.2f%%  adjusted mean %.2f%%\n", 100 * r.worst_group_accuracy,
              100 * r.mean_accuracy, 100 * r.adjusted_mean);
  for (const auto& [id, g] : r.per_group) std::printf("  group %d: %zu samples, %.2f%%\n", id, g.count, 100 * g.accuracy);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heatmap-clustering group-robustness pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-c,--config", o.config_path, "Config file (sectioned key = value, see configs/schema.md)");
  app.add_option("-s,--set", o.overrides, "Override one key, e.g. --set train.epochs=2 (repeatable)");
  app.add_option("--seed", o.seed, "Seed whose run directory a stage works in (default: first configured seed)");
  app.add_flag("--json", o.json_out, "Print results as JSON");
  app.add_flag("-q,--quiet", o.quiet, "No progress messages on stderr");

  struct StageCmd {
    const char* name;
    const char* help;
    void (*fn)(const config::PipelineConfig&, const pipeline::RunPaths&);
  };
  const StageCmd stages[] = {
      {"gen-data", "Generate train/val/test splits as IDX files", pipeline::gen_data},
      {"train-erm", "Train the ERM network", pipeline::train_erm},
      {"heatmaps", "LRP heatmaps for the validation split", pipeline::heatmaps},
      {"cluster", "Cluster heatmaps (or features) into pseudo-attributes", pipeline::cluster},
      {"pseudo-label", "Cross clusters with classes into pseudo-groups", pipeline::pseudo_label},
      {"retrain", "DFR or JTT with the pseudo-groups", pipeline::retrain},
  };
  std::vector<std::pair<CLI::App*, const StageCmd*>> stage_apps;
  for (const auto& s : stages) stage_apps.emplace_back(app.add_subcommand(s.name, s.help), &s);

  auto* report_cmd = app.add_subcommand("report", "Per-seed report.json from the finished stages");

  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy report for a trained model");
  std::string model = "retrained", groups = "true", split = "test";
  bool fg_only = false;
  eval_cmd->add_option("--model", model, "erm|retrained")->check(CLI::IsMember({"erm", "retrained"}));
  eval_cmd->add_option("--groups", groups, "true|pseudo")->check(CLI::IsMember({"true", "pseudo"}));
  eval_cmd->add_option("--split", split, "train|val|test");
  eval_cmd->add_flag("--fg-only", fg_only, "Strip every shortcut from the images first");

  auto* pipe_cmd = app.add_subcommand("pipeline", "Every stage for every seed, then a summary table");
  std::optional<std::size_t> n_seeds;
  pipe_cmd->add_option("--seeds", n_seeds, "Run seeds 0..N-1 instead of the configured list")->check(CLI::PositiveNumber);

  auto* export_cmd = app.add_subcommand("export-heatmap", "Write one stored validation heatmap as a PGM image");
  std::size_t index = 0;
  std::string out_path;
  export_cmd->add_option("--index", index, "Validation sample index")->required();
  export_cmd->add_option("-o,--out", out_path, "Output file (default: <run>/heatmap_<index>.pgm)");

  CLI11_PARSE(app, argc, argv);

  if (!o.quiet) pipeline::set_logger([](const std::string& m) { std::cerr << m << '\n'; });
  try {
    auto cfg = load(o);
    for (const auto& [sub, stage] : stage_apps) {
      if (!sub->parsed()) continue;
      const auto seed = chosen_seed(o, cfg);
      const auto run = pipeline::run_paths(cfg, seed);
      stage->fn(cfg.for_seed(seed), run);
      if (o.json_out) {
        std::cout << json{{"stage", stage->name}, {"seed", seed}, {"run_dir", run.root.string()}}.dump() << '\n';
      } else {
        std::cout << stage->name << ": done (" << run.root.string() << ")\n";
      }
      return 0;
    }
    if (report_cmd->parsed()) {
      const auto seed = chosen_seed(o, cfg);
      const auto c = cfg.for_seed(seed);
      const auto r = pipeline::report(c, pipeline::run_paths(cfg, seed));
      std::cout << pipeline::seed_report_json(c, r);
      return 0;
    }
    if (eval_cmd->parsed()) {
      const auto seed = chosen_seed(o, cfg);
      pipeline::EvalOptions opts;
      opts.model = model == "erm" ? pipeline::Model::kErm : pipeline::Model::kRetrained;
      opts.groups = groups == "true" ? eval::GroupSource::kTrue : eval::GroupSource::kPseudo;
      opts.split = parse_split(split);
      opts.fg_only = fg_only;
      print_eval(pipeline::evaluate_and_save(cfg.for_seed(seed), pipeline::run_paths(cfg, seed), opts), o.json_out);
      return 0;
    }
    if (pipe_cmd->parsed()) {
      if (n_seeds) {
        cfg.seeds.clear();
        for (std::size_t s = 0; s < *n_seeds; ++s) cfg.seeds.push_back(s);
      }
      const auto summary = pipeline::run_pipeline(cfg);
      std::cout << (o.json_out ? pipeline::summary_json(summary) : eval::results_markdown(summary.rows));
      return 0;
    }
    if (export_cmd->parsed()) {
      const auto run = pipeline::run_paths(cfg, chosen_seed(o, cfg));
      const std::filesystem::path out =
          out_path.empty() ? run.root / ("heatmap_" + std::to_string(index) + ".pgm") : std::filesystem::path(out_path);
      pipeline::export_heatmap(run, index, out);
      if (o.json_out) {
        std::cout << json{{"index", index}, {"path", out.string()}}.dump() << '\n';
      } else {
        std::cout << "wrote " << out.string() << '\n';
      }
      return 0;
    }
  } catch (const Error& e) {
    if (o.json_out) {
      std::cout << json{{"error", {{"kind", kind_name(e.kind())}, {"message", e.what()}}}}.dump() << '\n';
    }
    std::cerr << "error [" << kind_name(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
