#include "exmap/pipeline.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <sstream>

#include "exmap/checkpoint.hpp"
#include "exmap/cluster.hpp"
#include "exmap/error.hpp"
#include "exmap/idx.hpp"
#include "exmap/lrp.hpp"
#include "exmap/pseudo_label.hpp"
#include "exmap/retrain.hpp"
#include "exmap/train.hpp"

namespace exmap::pipeline {
namespace {

using json = nlohmann::ordered_json;

Logger g_logger;

void log(const std::string& message) {
  if (g_logger) g_logger(message);
}

void require(const fs::path& path, Stage producer) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kMissingArtifact, "missing " + path.string() + "; run `exmap " +
                                                 std::string(stage_name(producer)) + "` first");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::kIo, "cannot create directory " + dir.string());
}

data::GroupedDataset load_split(const RunPaths& run, data::Split split) {
  if (!io::dataset_exists(run.data_dir(), split)) {
    throw Error(ErrorKind::kMissingArtifact, "missing " + std::string(data::split_name(split)) + " split in " +
                                                 run.data_dir().string() + "; run `exmap gen-data` first");
  }
  return io::load_dataset(run.data_dir(), split);
}

data::DatasetSplits load_splits(const RunPaths& run) {
  return {load_split(run, data::Split::kTrain), load_split(run, data::Split::kVal), load_split(run, data::Split::kTest)};
}

nn::Network load_erm(const RunPaths& run) {
  require(run.erm(), Stage::kTrainErm);
  return nn::load_network(run.erm());
}

Shape sample_shape(const data::GroupedDataset& d) {
  const auto& s = d.images.shape();
  return Shape(s.begin() + 1, s.end());
}

nn::Network initial_net(const config::PipelineConfig& config, const data::GroupedDataset& train) {
  return nn::make_desk_net(sample_shape(train), train.num_classes, config.train.seed);
}

std::string clusters_csv(std::span<const int> labels, std::string_view method) {
  std::ostringstream os;
  os << "sample_index,cluster,method\n";
  for (std::size_t i = 0; i < labels.size(); ++i) os << i << ',' << labels[i] << ',' << method << '\n';
  return os.str();
}

std::vector<int> parse_clusters(const std::string& text, std::size_t expected) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sample_index,cluster,method") {
    throw Error(ErrorKind::kFormat, "clusters.csv: missing or unexpected header");
  }
  std::vector<int> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.find(',', a + 1);
    try {
      if (a == std::string::npos || b == std::string::npos || std::stoul(line.substr(0, a)) != out.size()) {
        throw std::invalid_argument("row");
      }
      out.push_back(std::stoi(line.substr(a + 1, b - a - 1)));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kFormat, "clusters.csv line " + std::to_string(out.size() + 2) + ": malformed row");
    }
    if (out.back() < 0) throw Error(ErrorKind::kFormat, "clusters.csv: negative cluster id");
  }
  if (out.size() != expected) {
    throw Error(ErrorKind::kFormat, "clusters.csv has " + std::to_string(out.size()) + " rows, validation split has " +
                                        std::to_string(expected) + "; rerun `exmap cluster`");
  }
  return out;
}

pseudo::PseudoGroupLabels load_pseudo(const RunPaths& run, const data::GroupedDataset& val) {
  require(run.pseudo_labels(), Stage::kPseudoLabel);
  auto labels = pseudo::parse_csv(io::read_text(run.pseudo_labels()), val.num_classes);
  if (labels.class_labels != val.class_labels) {
    throw Error(ErrorKind::kFormat, "pseudo_labels.csv does not match the validation split; rerun `exmap pseudo-label`");
  }
  return labels;
}

data::GroupedDataset strip_all(data::GroupedDataset d) {
  const auto kinds = d.attr_kinds;
  for (auto kind : kinds) d = data::strip_spurious(d, kind);
  return d;
}

json report_object(const eval::EvalReport& r) { return json::parse(eval::report_json(r)); }
json gap_object(const eval::GapReport& g) { return json::parse(eval::gap_json(g)); }

}  // namespace

void set_logger(Logger logger) { g_logger = std::move(logger); }

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kGenData: return "gen-data";
    case Stage::kTrainErm: return "train-erm";
    case Stage::kHeatmaps: return "heatmaps";
    case Stage::kCluster: return "cluster";
    case Stage::kPseudoLabel: return "pseudo-label";
    case Stage::kRetrain: return "retrain";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

fs::path RunPaths::retrained(config::Strategy strategy) const {
  return root / (std::string(config::strategy_name(strategy)) + ".exnn");
}

fs::path RunPaths::retrain_report(config::Strategy strategy) const {
  return root / (std::string(config::strategy_name(strategy)) + "_report.json");
}

RunPaths run_paths(const config::PipelineConfig& config, std::uint64_t seed) {
  return {config.output_dir / ("seed_" + std::to_string(seed))};
}

void gen_data(const config::PipelineConfig& config, const RunPaths& run) {
  config.validate();
  ensure_dir(run.data_dir());
  log("gen-data: generating " + std::to_string(config.data.train_size) + "/" + std::to_string(config.data.val_size) +
      "/" + std::to_string(config.data.test_size) + " samples");
  const auto splits = data::generate(config.data);
  const io::Metadata meta{{"seed", std::to_string(config.data.seed)}};
  for (const auto* d : {&splits.train, &splits.val, &splits.test}) io::save_dataset(run.data_dir(), *d, meta);
  io::write_text(run.root / "config.ini", config::format_config(config));
}

void train_erm(const config::PipelineConfig& config, const RunPaths& run) {
  const auto splits = load_splits(run);
  log("train-erm: " + std::to_string(config.train.epochs) + " epochs on " + std::to_string(splits.train.size()) +
      " samples");
  const auto result = nn::train_erm(initial_net(config, splits.train), splits, config.train);
  nn::save_network(run.erm(), result.net);
  json j;
  j["best_epoch"] = result.best_epoch;
  j["best_score"] = result.best_score;
  j["epoch_scores"] = result.epoch_scores;
  j["epoch_losses"] = result.epoch_losses;
  io::write_text(run.erm_log(), j.dump(2) + "\n");
}

void heatmaps(const config::PipelineConfig& config, const RunPaths& run) {
  const auto net = load_erm(run);
  const auto val = load_split(run, data::Split::kVal);
  log("heatmaps: LRP over " + std::to_string(val.size()) + " validation samples");
  lrp::save_heatmaps(run.heatmaps(), lrp::heatmap_set(net, val, config.lrp));
}

void cluster(const config::PipelineConfig& config, const RunPaths& run) {
  const auto val = load_split(run, data::Split::kVal);
  std::error_code ec;
  fs::remove(run.eigenvalues(), ec);
  const std::string method(cluster::method_name(config.cluster.method));
  const auto global = [&](const Matrix& vectors) {
    if (config.cluster.method == cluster::Method::kSpectral) {
      const auto r = cluster::spectral_cluster(vectors, config.cluster.spectral);
      io::write_text(run.eigenvalues(), cluster::eigenvalues_csv(r.eigenvalues));
      log("cluster: eigengap picked k=" + std::to_string(r.eigengap_k));
      return r.assignment.labels;
    }
    return cluster::kmeans(vectors, config.cluster.kmeans_k, config.cluster.seed).assignment.labels;
  };
  std::vector<int> labels;
  switch (config.source) {
    case pseudo::Source::kGExMap: {
      require(run.heatmaps(), Stage::kHeatmaps);
      labels = global(pseudo::heatmap_vectors(lrp::load_heatmaps(run.heatmaps())));
      break;
    }
    case pseudo::Source::kLExMap: {
      require(run.heatmaps(), Stage::kHeatmaps);
      labels = pseudo::lexmap(lrp::load_heatmaps(run.heatmaps()), val.class_labels, val.num_classes, config.cluster)
                   .attr_labels;
      break;
    }
    case pseudo::Source::kGeorge:
      labels = global(pseudo::george_features(load_erm(run), val));
      break;
    case pseudo::Source::kTrueLabels:
      labels = pseudo::from_true_groups(val).attr_labels;
      io::write_text(run.clusters(), clusters_csv(labels, "true"));
      return;
  }
  if (labels.size() != val.size()) {
    throw Error(ErrorKind::kFormat, "stored heatmaps do not match the validation split; rerun `exmap heatmaps`");
  }
  io::write_text(run.clusters(), clusters_csv(labels, method));
}

void pseudo_label(const config::PipelineConfig& config, const RunPaths& run) {
  const auto val = load_split(run, data::Split::kVal);
  require(run.clusters(), Stage::kCluster);
  auto attrs = parse_clusters(io::read_text(run.clusters()), val.size());
  const std::size_t range = config.source == pseudo::Source::kTrueLabels
                                ? val.attr_cardinality()
                                : static_cast<std::size_t>(*std::max_element(attrs.begin(), attrs.end())) + 1;
  const auto labels = pseudo::cross(val.class_labels, std::move(attrs), val.num_classes, range, config.source);
  log("pseudo-label: " + std::to_string(labels.num_nonempty()) + " nonempty pseudo-groups");
  io::write_text(run.pseudo_labels(), pseudo::to_csv(labels));
}

void retrain(const config::PipelineConfig& config, const RunPaths& run) {
  if (config.strategy == config::Strategy::kNone) return;
  const auto net = load_erm(run);
  if (config.strategy == config::Strategy::kDfr) {
    const auto val = load_split(run, data::Split::kVal);
    const auto groups = load_pseudo(run, val);
    log("retrain: DFR over " + std::to_string(groups.num_nonempty()) + " pseudo-groups");
    const auto result = retrain::dfr_retrain(net, val, groups, config.dfr);
    nn::save_network(run.retrained(config.strategy), result.net);
    io::write_text(run.retrain_report(config.strategy), result.report.to_json());
    return;
  }
  const auto splits = load_splits(run);
  const auto groups = load_pseudo(run, splits.val);
  log("retrain: JTT grid of " + std::to_string(config.jtt.id_epochs.size() * config.jtt.upweights.size()) + " runs");
  const auto result = retrain::jtt_retrain(initial_net(config, splits.train), splits, groups, config.jtt, config.train);
  nn::save_network(run.retrained(config.strategy), result.net);
  io::write_text(run.retrain_report(config.strategy), result.to_json());
}

eval::EvalReport evaluate(const config::PipelineConfig& config, const RunPaths& run, const EvalOptions& options) {
  nn::Network net;
  if (options.model == Model::kErm) {
    net = load_erm(run);
  } else {
    if (config.strategy == config::Strategy::kNone) {
      throw Error(ErrorKind::kInvalidArgument, "strategy none has no retrained model; evaluate --model erm");
    }
    require(run.retrained(config.strategy), Stage::kRetrain);
    net = nn::load_network(run.retrained(config.strategy));
  }
  auto d = load_split(run, options.split);
  if (options.fg_only) d = strip_all(std::move(d));
  if (options.groups == eval::GroupSource::kTrue) return eval::evaluate(net, d, {}, eval::GroupSource::kTrue);
  if (options.split != data::Split::kVal) {
    throw Error(ErrorKind::kInvalidArgument, "pseudo groups exist only for the val split");
  }
  const auto groups = load_pseudo(run, d);
  return eval::evaluate(net, d, groups.group_ids, eval::GroupSource::kPseudo);
}

eval::EvalReport evaluate_and_save(const config::PipelineConfig& config, const RunPaths& run,
                                   const EvalOptions& options) {
  const auto r = evaluate(config, run, options);
  const std::string name = std::string("eval_") + (options.model == Model::kErm ? "erm" : "retrained") + "_" +
                           std::string(data::split_name(options.split)) + "_" +
                           std::string(eval::group_source_name(options.groups)) + (options.fg_only ? "_fgonly" : "") +
                           ".json";
  io::write_text(run.root / name, eval::report_json(r));
  return r;
}

std::string method_label(const config::PipelineConfig& config) {
  std::string base;
  switch (config.strategy) {
    case config::Strategy::kDfr: base = "DFR"; break;
    case config::Strategy::kJtt: base = "JTT"; break;
    case config::Strategy::kNone: return "ERM";
  }
  switch (config.source) {
    case pseudo::Source::kGExMap: base += "+G-ExMap"; break;
    case pseudo::Source::kLExMap: base += "+L-ExMap"; break;
    case pseudo::Source::kGeorge: base += "+GEORGE"; break;
    case pseudo::Source::kTrueLabels: return base + " (true groups)";
  }
  if (config.cluster.method == cluster::Method::kKMeans) base += " (k-means, k=" + std::to_string(config.cluster.kmeans_k) + ")";
  return base;
}

SeedResult report(const config::PipelineConfig& config, const RunPaths& run) {
  SeedResult r;
  r.seed = config.data.seed;
  const auto test = load_split(run, data::Split::kTest);
  const auto stripped = strip_all(test);
  const auto val = load_split(run, data::Split::kVal);
  const auto groups = load_pseudo(run, val);
  r.pseudo_groups = groups.num_nonempty();
  std::vector<int> true_attr(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) true_attr[i] = val.attr_index(i);
  r.pseudo_ari = cluster::adjusted_rand_index(groups.attr_labels, true_attr);

  const auto score = [&](const nn::Network& net, eval::EvalReport& full, double& drop,
                         std::optional<eval::GapReport>& gaps) {
    const auto pred = nn::predict_classes(net, test.images);
    full = eval::evaluate_predictions(pred, test.class_labels, test.group_ids, data::Split::kTest);
    drop = eval::fgonly_drop(full, eval::evaluate(net, stripped));
    if (test.num_attrs() == 2) gaps = eval::gap_metrics_from_predictions(pred, test);
  };
  score(load_erm(run), r.erm, r.erm_fgonly_drop, r.erm_gaps);
  if (config.strategy != config::Strategy::kNone) {
    require(run.retrained(config.strategy), Stage::kRetrain);
    eval::EvalReport full;
    double drop = 0.0;
    score(nn::load_network(run.retrained(config.strategy)), full, drop, r.retrained_gaps);
    r.retrained = full;
    r.retrained_fgonly_drop = drop;
  }
  io::write_text(run.report(), seed_report_json(config, r));
  return r;
}

SeedResult run_seed(const config::PipelineConfig& base, std::uint64_t seed) {
  const auto config = base.for_seed(seed);
  const auto run = run_paths(base, seed);
  log("seed " + std::to_string(seed) + ": " + run.root.string());
  gen_data(config, run);
  train_erm(config, run);
  heatmaps(config, run);
  cluster(config, run);
  pseudo_label(config, run);
  retrain(config, run);
  return report(config, run);
}

PipelineSummary run_pipeline(const config::PipelineConfig& config) {
  config.validate();
  ensure_dir(config.output_dir);
  PipelineSummary summary;
  eval::ResultRow erm{"ERM", {}, {}, {}};
  eval::ResultRow method{method_label(config), {}, {}, {}};
  for (auto seed : config.seeds) {
    auto r = run_seed(config, seed);
    erm.wga.push_back(r.erm.worst_group_accuracy);
    erm.mean.push_back(r.erm.mean_accuracy);
    erm.adjusted.push_back(r.erm.adjusted_mean);
    if (r.retrained) {
      method.wga.push_back(r.retrained->worst_group_accuracy);
      method.mean.push_back(r.retrained->mean_accuracy);
      method.adjusted.push_back(r.retrained->adjusted_mean);
    }
    summary.seeds.push_back(std::move(r));
  }
  summary.rows.push_back(std::move(erm));
  if (config.strategy != config::Strategy::kNone) summary.rows.push_back(std::move(method));
  io::write_text(config.output_dir / "config.ini", config::format_config(config));
  io::write_text(config.output_dir / "summary.md", eval::results_markdown(summary.rows));
  io::write_text(config.output_dir / "summary.csv", eval::results_csv(summary.rows));
  io::write_text(config.output_dir / "summary.json", summary_json(summary));
  return summary;
}

std::string seed_report_json(const config::PipelineConfig& config, const SeedResult& r) {
  json j;
  j["seed"] = r.seed;
  j["method"] = method_label(config);
  j["pseudo_groups"] = r.pseudo_groups;
  j["pseudo_attribute_ari"] = r.pseudo_ari ? json(*r.pseudo_ari) : json(nullptr);
  j["erm"] = report_object(r.erm);
  j["retrained"] = r.retrained ? report_object(*r.retrained) : json(nullptr);
  j["fgonly_drop"] = {{"erm", r.erm_fgonly_drop},
                      {"retrained", r.retrained_fgonly_drop ? json(*r.retrained_fgonly_drop) : json(nullptr)}};
  if (r.erm_gaps) {
    j["gaps"] = {{"erm", gap_object(*r.erm_gaps)},
                 {"retrained", r.retrained_gaps ? gap_object(*r.retrained_gaps) : json(nullptr)}};
  }
  return j.dump(2) + "\n";
}

std::string summary_json(const PipelineSummary& summary) {
  json j;
  auto seeds = json::array();
  for (const auto& s : summary.seeds) seeds.push_back(s.seed);
  j["seeds"] = seeds;
  auto rows = json::array();
  for (const auto& row : summary.rows) {
    const auto w = eval::mean_std(row.wga), m = eval::mean_std(row.mean), a = eval::mean_std(row.adjusted);
    rows.push_back({{"method", row.method},
                    {"wga", row.wga},
                    {"mean", row.mean},
                    {"adjusted", row.adjusted},
                    {"wga_mean", w.mean},
                    {"wga_std", w.std},
                    {"mean_mean", m.mean},
                    {"mean_std", m.std},
                    {"adjusted_mean", a.mean},
                    {"adjusted_std", a.std}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

void export_heatmap(const RunPaths& run, std::size_t index, const fs::path& out) {
  require(run.heatmaps(), Stage::kHeatmaps);
  const auto set = lrp::load_heatmaps(run.heatmaps());
  if (index >= set.size()) {
    throw Error(ErrorKind::kInvalidArgument,
                "heatmap index " + std::to_string(index) + " out of range (" + std::to_string(set.size()) + " stored)");
  }
  lrp::export_pgm(out, set.maps[index]);
}

}  // namespace exmap::pipeline
