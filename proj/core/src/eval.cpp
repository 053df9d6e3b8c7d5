#include "exmap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "exmap/error.hpp"

namespace exmap::eval {
namespace {

std::string percent(const MeanStd& v, bool with_std) {
  char buf[64];
  if (with_std) {
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * v.mean, 100.0 * v.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v.mean);
  }
  return buf;
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string_view group_source_name(GroupSource source) {
  return source == GroupSource::kTrue ? "true" : "pseudo";
}

EvalReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> group_ids, data::Split split, GroupSource source) {
  if (predictions.size() != labels.size() || labels.size() != group_ids.size()) {
    throw Error(ErrorKind::kShape, "evaluate: predictions, labels and groups differ in length");
  }
  if (labels.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluate: empty dataset");
  EvalReport r;
  r.split = split;
  r.source = source;
  r.count = labels.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& g = r.per_group[group_ids[i]];
    ++g.count;
    if (predictions[i] == labels[i]) {
      ++g.correct;
      ++correct;
    }
  }
  r.worst_group_accuracy = 1.0;
  double sum = 0.0;
  for (auto& [id, g] : r.per_group) {
    g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.count);
    r.worst_group_accuracy = std::min(r.worst_group_accuracy, g.accuracy);
    sum += g.accuracy;
  }
  r.mean_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.adjusted_mean = sum / static_cast<double>(r.per_group.size());
  return r;
}

EvalReport evaluate(const nn::Network& net, const data::GroupedDataset& data, std::span<const int> group_ids,
                    GroupSource source) {
  if (data.size() == 0) throw Error(ErrorKind::kInvalidArgument, "evaluate: empty dataset");
  const auto pred = nn::predict_classes(net, data.images);
  return evaluate_predictions(pred, data.class_labels, group_ids.empty() ? std::span<const int>(data.group_ids) : group_ids,
                              data.split, source);
}

GapReport gap_metrics_from_predictions(std::span<const int> predictions, const data::GroupedDataset& data) {
  if (data.num_attrs() != 2) {
    throw Error(ErrorKind::kInvalidArgument, "gap metrics need a two-attribute dataset, got " +
                                                 std::to_string(data.num_attrs()) + " attribute(s)");
  }
  if (predictions.size() != data.size() || data.size() == 0) {
    throw Error(ErrorKind::kShape, "gap metrics: predictions do not match the dataset");
  }
  std::size_t correct = 0;
  std::size_t hit[3] = {0, 0, 0}, total[3] = {0, 0, 0};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool ok = predictions[i] == data.class_labels[i];
    correct += ok ? 1 : 0;
    const bool u0 = !data.agrees(i, 0), u1 = !data.agrees(i, 1);
    int cond = -1;
    if (u0 && !u1) cond = 0;
    if (!u0 && u1) cond = 1;
    if (u0 && u1) cond = 2;
    if (cond >= 0) {
      ++total[cond];
      hit[cond] += ok ? 1 : 0;
    }
  }
  GapReport g;
  g.mean_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  const auto acc = [&](int c) -> std::optional<double> {
    if (total[c] == 0) return std::nullopt;
    return static_cast<double>(hit[c]) / static_cast<double>(total[c]);
  };
  g.first_only = acc(0);
  g.second_only = acc(1);
  g.both = acc(2);
  const auto gap = [&](const std::optional<double>& a) -> std::optional<double> {
    if (!a) return std::nullopt;
    return *a - g.mean_accuracy;
  };
  g.first_gap = gap(g.first_only);
  g.second_gap = gap(g.second_only);
  g.both_gap = gap(g.both);
  g.first_count = total[0];
  g.second_count = total[1];
  g.both_count = total[2];
  return g;
}

GapReport gap_metrics(const nn::Network& net, const data::GroupedDataset& data) {
  return gap_metrics_from_predictions(nn::predict_classes(net, data.images), data);
}

double fgonly_drop(const EvalReport& full, const EvalReport& stripped) {
  return full.mean_accuracy - stripped.mean_accuracy;
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["split"] = data::split_name(report.split);
  j["groups"] = group_source_name(report.source);
  j["count"] = report.count;
  j["worst_group_accuracy"] = report.worst_group_accuracy;
  j["mean_accuracy"] = report.mean_accuracy;
  j["adjusted_mean"] = report.adjusted_mean;
  auto groups = nlohmann::ordered_json::array();
  for (const auto& [id, g] : report.per_group) {
    groups.push_back({{"group", id}, {"count", g.count}, {"accuracy", g.accuracy}});
  }
  j["per_group"] = groups;
  return j.dump(2) + "\n";
}

std::string gap_json(const GapReport& gaps) {
  nlohmann::ordered_json j;
  j["mean_accuracy"] = gaps.mean_accuracy;
  j["first_only_accuracy"] = optional_json(gaps.first_only);
  j["second_only_accuracy"] = optional_json(gaps.second_only);
  j["both_accuracy"] = optional_json(gaps.both);
  j["first_gap"] = optional_json(gaps.first_gap);
  j["second_gap"] = optional_json(gaps.second_gap);
  j["both_gap"] = optional_json(gaps.both_gap);
  j["counts"] = {gaps.first_count, gaps.second_count, gaps.both_count};
  return j.dump(2) + "\n";
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::string results_markdown(std::span<const ResultRow> rows) {
  std::vector<std::vector<std::string>> cells{{"Method", "WGA (%)", "Mean (%)", "Adj. mean (%)"}};
  for (const auto& r : rows) {
    const bool many = r.wga.size() > 1;
    cells.push_back({r.method, percent(mean_std(r.wga), many), percent(mean_std(r.mean), many),
                     percent(mean_std(r.adjusted), many)});
  }
  // Column widths in code points so "±" aligns.
  const auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(4, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 4; ++c) w[c] = std::max(w[c], width(row[c]));
  }
  std::string out;
  const auto emit = [&](const std::vector<std::string>& row) {
    out += "|";
    for (std::size_t c = 0; c < 4; ++c) {
      const std::string pad(w[c] - width(row[c]), ' ');
      out += " " + (c == 0 ? row[c] + pad : pad + row[c]) + " |";
    }
    out += "\n";
  };
  emit(cells[0]);
  out += "|";
  for (std::size_t c = 0; c < 4; ++c) out += (c == 0 ? " :" : " ") + std::string(w[c] - 1, '-') + (c == 0 ? " |" : ": |");
  out += "\n";
  for (std::size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return out;
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "method,seeds,wga_mean,wga_std,mean_mean,mean_std,adjusted_mean,adjusted_std\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto a = mean_std(r.wga), b = mean_std(r.mean), c = mean_std(r.adjusted);
    std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.wga.size(), a.mean, a.std, b.mean, b.std,
                  c.mean, c.std);
    out += r.method + buf;
  }
  return out;
}

}  // namespace exmap::eval
