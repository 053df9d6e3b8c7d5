#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/nn.hpp"

namespace exmap::eval {

enum class GroupSource { kTrue, kPseudo };
std::string_view group_source_name(GroupSource source);

struct GroupStat {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

/// Accuracies are fractions in [0, 1].
struct EvalReport {
  std::map<int, GroupStat> per_group;  // nonempty groups only
  double worst_group_accuracy = 0.0;
  double mean_accuracy = 0.0;          // sample-weighted
  double adjusted_mean = 0.0;          // unweighted mean over groups
  std::size_t count = 0;
  data::Split split = data::Split::kTest;
  GroupSource source = GroupSource::kTrue;
};

EvalReport evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const int> group_ids, data::Split split = data::Split::kTest,
                                GroupSource source = GroupSource::kTrue);

/// Argmax predictions of `net`, grouped by `group_ids` (the dataset's true
/// groups when empty).
EvalReport evaluate(const nn::Network& net, const data::GroupedDataset& data,
                    std::span<const int> group_ids = {}, GroupSource source = GroupSource::kTrue);

/// Accuracy on the multi-shortcut conditions, gaps relative to the mean.
/// "Uncommon" means the attribute disagrees with the class. A condition with
/// no samples has neither accuracy nor gap.
struct GapReport {
  double mean_accuracy = 0.0;
  std::optional<double> first_only;   // attr 0 uncommon, attr 1 common
  std::optional<double> second_only;  // attr 1 uncommon, attr 0 common
  std::optional<double> both;         // both uncommon
  std::optional<double> first_gap;
  std::optional<double> second_gap;
  std::optional<double> both_gap;
  std::size_t first_count = 0, second_count = 0, both_count = 0;
};

GapReport gap_metrics_from_predictions(std::span<const int> predictions, const data::GroupedDataset& data);
GapReport gap_metrics(const nn::Network& net, const data::GroupedDataset& data);

/// mean(full) - mean(stripped).
double fgonly_drop(const EvalReport& full, const EvalReport& stripped);

std::string report_json(const EvalReport& report);
std::string gap_json(const GapReport& gaps);

/// One method's metrics over seeds.
struct ResultRow {
  std::string method;
  std::vector<double> wga;
  std::vector<double> mean;
  std::vector<double> adjusted;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // unbiased; 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

/// Table with columns Method, WGA (%), Mean (%), Adj. mean (%); values are
/// shown as mean +- std when there is more than one seed.
std::string results_markdown(std::span<const ResultRow> rows);
std::string results_csv(std::span<const ResultRow> rows);

}  // namespace exmap::eval
