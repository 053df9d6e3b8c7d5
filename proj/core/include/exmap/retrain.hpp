#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/matrix.hpp"
#include "exmap/nn.hpp"
#include "exmap/pseudo_label.hpp"
#include "exmap/train.hpp"

namespace exmap::retrain {

struct DfrConfig {
  std::vector<double> l1_strengths{1.0, 0.7, 0.3, 0.1, 0.07, 0.03, 0.01};
  std::size_t n_sweep_splits = 5;
  std::size_t n_final_subsamples = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kStdFloor = 1e-8;

/// Linear classifier over z-scored features.
struct LastLayer {
  Matrix weights;             // features x classes
  std::vector<double> bias;   // classes
  std::vector<double> mean;   // features
  std::vector<double> std;    // features, >= kStdFloor

  Matrix logits(const Matrix& features) const;
  std::vector<int> predict(const Matrix& features) const;
  /// Dense layer on raw features with the normalisation folded in.
  nn::Dense to_dense() const;
  std::size_t nonzero_weights() const;

  friend bool operator==(const LastLayer&, const LastLayer&) = default;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;
};
/// Per-column mean and population std (floored at kStdFloor).
FeatureStats feature_stats(const Matrix& features);

/// sign(w) * max(|w| - t, 0).
double soft_threshold(double w, double t);

struct FitOptions {
  std::size_t max_iterations = 5000;
  double tolerance = 1e-8;  // stop once the objective decreases by less
  double initial_step = 1.0;
};

struct LogRegFit {
  LastLayer layer;
  std::vector<double> objective;  // value at the start and after every accepted step
  std::size_t iterations = 0;
  bool converged = false;
};

/// Multinomial logistic regression minimising mean cross-entropy +
/// lambda * |W|_1 (bias unpenalised) by proximal gradient with backtracking.
/// Features are z-scored with their own statistics first.
LogRegFit fit_l1_logreg(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                        double lambda, const FitOptions& options = {});

/// Element-wise mean of weights, biases and normalisation stats.
LastLayer average_last_layers(std::span<const LastLayer> layers);

/// min-group-size samples drawn without replacement from every nonempty
/// group, returned in a seeded shuffled order.
std::vector<std::size_t> subsample_balanced(const pseudo::PseudoGroupLabels& groups, std::uint64_t seed);

/// Minimum per-group accuracy over the groups present in `groups`.
double worst_group_accuracy(std::span<const int> predictions, std::span<const int> labels,
                            std::span<const int> groups);

struct DfrReport {
  std::vector<double> l1_strengths;
  std::vector<double> sweep_scores;  // mean held-out worst pseudo-group accuracy per strength
  double chosen_l1 = 0.0;
  std::size_t group_size = 0;        // per-group count of each balanced subsample
  std::size_t num_groups = 0;        // nonempty pseudo-groups
  std::size_t nonzero_weights = 0;   // of the averaged layer

  std::string to_json() const;
};

struct DfrResult {
  nn::Network net;
  LastLayer layer;
  DfrReport report;
};

/// Last-layer retraining on `data` (the retraining split) balanced by
/// `groups`; only the final Dense layer of the returned net differs.
DfrResult dfr_retrain(const nn::Network& net, const data::GroupedDataset& data,
                      const pseudo::PseudoGroupLabels& groups, const DfrConfig& config);

struct JttConfig {
  std::vector<std::size_t> id_epochs{1, 2};
  std::vector<double> upweights{5.0, 20.0, 50.0};
  std::size_t retrain_epochs = 0;  // 0 = the train config's epochs
  std::uint64_t seed = 0;

  void validate() const;
};

struct JttCandidate {
  std::size_t id_epochs = 0;
  double upweight = 0.0;
  std::size_t error_set_size = 0;
  double val_worst_group = 0.0;
  bool fallback = false;  // error set was empty; plain ERM was trained
};

struct JttResult {
  nn::Network net;
  JttCandidate chosen;
  std::vector<JttCandidate> grid;

  std::string to_json() const;
};

/// Loss weights: upweight for samples in the error set, 1 elsewhere.
std::vector<double> jtt_weights(std::span<const int> predictions, std::span<const int> labels, double upweight);

/// Just-train-twice over the (id_epochs, upweight) grid. Every run starts
/// from `init`; the candidate with the best worst pseudo-group accuracy on
/// the validation split (earliest on ties) is returned.
JttResult jtt_retrain(const nn::Network& init, const data::DatasetSplits& splits,
                      const pseudo::PseudoGroupLabels& val_groups, const JttConfig& config,
                      const nn::TrainConfig& train_config);

}  // namespace exmap::retrain
