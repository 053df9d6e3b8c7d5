#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "exmap/data.hpp"
#include "exmap/nn.hpp"

namespace exmap::nn {

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  LrSchedule schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;

  /// Throws kInvalidArgument. epochs == 0 is accepted and means "no training".
  void validate() const;
};

/// lr0 for the constant schedule; lr0 * 0.5 * (1 + cos(pi * step / total)) for cosine.
double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

/// p <- p - lr(step) * (grad + weight_decay * p), in place.
void sgd_step(Network& net, const ParamGrads& grads, const TrainConfig& config, std::size_t step,
              std::size_t total_steps);

/// Mean of per-class accuracies; classes absent from the labels are skipped.
double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::size_t num_classes);

using ModelScore = std::function<double(const Network&)>;

struct TrainOptions {
  /// Per-training-sample loss weights (empty = uniform).
  std::vector<double> sample_weights;
  /// Early-stopping score, higher is better. Defaults to class-balanced
  /// validation accuracy.
  ModelScore selector;
};

struct TrainResult {
  Network net;
  std::size_t best_epoch = 0;  // 0 = the initial snapshot
  double best_score = 0.0;
  std::vector<double> epoch_scores;  // index 0 is the initial snapshot
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

/// Minibatch SGD over splits.train with a per-epoch reshuffle seeded from
/// (config.seed, epoch). Returns the snapshot with the best selector score
/// at any epoch boundary (earliest wins ties).
TrainResult train_erm(Network net, const data::DatasetSplits& splits, const TrainConfig& config,
                      const TrainOptions& options = {});

}  // namespace exmap::nn
