#include "exmap/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "exmap/error.hpp"
#include "exmap/rng.hpp"

namespace exmap::nn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kInvalidArgument, "learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "weight_decay must be >= 0");
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "batch_size must be >= 1");
}

double learning_rate_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  if (config.schedule == LrSchedule::kConstant || total_steps == 0) return config.learning_rate;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(Network& net, const ParamGrads& grads, const TrainConfig& config, std::size_t step,
              std::size_t total_steps) {
  auto params = net.parameters();
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kShape, "sgd_step: " + std::to_string(grads.size()) + " grads for " +
                                       std::to_string(params.size()) + " parameters");
  }
  const double lr = learning_rate_at(config, step, total_steps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw Error(ErrorKind::kShape, "sgd_step: grad " + to_string(grads[i].shape()) +
                                         " vs parameter " + to_string(params[i]->shape()));
    }
    auto p = params[i]->data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * (g[k] + config.weight_decay * p[k]);
  }
}

double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::size_t num_classes) {
  std::vector<std::size_t> correct(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++total[c];
    if (predictions[i] == labels[i]) ++correct[c];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] == 0) continue;
    sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return present ? sum / static_cast<double>(present) : 0.0;
}

TrainResult train_erm(Network net, const data::DatasetSplits& splits, const TrainConfig& config,
                      const TrainOptions& options) {
  config.validate();
  const auto& train = splits.train;
  if (train.size() == 0 || splits.val.size() == 0) {
    throw Error(ErrorKind::kInvalidArgument, "train_erm: empty train or validation split");
  }
  if (!options.sample_weights.empty() && options.sample_weights.size() != train.size()) {
    throw Error(ErrorKind::kShape, "train_erm: sample weight count does not match train split");
  }

  const ModelScore score = options.selector ? options.selector : [&](const Network& m) {
    const auto pred = predict_classes(m, splits.val.images);
    return balanced_accuracy(pred, splits.val.class_labels, splits.val.num_classes);
  };

  TrainResult result;
  result.best_score = score(net);
  result.epoch_scores.push_back(result.best_score);
  result.net = net;

  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(n);
  std::vector<int> batch_labels;
  std::vector<double> batch_weights;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor batch = gather_rows(train.images, idx);
      batch_labels.clear();
      batch_weights.clear();
      for (std::size_t i : idx) {
        batch_labels.push_back(train.class_labels[i]);
        if (!options.sample_weights.empty()) batch_weights.push_back(options.sample_weights[i]);
      }
      auto fwd = forward(net, batch);
      auto loss = cross_entropy(fwd.logits, batch_labels, batch_weights);
      loss_sum += loss.loss * static_cast<double>(idx.size());
      const auto grads = backward(net, fwd.trace, loss.grad_logits);
      sgd_step(net, grads, config, step++, total_steps);
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(n));

    const double s = score(net);
    result.epoch_scores.push_back(s);
    if (s > result.best_score) {
      result.best_score = s;
      result.best_epoch = epoch;
      result.net = net;
    }
  }
  return result;
}

}  // namespace exmap::nn
