#include "exmap/retrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <iterator>
#include <numeric>
#include <optional>
#include <nlohmann/json.hpp>

#include "exmap/error.hpp"
#include "exmap/rng.hpp"

namespace exmap::retrain {
namespace {

Matrix standardize(const Matrix& x, const std::vector<double>& mean, const std::vector<double>& sd) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) r[j] = (r[j] - mean[j]) / sd[j];
  }
  return out;
}

// Mean cross-entropy of softmax(X W + b); fills the gradients when asked.
double logreg_loss(const Matrix& x, std::span<const int> labels, const Matrix& w, const std::vector<double>& b,
                   Matrix* grad_w, std::vector<double>* grad_b) {
  const std::size_t n = x.rows, d = x.cols, c = w.cols;
  if (grad_w) {
    *grad_w = Matrix(d, c);
    grad_b->assign(c, 0.0);
  }
  double loss = 0.0;
  std::vector<double> z(c);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    for (std::size_t k = 0; k < c; ++k) z[k] = b[k];
    for (std::size_t j = 0; j < d; ++j) {
      const double v = xi[j];
      if (v == 0.0) continue;
      for (std::size_t k = 0; k < c; ++k) z[k] += v * w(j, k);
    }
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(z[k] - m);
    const double lse = m + std::log(s);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += lse - z[y];
    if (grad_w) {
      for (std::size_t k = 0; k < c; ++k) {
        const double p = std::exp(z[k] - lse) - (k == y ? 1.0 : 0.0);
        (*grad_b)[k] += p;
        for (std::size_t j = 0; j < d; ++j) (*grad_w)(j, k) += p * xi[j];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (grad_w) {
    for (double& v : grad_w->data) v *= inv;
    for (double& v : *grad_b) v *= inv;
  }
  return loss * inv;
}

double l1_norm(const Matrix& w) {
  double s = 0.0;
  for (double v : w.data) s += std::abs(v);
  return s;
}

Matrix gather(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), x.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), out.row(r).begin());
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace

void DfrConfig::validate() const {
  if (l1_strengths.empty()) throw Error(ErrorKind::kInvalidArgument, "DFR: l1_strengths is empty");
  for (std::size_t i = 0; i < l1_strengths.size(); ++i) {
    if (!(l1_strengths[i] > 0.0)) throw Error(ErrorKind::kInvalidArgument, "DFR: l1 strengths must be > 0");
    if (i > 0 && !(l1_strengths[i] < l1_strengths[i - 1])) {
      throw Error(ErrorKind::kInvalidArgument, "DFR: l1 strengths must be strictly descending");
    }
  }
  if (n_sweep_splits == 0 || n_final_subsamples == 0) {
    throw Error(ErrorKind::kInvalidArgument, "DFR: split and subsample counts must be >= 1");
  }
}

Matrix LastLayer::logits(const Matrix& features) const {
  if (features.cols != weights.rows) {
    throw Error(ErrorKind::kShape, "last layer expects " + std::to_string(weights.rows) + " features, got " +
                                       std::to_string(features.cols));
  }
  const Matrix x = standardize(features, mean, std);
  Matrix out(x.rows, weights.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < weights.cols; ++k) {
      double z = bias[k];
      for (std::size_t j = 0; j < x.cols; ++j) z += x(i, j) * weights(j, k);
      out(i, k) = z;
    }
  }
  return out;
}

std::vector<int> LastLayer::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<int> out(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) {
    auto r = z.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

nn::Dense LastLayer::to_dense() const {
  const std::size_t d = weights.rows, c = weights.cols;
  nn::Dense out{Tensor({d, c}), Tensor({c})};
  for (std::size_t k = 0; k < c; ++k) {
    double shift = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double w = weights(j, k) / std[j];
      out.weight[j * c + k] = w;
      shift += mean[j] * w;
    }
    out.bias[k] = bias[k] - shift;
  }
  return out;
}

std::size_t LastLayer::nonzero_weights() const {
  return static_cast<std::size_t>(std::count_if(weights.data.begin(), weights.data.end(), [](double v) { return v != 0.0; }));
}

FeatureStats feature_stats(const Matrix& features) {
  const std::size_t n = features.rows, d = features.cols;
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "feature_stats: no samples");
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += features(i, j);
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double t = features(i, j) - s.mean[j];
      s.std[j] += t * t;
    }
  }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kStdFloor);
  return s;
}

double soft_threshold(double w, double t) {
  if (w > t) return w - t;
  if (w < -t) return w + t;
  return 0.0;
}

LogRegFit fit_l1_logreg(const Matrix& features, std::span<const int> labels, std::size_t num_classes, double lambda,
                        const FitOptions& options) {
  const std::size_t n = features.rows, d = features.cols;
  if (labels.size() != n) throw Error(ErrorKind::kShape, "fit_l1_logreg: labels and features differ in length");
  if (n < 2) throw Error(ErrorKind::kInvalidArgument, "fit_l1_logreg needs at least 2 samples");
  if (!(lambda >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "fit_l1_logreg: lambda must be >= 0");
  std::vector<bool> present(num_classes, false);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error(ErrorKind::kInvalidArgument, "fit_l1_logreg: label " + std::to_string(y) + " out of range");
    }
    present[static_cast<std::size_t>(y)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw Error(ErrorKind::kInvalidArgument, "fit_l1_logreg: needs at least 2 classes present");
  }

  LogRegFit fit;
  auto stats = feature_stats(features);
  const Matrix x = standardize(features, stats.mean, stats.std);
  Matrix w(d, num_classes);
  std::vector<double> b(num_classes, 0.0);
  Matrix gw;
  std::vector<double> gb;
  double f = logreg_loss(x, labels, w, b, &gw, &gb);
  double objective = f + lambda * l1_norm(w);
  fit.objective.push_back(objective);
  double step = options.initial_step;

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    Matrix w_new(d, num_classes);
    std::vector<double> b_new(num_classes);
    double f_new = 0.0;
    for (int tries = 0;; ++tries) {
      for (std::size_t i = 0; i < w.data.size(); ++i) {
        w_new.data[i] = soft_threshold(w.data[i] - step * gw.data[i], step * lambda);
      }
      for (std::size_t k = 0; k < num_classes; ++k) b_new[k] = b[k] - step * gb[k];
      f_new = logreg_loss(x, labels, w_new, b_new, nullptr, nullptr);
      double lin = 0.0, quad = 0.0;
      for (std::size_t i = 0; i < w.data.size(); ++i) {
        const double delta = w_new.data[i] - w.data[i];
        lin += gw.data[i] * delta;
        quad += delta * delta;
      }
      for (std::size_t k = 0; k < num_classes; ++k) {
        const double delta = b_new[k] - b[k];
        lin += gb[k] * delta;
        quad += delta * delta;
      }
      if (f_new <= f + lin + quad / (2.0 * step) || tries > 60) break;
      step *= 0.5;
    }
    const double objective_new = f_new + lambda * l1_norm(w_new);
    fit.iterations = it + 1;
    if (!(objective_new <= objective)) {  // rounding-level stall
      fit.converged = true;
      break;
    }
    const double decrease = objective - objective_new;
    w = std::move(w_new);
    b = std::move(b_new);
    objective = objective_new;
    fit.objective.push_back(objective);
    if (decrease < options.tolerance) {
      fit.converged = true;
      break;
    }
    f = logreg_loss(x, labels, w, b, &gw, &gb);
    step *= 1.25;
  }
  fit.layer = LastLayer{std::move(w), std::move(b), std::move(stats.mean), std::move(stats.std)};
  return fit;
}

LastLayer average_last_layers(std::span<const LastLayer> layers) {
  if (layers.empty()) throw Error(ErrorKind::kInvalidArgument, "average_last_layers: nothing to average");
  LastLayer avg = layers.front();
  const auto fold = [](std::vector<double>& acc, const std::vector<double>& x, double count) {
    if (acc.size() != x.size()) throw Error(ErrorKind::kShape, "average_last_layers: layer shapes differ");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (x[i] - acc[i]) / count;
  };
  for (std::size_t r = 1; r < layers.size(); ++r) {
    const double count = static_cast<double>(r + 1);
    fold(avg.weights.data, layers[r].weights.data, count);
    fold(avg.bias, layers[r].bias, count);
    fold(avg.mean, layers[r].mean, count);
    fold(avg.std, layers[r].std, count);
  }
  return avg;
}

std::vector<std::size_t> subsample_balanced(const pseudo::PseudoGroupLabels& groups, std::uint64_t seed) {
  auto members = groups.members();
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& m : members) {
    if (!m.empty()) smallest = std::min(smallest, m.size());
  }
  if (smallest == std::numeric_limits<std::size_t>::max()) {
    throw Error(ErrorKind::kInvalidArgument, "subsample_balanced: no nonempty group");
  }
  // Visit groups by their first sample so that renaming groups does not
  // change the draw.
  std::erase_if(members, [](const auto& m) { return m.empty(); });
  std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (auto& m : members) {
    // Partial Fisher-Yates: the first `smallest` slots are a uniform draw.
    for (std::size_t i = 0; i < smallest; ++i) std::swap(m[i], m[i + rng.below(m.size() - i)]);
    out.insert(out.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(smallest));
  }
  rng.shuffle(std::span<std::size_t>(out));
  return out;
}

double worst_group_accuracy(std::span<const int> predictions, std::span<const int> labels,
                            std::span<const int> groups) {
  if (predictions.size() != labels.size() || labels.size() != groups.size()) {
    throw Error(ErrorKind::kShape, "worst_group_accuracy: length mismatch");
  }
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // group -> (correct, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& t = tally[groups[i]];
    t.first += predictions[i] == labels[i] ? 1 : 0;
    ++t.second;
  }
  if (tally.empty()) throw Error(ErrorKind::kInvalidArgument, "worst_group_accuracy: no samples");
  double worst = 1.0;
  for (const auto& [g, t] : tally) worst = std::min(worst, static_cast<double>(t.first) / static_cast<double>(t.second));
  return worst;
}

std::string DfrReport::to_json() const {
  nlohmann::ordered_json j;
  j["strategy"] = "dfr";
  j["l1_strengths"] = l1_strengths;
  j["sweep_worst_group_accuracy"] = sweep_scores;
  j["chosen_l1"] = chosen_l1;
  j["group_size"] = group_size;
  j["num_groups"] = num_groups;
  j["nonzero_weights"] = nonzero_weights;
  return j.dump(2) + "\n";
}

DfrResult dfr_retrain(const nn::Network& net, const data::GroupedDataset& data, const pseudo::PseudoGroupLabels& groups,
                      const DfrConfig& config) {
  config.validate();
  if (groups.size() != data.size()) {
    throw Error(ErrorKind::kShape, "DFR: " + std::to_string(groups.size()) + " group labels for " +
                                       std::to_string(data.size()) + " samples");
  }
  const Matrix features = nn::penultimate_features(net, data.images);
  const std::size_t c = net.num_classes();

  DfrReport report;
  report.l1_strengths = config.l1_strengths;
  report.sweep_scores.assign(config.l1_strengths.size(), 0.0);
  report.num_groups = groups.num_nonempty();

  for (std::size_t s = 0; s < config.n_sweep_splits; ++s) {
    const auto idx = subsample_balanced(groups, mix_seed(config.seed, 1 + s));
    // Stratified halving: the first half of each group's draw fits, the rest scores.
    std::vector<std::pair<int, std::vector<std::size_t>>> per_group;  // in order of first appearance
    for (std::size_t i : idx) {
      const int g = groups.group_ids[i];
      auto it = std::find_if(per_group.begin(), per_group.end(), [g](const auto& e) { return e.first == g; });
      if (it == per_group.end()) {
        per_group.push_back({g, {}});
        it = std::prev(per_group.end());
      }
      it->second.push_back(i);
    }
    std::vector<std::size_t> fit_idx, held_idx;
    for (const auto& [g, m] : per_group) {
      if (m.size() < 2) {
        throw Error(ErrorKind::kInvalidArgument, "DFR: pseudo-group " + std::to_string(g) + " has " +
                                                     std::to_string(m.size()) +
                                                     " sample(s) after balancing; halving needs at least 2");
      }
      report.group_size = m.size();
      const std::size_t half = m.size() / 2;
      fit_idx.insert(fit_idx.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(half));
      held_idx.insert(held_idx.end(), m.begin() + static_cast<std::ptrdiff_t>(half), m.end());
    }
    const Matrix fx = gather(features, fit_idx), hx = gather(features, held_idx);
    const auto fy = gather(data.class_labels, fit_idx), hy = gather(data.class_labels, held_idx);
    const auto hg = gather(groups.group_ids, held_idx);
    for (std::size_t li = 0; li < config.l1_strengths.size(); ++li) {
      const auto fit = fit_l1_logreg(fx, fy, c, config.l1_strengths[li]);
      report.sweep_scores[li] += worst_group_accuracy(fit.layer.predict(hx), hy, hg) /
                                 static_cast<double>(config.n_sweep_splits);
    }
  }
  const std::size_t best = static_cast<std::size_t>(
      std::max_element(report.sweep_scores.begin(), report.sweep_scores.end()) - report.sweep_scores.begin());
  report.chosen_l1 = config.l1_strengths[best];

  std::vector<LastLayer> layers;
  for (std::size_t r = 0; r < config.n_final_subsamples; ++r) {
    const auto idx = subsample_balanced(groups, mix_seed(config.seed, 1000 + r));
    layers.push_back(
        fit_l1_logreg(gather(features, idx), gather(data.class_labels, idx), c, report.chosen_l1).layer);
  }
  DfrResult out{net, average_last_layers(layers), std::move(report)};
  out.report.nonzero_weights = out.layer.nonzero_weights();
  out.net.set_final_dense(out.layer.to_dense());
  return out;
}

void JttConfig::validate() const {
  if (id_epochs.empty() || upweights.empty()) throw Error(ErrorKind::kInvalidArgument, "JTT: empty grid");
  for (auto e : id_epochs) {
    if (e == 0) throw Error(ErrorKind::kInvalidArgument, "JTT: identification epochs must be >= 1");
  }
  for (double u : upweights) {
    if (!(u >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "JTT: upweight must be >= 1");
  }
}

std::vector<double> jtt_weights(std::span<const int> predictions, std::span<const int> labels, double upweight) {
  if (predictions.size() != labels.size()) throw Error(ErrorKind::kShape, "jtt_weights: length mismatch");
  std::vector<double> w(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) w[i] = predictions[i] == labels[i] ? 1.0 : upweight;
  return w;
}

std::string JttResult::to_json() const {
  nlohmann::ordered_json j;
  j["strategy"] = "jtt";
  auto grid_json = nlohmann::ordered_json::array();
  for (const auto& c : grid) {
    grid_json.push_back({{"id_epochs", c.id_epochs},
                         {"upweight", c.upweight},
                         {"error_set_size", c.error_set_size},
                         {"val_worst_group_accuracy", c.val_worst_group},
                         {"fallback", c.fallback}});
  }
  j["grid"] = grid_json;
  j["chosen"] = {{"id_epochs", chosen.id_epochs}, {"upweight", chosen.upweight}, {"fallback", chosen.fallback}};
  return j.dump(2) + "\n";
}

JttResult jtt_retrain(const nn::Network& init, const data::DatasetSplits& splits,
                      const pseudo::PseudoGroupLabels& val_groups, const JttConfig& config,
                      const nn::TrainConfig& train_config) {
  config.validate();
  train_config.validate();
  if (val_groups.size() != splits.val.size()) {
    throw Error(ErrorKind::kShape, "JTT: pseudo-groups must cover the validation split");
  }
  const auto& val = splits.val;
  const nn::ModelScore val_worst = [&](const nn::Network& net) {
    return worst_group_accuracy(nn::predict_classes(net, val.images), val.class_labels, val_groups.group_ids);
  };

  nn::TrainConfig retrain_cfg = train_config;
  if (config.retrain_epochs > 0) retrain_cfg.epochs = config.retrain_epochs;

  JttResult result;
  bool have = false;
  std::optional<nn::TrainResult> plain;  // shared fallback run
  for (std::size_t e : config.id_epochs) {
    nn::TrainConfig id_cfg = train_config;
    id_cfg.epochs = e;
    id_cfg.seed = mix_seed(config.seed, e);
    nn::TrainOptions id_opts;
    // Keep the last epoch: the score rises with every call.
    id_opts.selector = [calls = 0.0](const nn::Network&) mutable { return calls++; };
    const auto id_net = nn::train_erm(init, splits, id_cfg, id_opts).net;
    const auto pred = nn::predict_classes(id_net, splits.train.images);
    const std::size_t errors = static_cast<std::size_t>(
        std::inner_product(pred.begin(), pred.end(), splits.train.class_labels.begin(), std::size_t{0},
                           std::plus<>(), [](int a, int b) { return a != b ? std::size_t{1} : std::size_t{0}; }));

    for (double up : config.upweights) {
      JttCandidate cand{e, up, errors, 0.0, errors == 0};
      nn::TrainResult run;
      if (errors == 0) {
        if (!plain) plain = nn::train_erm(init, splits, retrain_cfg, nn::TrainOptions{{}, val_worst});
        run = *plain;
      } else {
        nn::TrainOptions opts{jtt_weights(pred, splits.train.class_labels, up), val_worst};
        run = nn::train_erm(init, splits, retrain_cfg, opts);
      }
      cand.val_worst_group = run.best_score;
      result.grid.push_back(cand);
      if (!have || cand.val_worst_group > result.chosen.val_worst_group) {
        have = true;
        result.chosen = cand;
        result.net = std::move(run.net);
      }
    }
  }
  return result;
}

}  // namespace exmap::retrain
