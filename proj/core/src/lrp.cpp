#include "exmap/lrp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>

#include "exmap/error.hpp"

namespace exmap::lrp {
namespace {

Tensor boosted(const Tensor& t, double gamma) {
  Tensor out = t;
  for (auto& v : out.data()) v += gamma * std::max(v, 0.0);
  return out;
}

// Layer whose forward pass yields the rule's z values.
nn::Layer rule_layer(const nn::Layer& layer, Rule rule, double gamma) {
  if (rule == Rule::kEpsilon) return layer;
  if (const auto* d = std::get_if<nn::Dense>(&layer)) {
    return nn::Dense{boosted(d->weight, gamma), boosted(d->bias, gamma)};
  }
  const auto& c = std::get<nn::Conv2d>(layer);
  return nn::Conv2d{boosted(c.kernel, gamma), boosted(c.bias, gamma), c.stride};
}

// R_in = a * vjp(R / stabilized(z)); a zero denominator passes no relevance.
Tensor redistribute(const nn::Layer& layer, const Tensor& input, const Tensor& relevance,
                    double epsilon) {
  const Tensor z = nn::apply_layer(layer, input);
  Tensor s(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double denom = z[i] + epsilon * (z[i] >= 0.0 ? 1.0 : -1.0);
    s[i] = denom == 0.0 ? 0.0 : relevance[i] / denom;
  }
  Tensor out = nn::input_vjp(layer, input, s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= input[i];
  return out;
}

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

void LrpConfig::validate() const {
  if (!(epsilon >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "LRP epsilon must be >= 0");
  if (!(gamma >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "LRP gamma must be >= 0");
  if (downsize && *downsize == 0) throw Error(ErrorKind::kInvalidArgument, "LRP downsize side must be > 0");
}

Matrix HeatmapSet::flattened() const {
  if (maps.empty()) return {};
  const std::size_t d = maps.front().relevance.size();
  Matrix out(maps.size(), d);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].relevance.size() != d) throw Error(ErrorKind::kShape, "heatmaps of unequal size");
    std::copy(maps[i].relevance.data().begin(), maps[i].relevance.data().end(), out.row(i).begin());
  }
  return out;
}

Tensor propagate_relevance(const nn::Network& net, const nn::ForwardTrace& trace,
                           const Tensor& output_relevance, const LrpConfig& config) {
  config.validate();
  if (trace.inputs.size() != net.num_layers()) {
    throw Error(ErrorKind::kInvalidArgument, "LRP: trace does not belong to this network");
  }
  Tensor relevance = output_relevance;
  for (std::size_t li = net.num_layers(); li-- > 0;) {
    const nn::Layer& layer = net.layer(li);
    const Tensor& input = trace.inputs[li];
    switch (nn::kind_of(layer)) {
      case nn::LayerKind::kDense:
      case nn::LayerKind::kConv2d: {
        const Rule rule = nn::kind_of(layer) == nn::LayerKind::kDense ? config.dense_rule : config.conv_rule;
        const double eps = rule == Rule::kEpsilon ? config.epsilon : 0.0;
        relevance = redistribute(rule_layer(layer, rule, config.gamma), input, relevance, eps);
        break;
      }
      case nn::LayerKind::kAvgPool:
        relevance = redistribute(layer, input, relevance, 0.0);
        break;
      case nn::LayerKind::kReLU:
        break;
      case nn::LayerKind::kFlatten:
        relevance = relevance.reshaped(input.shape());
        break;
    }
  }
  return relevance;
}

RelevanceMap lrp_heatmap(const nn::Network& net, const Tensor& x, const LrpConfig& config,
                         std::optional<int> target) {
  auto fwd = nn::forward(net, x);
  if (fwd.logits.dim(0) != 1) throw Error(ErrorKind::kShape, "lrp_heatmap expects a single sample");
  const int cls = target ? *target : argmax(fwd.logits.row(0));
  if (cls < 0 || static_cast<std::size_t>(cls) >= net.num_classes()) {
    throw Error(ErrorKind::kInvalidArgument, "LRP target class " + std::to_string(cls) +
                                                 " out of range [0," + std::to_string(net.num_classes()) + ")");
  }
  Tensor init(fwd.logits.shape());
  init[static_cast<std::size_t>(cls)] = fwd.logits[static_cast<std::size_t>(cls)];
  const Tensor r = propagate_relevance(net, fwd.trace, init, config);
  return RelevanceMap{0, r.reshaped(net.input_shape()), cls};
}

HeatmapSet heatmap_set(const nn::Network& net, const data::GroupedDataset& data, const LrpConfig& config,
                       std::size_t batch) {
  config.validate();
  if (data.size() == 0) throw Error(ErrorKind::kInvalidArgument, "heatmap_set: empty dataset");
  HeatmapSet out;
  out.maps.reserve(data.size());
  const std::size_t c = net.num_classes();
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const std::size_t end = std::min(data.size(), begin + batch);
    auto fwd = nn::forward(net, data.images.slice_rows(begin, end));
    Tensor init(fwd.logits.shape());
    std::vector<int> targets(end - begin);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const int t = config.target_policy == TargetPolicy::kPredicted ? argmax(fwd.logits.row(i))
                                                                     : data.class_labels[begin + i];
      if (t < 0 || static_cast<std::size_t>(t) >= c) {
        throw Error(ErrorKind::kInvalidArgument, "sample " + std::to_string(begin + i) +
                                                     ": LRP target class out of range");
      }
      targets[i] = t;
      init[i * c + static_cast<std::size_t>(t)] = fwd.logits[i * c + static_cast<std::size_t>(t)];
    }
    const Tensor r = propagate_relevance(net, fwd.trace, init, config);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      RelevanceMap map{begin + i, Tensor(net.input_shape(), std::vector<double>(r.row(i).begin(), r.row(i).end())),
                       targets[i]};
      out.maps.push_back(config.downsize ? downsize(map, *config.downsize) : std::move(map));
    }
  }
  return out;
}

RelevanceMap downsize(const RelevanceMap& map, std::size_t side) {
  if (side == 0) throw Error(ErrorKind::kInvalidArgument, "downsize side must be > 0");
  const Tensor& r = map.relevance;
  if (r.rank() != 3) throw Error(ErrorKind::kShape, "downsize expects a (C,H,W) map");
  const std::size_t ch = r.dim(0), h = r.dim(1), w = r.dim(2);
  if (side > h || side > w) {
    throw Error(ErrorKind::kInvalidArgument, "downsize side " + std::to_string(side) +
                                                 " exceeds map size " + to_string(r.shape()));
  }
  std::vector<double> plane(h * w, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) plane[p] += r[c * h * w + p];
  }
  Tensor out({1, side, side});
  for (std::size_t by = 0; by < side; ++by) {
    const std::size_t y0 = by * h / side, y1 = (by + 1) * h / side;
    for (std::size_t bx = 0; bx < side; ++bx) {
      const std::size_t x0 = bx * w / side, x1 = (bx + 1) * w / side;
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) acc += plane[y * w + x];
      }
      out[by * side + bx] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return RelevanceMap{map.sample_index, std::move(out), map.target};
}

}  // namespace exmap::lrp
