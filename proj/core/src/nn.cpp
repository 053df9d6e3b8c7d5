#include "exmap/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "exmap/error.hpp"
#include "exmap/rng.hpp"

namespace exmap::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void shape_error(std::size_t index, std::string_view what, const Shape& expected,
                              const Shape& actual) {
  throw Error(ErrorKind::kShape, "layer " + std::to_string(index) + " (" + std::string(what) +
                                     "): expected input " + to_string(expected) + ", got " +
                                     to_string(actual));
}

struct ConvGeometry {
  std::size_t in_ch, in_h, in_w, out_ch, kh, kw, stride, out_h, out_w;
};

ConvGeometry geometry(const Conv2d& conv, const Shape& in) {
  ConvGeometry g{};
  g.in_ch = in[0];
  g.in_h = in[1];
  g.in_w = in[2];
  g.out_ch = conv.kernel.dim(0);
  g.kh = conv.kernel.dim(2);
  g.kw = conv.kernel.dim(3);
  g.stride = conv.stride;
  g.out_h = (g.in_h - g.kh) / g.stride + 1;
  g.out_w = (g.in_w - g.kw) / g.stride + 1;
  return g;
}

void conv_forward_sample(const Conv2d& conv, const ConvGeometry& g, const double* in, double* out) {
  const double* k = conv.kernel.data().data();
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
    double* o = out + oc * plane;
    std::fill(o, o + plane, conv.bias[oc]);
    for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
      const double* src = in + ic * g.in_h * g.in_w;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double w = k[((oc * g.in_ch + ic) * g.kh + ky) * g.kw + kx];
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const double* row = src + (oy * g.stride + ky) * g.in_w + kx;
            double* orow = o + oy * g.out_w;
            if (g.stride == 1) {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) orow[ox] += w * row[ox];
            } else {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) orow[ox] += w * row[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

// Accumulates kernel/bias grads; writes the input grad when grad_in != nullptr.
void conv_backward_sample(const Conv2d& conv, const ConvGeometry& g, const double* in,
                          const double* grad_out, double* grad_kernel, double* grad_bias,
                          double* grad_in) {
  const double* k = conv.kernel.data().data();
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
    const double* go = grad_out + oc * plane;
    double bsum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) bsum += go[p];
    grad_bias[oc] += bsum;
    for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
      const double* src = in + ic * g.in_h * g.in_w;
      double* gsrc = grad_in ? grad_in + ic * g.in_h * g.in_w : nullptr;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t kidx = ((oc * g.in_ch + ic) * g.kh + ky) * g.kw + kx;
          const double w = k[kidx];
          double acc = 0.0;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::size_t base = (oy * g.stride + ky) * g.in_w + kx;
            const double* row = src + base;
            const double* grow = go + oy * g.out_w;
            if (g.stride == 1) {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) acc += grow[ox] * row[ox];
              if (gsrc) {
                double* gr = gsrc + base;
                for (std::size_t ox = 0; ox < g.out_w; ++ox) gr[ox] += w * grow[ox];
              }
            } else {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) acc += grow[ox] * row[ox * g.stride];
              if (gsrc) {
                double* gr = gsrc + base;
                for (std::size_t ox = 0; ox < g.out_w; ++ox) gr[ox * g.stride] += w * grow[ox];
              }
            }
          }
          grad_kernel[kidx] += acc;
        }
      }
    }
  }
}

std::size_t batch_size_of(const Tensor& batch) { return batch.rank() ? batch.dim(0) : 0; }

Shape tail_shape(const Tensor& t) { return Shape(t.shape().begin() + 1, t.shape().end()); }

Shape with_batch(std::size_t b, const Shape& s) {
  Shape out{b};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

LayerKind kind_of(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense&) { return LayerKind::kDense; },
                               [](const Conv2d&) { return LayerKind::kConv2d; },
                               [](const ReLU&) { return LayerKind::kReLU; },
                               [](const AvgPool&) { return LayerKind::kAvgPool; },
                               [](const Flatten&) { return LayerKind::kFlatten; }},
                    layer);
}

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "Dense";
    case LayerKind::kConv2d: return "Conv2d";
    case LayerKind::kReLU: return "ReLU";
    case LayerKind::kAvgPool: return "AvgPool";
    case LayerKind::kFlatten: return "Flatten";
  }
  return "?";
}

Shape layer_output_shape(const Layer& layer, const Shape& in, std::size_t index) {
  return std::visit(
      Overloaded{
          [&](const Dense& d) -> Shape {
            if (d.weight.rank() != 2 || d.bias.rank() != 1 || d.bias.dim(0) != d.weight.dim(1)) {
              throw Error(ErrorKind::kShape, "layer " + std::to_string(index) +
                                                 " (Dense): inconsistent weight " +
                                                 to_string(d.weight.shape()) + " / bias " +
                                                 to_string(d.bias.shape()));
            }
            const Shape expected{d.weight.dim(0)};
            if (in != expected) shape_error(index, "Dense", expected, in);
            return {d.weight.dim(1)};
          },
          [&](const Conv2d& c) -> Shape {
            if (c.kernel.rank() != 4 || c.bias.rank() != 1 || c.bias.dim(0) != c.kernel.dim(0) ||
                c.stride == 0) {
              throw Error(ErrorKind::kShape, "layer " + std::to_string(index) +
                                                 " (Conv2d): inconsistent kernel " +
                                                 to_string(c.kernel.shape()));
            }
            if (in.size() != 3 || in[0] != c.kernel.dim(1) || in[1] < c.kernel.dim(2) ||
                in[2] < c.kernel.dim(3)) {
              shape_error(index, "Conv2d", Shape{c.kernel.dim(1), c.kernel.dim(2), c.kernel.dim(3)},
                          in);
            }
            const auto g = geometry(c, in);
            return {g.out_ch, g.out_h, g.out_w};
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const AvgPool& p) -> Shape {
            if (in.size() != 3 || p.window == 0 || in[1] < p.window || in[2] < p.window) {
              shape_error(index, "AvgPool", Shape{0, p.window, p.window}, in);
            }
            return {in[0], in[1] / p.window, in[2] / p.window};
          },
          [&](const Flatten&) -> Shape { return {shape_numel(in)}; }},
      layer);
}

Network::Network(Shape input_shape, std::vector<Layer> layers) : layers_(std::move(layers)) {
  shapes_.clear();
  shapes_.push_back(std::move(input_shape));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(layer_output_shape(layers_[i], shapes_.back(), i));
  }
  if (layers_.empty() || shapes_.back().size() != 1) {
    throw Error(ErrorKind::kShape, "network must end in a 1-D logit vector, got " +
                                       to_string(shapes_.back()));
  }
}

std::size_t Network::final_dense_index() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (std::holds_alternative<Dense>(layers_[i])) return i;
  }
  throw Error(ErrorKind::kShape, "network has no Dense layer");
}

const Dense& Network::final_dense() const { return std::get<Dense>(layers_[final_dense_index()]); }

void Network::set_final_dense(Dense dense) {
  const std::size_t i = final_dense_index();
  const auto& old = std::get<Dense>(layers_[i]);
  if (dense.weight.shape() != old.weight.shape() || dense.bias.shape() != old.bias.shape()) {
    throw Error(ErrorKind::kShape, "replacement final layer " + to_string(dense.weight.shape()) +
                                       " does not match " + to_string(old.weight.shape()));
  }
  layers_[i] = std::move(dense);
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.push_back(&c->kernel);
      out.push_back(&c->bias);
    }
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
  return out;
}

Tensor apply_layer(const Layer& layer, const Tensor& batch) {
  const std::size_t b = batch_size_of(batch);
  const Shape in = tail_shape(batch);
  const Shape out_shape = layer_output_shape(layer, in, 0);
  Tensor out(with_batch(b, out_shape));
  const std::size_t in_n = shape_numel(in);
  const std::size_t out_n = shape_numel(out_shape);
  const double* src = batch.data().data();
  double* dst = out.data().data();

  std::visit(Overloaded{
                 [&](const Dense& d) {
                   const std::size_t nin = d.weight.dim(0), nout = d.weight.dim(1);
                   const double* w = d.weight.data().data();
                   for (std::size_t s = 0; s < b; ++s) {
                     double* o = dst + s * nout;
                     std::copy_n(d.bias.data().data(), nout, o);
                     const double* a = src + s * nin;
                     for (std::size_t i = 0; i < nin; ++i) {
                       const double ai = a[i];
                       if (ai == 0.0) continue;
                       const double* wr = w + i * nout;
                       for (std::size_t j = 0; j < nout; ++j) o[j] += ai * wr[j];
                     }
                   }
                 },
                 [&](const Conv2d& c) {
                   const auto g = geometry(c, in);
                   for (std::size_t s = 0; s < b; ++s) {
                     conv_forward_sample(c, g, src + s * in_n, dst + s * out_n);
                   }
                 },
                 [&](const ReLU&) {
                   for (std::size_t i = 0; i < batch.size(); ++i) dst[i] = std::max(src[i], 0.0);
                 },
                 [&](const AvgPool& p) {
                   const std::size_t ch = in[0], h = in[1], w = in[2];
                   const std::size_t oh = out_shape[1], ow = out_shape[2];
                   const double scale = 1.0 / static_cast<double>(p.window * p.window);
                   for (std::size_t s = 0; s < b; ++s) {
                     for (std::size_t c = 0; c < ch; ++c) {
                       const double* plane = src + s * in_n + c * h * w;
                       double* op = dst + s * out_n + c * oh * ow;
                       for (std::size_t oy = 0; oy < oh; ++oy) {
                         for (std::size_t ox = 0; ox < ow; ++ox) {
                           double acc = 0.0;
                           for (std::size_t dy = 0; dy < p.window; ++dy) {
                             const double* r = plane + (oy * p.window + dy) * w + ox * p.window;
                             for (std::size_t dx = 0; dx < p.window; ++dx) acc += r[dx];
                           }
                           op[oy * ow + ox] = acc * scale;
                         }
                       }
                     }
                   }
                 },
                 [&](const Flatten&) { std::copy_n(src, batch.size(), dst); }},
             layer);
  return out;
}

namespace {

Tensor as_batch(const Network& net, const Tensor& batch) {
  if (batch.shape() == net.input_shape()) return batch.reshaped(with_batch(1, batch.shape()));
  if (batch.rank() != net.input_shape().size() + 1 || tail_shape(batch) != net.input_shape()) {
    shape_error(0, kind_name(kind_of(net.layer(0))), with_batch(0, net.input_shape()),
                batch.shape());
  }
  return batch;
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& batch) {
  ForwardResult result;
  result.trace.inputs.reserve(net.num_layers());
  result.trace.inputs.push_back(as_batch(net, batch));
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    Tensor out = apply_layer(net.layer(i), result.trace.inputs.back());
    if (i + 1 < net.num_layers()) {
      result.trace.inputs.push_back(std::move(out));
    } else {
      result.logits = std::move(out);
    }
  }
  return result;
}

Tensor predict_logits(const Network& net, const Tensor& images, std::size_t chunk) {
  const Tensor batch = as_batch(net, images);
  const std::size_t n = batch.dim(0);
  const std::size_t c = net.num_classes();
  Tensor logits({n, c});
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tensor x = batch.slice_rows(begin, end);
    for (const auto& layer : net.layers()) x = apply_layer(layer, x);
    std::copy(x.data().begin(), x.data().end(), logits.data().begin() + static_cast<std::ptrdiff_t>(begin * c));
  }
  return logits;
}

std::vector<int> predict_classes(const Network& net, const Tensor& images) {
  const Tensor logits = predict_logits(net, images);
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Matrix penultimate_features(const Network& net, const Tensor& images, std::size_t chunk) {
  const Tensor batch = as_batch(net, images);
  const std::size_t n = batch.dim(0);
  const std::size_t last = net.final_dense_index();
  const std::size_t d = shape_numel(net.shape_at(last));
  Matrix out(n, d);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tensor x = batch.slice_rows(begin, end);
    for (std::size_t i = 0; i < last; ++i) x = apply_layer(net.layer(i), x);
    std::copy(x.data().begin(), x.data().end(), out.data.begin() + static_cast<std::ptrdiff_t>(begin * d));
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels,
                         std::span<const double> weights) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorKind::kShape, "cross_entropy: logits " + to_string(logits.shape()) +
                                       " vs " + std::to_string(labels.size()) + " labels");
  }
  if (!weights.empty() && weights.size() != labels.size()) {
    throw Error(ErrorKind::kShape, "cross_entropy: weight count does not match labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  double total_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) total_weight += weights.empty() ? 1.0 : weights[i];
  if (n == 0 || total_weight <= 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "cross_entropy: empty batch or zero total weight");
  }

  LossResult result{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error(ErrorKind::kInvalidArgument, "cross_entropy: label " +
                                                   std::to_string(labels[i]) +
                                                   " out of range [0," + std::to_string(c) + ")");
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    const auto ls = log_softmax(logits.row(i));
    const auto label = static_cast<std::size_t>(labels[i]);
    result.loss += -w * ls[label];
    auto g = result.grad_logits.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      g[k] = w * (std::exp(ls[k]) - (k == label ? 1.0 : 0.0)) / total_weight;
    }
  }
  result.loss /= total_weight;
  return result;
}

ParamGrads backward(const Network& net, const ForwardTrace& trace, const Tensor& grad_logits) {
  if (trace.inputs.size() != net.num_layers()) {
    throw Error(ErrorKind::kInvalidArgument,
                "stale trace: " + std::to_string(trace.inputs.size()) + " recorded inputs for " +
                    std::to_string(net.num_layers()) + " layers");
  }
  const std::size_t b = batch_size_of(trace.inputs[0]);
  if (grad_logits.shape() != Shape{b, net.num_classes()}) {
    throw Error(ErrorKind::kShape, "backward: grad_logits " + to_string(grad_logits.shape()) +
                                       " does not match batch " + std::to_string(b));
  }

  std::vector<std::vector<Tensor>> per_layer(net.num_layers());
  Tensor grad = grad_logits;
  for (std::size_t li = net.num_layers(); li-- > 0;) {
    const Tensor& input = trace.inputs[li];
    const Shape in = tail_shape(input);
    const Shape out = net.shape_at(li + 1);
    const std::size_t in_n = shape_numel(in), out_n = shape_numel(out);
    if (grad.size() != b * out_n || input.size() != b * in_n) {
      throw Error(ErrorKind::kShape, "stale trace at layer " + std::to_string(li));
    }
    const bool need_input_grad = li > 0;
    Tensor grad_in(input.shape());
    const double* a = input.data().data();
    const double* go = grad.data().data();
    double* gi = grad_in.data().data();

    std::visit(
        Overloaded{
            [&](const Dense& d) {
              const std::size_t nin = d.weight.dim(0), nout = d.weight.dim(1);
              Tensor gw(d.weight.shape()), gb(d.bias.shape());
              const double* w = d.weight.data().data();
              for (std::size_t s = 0; s < b; ++s) {
                const double* as = a + s * nin;
                const double* gs = go + s * nout;
                for (std::size_t j = 0; j < nout; ++j) gb[j] += gs[j];
                for (std::size_t i = 0; i < nin; ++i) {
                  const double ai = as[i];
                  const double* wr = w + i * nout;
                  double* gwr = gw.data().data() + i * nout;
                  double acc = 0.0;
                  for (std::size_t j = 0; j < nout; ++j) {
                    gwr[j] += ai * gs[j];
                    acc += wr[j] * gs[j];
                  }
                  if (need_input_grad) gi[s * nin + i] = acc;
                }
              }
              per_layer[li] = {std::move(gw), std::move(gb)};
            },
            [&](const Conv2d& c) {
              const auto g = geometry(c, in);
              Tensor gk(c.kernel.shape()), gb(c.bias.shape());
              for (std::size_t s = 0; s < b; ++s) {
                conv_backward_sample(c, g, a + s * in_n, go + s * out_n, gk.data().data(),
                                     gb.data().data(), need_input_grad ? gi + s * in_n : nullptr);
              }
              per_layer[li] = {std::move(gk), std::move(gb)};
            },
            [&](const ReLU&) {
              for (std::size_t i = 0; i < input.size(); ++i) gi[i] = a[i] > 0.0 ? go[i] : 0.0;
            },
            [&](const AvgPool& p) {
              const std::size_t ch = in[0], h = in[1], w = in[2];
              const std::size_t oh = out[1], ow = out[2];
              const double scale = 1.0 / static_cast<double>(p.window * p.window);
              for (std::size_t s = 0; s < b; ++s) {
                for (std::size_t c = 0; c < ch; ++c) {
                  const double* gp = go + s * out_n + c * oh * ow;
                  double* ip = gi + s * in_n + c * h * w;
                  for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                      const double v = gp[oy * ow + ox] * scale;
                      for (std::size_t dy = 0; dy < p.window; ++dy) {
                        double* r = ip + (oy * p.window + dy) * w + ox * p.window;
                        for (std::size_t dx = 0; dx < p.window; ++dx) r[dx] = v;
                      }
                    }
                  }
                }
              }
            },
            [&](const Flatten&) { std::copy_n(go, grad.size(), gi); }},
        net.layer(li));
    grad = std::move(grad_in);
  }

  ParamGrads grads;
  for (auto& layer_grads : per_layer) {
    for (auto& g : layer_grads) grads.push_back(std::move(g));
  }
  return grads;
}

Tensor input_vjp(const Layer& layer, const Tensor& input, const Tensor& grad_out) {
  const std::size_t b = batch_size_of(input);
  const Shape in = tail_shape(input);
  const Shape out = layer_output_shape(layer, in, 0);
  const std::size_t in_n = shape_numel(in), out_n = shape_numel(out);
  if (grad_out.size() != b * out_n) {
    throw Error(ErrorKind::kShape, "input_vjp: grad " + to_string(grad_out.shape()) +
                                       " does not match layer output " + to_string(out));
  }
  Tensor grad_in(input.shape());
  const double* a = input.data().data();
  const double* go = grad_out.data().data();
  double* gi = grad_in.data().data();
  std::visit(
      Overloaded{
          [&](const Dense& d) {
            const std::size_t nin = d.weight.dim(0), nout = d.weight.dim(1);
            const double* w = d.weight.data().data();
            for (std::size_t s = 0; s < b; ++s) {
              const double* gs = go + s * nout;
              for (std::size_t i = 0; i < nin; ++i) {
                const double* wr = w + i * nout;
                double acc = 0.0;
                for (std::size_t j = 0; j < nout; ++j) acc += wr[j] * gs[j];
                gi[s * nin + i] = acc;
              }
            }
          },
          [&](const Conv2d& c) {
            const auto g = geometry(c, in);
            const double* k = c.kernel.data().data();
            const std::size_t plane = g.out_h * g.out_w;
            for (std::size_t s = 0; s < b; ++s) {
              for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
                const double* gp = go + s * out_n + oc * plane;
                for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
                  double* dst = gi + s * in_n + ic * g.in_h * g.in_w;
                  for (std::size_t ky = 0; ky < g.kh; ++ky) {
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                      const double w = k[((oc * g.in_ch + ic) * g.kh + ky) * g.kw + kx];
                      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        double* r = dst + (oy * g.stride + ky) * g.in_w + kx;
                        const double* grow = gp + oy * g.out_w;
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) r[ox * g.stride] += w * grow[ox];
                      }
                    }
                  }
                }
              }
            }
          },
          [&](const ReLU&) {
            for (std::size_t i = 0; i < input.size(); ++i) gi[i] = a[i] > 0.0 ? go[i] : 0.0;
          },
          [&](const AvgPool& p) {
            const std::size_t ch = in[0], h = in[1], w = in[2];
            const std::size_t oh = out[1], ow = out[2];
            const double scale = 1.0 / static_cast<double>(p.window * p.window);
            for (std::size_t s = 0; s < b; ++s) {
              for (std::size_t c = 0; c < ch; ++c) {
                const double* gp = go + s * out_n + c * oh * ow;
                double* ip = gi + s * in_n + c * h * w;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double v = gp[oy * ow + ox] * scale;
                    for (std::size_t dy = 0; dy < p.window; ++dy) {
                      double* r = ip + (oy * p.window + dy) * w + ox * p.window;
                      for (std::size_t dx = 0; dx < p.window; ++dx) r[dx] = v;
                    }
                  }
                }
              }
            }
          },
          [&](const Flatten&) { std::copy_n(go, grad_out.size(), gi); }},
      layer);
  return grad_in;
}

void init_parameters(Network& net, std::uint64_t seed) {
  std::size_t index = 0;
  auto params = net.parameters();
  // parameters() alternates weight, bias per parametrized layer.
  for (std::size_t p = 0; p + 1 < params.size(); p += 2, ++index) {
    Tensor& w = *params[p];
    Tensor& bias = *params[p + 1];
    const std::size_t fan_in =
        w.rank() == 2 ? w.dim(0) : w.dim(1) * w.dim(2) * w.dim(3);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng(mix_seed(seed, index));
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    bias.fill(0.0);
  }
}

Network make_desk_net(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  if (input_shape.size() != 3) {
    throw Error(ErrorKind::kShape, "desk net expects (C,H,W) input, got " + to_string(input_shape));
  }
  const std::size_t ch = input_shape[0];
  const std::size_t h2 = ((input_shape[1] - 2) / 2 - 2) / 2;
  const std::size_t w2 = ((input_shape[2] - 2) / 2 - 2) / 2;
  const std::size_t flat = 16 * h2 * w2;
  std::vector<Layer> layers{
      Conv2d{Tensor({8, ch, 3, 3}), Tensor({8}), 1},
      ReLU{},
      AvgPool{2},
      Conv2d{Tensor({16, 8, 3, 3}), Tensor({16}), 1},
      ReLU{},
      AvgPool{2},
      Flatten{},
      Dense{Tensor({flat, 64}), Tensor({64})},
      ReLU{},
      Dense{Tensor({64, num_classes}), Tensor({num_classes})},
  };
  Network net(input_shape, std::move(layers));
  init_parameters(net, seed);
  return net;
}

Network make_dense_net(std::span<const std::size_t> widths, std::uint64_t seed, bool with_bias) {
  if (widths.size() < 2) throw Error(ErrorKind::kInvalidArgument, "dense net needs >= 2 widths");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (i > 0) layers.emplace_back(ReLU{});
    layers.emplace_back(Dense{Tensor({widths[i], widths[i + 1]}), Tensor({widths[i + 1]})});
  }
  Network net(Shape{widths[0]}, std::move(layers));
  init_parameters(net, seed);
  if (with_bias) {
    // Small nonzero biases so bias paths are exercised.
    Rng rng(mix_seed(seed, 0xB1A5));
    auto params = net.parameters();
    for (std::size_t p = 1; p < params.size(); p += 2) {
      for (auto& v : params[p]->data()) v = rng.uniform(-0.1, 0.1);
    }
  }
  return net;
}

}  // namespace exmap::nn
