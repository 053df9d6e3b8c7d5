#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <variant>

namespace oracle {
namespace {

using namespace exmap;

struct Act {
  std::vector<std::size_t> shape;  // per-sample shape
  std::vector<double> v;
};

Act run_layer(const nn::Layer& layer, const Act& in) {
  Act out;
  if (const auto* d = std::get_if<nn::Dense>(&layer)) {
    const std::size_t n_in = d->weight.dim(0), n_out = d->weight.dim(1);
    out.shape = {n_out};
    out.v.assign(n_out, 0.0);
    for (std::size_t j = 0; j < n_out; ++j) {
      double s = d->bias[j];
      for (std::size_t i = 0; i < n_in; ++i) s += in.v[i] * d->weight[i * n_out + j];
      out.v[j] = s;
    }
  } else if (const auto* c = std::get_if<nn::Conv2d>(&layer)) {
    const std::size_t oc = c->kernel.dim(0), ic = c->kernel.dim(1), kh = c->kernel.dim(2), kw = c->kernel.dim(3);
    const std::size_t h = in.shape[1], w = in.shape[2], st = c->stride;
    const std::size_t oh = (h - kh) / st + 1, ow = (w - kw) / st + 1;
    out.shape = {oc, oh, ow};
    out.v.assign(oc * oh * ow, 0.0);
    for (std::size_t o = 0; o < oc; ++o) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double s = c->bias[o];
          for (std::size_t i = 0; i < ic; ++i) {
            for (std::size_t a = 0; a < kh; ++a) {
              for (std::size_t b = 0; b < kw; ++b) {
                s += c->kernel[((o * ic + i) * kh + a) * kw + b] * in.v[(i * h + y * st + a) * w + x * st + b];
              }
            }
          }
          out.v[(o * oh + y) * ow + x] = s;
        }
      }
    }
  } else if (std::holds_alternative<nn::ReLU>(layer)) {
    out = in;
    for (double& v : out.v) v = std::max(v, 0.0);
  } else if (const auto* p = std::get_if<nn::AvgPool>(&layer)) {
    const std::size_t ch = in.shape[0], h = in.shape[1], w = in.shape[2], k = p->window;
    const std::size_t oh = h / k, ow = w / k;
    out.shape = {ch, oh, ow};
    out.v.assign(ch * oh * ow, 0.0);
    for (std::size_t c2 = 0; c2 < ch; ++c2) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double s = 0.0;
          for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) s += in.v[(c2 * h + y * k + a) * w + x * k + b];
          }
          out.v[(c2 * oh + y) * ow + x] = s / static_cast<double>(k * k);
        }
      }
    }
  } else {
    out.shape = {in.v.size()};
    out.v = in.v;
  }
  return out;
}

double mean_plane(const data::GroupedDataset& d, std::size_t sample, std::size_t channel) {
  const std::size_t side = d.images.dim(2);
  const auto row = d.images.row(sample);
  double s = 0.0;
  for (std::size_t p = 0; p < side * side; ++p) s += row[channel * side * side + p];
  return s / static_cast<double>(side * side);
}

}  // namespace

std::vector<double> scalar_forward(const nn::Network& net, const std::vector<double>& x) {
  Act a{net.input_shape(), x};
  for (const auto& layer : net.layers()) a = run_layer(layer, a);
  return a.v;
}

double scalar_loss(const nn::Network& net, const Tensor& batch, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const auto row = batch.row(s);
    const auto z = scalar_forward(net, {row.begin(), row.end()});
    const double m = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - m);
    total += m + std::log(lse) - z[static_cast<std::size_t>(labels[s])];
  }
  return total / static_cast<double>(labels.size());
}

std::vector<std::vector<double>> finite_diff_grads(const nn::Network& net, const Tensor& batch,
                                                   const std::vector<int>& labels, double h) {
  nn::Network probe = net;
  auto params = probe.parameters();
  std::vector<std::vector<double>> out;
  for (auto* p : params) {
    std::vector<double> g(p->size());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = (*p)[i];
      (*p)[i] = keep + h;
      const double up = scalar_loss(probe, batch, labels);
      (*p)[i] = keep - h;
      const double down = scalar_loss(probe, batch, labels);
      (*p)[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<double> lrp_paths(const nn::Network& net, const std::vector<double>& x, int target, double epsilon) {
  const auto& d1 = std::get<nn::Dense>(net.layer(0));
  const auto& d2 = std::get<nn::Dense>(net.layer(2));
  const std::size_t n_in = d1.weight.dim(0), n_hid = d1.weight.dim(1), n_out = d2.weight.dim(1);
  const auto stab = [epsilon](double z) { return z + epsilon * (z >= 0.0 ? 1.0 : -1.0); };

  std::vector<double> z1(n_hid), a1(n_hid);
  for (std::size_t j = 0; j < n_hid; ++j) {
    z1[j] = d1.bias[j];
    for (std::size_t i = 0; i < n_in; ++i) z1[j] += x[i] * d1.weight[i * n_hid + j];
    a1[j] = std::max(z1[j], 0.0);
  }
  const auto k = static_cast<std::size_t>(target);
  double z2 = d2.bias[k];
  for (std::size_t j = 0; j < n_hid; ++j) z2 += a1[j] * d2.weight[j * n_out + k];

  // Every path i -> j -> k carries x_i w_ij / D_j * a_j w_jk / D_k * z_k.
  std::vector<double> r(n_in, 0.0);
  for (std::size_t i = 0; i < n_in; ++i) {
    for (std::size_t j = 0; j < n_hid; ++j) {
      const double first = x[i] * d1.weight[i * n_hid + j] / stab(z1[j]);
      const double second = a1[j] * d2.weight[j * n_out + k] / stab(z2);
      r[i] += first * second * z2;
    }
  }
  return r;
}

int decode_class(const data::GroupedDataset& d, std::size_t sample) {
  const std::size_t side = d.images.dim(2), ch = d.images.dim(1), plane = side * side;
  const auto row = d.images.row(sample);
  // Luminance with every channel's mean removed, so tints cancel out.
  std::vector<double> lum(plane, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    const double m = mean_plane(d, sample, c);
    for (std::size_t p = 0; p < plane; ++p) lum[p] += row[c * plane + p] - m;
  }
  double best = -1e300;
  int best_cls = 0;
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t v = 0; v < data::num_class_variants(); ++v) {
      const auto t = data::class_template(cls, v, side);
      for (int jy = -3; jy <= 3; ++jy) {
        for (int jx = -3; jx <= 3; ++jx) {
          double dot = 0.0, norm = 0.0;
          for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
              const int sy = static_cast<int>(y) - jy, sx = static_cast<int>(x) - jx;
              if (sy < 0 || sx < 0 || sy >= static_cast<int>(side) || sx >= static_cast<int>(side)) continue;
              const double tv = t[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)];
              dot += tv * lum[y * side + x];
              norm += tv * tv;
            }
          }
          const double score = norm > 0.0 ? dot / std::sqrt(norm) : -1e300;
          if (score > best) {
            best = score;
            best_cls = cls;
          }
        }
      }
    }
  }
  return best_cls;
}

int decode_tint(const data::GroupedDataset& d, std::size_t sample) {
  return mean_plane(d, sample, 0) > mean_plane(d, sample, 1) ? 0 : 1;
}

int decode_glyph(const data::GroupedDataset& d, std::size_t sample) {
  const std::size_t side = d.images.dim(2), g = data::layout::kGlyphSide;
  const auto row = d.images.row(sample);
  double left = 0.0, right = 0.0;
  for (std::size_t y = 0; y < g; ++y) {
    for (std::size_t x = 0; x < g; ++x) {
      left += row[y * side + x];
      right += row[y * side + side - g + x];
    }
  }
  return left > right ? 0 : 1;
}

Matrix planted_affinity(std::size_t blocks, std::size_t per_block, double intra, double inter, double flip,
                        std::uint64_t seed) {
  const std::size_t n = blocks * per_block;
  Matrix w(n, n);
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      bool same = i / per_block == j / per_block;
      if (u(gen) < flip) same = !same;
      w(i, j) = w(j, i) = same ? intra : inter;
    }
  }
  return w;
}

std::vector<int> planted_labels(std::size_t blocks, std::size_t per_block) {
  std::vector<int> labels(blocks * per_block);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i / per_block);
  return labels;
}

Matrix gaussian_blobs(std::size_t k, std::size_t per_cluster, std::size_t dim, double separation,
                      std::uint64_t seed, std::vector<int>* labels) {
  Matrix m(k * per_cluster, dim);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  if (labels) labels->clear();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < per_cluster; ++s) {
      auto row = m.row(c * per_cluster + s);
      for (std::size_t j = 0; j < dim; ++j) row[j] = nd(gen);
      row[c % dim] += separation * static_cast<double>(1 + c / dim);
      if (labels) labels->push_back(static_cast<int>(c));
    }
  }
  return m;
}

double pair_count_ari(const std::vector<int>& a, const std::vector<int>& b) {
  // a/b/c/d of the pair confusion: together in both, only a, only b, neither.
  double both = 0, only_a = 0, only_b = 0, neither = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      if (sa && sb) both += 1;
      else if (sa) only_a += 1;
      else if (sb) only_b += 1;
      else neither += 1;
    }
  }
  const double total = both + only_a + only_b + neither;
  const double expected = (both + only_a) * (both + only_b) / total;
  const double max_index = 0.5 * ((both + only_a) + (both + only_b));
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

}  // namespace oracle
