#include "exmap/cluster.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "exmap/error.hpp"
#include "exmap/rng.hpp"

namespace exmap::cluster {
namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// Relabels to 0..k-1 in order of first appearance of the surviving labels'
// original index, so the order of non-empty clusters is preserved.
std::size_t compact_labels(std::vector<int>& labels, std::size_t k) {
  std::vector<int> remap(k, -1);
  std::vector<bool> used(k, false);
  for (int l : labels) used[static_cast<std::size_t>(l)] = true;
  int next = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (used[j]) remap[j] = next++;
  }
  for (int& l : labels) l = remap[static_cast<std::size_t>(l)];
  return static_cast<std::size_t>(next);
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

std::string_view method_name(Method method) {
  return method == Method::kSpectral ? "spectral" : "kmeans";
}

Matrix l2_normalize_rows(Matrix vectors) {
  for (std::size_t i = 0; i < vectors.rows; ++i) {
    auto r = vectors.row(i);
    double n = 0.0;
    for (double v : r) n += v * v;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& v : r) v /= n;
    }
  }
  return vectors;
}

AffinityMatrix affinity(const Matrix& vectors) {
  const std::size_t n = vectors.rows;
  if (n < 2) throw Error(ErrorKind::kInvalidArgument, "affinity needs at least 2 vectors");
  if (vectors.cols == 0) throw Error(ErrorKind::kInvalidArgument, "affinity: vectors have length 0");

  Matrix d2(n, n);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = sq_dist(vectors.row(i), vectors.row(j));
      d2(i, j) = s;
      d2(j, i) = s;
      dists.push_back(std::sqrt(s));
    }
  }
  const double sigma = median(std::move(dists));
  if (!(sigma > 0.0)) {
    throw Error(ErrorKind::kDegenerate,
                "affinity: median pairwise distance is 0 (inputs are (mostly) identical); "
                "deduplicate or perturb the vectors before clustering");
  }
  AffinityMatrix out{Matrix(n, n), sigma};
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = std::exp(-d2(i, j) / denom);
      out.weights(i, j) = w;
      out.weights(j, i) = w;
    }
  }
  return out;
}

Matrix sym_laplacian(const AffinityMatrix& affinity) {
  const Matrix& w = affinity.weights;
  const std::size_t n = w.rows;
  if (w.cols != n) throw Error(ErrorKind::kShape, "sym_laplacian: affinity must be square");
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (double v : w.row(i)) deg += v;
    inv_sqrt[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      l(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * w(i, j) * inv_sqrt[j];
    }
  }
  return l;
}

std::size_t eigengap_k(std::span<const double> eigenvalues, std::size_t max_eigs) {
  if (eigenvalues.size() < 2) throw Error(ErrorKind::kInvalidArgument, "eigengap_k needs at least 2 eigenvalues");
  const std::size_t m = std::min(max_eigs, eigenvalues.size());
  std::size_t best = 1;
  double best_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < m; ++i) {
    const double gap = eigenvalues[i] - eigenvalues[i - 1];
    if (gap > best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return std::max<std::size_t>(best, 2);
}

ClusterAssignment cluster_qr(const Matrix& eigenvectors, std::size_t k) {
  const std::size_t n = eigenvectors.rows;
  if (k < 2) throw Error(ErrorKind::kInvalidArgument, "cluster_qr needs k >= 2");
  if (eigenvectors.cols < k) {
    throw Error(ErrorKind::kShape, "cluster_qr: " + std::to_string(k) + " clusters need " + std::to_string(k) +
                                       " eigenvector columns, got " + std::to_string(eigenvectors.cols));
  }
  if (n < k) throw Error(ErrorKind::kInvalidArgument, "cluster_qr: fewer samples than clusters");

  // Unit rows; an all-zero row keeps its raw (zero) coordinates.
  Matrix z(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) z(i, j) = eigenvectors(i, j);
  }
  z = l2_normalize_rows(std::move(z));

  // Column-pivoted QR of z^T, as greedy Gram-Schmidt on rows of z.
  Matrix resid = z;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : resid.row(i)) s += v * v;
    norms[i] = s;
  }
  std::vector<std::size_t> pivots;
  std::vector<bool> taken(n, false);
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t piv = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && norms[i] > best) {
        best = norms[i];
        piv = i;
      }
    }
    taken[piv] = true;
    pivots.push_back(piv);
    if (best <= 0.0) continue;
    std::vector<double> q(resid.row(piv).begin(), resid.row(piv).end());
    const double qn = std::sqrt(best);
    for (double& v : q) v /= qn;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      auto r = resid.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += r[j] * q[j];
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        r[j] -= dot * q[j];
        s += r[j] * r[j];
      }
      norms[i] = s;
    }
  }

  // Polar factor of the pivot block: C^T = U S V^T, basis = U V^T.
  Eigen::MatrixXd ct(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      ct(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = z(pivots[a], b);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ct, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd basis = svd.matrixU() * svd.matrixV().transpose();

  ClusterAssignment out;
  out.method = Method::kSpectral;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int arg = 0;
    double best = -1.0;
    for (std::size_t c = 0; c < k; ++c) {
      double v = 0.0;
      for (std::size_t j = 0; j < k; ++j) v += z(i, j) * basis(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
      if (std::abs(v) > best) {
        best = std::abs(v);
        arg = static_cast<int>(c);
      }
    }
    out.labels[i] = arg;
  }
  out.k = compact_labels(out.labels, k);
  return out;
}

KMeansResult kmeans(const Matrix& vectors, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
  const std::size_t n = vectors.rows, d = vectors.cols;
  if (k < 2) throw Error(ErrorKind::kInvalidArgument, "kmeans needs k >= 2");
  if (n < k) {
    throw Error(ErrorKind::kInvalidArgument,
                "kmeans: " + std::to_string(n) + " samples cannot form " + std::to_string(k) + " clusters");
  }
  Rng rng(seed);

  // k-means++ seeding.
  Matrix centroids(k, d);
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
      if (total > 0.0) {
        double u = rng.uniform() * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i] || d2[i] <= 0.0) continue;
          pick = i;
          u -= d2[i];
          if (u < 0.0) break;
        }
      } else {
        // Every remaining point duplicates a centre: take a uniform unchosen one.
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) rest.push_back(i);
        }
        pick = rest[rng.below(rest.size())];
      }
    }
    chosen[pick] = true;
    std::copy(vectors.row(pick).begin(), vectors.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(vectors.row(i), centroids.row(c)));
  }

  std::vector<int> labels(n, -1);
  std::size_t iter = 0;
  for (; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double s = sq_dist(vectors.row(i), centroids.row(c));
        if (s < best) {
          best = s;
          arg = static_cast<int>(c);
        }
      }
      if (labels[i] != arg) {
        labels[i] = arg;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    // Repair empty clusters before updating centroids.
    std::vector<std::size_t> counts(k, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto largest = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != largest) continue;
        const double s = sq_dist(vectors.row(i), centroids.row(static_cast<std::size_t>(largest)));
        if (s > far_d) {
          far_d = s;
          far = i;
        }
      }
      labels[far] = static_cast<int>(c);
      --counts[static_cast<std::size_t>(largest)];
      ++counts[c];
    }

    std::fill(centroids.data.begin(), centroids.data.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = centroids.row(static_cast<std::size_t>(labels[i]));
      auto src = vectors.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (double& v : centroids.row(c)) v /= static_cast<double>(counts[c]);
    }
  }

  KMeansResult out;
  out.iterations = iter;
  for (std::size_t i = 0; i < n; ++i) out.inertia += sq_dist(vectors.row(i), centroids.row(static_cast<std::size_t>(labels[i])));
  out.centroids = std::move(centroids);
  out.assignment.labels = std::move(labels);
  out.assignment.k = k;
  out.assignment.method = Method::kKMeans;
  return out;
}

SpectralResult spectral_cluster(const Matrix& vectors, const SpectralOptions& options) {
  const AffinityMatrix w = affinity(vectors);
  const Matrix l = sym_laplacian(w);
  const EigenPairs eig = smallest_eigs(l, std::min(options.max_eigs, l.rows), options.solver);
  SpectralResult out;
  out.sigma = w.sigma;
  out.eigenvalues = eig.values;
  out.eigengap_k = std::min(eigengap_k(eig.values, options.max_eigs), eig.vectors.cols);
  out.assignment = cluster_qr(eig.vectors, out.eigengap_k);
  return out;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kShape, "adjusted_rand_index: labelings differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, c] : table) index += comb2(c);
  for (const auto& [key, c] : rows) sum_a += comb2(c);
  for (const auto& [key, c] : cols) sum_b += comb2(c);
  const double total = comb2(n);
  if (total == 0.0) return 1.0;
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical
  return (index - expected) / (max_index - expected);
}

std::string eigenvalues_csv(std::span<const double> eigenvalues) {
  std::ostringstream os;
  os.precision(17);
  os << "index,eigenvalue\n";
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) os << i << ',' << eigenvalues[i] << '\n';
  return os.str();
}

std::string assignment_csv(const ClusterAssignment& assignment) {
  std::ostringstream os;
  os << "sample_index,cluster,method\n";
  for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
    os << i << ',' << assignment.labels[i] << ',' << method_name(assignment.method) << '\n';
  }
  return os.str();
}

}  // namespace exmap::cluster
