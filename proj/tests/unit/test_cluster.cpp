#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "exmap/cluster.hpp"
#include "exmap/error.hpp"
#include "oracles.hpp"

using namespace exmap;
using namespace exmap::cluster;

namespace {

Matrix block_affinity(std::size_t blocks, std::size_t per) {
  return oracle::planted_affinity(blocks, per, 1.0, 0.0, 0.0, 0);
}

Matrix random_symmetric(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = nd(gen);
  }
  return m;
}

double residual(const Matrix& a, const EigenPairs& e, std::size_t col) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += a(i, j) * e.vectors(j, col);
    worst = std::max(worst, std::abs(s - e.values[col] * e.vectors(i, col)));
  }
  return worst;
}

double orthonormality_error(const Matrix& v) {
  double worst = 0.0;
  for (std::size_t a = 0; a < v.cols; ++a) {
    for (std::size_t b = 0; b < v.cols; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.rows; ++i) s += v(i, a) * v(i, b);
      worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

// Gaussian clouds centred on the coordinate axes, 10 units out, one cloud
// per entry of `sizes`.
Matrix clouds(const std::vector<std::size_t>& sizes, double spread, std::uint64_t seed, std::vector<int>* labels) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, spread);
  const std::size_t k = sizes.size();
  Matrix m(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), k);
  labels->clear();
  std::size_t r = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < sizes[c]; ++s, ++r) {
      auto row = m.row(r);
      for (auto& v : row) v = nd(gen);
      row[c] += 10.0;
      labels->push_back(static_cast<int>(c));
    }
  }
  return m;
}

}  // namespace

TEST_CASE("affinity follows the RBF definition with median bandwidth") {
  Matrix v(4, 1);
  v(0, 0) = 0.0;
  v(1, 0) = 0.0;
  v(2, 0) = 1.0;
  v(3, 0) = 3.0;
  const auto w = affinity(v);
  // Pairwise distances {0,1,3,1,3,2}: median 1.5.
  CHECK(w.sigma == doctest::Approx(1.5));
  CHECK(w.weights(0, 1) == 1.0);
  CHECK(w.weights(1, 2) == doctest::Approx(std::exp(-1.0 / (2 * 1.5 * 1.5))));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(w.weights(i, i) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(w.weights(i, j) >= 0.0);
      CHECK(w.weights(i, j) == w.weights(j, i));
    }
  }
}

TEST_CASE("a pair at distance sigma gets weight exp(-1/2)") {
  Matrix v(3, 1);
  v(0, 0) = 0.0;
  v(1, 0) = 2.0;
  v(2, 0) = 4.0;
  // Distances {2,4,2}: median 2, which is the distance of the first pair.
  const auto w = affinity(v);
  CHECK(w.weights(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
}

TEST_CASE("clusters 10 sigma apart give a near block-diagonal affinity") {
  // The bandwidth is the median distance, so it only stays at the
  // within-cluster scale when most pairs are within one cluster: one large
  // cloud and two pairs.
  std::vector<int> labels;
  const auto v = clouds({30, 2, 2}, 0.3, 2, &labels);
  const auto w = affinity(v);
  double min_across = 1e300;
  for (std::size_t i = 0; i < v.rows; ++i) {
    for (std::size_t j = 0; j < v.rows; ++j) {
      if (labels[i] == labels[j]) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < v.cols; ++c) d2 += (v(i, c) - v(j, c)) * (v(i, c) - v(j, c));
      min_across = std::min(min_across, std::sqrt(d2));
    }
  }
  REQUIRE(min_across >= 10.0 * w.sigma);
  for (std::size_t i = 0; i < v.rows; ++i) {
    for (std::size_t j = 0; j < v.rows; ++j) {
      if (labels[i] != labels[j]) CHECK(w.weights(i, j) < 1e-4);
    }
  }
}

TEST_CASE("identical vectors are a degenerate affinity input") {
  Matrix v(5, 3, 0.7);
  try {
    affinity(v);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerate);
  }
  CHECK_THROWS_AS(affinity(Matrix(1, 3)), Error);
}

TEST_CASE("Laplacian spectra of known graphs") {
  SUBCASE("two disconnected blocks have a double zero eigenvalue") {
    const auto l = sym_laplacian(AffinityMatrix{block_affinity(2, 5), 1.0});
    const auto e = jacobi_eigen(l);
    CHECK(std::abs(e.values[0]) < 1e-10);
    CHECK(std::abs(e.values[1]) < 1e-10);
    CHECK(e.values[2] > 0.5);
  }
  SUBCASE("complete graph has nonzero eigenvalues n/(n-1)") {
    const std::size_t n = 7;
    Matrix w(n, n, 0.3);
    for (std::size_t i = 0; i < n; ++i) w(i, i) = 0.0;
    const auto l = sym_laplacian(AffinityMatrix{w, 1.0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(l(i, j) - l(j, i)) <= 1e-12);
    }
    const auto e = jacobi_eigen(l);
    CHECK(std::abs(e.values[0]) < 1e-10);
    for (std::size_t i = 1; i < n; ++i) CHECK(e.values[i] == doctest::Approx(7.0 / 6.0).epsilon(1e-10));
  }
  SUBCASE("zero-degree rows become identity rows") {
    Matrix w(3, 3);
    w(0, 1) = w(1, 0) = 1.0;
    const auto l = sym_laplacian(AffinityMatrix{w, 1.0});
    CHECK(l(2, 2) == 1.0);
    CHECK(l(2, 0) == 0.0);
    CHECK(l(0, 1) == doctest::Approx(-1.0));
  }
}

TEST_CASE("smallest eigenpairs") {
  SUBCASE("diagonal matrix") {
    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 1;
    d(2, 2) = 2;
    for (auto solver : {EigenSolver::kJacobi, EigenSolver::kTridiagonal}) {
      const auto e = smallest_eigs(d, 2, solver);
      REQUIRE(e.values.size() == 2);
      CHECK(e.values[0] == doctest::Approx(1.0));
      CHECK(e.values[1] == doctest::Approx(2.0));
      CHECK(std::abs(e.vectors(1, 0)) == doctest::Approx(1.0));
    }
  }
  SUBCASE("random symmetric residuals and orthonormality") {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto a = random_symmetric(8, s);
      const auto e = jacobi_eigen(a);
      CHECK(std::is_sorted(e.values.begin(), e.values.end()));
      for (std::size_t c = 0; c < 8; ++c) CHECK(residual(a, e, c) <= 1e-9);
      CHECK(orthonormality_error(e.vectors) <= 1e-8);
    }
  }
  SUBCASE("Jacobi and LAPACK agree on a large Laplacian") {
    std::vector<int> labels;
    const auto v = clouds({100, 100, 100}, 3.0, 1, &labels);
    const auto l = sym_laplacian(affinity(v));
    const auto a = smallest_eigs(l, 10, EigenSolver::kJacobi);
    const auto b = smallest_eigs(l, 10, EigenSolver::kTridiagonal);
    const auto c = smallest_eigs(l, 10, EigenSolver::kAuto);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
      CHECK(c.values[i] == b.values[i]);
      CHECK(a.values[i] >= -1e-10);
      CHECK(a.values[i] <= 2.0 + 1e-8);
      CHECK(residual(l, b, i) <= 1e-9);
    }
    CHECK(orthonormality_error(b.vectors) <= 1e-8);
  }
  SUBCASE("a sweep cap that is too small reports non-convergence") {
    try {
      jacobi_eigen(random_symmetric(12, 3), 1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConvergence);
    }
  }
}

TEST_CASE("eigengap selection") {
  const std::vector<double> three{0, 0, 0, 0.5, 0.6, 0.7};
  CHECK(eigengap_k(three) == 3);
  const std::vector<double> one{0, 0.5, 0.55, 0.6};
  CHECK(eigengap_k(one) == 2);
  const std::vector<double> even{0, 0.25, 0.5, 0.75, 1.0};
  CHECK(eigengap_k(even) == 2);
  // Only the first max_eigs values are looked at.
  const std::vector<double> late{0, 0.01, 0.02, 0.03, 0.9};
  CHECK(eigengap_k(late, 4) == 2);
  CHECK(eigengap_k(late, 5) == 4);
}

TEST_CASE("cluster-QR on block indicators and under permutation") {
  const std::size_t n = 12;
  Matrix ind(n, 3);
  std::vector<int> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<int>(i % 3);
    ind(i, i % 3) = 1.0 / 2.0;
  }
  const auto a = cluster_qr(ind, 3);
  CHECK(a.k == 3);
  CHECK(adjusted_rand_index(a.labels, truth) == 1.0);

  // Rotate the indicator basis so the rows are no longer axis-aligned.
  Matrix rot(n, 3);
  const double c = std::cos(0.4), s = std::sin(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    rot(i, 0) = c * ind(i, 0) - s * ind(i, 1);
    rot(i, 1) = s * ind(i, 0) + c * ind(i, 1);
    rot(i, 2) = ind(i, 2);
  }
  const auto r = cluster_qr(rot, 3);
  CHECK(adjusted_rand_index(r.labels, truth) == 1.0);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  Matrix permuted(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) permuted(i, j) = rot(perm[i], j);
  }
  const auto p = cluster_qr(permuted, 3);
  std::vector<int> back(n);
  for (std::size_t i = 0; i < n; ++i) back[perm[i]] = p.labels[i];
  CHECK(adjusted_rand_index(back, r.labels) == 1.0);
}

TEST_CASE("planted partitions are recovered") {
  SUBCASE("clean blocks pick k = 3 with exact recovery") {
    const auto w = oracle::planted_affinity(3, 30, 0.9, 0.1, 0.0, 1);
    const auto e = smallest_eigs(sym_laplacian(AffinityMatrix{w, 1.0}), 10);
    const auto k = eigengap_k(e.values);
    CHECK(k == 3);
    Matrix first(w.rows, k);
    for (std::size_t i = 0; i < w.rows; ++i) {
      for (std::size_t j = 0; j < k; ++j) first(i, j) = e.vectors(i, j);
    }
    CHECK(adjusted_rand_index(cluster_qr(first, k).labels, oracle::planted_labels(3, 30)) == 1.0);
  }
  SUBCASE("5% cross-block noise keeps ARI >= 0.95") {
    const auto w = oracle::planted_affinity(3, 30, 1.0, 0.0, 0.05, 2);
    const auto e = smallest_eigs(sym_laplacian(AffinityMatrix{w, 1.0}), 3);
    CHECK(adjusted_rand_index(cluster_qr(e.vectors, 3).labels, oracle::planted_labels(3, 30)) >= 0.95);
  }
}

TEST_CASE("k-means") {
  SUBCASE("four far-apart Gaussians") {
    std::vector<int> truth;
    const auto v = oracle::gaussian_blobs(4, 50, 3, 100.0, 7, &truth);
    const auto r = kmeans(v, 4, 0);
    CHECK(r.assignment.k == 4);
    CHECK(r.assignment.method == Method::kKMeans);
    CHECK(adjusted_rand_index(r.assignment.labels, truth) >= 0.99);
    CHECK(r.centroids.rows == 4);
  }
  SUBCASE("n = k puts every point alone") {
    std::vector<int> truth;
    const auto v = oracle::gaussian_blobs(5, 1, 2, 3.0, 1, &truth);
    const auto r = kmeans(v, 5, 3);
    CHECK(r.inertia == 0.0);
    auto sorted = r.assignment.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4});
  }
  SUBCASE("duplicating every point keeps the partition") {
    std::vector<int> truth;
    const auto v = oracle::gaussian_blobs(3, 20, 2, 30.0, 4, &truth);
    Matrix twice(2 * v.rows, v.cols);
    for (std::size_t i = 0; i < v.rows; ++i) {
      for (std::size_t j = 0; j < v.cols; ++j) twice(2 * i, j) = twice(2 * i + 1, j) = v(i, j);
    }
    const auto a = kmeans(v, 3, 1).assignment.labels;
    const auto b = kmeans(twice, 3, 1).assignment.labels;
    std::vector<int> b_first(v.rows);
    for (std::size_t i = 0; i < v.rows; ++i) {
      CHECK(b[2 * i] == b[2 * i + 1]);
      b_first[i] = b[2 * i];
    }
    CHECK(adjusted_rand_index(a, b_first) == 1.0);
  }
  SUBCASE("same seed, same labels") {
    std::vector<int> truth;
    const auto v = oracle::gaussian_blobs(4, 30, 3, 2.0, 9, &truth);
    CHECK(kmeans(v, 4, 11).assignment.labels == kmeans(v, 4, 11).assignment.labels);
  }
  SUBCASE("every label occurs even with many duplicates") {
    Matrix v(10, 2);
    v(9, 0) = 1.0;
    const auto r = kmeans(v, 3, 0);
    std::vector<int> seen(3, 0);
    for (int l : r.assignment.labels) seen[static_cast<std::size_t>(l)] = 1;
    CHECK(r.assignment.k == static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1)));
  }
}

TEST_CASE("spectral clustering end to end") {
  std::vector<int> truth;
  SUBCASE("three clouds") {
    // Dominant first cloud, see the affinity test above.
    const auto v = clouds({60, 10, 10}, 0.5, 3, &truth);
    const auto r = spectral_cluster(v);
    CHECK(r.eigengap_k == 3);
    CHECK(r.assignment.k == 3);
    CHECK(adjusted_rand_index(r.assignment.labels, truth) == 1.0);
    CHECK(r.eigenvalues.size() == 10);
  }
  SUBCASE("two clouds") {
    const auto v = clouds({40, 40}, 0.5, 4, &truth);
    const auto r = spectral_cluster(v);
    CHECK(r.eigengap_k == 2);
    CHECK(adjusted_rand_index(r.assignment.labels, truth) == 1.0);
  }
  SUBCASE("one tight cloud still gives two clusters") {
    const auto v = clouds({60}, 0.5, 5, &truth);
    const auto r = spectral_cluster(v);
    CHECK(r.eigengap_k >= 2);
  }
  SUBCASE("deterministic") {
    const auto v = clouds({30, 30, 30}, 2.0, 6, &truth);
    CHECK(spectral_cluster(v).assignment.labels == spectral_cluster(v).assignment.labels);
  }
}

TEST_CASE("ARI matches explicit pair counting") {
  std::mt19937_64 gen(0);
  for (int t = 0; t < 20; ++t) {
    std::uniform_int_distribution<int> ka(1, 4), kb(1, 5);
    const int na = ka(gen), nb = kb(gen);
    std::vector<int> a(40), b(40);
    for (auto& x : a) x = std::uniform_int_distribution<int>(0, na - 1)(gen);
    for (auto& x : b) x = std::uniform_int_distribution<int>(0, nb - 1)(gen);
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(oracle::pair_count_ari(a, b)).epsilon(1e-12));
  }
  const std::vector<int> x{0, 0, 1, 1, 2}, y{5, 5, 3, 3, 9};
  CHECK(adjusted_rand_index(x, y) == 1.0);
  CHECK_THROWS_AS(adjusted_rand_index(x, std::vector<int>{0, 1}), Error);
}

TEST_CASE("row normalisation and CSV dumps") {
  Matrix m(2, 2);
  m(0, 0) = 3;
  m(0, 1) = 4;
  const auto n = l2_normalize_rows(m);
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(1, 0) == 0.0);
  const std::vector<double> ev{0.0, 0.25};
  const auto csv = eigenvalues_csv(ev);
  CHECK(csv.rfind("index,eigenvalue", 0) == 0);
  ClusterAssignment a{{1, 0, 1}, 2, Method::kKMeans};
  const auto ac = assignment_csv(a);
  CHECK(ac.find("kmeans") != std::string::npos);
}
