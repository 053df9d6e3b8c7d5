#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "exmap/cluster.hpp"
#include "exmap/error.hpp"

extern "C" void dsyevr_(const char* jobz, const char* range, const char* uplo, const int* n, double* a,
                        const int* lda, const double* vl, const double* vu, const int* il, const int* iu,
                        const double* abstol, int* m, double* w, double* z, const int* ldz, int* isuppz,
                        double* work, const int* lwork, int* iwork, const int* liwork, int* info);

namespace exmap::cluster {
namespace {

void check_square(const Matrix& m) {
  if (m.rows != m.cols || m.rows == 0) {
    throw Error(ErrorKind::kShape, "eigensolver needs a nonempty square matrix");
  }
}

EigenPairs sorted_pairs(std::vector<double> values, const Matrix& vectors, std::size_t m) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  m = std::min(m, values.size());
  EigenPairs out;
  out.vectors = Matrix(vectors.rows, m);
  for (std::size_t j = 0; j < m; ++j) {
    out.values.push_back(values[order[j]]);
    // Sign convention: the largest-magnitude entry of each vector is positive.
    double big = 0.0;
    for (std::size_t i = 0; i < vectors.rows; ++i) {
      const double v = vectors(i, order[j]);
      if (std::abs(v) > std::abs(big)) big = v;
    }
    const double sign = big < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < vectors.rows; ++i) out.vectors(i, j) = sign * vectors(i, order[j]);
  }
  return out;
}

}  // namespace

EigenPairs jacobi_eigen(const Matrix& symmetric, std::size_t max_sweeps) {
  check_square(symmetric);
  const std::size_t n = symmetric.rows;
  Matrix a = symmetric;
  Matrix v = Matrix::identity(n);

  double frob = 0.0;
  for (double x : a.data) frob += x * x;
  const double tol = 1e-12 * std::max(1.0, std::sqrt(frob));

  for (std::size_t sweep = 0;; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) off += a(i, j) * a(i, j);
      }
    }
    if (std::sqrt(off) < tol) break;
    if (sweep == max_sweeps) {
      throw Error(ErrorKind::kConvergence, "Jacobi eigensolver did not converge in " +
                                               std::to_string(max_sweeps) + " sweeps");
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
  return sorted_pairs(std::move(values), v, n);
}

EigenPairs smallest_eigs(const Matrix& symmetric, std::size_t m, EigenSolver solver) {
  check_square(symmetric);
  if (m == 0) throw Error(ErrorKind::kInvalidArgument, "smallest_eigs: m must be >= 1");
  const std::size_t n = symmetric.rows;
  if (solver == EigenSolver::kAuto) solver = n <= kJacobiLimit ? EigenSolver::kJacobi : EigenSolver::kTridiagonal;

  if (solver == EigenSolver::kJacobi) {
    EigenPairs all = jacobi_eigen(symmetric);
    return sorted_pairs(all.values, all.vectors, m);
  }

  // LAPACK dsyevr: Householder tridiagonalisation, then MRRR for only the
  // requested eigenpairs. The input is symmetric, so row-major storage is
  // already the column-major layout LAPACK expects.
  const int nn = static_cast<int>(n);
  const int iu = static_cast<int>(std::min(m, n));
  std::vector<double> a = symmetric.data;
  std::vector<double> w(n), z(n * static_cast<std::size_t>(iu));
  std::vector<int> support(2 * static_cast<std::size_t>(iu));
  const double vl = 0.0, vu = 0.0, abstol = 0.0;
  const int il = 1;
  int found = 0, info = 0, lwork = -1, liwork = -1, iwork_query = 0;
  double work_query = 0.0;
  dsyevr_("V", "I", "U", &nn, a.data(), &nn, &vl, &vu, &il, &iu, &abstol, &found, w.data(), z.data(), &nn,
          support.data(), &work_query, &lwork, &iwork_query, &liwork, &info);
  lwork = static_cast<int>(work_query);
  liwork = iwork_query;
  std::vector<double> work(static_cast<std::size_t>(lwork));
  std::vector<int> iwork(static_cast<std::size_t>(liwork));
  dsyevr_("V", "I", "U", &nn, a.data(), &nn, &vl, &vu, &il, &iu, &abstol, &found, w.data(), z.data(), &nn,
          support.data(), work.data(), &lwork, iwork.data(), &liwork, &info);
  if (info != 0 || found != iu) {
    throw Error(ErrorKind::kConvergence, "tridiagonal eigensolver failed (LAPACK info " + std::to_string(info) + ")");
  }
  std::vector<double> values(w.begin(), w.begin() + iu);
  Matrix vectors(n, static_cast<std::size_t>(iu));
  for (std::size_t j = 0; j < static_cast<std::size_t>(iu); ++j) {
    for (std::size_t i = 0; i < n; ++i) vectors(i, j) = z[j * n + i];
  }
  return sorted_pairs(std::move(values), vectors, m);
}

}  // namespace exmap::cluster
