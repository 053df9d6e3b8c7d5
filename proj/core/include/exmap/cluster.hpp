#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exmap/matrix.hpp"

namespace exmap::cluster {

/// Symmetric RBF affinity with zero diagonal.
struct AffinityMatrix {
  Matrix weights;
  double sigma = 0.0;  // bandwidth used (median pairwise distance)

  std::size_t size() const noexcept { return weights.rows; }
};

/// Ascending eigenvalues with the matching unit eigenvectors as columns.
struct EigenPairs {
  std::vector<double> values;
  Matrix vectors;  // n x m
};

enum class Method { kSpectral, kKMeans };
std::string_view method_name(Method method);

struct ClusterAssignment {
  std::vector<int> labels;  // every index in [0, k) occurs at least once
  std::size_t k = 0;
  Method method = Method::kSpectral;
};

/// W_ij = exp(-|v_i - v_j|^2 / (2 sigma^2)), sigma = median pairwise
/// distance. Throws kDegenerate when sigma is 0.
AffinityMatrix affinity(const Matrix& vectors);

/// I - D^-1/2 W D^-1/2; zero-degree rows become identity rows.
Matrix sym_laplacian(const AffinityMatrix& affinity);

enum class EigenSolver {
  kAuto,         // Jacobi up to kJacobiLimit rows, LAPACK dsyevr above
  kJacobi,       // cyclic Jacobi, off-diagonal norm < 1e-12, at most 100 sweeps
  kTridiagonal,  // Householder tridiagonalisation + MRRR (LAPACK dsyevr), selected pairs only
};
inline constexpr std::size_t kJacobiLimit = 256;

/// Full decomposition by cyclic Jacobi rotations. Throws kConvergence after
/// `max_sweeps` sweeps.
EigenPairs jacobi_eigen(const Matrix& symmetric, std::size_t max_sweeps = 100);

/// The m smallest eigenpairs of a symmetric matrix.
EigenPairs smallest_eigs(const Matrix& symmetric, std::size_t m = 10,
                         EigenSolver solver = EigenSolver::kAuto);

/// Number of clusters from the largest gap among the first `max_eigs`
/// ascending eigenvalues: k = i for the first maximal gap lambda_{i+1} -
/// lambda_i (1-based), clamped to at least 2.
std::size_t eigengap_k(std::span<const double> eigenvalues, std::size_t max_eigs = 10);

/// Deterministic assignment from the first k eigenvector columns: rows are
/// unit-normalised, k pivot rows are chosen by column-pivoted QR of the
/// transposed matrix, and each sample goes to the largest absolute
/// coordinate in the polar basis of the pivot rows. Empty clusters are
/// dropped and labels compacted.
ClusterAssignment cluster_qr(const Matrix& eigenvectors, std::size_t k);

struct KMeansResult {
  ClusterAssignment assignment;
  Matrix centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment is a
/// fixpoint or `max_iterations` is reached. An empty cluster takes the point
/// of the largest cluster farthest from its centroid.
KMeansResult kmeans(const Matrix& vectors, std::size_t k, std::uint64_t seed,
                    std::size_t max_iterations = 300);

struct SpectralOptions {
  std::size_t max_eigs = 10;
  EigenSolver solver = EigenSolver::kAuto;
};

struct SpectralResult {
  ClusterAssignment assignment;
  std::vector<double> eigenvalues;  // the smallest max_eigs Laplacian eigenvalues
  std::size_t eigengap_k = 0;
  double sigma = 0.0;
};

/// affinity -> normalised Laplacian -> smallest eigenpairs -> eigengap -> cluster-QR.
SpectralResult spectral_cluster(const Matrix& vectors, const SpectralOptions& options = {});

/// Adjusted Rand index between two labelings of the same samples.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

/// Rows scaled to unit L2 norm (zero rows unchanged).
Matrix l2_normalize_rows(Matrix vectors);

std::string eigenvalues_csv(std::span<const double> eigenvalues);
std::string assignment_csv(const ClusterAssignment& assignment);

}  // namespace exmap::cluster
