#pragma once

// k-means staging of per-visit representations, external clustering metrics,
// and PCA projection for 2-D visualization.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcem/matrix.hpp"

namespace tcem {

struct ClusterResult {
  std::vector<int> assignments;
  Matrix centroids;  // K x width
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> inertia_history;  // after every assignment step of the winning run
};

struct KMeansOptions {
  std::size_t k = 3;
  std::size_t max_iters = 300;
  std::size_t restarts = 10;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Nearest-centroid assignment (ties to the lowest index). Writes each point's
// squared distance to `dist2` and returns their sum, summed in point order.
double assign_points_serial(const Matrix& points, const Matrix& centroids,
                            std::span<int> assignments, std::span<double> dist2);
double assign_points_parallel(const Matrix& points, const Matrix& centroids,
                              std::span<int> assignments, std::span<double> dist2, int workers);

double squared_distance(std::span<const double> a, std::span<const double> b);

// Lloyd iterations from k-means++ seeding; best of `restarts` by inertia
// (ties keep the earliest restart). Empty clusters are reseeded at the point
// farthest from its centroid.
ClusterResult kmeans(const Matrix& points, const KMeansOptions& options);

double purity(std::span<const int> assignments, std::span<const int> labels);
double nmi(std::span<const int> assignments, std::span<const int> labels);
double ari(std::span<const int> assignments, std::span<const int> labels);

struct MetricsReport {
  double purity = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
};

MetricsReport evaluate_clustering(std::span<const int> assignments, std::span<const int> labels);

struct PcaResult {
  Matrix projected;   // n x dims
  Matrix components;  // dims x width, orthonormal rows
  Vec explained_ratio;
  Vec mean;
};

// Eigendecomposition of the sample covariance. Component signs are fixed so
// the largest-magnitude entry of each is positive.
PcaResult pca_project(const Matrix& points, std::size_t dims = 2);

}  // namespace tcem
