#include "tcem/clustering.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "tcem/errors.hpp"

namespace tcem {

namespace {

void check_pair(std::span<const int> a, std::span<const int> b, const char* what) {
  if (a.size() != b.size())
    throw ArgumentError(std::string(what) + ": " + std::to_string(a.size()) + " assignments vs " +
                        std::to_string(b.size()) + " labels");
  if (a.empty()) throw ArgumentError(std::string(what) + ": empty input");
}

// Dense contingency table with rows = clusters, cols = labels.
struct Contingency {
  std::vector<std::vector<double>> table;
  Vec row_sums, col_sums;
  double n = 0.0;
};

Contingency contingency(std::span<const int> a, std::span<const int> b) {
  std::map<int, std::size_t> ra, rb;
  for (int x : a) ra.try_emplace(x, ra.size());
  for (int x : b) rb.try_emplace(x, rb.size());
  Contingency c;
  c.table.assign(ra.size(), std::vector<double>(rb.size(), 0.0));
  c.row_sums.assign(ra.size(), 0.0);
  c.col_sums.assign(rb.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t r = ra[a[i]], k = rb[b[i]];
    c.table[r][k] += 1.0;
    c.row_sums[r] += 1.0;
    c.col_sums[k] += 1.0;
  }
  c.n = static_cast<double>(a.size());
  return c;
}

double entropy(const Vec& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t first = pick(rng);
  std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
  Vec best(n);
  for (std::size_t i = 0; i < n; ++i) best[i] = squared_distance(points.row(i), centroids.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : best) total += d;
    std::size_t chosen = n - 1;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += best[i];
        if (acc > target && best[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    std::copy(points.row(chosen).begin(), points.row(chosen).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i)
      best[i] = std::min(best[i], squared_distance(points.row(i), centroids.row(c)));
  }
  return centroids;
}

// Recomputes centroids as cluster means; moves empty clusters to the
// currently worst-served point. Returns true if any cluster was empty.
bool update_centroids(const Matrix& points, std::span<const int> assignments,
                      std::span<const double> dist2, Matrix& centroids) {
  const std::size_t k = centroids.rows(), w = points.cols();
  std::vector<std::size_t> counts(k, 0);
  centroids.fill(0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto c = static_cast<std::size_t>(assignments[i]);
    ++counts[c];
    axpy(1.0, points.row(i), centroids.row(c));
  }
  bool repaired = false;
  std::vector<double> far(dist2.begin(), dist2.end());
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      for (std::size_t j = 0; j < w; ++j) centroids(c, j) /= static_cast<double>(counts[c]);
      continue;
    }
    repaired = true;
    const auto it = std::max_element(far.begin(), far.end());
    const auto idx = static_cast<std::size_t>(it - far.begin());
    std::copy(points.row(idx).begin(), points.row(idx).end(), centroids.row(c).begin());
    *it = -1.0;  // do not reuse the same point for another empty cluster
  }
  return repaired;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double assign_points_serial(const Matrix& points, const Matrix& centroids,
                            std::span<int> assignments, std::span<double> dist2) {
  const std::size_t n = points.rows(), k = centroids.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(points.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assignments[i] = arg;
    dist2[i] = best;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += dist2[i];
  return total;
}

double assign_points_parallel(const Matrix& points, const Matrix& centroids,
                              std::span<int> assignments, std::span<double> dist2, int workers) {
  const auto n = static_cast<long>(points.rows());
  const std::size_t k = centroids.rows();
#pragma omp parallel for num_threads(workers > 0 ? workers : 1) schedule(static)
  for (long li = 0; li < n; ++li) {
    const auto i = static_cast<std::size_t>(li);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(points.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assignments[i] = arg;
    dist2[i] = best;
  }
  // Serial sum keeps the result independent of the thread count.
  double total = 0.0;
  for (long i = 0; i < n; ++i) total += dist2[static_cast<std::size_t>(i)];
  return total;
}

ClusterResult kmeans(const Matrix& points, const KMeansOptions& options) {
  const std::size_t n = points.rows(), k = options.k;
  if (k < 1) throw ArgumentError("kmeans needs K >= 1");
  if (n < k)
    throw ArgumentError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                        " clusters");
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);

  ClusterResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::vector<int> assign(n), previous(n);
  Vec dist2(n);

  for (std::size_t run = 0; run < restarts; ++run) {
    std::mt19937_64 rng(options.seed + 0x9e3779b97f4a7c15ULL * run);
    Matrix centroids = kmeanspp_seed(points, k, rng);
    ClusterResult cur;
    std::size_t iter = 0;
    double inertia = 0.0;
    while (true) {
      inertia = options.workers > 1
                    ? assign_points_parallel(points, centroids, assign, dist2, options.workers)
                    : assign_points_serial(points, centroids, assign, dist2);
      cur.inertia_history.push_back(inertia);
      ++iter;
      const bool converged = iter > 1 && assign == previous;
      if (converged || iter >= options.max_iters) break;
      previous = assign;
      update_centroids(points, assign, dist2, centroids);
    }
    // Centroids consistent with the final assignment.
    update_centroids(points, assign, dist2, centroids);
    cur.assignments = assign;
    cur.centroids = centroids;
    cur.inertia = inertia;
    cur.iterations = iter;
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

double purity(std::span<const int> assignments, std::span<const int> labels) {
  check_pair(assignments, labels, "purity");
  const Contingency c = contingency(assignments, labels);
  double hits = 0.0;
  for (const auto& row : c.table) hits += *std::max_element(row.begin(), row.end());
  return hits / c.n;
}

double nmi(std::span<const int> assignments, std::span<const int> labels) {
  check_pair(assignments, labels, "nmi");
  const Contingency c = contingency(assignments, labels);
  const double hc = entropy(c.row_sums, c.n);
  const double hl = entropy(c.col_sums, c.n);
  if (c.row_sums.size() == 1 && c.col_sums.size() == 1) return 1.0;
  if (c.row_sums.size() == 1 || c.col_sums.size() == 1) return 0.0;
  double mi = 0.0;
  for (std::size_t r = 0; r < c.table.size(); ++r)
    for (std::size_t k = 0; k < c.table[r].size(); ++k) {
      const double nij = c.table[r][k];
      if (nij > 0.0) mi += (nij / c.n) * std::log(c.n * nij / (c.row_sums[r] * c.col_sums[k]));
    }
  return std::clamp(2.0 * mi / (hc + hl), 0.0, 1.0);
}

double ari(std::span<const int> assignments, std::span<const int> labels) {
  check_pair(assignments, labels, "ari");
  if (assignments.size() < 2) throw ArgumentError("ari needs at least 2 items");
  const Contingency c = contingency(assignments, labels);
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& row : c.table)
    for (double nij : row) index += choose2(nij);
  for (double a : c.row_sums) sum_a += choose2(a);
  for (double b : c.col_sums) sum_b += choose2(b);
  const double pairs = choose2(c.n);
  const double expected = sum_a * sum_b / pairs;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical
  return (index - expected) / (max_index - expected);
}

MetricsReport evaluate_clustering(std::span<const int> assignments, std::span<const int> labels) {
  return {purity(assignments, labels), nmi(assignments, labels),
          assignments.size() >= 2 ? ari(assignments, labels) : 1.0};
}

PcaResult pca_project(const Matrix& points, std::size_t dims) {
  const std::size_t n = points.rows(), w = points.cols();
  if (n < 2) throw ArgumentError("pca needs at least 2 points");
  if (dims > w)
    throw ArgumentError("pca: cannot project width " + std::to_string(w) + " onto " +
                        std::to_string(dims) + " components");

  PcaResult out;
  out.mean.assign(w, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0, points.row(i), out.mean);
  for (double& m : out.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j)
      centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = points(i, j) - out.mean[j];
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw ArgumentError("pca: eigendecomposition failed");

  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& evecs = solver.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) total += std::max(evals(i), 0.0);

  out.components = Matrix(dims, w);
  out.explained_ratio.assign(dims, 0.0);
  for (std::size_t c = 0; c < dims; ++c) {
    const auto col = static_cast<Eigen::Index>(w - 1 - c);
    Eigen::VectorXd v = evecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < w; ++j) out.components(c, j) = v(static_cast<Eigen::Index>(j));
    out.explained_ratio[c] = total > 0.0 ? std::max(evals(col), 0.0) / total : 0.0;
  }

  out.projected = Matrix(n, dims);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dims; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < w; ++j)
        s += centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * out.components(c, j);
      out.projected(i, c) = s;
    }
  return out;
}

}  // namespace tcem
