#include "dgppu/graph.hpp"

#include <algorithm>
#include <utility>

#include "dgppu/error.hpp"

namespace dgppu {

double squared_distance(const Matrix& points, std::size_t i, std::size_t j) {
  const auto d = points.cols();
  const double* a = points.data() + static_cast<Eigen::Index>(i) * d;
  const double* b = points.data() + static_cast<Eigen::Index>(j) * d;
  double acc = 0.0;
  for (Eigen::Index c = 0; c < d; ++c) {
    const double diff = a[c] - b[c];
    acc += diff * diff;
  }
  return acc;
}

namespace {

using Candidate = std::pair<double, std::uint32_t>;

void check_input(const Matrix& points, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (points.cols() < 1) fail(ErrorKind::InvalidInput, "knn: points need at least one column");
  if (k >= n) {
    fail(ErrorKind::InsufficientPoints, "knn: k=" + std::to_string(k) + " needs more than " +
                                            std::to_string(n) + " points");
  }
  if (!points.allFinite()) fail(ErrorKind::InvalidInput, "knn: non-finite entries");
}

}  // namespace

KnnGraph knn_graph(const Matrix& points, std::size_t k) {
  check_input(points, k);
  const auto n = static_cast<std::size_t>(points.rows());
  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k)};
  if (k == 0) return g;
  std::vector<Candidate> candidates;
  candidates.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) candidates.emplace_back(squared_distance(points, i, j), static_cast<std::uint32_t>(j));
    }
    // Pair ordering is (distance, index): exactly the tie rule.
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end());
    for (std::size_t r = 0; r < k; ++r) g.neighbors[i * k + r] = candidates[r].second;
  }
  return g;
}

KnnGraph feature_knn(const Matrix& features, std::size_t k) { return knn_graph(features, k); }

KnnGraph knn_graph_bruteforce(const Matrix& points, std::size_t k) {
  check_input(points, k);
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<double> table(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) table[i * n + j] = squared_distance(points, i, j);
  }
  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k)};
  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) order[j] = static_cast<std::uint32_t>(j);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return table[i * n + a] < table[i * n + b];
    });
    std::size_t r = 0;
    for (auto j : order) {
      if (r == k) break;
      if (j == i) continue;
      g.neighbors[i * k + r++] = j;
    }
  }
  return g;
}

std::string dump_graph(const KnnGraph& graph) {
  std::string out;
  for (std::size_t i = 0; i < graph.n; ++i) {
    out += std::to_string(i) + ':';
    for (auto j : graph.row(i)) out += ' ' + std::to_string(j);
    out += '\n';
  }
  return out;
}

}  // namespace dgppu
