#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgppu/types.hpp"

namespace dgppu {

// Directed k-regular neighbour structure. Row i lists the k nearest other
// points to i by Euclidean distance, ascending; equal distances are ordered
// by ascending index. A point never lists itself.
struct KnnGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> neighbors;  // n * k, row-major

  std::span<const std::uint32_t> row(std::size_t i) const {
    return {neighbors.data() + i * k, k};
  }
  bool operator==(const KnnGraph&) const = default;
};

// Squared Euclidean distance between rows i and j, summed in column order.
// Every graph builder uses this so that ties compare identically.
double squared_distance(const Matrix& points, std::size_t i, std::size_t j);

// Exact kNN over rows of an n x d matrix (coordinates or features).
// Throws InsufficientPoints when k >= n, InvalidInput on non-finite entries.
KnnGraph knn_graph(const Matrix& points, std::size_t k);

// Same as knn_graph, over learned per-point features.
KnnGraph feature_knn(const Matrix& features, std::size_t k);

// Reference: full pairwise distance table, full sort of every row.
KnnGraph knn_graph_bruteforce(const Matrix& points, std::size_t k);

// One row per point: "i: j1 j2 ...".
std::string dump_graph(const KnnGraph& graph);

}  // namespace dgppu
