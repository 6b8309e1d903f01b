#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "paal/tensor.hpp"

namespace paal::kmeans {

struct ClusterModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;            // k*dim, row-major
  std::vector<std::uint32_t> assignments;   // per point
  double inertia = 0.0;
  std::vector<double> inertia_history;      // after each assignment step
  int iterations = 0;

  std::span<const double> centroid(std::size_t c) const { return {centroids.data() + c * dim, dim}; }
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// move is below `tol` or `max_iter` updates ran. An empty cluster is
/// re-seeded with the point farthest from its current centroid. `points` is
/// [N, Dim]; requires 1 <= k <= N.
ClusterModel kmeans_fit(const Tensor& points, std::size_t k, std::uint64_t seed, int max_iter = 100,
                        double tol = 1e-6);

/// Euclidean argmin over centroids, ties to the lowest index.
std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> point);

}  // namespace paal::kmeans
