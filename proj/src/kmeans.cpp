#include "paal/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "paal/random.hpp"

namespace paal::kmeans {

namespace {

double squared_distance(const float* p, std::span<const double> c) {
  double d = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double t = static_cast<double>(p[i]) - c[i];
    d += t * t;
  }
  return d;
}

struct Nearest {
  std::size_t index;
  double dist;
};

Nearest nearest(const ClusterModel& m, const float* p) {
  Nearest best{0, squared_distance(p, m.centroid(0))};
  for (std::size_t c = 1; c < m.k; ++c) {
    const double d = squared_distance(p, m.centroid(c));
    if (d < best.dist) best = {c, d};
  }
  return best;
}

// Assigns every point and returns the inertia; `dist` receives each point's
// squared distance to its centroid.
double assign(ClusterModel& m, const Tensor& points, std::vector<double>& dist) {
  const std::size_t n = points.dim(0);
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto best = nearest(m, points.ptr() + i * m.dim);
    m.assignments[i] = static_cast<std::uint32_t>(best.index);
    dist[i] = best.dist;
    inertia += best.dist;
  }
  return inertia;
}

void set_centroid(ClusterModel& m, std::size_t c, const float* p) {
  for (std::size_t j = 0; j < m.dim; ++j) m.centroids[c * m.dim + j] = p[j];
}

void seed_plus_plus(ClusterModel& m, const Tensor& points, Rng& rng) {
  const std::size_t n = points.dim(0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t c = 0; c < m.k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0.0) {
        const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (d2[i] > 0.0 && acc > r) {
            pick = i;
            break;
          }
        }
        // rounding can leave r at the very top of the range
        if (pick == n) {
          for (std::size_t i = n; i-- > 0;) {
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
          }
        }
      } else {
        // every point coincides with a centroid already
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
      }
    }
    chosen[pick] = 1;
    set_centroid(m, c, points.ptr() + pick * m.dim);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.ptr() + i * m.dim, m.centroid(c)));
    }
  }
}

}  // namespace

ClusterModel kmeans_fit(const Tensor& points, std::size_t k, std::uint64_t seed, int max_iter, double tol) {
  if (points.rank() != 2) throw std::invalid_argument("kmeans expects [N, Dim] points, got " + to_string(points.shape()));
  const std::size_t n = points.dim(0);
  if (k == 0 || k > n) {
    throw std::invalid_argument("kmeans needs 1 <= K <= N, got K=" + std::to_string(k) + " N=" + std::to_string(n));
  }
  points.check_finite("kmeans points");

  ClusterModel m;
  m.k = k;
  m.dim = points.dim(1);
  m.centroids.assign(k * m.dim, 0.0);
  m.assignments.assign(n, 0);
  Rng rng(seed);
  seed_plus_plus(m, points, rng);

  std::vector<double> dist(n);
  std::vector<double> sums(k * m.dim);
  std::vector<std::size_t> counts(k);
  m.inertia = assign(m, points, dist);
  m.inertia_history.push_back(m.inertia);

  for (m.iterations = 0; m.iterations < max_iter;) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = m.assignments[i];
      ++counts[c];
      for (std::size_t j = 0; j < m.dim; ++j) sums[c * m.dim + j] += points[i * m.dim + j];
    }

    std::vector<char> reseeded(n, 0);
    double max_shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> next(m.dim);
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < m.dim; ++j) next[j] = sums[c * m.dim + j] / static_cast<double>(counts[c]);
      } else {
        std::size_t far = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (!reseeded[i] && (far == n || dist[i] > dist[far])) far = i;
        }
        reseeded[far] = 1;
        dist[far] = 0.0;
        for (std::size_t j = 0; j < m.dim; ++j) next[j] = points[far * m.dim + j];
      }
      double shift = 0.0;
      for (std::size_t j = 0; j < m.dim; ++j) {
        const double t = next[j] - m.centroids[c * m.dim + j];
        shift += t * t;
        m.centroids[c * m.dim + j] = next[j];
      }
      max_shift = std::max(max_shift, std::sqrt(shift));
    }
    ++m.iterations;

    m.inertia = assign(m, points, dist);
    m.inertia_history.push_back(m.inertia);
    if (max_shift < tol) break;
  }
  return m;
}

std::size_t nearest_centroid(const ClusterModel& model, std::span<const float> point) {
  if (point.size() != model.dim) {
    throw std::invalid_argument("point has dimension " + std::to_string(point.size()) + ", model has " +
                                std::to_string(model.dim));
  }
  return nearest(model, point.data()).index;
}

}  // namespace paal::kmeans
