// Copyright (c) 2026 The adaspeech4-desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "adaspeech4/tensor.hpp"

namespace adaspeech4 {

struct KMeansResult {
  Tensor centers;                  // N x d
  std::vector<std::size_t> labels; // one per point
  std::vector<double> objective;   // after every Lloyd iteration
  std::size_t iterations = 0;
};

namespace kmeans_detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace kmeans_detail

/// Within-cluster sum of squared distances of `points` to their labelled centers.
inline double kmeans_objective(const Tensor& points, const Tensor& centers, const std::vector<std::size_t>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    s += kmeans_detail::squared_distance(points.row(i), centers.row(labels[i]));
  return s;
}

namespace kmeans_detail {

inline KMeansResult lloyd(const Tensor& points, std::size_t count, std::size_t max_iters, std::uint64_t seed) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  if (count == 0) throw ConfigError("k-means needs at least one cluster");
  if (points.empty() || n < count) {
    throw ConfigError("k-means with " + std::to_string(count) + " clusters needs at least that many points, got " +
                      std::to_string(points.empty() ? 0 : n));
  }
  std::mt19937_64 rng(seed);
  Tensor centers({count, dim});
  auto set_center = [&](std::size_t k, std::size_t p) {
    auto src = points.row(p);
    std::copy(src.begin(), src.end(), centers.row(k).begin());
  };

  // k-means++ seeding
  set_center(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(points.row(i), centers.row(0));
  for (std::size_t k = 1; k < count; ++k) {
    double total = 0.0;
    for (double d : nearest) total += d;
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < nearest[i]) {
          pick = i;
          break;
        }
        u -= nearest[i];
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    set_center(k, pick);
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(k)));
  }

  KMeansResult result;
  result.labels.assign(n, 0);
  std::vector<std::size_t> previous;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < count; ++k) {
        const double d = squared_distance(points.row(i), centers.row(k));
        if (d < best) {
          best = d;
          result.labels[i] = k;
        }
      }
    }
    // Repair empty clusters one at a time; each move strictly lowers the cost.
    std::vector<std::size_t> sizes(count, 0);
    for (auto l : result.labels) ++sizes[l];
    for (std::size_t k = 0; k < count; ++k) {
      if (sizes[k] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[result.labels[i]] < 2) continue;
        const double d = squared_distance(points.row(i), centers.row(result.labels[i]));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far_d < 0.0) continue;
      --sizes[result.labels[far]];
      result.labels[far] = k;
      sizes[k] = 1;
      set_center(k, far);
    }

    Tensor updated({count, dim}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = updated.row(result.labels[i]);
      auto src = points.row(i);
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
    for (std::size_t k = 0; k < count; ++k) {
      if (sizes[k] == 0) {
        auto keep = centers.row(k);
        std::copy(keep.begin(), keep.end(), updated.row(k).begin());
        continue;
      }
      for (auto& v : updated.row(k)) v /= static_cast<double>(sizes[k]);
    }
    centers = std::move(updated);
    result.objective.push_back(kmeans_objective(points, centers, result.labels));
    result.iterations = iter + 1;
    if (result.labels == previous) break;
    previous = result.labels;
  }
  result.centers = std::move(centers);
  return result;
}

}  // namespace kmeans_detail

/// Lloyd's algorithm with k-means++ seeding. Empty clusters move to the point
/// farthest from its current center. Points are the rows of `points`; they
/// are visited in lexicographic order, so the centers depend only on the
/// multiset of points, the count and the seed.
inline KMeansResult kmeans(const Tensor& points, std::size_t count, std::size_t max_iters, std::uint64_t seed) {
  if (points.empty()) return kmeans_detail::lloyd(points, count, max_iters, seed);
  std::vector<std::size_t> order(points.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(points.row(a).begin(), points.row(a).end(), points.row(b).begin(),
                                        points.row(b).end());
  });
  Tensor sorted({points.rows(), points.cols()});
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy(points.row(order[i]).begin(), points.row(order[i]).end(), sorted.row(i).begin());
  KMeansResult r = kmeans_detail::lloyd(sorted, count, max_iters, seed);
  std::vector<std::size_t> labels(points.rows());
  for (std::size_t i = 0; i < order.size(); ++i) labels[order[i]] = r.labels[i];
  r.labels = std::move(labels);
  return r;
}

}  // namespace adaspeech4
