// Copyright 2026 The knnmt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "knnmt/common.h"
#include "knnmt/dense.h"
#include "knnmt/random.h"

namespace knnmt {

template <typename Derived>
RowMatrix<typename Derived::Scalar> gather_rows(
    const Eigen::MatrixBase<Derived>& data, const std::vector<std::size_t>& rows) {
  RowMatrix<typename Derived::Scalar> out(static_cast<Eigen::Index>(rows.size()),
                                          data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        data.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

struct KMeansOptions {
  int max_iters = 20;
  double tolerance = 1e-4;  // relative distortion improvement
  std::uint64_t seed = 1;
};

template <typename Scalar>
struct KMeansResult {
  RowMatrix<Scalar> centroids;
  std::vector<int> assignment;
  double distortion = 0;  // sum of squared distances to assigned centroid
  int iterations = 0;
};

namespace detail {

// Nearest centroid per row; equidistant rows go to the lower index.
// Returns the summed squared distance as computed by the expansion
// |x|^2 - 2 x.c + |c|^2 (clamped at zero).
template <typename Scalar>
double assign_nearest(const RowMatrix<Scalar>& data,
                      const RowMatrix<Scalar>& centroids,
                      std::vector<int>& assignment) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = data.rows();
  const Eigen::Index k = centroids.rows();
  const Vec cnorm = centroids.rowwise().squaredNorm();
  assignment.assign(static_cast<std::size_t>(n), 0);
  double total = 0;
  constexpr Eigen::Index kChunk = 2048;
  RowMatrix<Scalar> dots;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, n - start);
    dots.noalias() = data.middleRows(start, rows) * centroids.transpose();
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Scalar xnorm = data.row(start + i).squaredNorm();
      Scalar best = std::numeric_limits<Scalar>::infinity();
      int best_c = 0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const Scalar d = xnorm - Scalar(2) * dots(i, c) + cnorm[c];
        if (d < best) {
          best = d;
          best_c = static_cast<int>(c);
        }
      }
      assignment[static_cast<std::size_t>(start + i)] = best_c;
      total += std::max<double>(0.0, static_cast<double>(best));
    }
  }
  return total;
}

template <typename Scalar>
RowMatrix<Scalar> kmeans_plus_plus(const RowMatrix<Scalar>& data, int k,
                                   std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(data.rows());
  RowMatrix<Scalar> centers(k, data.cols());
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = uniform_index(rng, n);
  for (int c = 0; c < k; ++c) {
    centers.row(c) = data.row(static_cast<Eigen::Index>(pick));
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d =
        (data.rowwise() - centers.row(c)).rowwise().squaredNorm();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i],
                           static_cast<double>(d[static_cast<Eigen::Index>(i)]));
      total += min_d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0) {
      // Every point coincides with a chosen center; keep going in order.
      pick = static_cast<std::size_t>(c + 1) % n;
      continue;
    }
    const double target = uniform_real(rng) * total;
    double acc = 0;
    pick = n;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d2[i] <= 0) continue;
      last_positive = i;
      acc += min_d2[i];
      if (acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;
  }
  return centers;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
// with the point farthest from the centroid of the largest cluster.
template <typename Scalar>
KMeansResult<Scalar> kmeans(const RowMatrix<Scalar>& data, int k,
                            const KMeansOptions& opts = {}) {
  if (k < 1) throw usage_error("kmeans: k must be >= 1");
  if (data.rows() < k) {
    throw usage_error("kmeans: " + std::to_string(data.rows()) +
                      " training points is fewer than " + std::to_string(k) +
                      " clusters; lower the cluster count");
  }
  std::mt19937_64 rng(opts.seed);
  KMeansResult<Scalar> res;
  res.centroids = detail::kmeans_plus_plus(data, k, rng);

  const Eigen::Index n = data.rows();
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0;; ++it) {
    const double distortion =
        detail::assign_nearest(data, res.centroids, res.assignment);
    res.iterations = it;
    const bool converged =
        distortion == 0 ||
        (std::isfinite(prev) && prev - distortion <= opts.tolerance * prev);
    if (converged || it == opts.max_iters) break;
    prev = distortion;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, data.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = res.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += data.row(i).template cast<double>();
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      res.centroids.row(c) =
          (sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]))
              .template cast<Scalar>();
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] != 0) continue;
      const auto largest = static_cast<int>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      Eigen::Index far = -1;
      double far_d = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (res.assignment[static_cast<std::size_t>(i)] != largest) continue;
        const double d = (data.row(i) - res.centroids.row(largest))
                             .template cast<double>()
                             .squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.centroids.row(c) = data.row(far);
      res.assignment[static_cast<std::size_t>(far)] = c;
      --counts[static_cast<std::size_t>(largest)];
      counts[static_cast<std::size_t>(c)] = 1;
    }
  }

  // Report the exact distortion of the final assignment.
  res.distortion = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    res.distortion +=
        (data.row(i) - res.centroids.row(res.assignment[static_cast<std::size_t>(i)]))
            .template cast<double>()
            .squaredNorm();
  }
  return res;
}

}  // namespace knnmt
