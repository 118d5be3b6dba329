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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "adaspeech4/basis_bank.hpp"
#include "adaspeech4/kmeans.hpp"
#include "test_support.hpp"

namespace adaspeech4 {
namespace {

using testing::uniform;
namespace bb = basis_bank;

ParameterStore bank(const Tensor& b, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  ParameterStore s;
  s.add(bb::kBasis, b);
  s.add(bb::kQuery, wq);
  s.add(bb::kKey, wk);
  s.add(bb::kValue, wv);
  return s;
}

ParameterStore random_bank(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return bank(uniform({n, d}, rng), uniform({d, d}, rng), uniform({d, d}, rng), uniform({d, d}, rng));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// w_i = exp(l_i) / sum exp(l_j), l_i = (S Wq) . (b_i Wk) / sqrt(d), written
// one scalar at a time.
std::vector<double> scalar_weights(const Tensor& s, const Tensor& b, const Tensor& wq, const Tensor& wk) {
  const std::size_t n = b.rows(), d = s.cols();
  std::vector<double> q(d, 0.0), logits(n, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t k = 0; k < d; ++k) q[j] += s[k] * wq.at(k, j);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double key = 0.0;
      for (std::size_t k = 0; k < d; ++k) key += b.at(i, k) * wk.at(k, j);
      logits[i] += q[j] * key;
    }
    logits[i] /= std::sqrt(static_cast<double>(d));
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  std::vector<double> w;
  for (double l : logits) w.push_back(std::exp(l) / z);
  return w;
}

TEST(AttentionWeights, SingleBasisGivesWeightOne) {
  std::mt19937_64 rng(1);
  const ParameterStore s = random_bank(1, 3, rng);
  auto [e, w] = extract_representation(uniform({1, 3}, rng), s);
  EXPECT_EQ(w, Tensor::matrix(1, 1, {1.0}));
  // E is exactly b_1 W_V.
  EXPECT_TRUE(bit_identical(e, ops::matmul_values(s.get(bb::kBasis), s.get(bb::kValue))));
}

TEST(AttentionWeights, ZeroQueryGivesUniformWeightsAndMeanValue) {
  std::mt19937_64 rng(2);
  const std::size_t n = 5, d = 3;
  ParameterStore s = random_bank(n, d, rng);
  s.get_mut(bb::kQuery) = Tensor({d, d}, 0.0);
  auto [e, w] = extract_representation(uniform({1, d}, rng), s);
  for (double v : w.values()) EXPECT_NEAR(v, 1.0 / n, 1e-15);
  const Tensor values = ops::matmul_values(s.get(bb::kBasis), s.get(bb::kValue));
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += values.at(i, c);
    EXPECT_NEAR(e[c], mean / n, 1e-14);
  }
}

TEST(AttentionWeights, MatchesScalarOracleAtSeed11) {
  std::mt19937_64 rng(11);
  const Tensor b = uniform({3, 2}, rng), wq = uniform({2, 2}, rng), wk = uniform({2, 2}, rng),
               wv = uniform({2, 2}, rng), sp = uniform({1, 2}, rng);
  auto [e, w] = extract_representation(sp, bank(b, wq, wk, wv));
  testing::expect_tensor_near(w, scalar_weights(sp, b, wq, wk), 1e-12);
}

TEST(AttentionWeights, DimensionMismatchIsDimensionError) {
  std::mt19937_64 rng(3);
  const ParameterStore s = random_bank(4, 3, rng);
  EXPECT_THROW(extract_representation(uniform({1, 4}, rng), s), DimensionError);
}

TEST(AttentionProperty, WeightsAreDistributionsAndEIsTheirMixture) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + seed % 7, d = 2 + seed % 4;
    const ParameterStore s = random_bank(n, d, rng);
    auto [e, w] = extract_representation(uniform({1, d}, rng, -3, 3), s);
    double sum = 0.0;
    for (double v : w.values()) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    const Tensor values = ops::matmul_values(s.get(bb::kBasis), s.get(bb::kValue));
    double bound = 0.0;
    for (double v : values.values()) bound = std::max(bound, std::abs(v));
    for (std::size_t c = 0; c < d; ++c) {
      double mix = 0.0;
      for (std::size_t i = 0; i < n; ++i) mix += w[i] * values.at(i, c);
      EXPECT_NEAR(e[c], mix, 1e-10) << "seed " << seed;
      EXPECT_LE(std::abs(e[c]), bound + 1e-12);
    }
  }
}

TEST(AttentionGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  ParameterStore s = random_bank(5, 4, rng);
  s.add("S", uniform({1, 4}, rng));
  const Tensor r = uniform({1, 4}, rng);
  LossBuilder loss = [&](Tape& tape) {
    BasisAttention a = attend_basis(tape, tape.param("S"));
    return ops::add(ops::sum_all(ops::mul(a.representation, tape.constant(r))),
                    ops::sum_all(ops::mul(a.weights, a.weights)));
  };
  EXPECT_LT(check_gradients(loss, s, 1e-5).max_relative_error, 1e-4);
}

TEST(RegularizationLoss, TwoVectorCases) {
  EXPECT_NEAR(regularization_loss(Tensor::matrix(2, 3, {1, 2, 3, 1, 2, 3})), 1.0, 1e-9);
  EXPECT_NEAR(regularization_loss(Tensor::matrix(2, 2, {1, 0, 0, 2})), 0.0, 1e-9);
  EXPECT_NEAR(regularization_loss(Tensor::matrix(2, 2, {1, 1, -3, -3})), -1.0, 1e-9);
}

TEST(RegularizationLoss, MatchesPairwiseCosineOracleAtSeed5) {
  std::mt19937_64 rng(5);
  Tensor b = uniform({3, 4}, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    const double n = std::sqrt(dot(b.row(i), b.row(i)));
    for (double& v : b.row(i)) v /= n;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j)
        s += dot(b.row(i), b.row(j)) / std::sqrt(dot(b.row(i), b.row(i)) * dot(b.row(j), b.row(j)));
  EXPECT_NEAR(regularization_loss(b), s / 6.0, 1e-12);
}

TEST(RegularizationLoss, Errors) {
  EXPECT_THROW(regularization_loss(Tensor::matrix(1, 2, {1, 2})), ConfigError);
  EXPECT_THROW(regularization_loss(Tensor::matrix(2, 2, {1, 2, 0, 0})), DegenerateError);
  EXPECT_THROW(bb::validate_basis(Tensor::matrix(2, 2, {1, 2, 0, 0})), DegenerateError);
}

TEST(RegularizationProperty, PermutationAndScaleInvariant) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 6, d = 2 + seed % 5;
    const Tensor b = uniform({n, d}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor permuted({n, d});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(b.row(perm[i]).begin(), b.row(perm[i]).end(), permuted.row(i).begin());
    Tensor scaled = b;
    const std::size_t which = seed % n;
    for (double& v : scaled.row(which)) v *= 1e-3 + 50.0 * (seed % 3);
    const double base = regularization_loss(b);
    EXPECT_NEAR(regularization_loss(permuted), base, 1e-10);
    EXPECT_NEAR(regularization_loss(scaled), base, 1e-10);
    EXPECT_GE(base, -1.0 - 1e-12);
    EXPECT_LE(base, 1.0 + 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(KMeans, SeparatedSingletons) {
  const Tensor pts = Tensor::matrix(2, 2, {0, 0, 10, 10});
  const KMeansResult r = kmeans(pts, 2, 10, 1);
  std::vector<std::vector<double>> centers = {{r.centers.at(0, 0), r.centers.at(0, 1)},
                                              {r.centers.at(1, 0), r.centers.at(1, 1)}};
  std::sort(centers.begin(), centers.end());
  EXPECT_EQ(centers, (std::vector<std::vector<double>>{{0, 0}, {10, 10}}));
}

TEST(KMeans, IdenticalPointsCollapseToOneCenter) {
  const Tensor pts({5, 3}, 1.25);
  const KMeansResult r = kmeans(pts, 2, 10, 4);
  for (double v : r.centers.values()) EXPECT_EQ(v, 1.25);
  EXPECT_EQ(kmeans_objective(pts, r.centers, r.labels), 0.0);
}

TEST(KMeans, DistinctPointsBecomeSingletonCenters) {
  std::mt19937_64 rng(6);
  const Tensor pts = uniform({7, 3}, rng);
  const KMeansResult r = kmeans(pts, 7, 50, 2);
  std::vector<bool> hit(7, false);
  for (std::size_t k = 0; k < 7; ++k)
    for (std::size_t i = 0; i < 7; ++i)
      if (std::equal(r.centers.row(k).begin(), r.centers.row(k).end(), pts.row(i).begin())) hit[i] = true;
  EXPECT_TRUE(std::all_of(hit.begin(), hit.end(), [](bool b) { return b; }));
}

TEST(KMeans, TooFewPointsIsConfigError) {
  EXPECT_THROW(kmeans(Tensor::matrix(2, 1, {0, 1}), 3, 10, 0), ConfigError);
}

Tensor blobs(std::size_t per_blob, std::mt19937_64& rng) {
  const double centers[4][2] = {{-5, -5}, {5, -5}, {-5, 5}, {5, 5}};
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor pts({4 * per_blob, 2});
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t i = 0; i < per_blob; ++i)
      for (std::size_t c = 0; c < 2; ++c) pts.at(b * per_blob + i, c) = centers[b][c] + noise(rng);
  return pts;
}

// Plain Lloyd from uniformly chosen distinct starting points.
double lloyd_restart(const Tensor& pts, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = pts.rows(), d = pts.cols();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<double>> c;
  for (std::size_t j = 0; j < k; ++j) c.emplace_back(pts.row(idx[j]).begin(), pts.row(idx[j]).end());
  std::vector<std::size_t> lab(n, 0);
  double obj = 0.0;
  for (int it = 0; it < 100; ++it) {
    obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = 1e300;
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += (pts.at(i, t) - c[j][t]) * (pts.at(i, t) - c[j][t]);
        if (s < best) {
          best = s;
          lab[i] = j;
        }
      }
      obj += best;
    }
    std::vector<std::vector<double>> sum(k, std::vector<double>(d, 0.0));
    std::vector<double> cnt(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      cnt[lab[i]] += 1;
      for (std::size_t t = 0; t < d; ++t) sum[lab[i]][t] += pts.at(i, t);
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j] > 0)
        for (std::size_t t = 0; t < d; ++t) c[j][t] = sum[j][t] / cnt[j];
  }
  return obj;
}

TEST(KMeans, FourBlobsWithinOnePercentOfMultiRestartBest) {
  std::mt19937_64 rng(9);
  const Tensor pts = blobs(50, rng);
  double best = 1e300;
  std::mt19937_64 restart_rng(12345);
  for (int r = 0; r < 20; ++r) best = std::min(best, lloyd_restart(pts, 4, restart_rng));
  const KMeansResult res = kmeans(pts, 4, 100, 9);
  EXPECT_LE(kmeans_objective(pts, res.centers, res.labels), best * 1.01);
}

TEST(KMeansProperty, ObjectiveNonIncreasingAndSeedDeterministic) {
  for (int seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor pts = uniform({40, 3}, rng);
    const std::size_t k = 2 + seed % 6;
    const KMeansResult a = kmeans(pts, k, 50, static_cast<std::uint64_t>(seed));
    const KMeansResult b = kmeans(pts, k, 50, static_cast<std::uint64_t>(seed));
    EXPECT_TRUE(bit_identical(a.centers, b.centers));
    for (std::size_t i = 1; i < a.objective.size(); ++i) EXPECT_LE(a.objective[i], a.objective[i - 1] + 1e-12);
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : a.labels) ++sizes[l];
    EXPECT_TRUE(std::none_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s == 0; }));
  }
}

TEST(KMeansProperty, ResultDependsOnlyOnThePointMultiset) {
  std::mt19937_64 rng(17);
  const Tensor pts = blobs(10, rng);
  Tensor shuffled = pts;
  std::vector<std::size_t> perm(pts.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(pts.row(perm[i]).begin(), pts.row(perm[i]).end(), shuffled.row(i).begin());
  const KMeansResult a = kmeans(pts, 4, 100, 3);
  const KMeansResult b = kmeans(shuffled, 4, 100, 3);
  EXPECT_TRUE(bit_identical(a.centers, b.centers));
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(b.labels[i], a.labels[perm[i]]);
}

}  // namespace
}  // namespace adaspeech4
