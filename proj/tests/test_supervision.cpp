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
#include "adaspeech4/speaker_encoder.hpp"
#include "adaspeech4/supervision.hpp"
#include "test_support.hpp"

namespace adaspeech4 {
namespace {

using testing::uniform;

Tensor random_distribution(std::size_t n, std::mt19937_64& rng) {
  Tensor t = uniform({1, n}, rng, 0.01, 1.0);
  const double z = std::accumulate(t.values().begin(), t.values().end(), 0.0);
  for (double& v : t.values()) v /= z;
  return t;
}

TEST(DistributionLoss, AnalyticExamples) {
  EXPECT_EQ(distribution_loss(Tensor({1, 2}, {0.3, 0.7}), Tensor({1, 2}, {0.3, 0.7})), 0.0);
  EXPECT_NEAR(distribution_loss(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.5, 0.5})), std::log(2.0), 1e-15);
  EXPECT_NEAR(distribution_loss(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.25, 0.75})),
              0.5 * std::log(4.0 / 3.0), 1e-15);
  EXPECT_NEAR(0.5 * std::log(4.0 / 3.0), 0.143841, 1e-6);
}

TEST(DistributionLoss, FloorAppliesToGeneratedSide) {
  SupervisionConfig cfg;
  cfg.kl_floor = 1e-3;
  EXPECT_NEAR(distribution_loss(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {1.0, 0.0}), cfg),
              0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-3), 1e-12);
  cfg.kl_floor = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(DistributionLoss, LengthMismatch) {
  EXPECT_THROW(distribution_loss(Tensor({1, 2}, 0.5), Tensor({1, 3}, 1.0 / 3)), DimensionError);
}

TEST(DistributionLoss, IdentityBoundAndPermutationProperties) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + seed % 9;
    const Tensor p = random_distribution(n, rng), q = random_distribution(n, rng);
    EXPECT_EQ(distribution_loss(p, p), 0.0);
    const double kl = distribution_loss(p, q);
    EXPECT_GE(kl, -1e-6);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pp({1, n}), qp({1, n});
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = p[perm[i]];
      qp[i] = q[perm[i]];
    }
    EXPECT_NEAR(distribution_loss(pp, qp), kl, 1e-12) << "seed " << seed;
  }
}

TEST(CosineEmbeddingLoss, Examples) {
  const Tensor s({1, 3}, {1.0, -2.0, 0.5});
  Tensor neg = s;
  for (double& v : neg.values()) v = -v;
  EXPECT_NEAR(cosine_embedding_loss(s, s), 0.0, 1e-15);
  EXPECT_NEAR(cosine_embedding_loss(s, neg), 2.0, 1e-15);
  EXPECT_NEAR(cosine_embedding_loss(Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {0, 3})), 1.0, 1e-15);
  EXPECT_THROW(cosine_embedding_loss(s, Tensor({1, 3}, 0.0)), DegenerateError);
  EXPECT_THROW(cosine_embedding_loss(s, Tensor({1, 2}, 1.0)), DimensionError);
}

TEST(CosineEmbeddingLoss, RangeProperty) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const double l = cosine_embedding_loss(uniform({1, 5}, rng), uniform({1, 5}, rng));
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
  }
}

class GeneratedWeights : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_.conv_channels = {4, 4};
    cfg_.embedding_dim = 4;
    std::mt19937_64 rng(31);
    speaker_encoder::init(params_, cfg_, rng);
    params_.add(basis_bank::kBasis, basis_bank::random_basis(3, 4, rng));
    basis_bank::init_projections(params_, 4, rng);
    params_.freeze({"spk.*", "basis.*"});
    reference_ = uniform({8, 6}, rng);
    params_.add("mel", uniform({8, 6}, rng));
  }

  Tensor reference_weights() const {
    Tape tape(&params_);
    return generated_weights(tape, tape.constant(reference_), cfg_).value();
  }

  LossBuilder loss() const {
    const Tensor w_ref = reference_weights();
    return [this, w_ref](Tape& tape) {
      return distribution_loss(tape.constant(w_ref), generated_weights(tape, tape.param("mel"), cfg_),
                               SupervisionConfig{});
    };
  }

  SpeakerEncoderConfig cfg_;
  ParameterStore params_;
  Tensor reference_;
};

TEST_F(GeneratedWeights, IdenticalMelGivesZeroLoss) {
  params_.get_mut("mel") = reference_;
  EXPECT_EQ(evaluate_loss(loss(), params_), 0.0);
}

TEST_F(GeneratedWeights, GradientReachesOnlyTheMel) {
  Tape tape(&params_);
  tape.backward(loss()(tape));
  for (const auto& [name, g] : tape.gradients()) {
    if (name == "mel") continue;
    for (double v : g.values()) EXPECT_EQ(v, 0.0) << name;
  }
  const Tensor grad = tape.gradients().at("mel");
  const std::size_t probes[] = {0, 17, 41};
  const double h = 1e-5;
  for (std::size_t i : probes) {
    ParameterStore plus = params_, minus = params_;
    plus.get_mut("mel")[i] += h;
    minus.get_mut("mel")[i] -= h;
    const double numeric = (evaluate_loss(loss(), plus) - evaluate_loss(loss(), minus)) / (2 * h);
    EXPECT_NE(grad[i], 0.0);
    EXPECT_NEAR(grad[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}

}  // namespace
}  // namespace adaspeech4
