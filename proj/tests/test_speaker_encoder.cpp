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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "adaspeech4/pipeline.hpp"
#include "test_support.hpp"

namespace adaspeech4 {
namespace {

using testing::uniform;
namespace se = speaker_encoder;

ParameterStore encoder_params(const SpeakerEncoderConfig& cfg, std::uint64_t seed) {
  ParameterStore store;
  std::mt19937_64 rng(seed);
  se::init(store, cfg, rng);
  return store;
}

TEST(SpeakerEncoder, FeatureDimsFollowCeilDivision) {
  const SpeakerEncoderConfig cfg;
  const auto dims = se::feature_dims(80, 64, cfg);
  ASSERT_EQ(dims.size(), 7u);
  EXPECT_EQ(dims.back(), (std::pair<std::size_t, std::size_t>{2, 1}));
  EXPECT_EQ(cfg.conv_channels.back(), 128u);
  std::vector<std::size_t> hs;
  for (auto [h, w] : dims) hs.push_back(h);
  EXPECT_EQ(hs, (std::vector<std::size_t>{80, 40, 20, 10, 5, 3, 2}));
}

TEST(SpeakerEncoder, ZeroMelInEvalModeGivesZeroEmbedding) {
  const SpeakerEncoderConfig cfg;
  const ParameterStore params = encoder_params(cfg, 1);
  const SpeakerEmbedding s = encode(MelFrameMatrix({80, 64}, 0.0), cfg, params);
  ASSERT_EQ(s.size(), cfg.embedding_dim);
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpeakerEncoder, EvalModeIsDeterministic) {
  const SpeakerEncoderConfig cfg;
  const ParameterStore params = encoder_params(cfg, 5);
  std::mt19937_64 rng(11);
  const MelFrameMatrix mel = uniform({80, 32}, rng);
  const SpeakerEmbedding a = encode(mel, cfg, params);
  const SpeakerEmbedding b = encode(mel, cfg, params);
  EXPECT_TRUE(bit_identical(a, b));
  EXPECT_EQ(a.shape(), (Shape{1, cfg.embedding_dim}));
  EXPECT_TRUE(a.all_finite());
}

TEST(SpeakerEncoder, NonFiniteInputIsEvaluationError) {
  const SpeakerEncoderConfig cfg;
  const ParameterStore params = encoder_params(cfg, 1);
  MelFrameMatrix mel({8, 8}, 0.5);
  mel.at(3, 3) = std::nan("");
  EXPECT_THROW(encode(mel, cfg, params), EvaluationError);
}

TEST(SpeakerEncoder, ConfigValidation) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.embedding_dim = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// Independent scalar implementation of a one-layer train-mode encoder over
// a batch: conv (zero padded, stride 2), batch norm over every position of
// every utterance, affine, ReLU, mean pool, projection, output batch norm.
std::vector<std::vector<double>> scalar_encoder(const std::vector<Tensor>& mels, const ParameterStore& p,
                                                std::size_t cout, std::size_t d, double eps) {
  const Tensor& w = p.get(se::conv_weight(0));
  std::vector<std::vector<std::vector<double>>> conv;  // utt, position, channel
  for (const Tensor& m : mels) {
    const std::size_t h = m.rows(), wd = m.cols();
    const std::size_t oh = (h + 1) / 2, ow = (wd + 1) / 2;
    const std::size_t top = std::max<long>(0, static_cast<long>((oh - 1) * 2 + 3) - static_cast<long>(h)) / 2;
    const std::size_t left = std::max<long>(0, static_cast<long>((ow - 1) * 2 + 3) - static_cast<long>(wd)) / 2;
    std::vector<std::vector<double>> out(oh * ow, std::vector<double>(cout, 0.0));
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long iy = static_cast<long>(oy * 2 + ky) - static_cast<long>(top);
            const long ix = static_cast<long>(ox * 2 + kx) - static_cast<long>(left);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
            for (std::size_t c = 0; c < cout; ++c) out[oy * ow + ox][c] += m.at(iy, ix) * w.at(ky * 3 + kx, c);
          }
    conv.push_back(out);
  }
  auto batch_standardize = [eps](std::vector<std::vector<double>*> rows, std::size_t width) {
    for (std::size_t c = 0; c < width; ++c) {
      double mean = 0.0, var = 0.0;
      for (auto* r : rows) mean += (*r)[c];
      mean /= static_cast<double>(rows.size());
      for (auto* r : rows) var += ((*r)[c] - mean) * ((*r)[c] - mean);
      var /= static_cast<double>(rows.size());
      for (auto* r : rows) (*r)[c] = ((*r)[c] - mean) / std::sqrt(var + eps);
    }
  };
  std::vector<std::vector<double>*> all;
  for (auto& u : conv)
    for (auto& r : u) all.push_back(&r);
  batch_standardize(all, cout);
  const Tensor& gamma = p.get(se::bn_name(0, "gamma"));
  const Tensor& beta = p.get(se::bn_name(0, "beta"));
  const Tensor& proj = p.get(se::kProjection);
  std::vector<std::vector<double>> emb;
  for (auto& u : conv) {
    std::vector<double> pooled(cout, 0.0);
    for (auto& r : u)
      for (std::size_t c = 0; c < cout; ++c) pooled[c] += std::max(0.0, r[c] * gamma[c] + beta[c]);
    for (double& v : pooled) v /= static_cast<double>(u.size());
    std::vector<double> e(d, 0.0);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t c = 0; c < cout; ++c) e[k] += pooled[c] * proj.at(c, k);
    emb.push_back(e);
  }
  std::vector<std::vector<double>*> erows;
  for (auto& e : emb) erows.push_back(&e);
  batch_standardize(erows, d);
  return emb;
}

TEST(SpeakerEncoder, TrainModeMatchesScalarOracle) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels = {3};
  cfg.embedding_dim = 4;
  ParameterStore params = encoder_params(cfg, 21);
  std::mt19937_64 rng(22);
  // Non-trivial affine so the oracle exercises gamma and beta.
  params.get_mut(se::bn_name(0, "gamma")) = uniform({1, 3}, rng, 0.5, 1.5);
  params.get_mut(se::bn_name(0, "beta")) = uniform({1, 3}, rng, -0.3, 0.3);
  const std::vector<Tensor> mels = {uniform({5, 4}, rng), uniform({7, 4}, rng), uniform({4, 4}, rng)};

  Tape tape(&params);
  std::vector<Var> vars;
  for (const auto& m : mels) vars.push_back(tape.constant(m));
  const auto got = encode_batch(tape, vars, cfg, EncoderMode::kTrain);
  const auto want = scalar_encoder(mels, params, 3, 4, cfg.bn_eps);
  for (std::size_t u = 0; u < mels.size(); ++u) testing::expect_tensor_near(got[u].value(), want[u], 1e-12);
}

TEST(SpeakerEncoder, TrainModeStatsUpdateRunningMoments) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels = {2, 3};
  cfg.embedding_dim = 4;
  ParameterStore params = encoder_params(cfg, 3);
  std::mt19937_64 rng(4);
  Tape tape(&params);
  EncoderBatchStats stats;
  encode_batch(tape, {tape.constant(uniform({6, 5}, rng)), tape.constant(uniform({8, 5}, rng))}, cfg,
               EncoderMode::kTrain, &stats);
  ASSERT_EQ(stats.sites.size(), 3u);
  const auto& out_site = stats.sites.back();
  EXPECT_EQ(out_site.mean_name, se::kOutMean);
  const ParameterStore before = params;
  stats.apply(params, 0.1);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(params.get(se::kOutMean)[c], 0.1 * out_site.moments->mean[c]);
    EXPECT_DOUBLE_EQ(params.get(se::kOutVar)[c], 0.9 + 0.1 * out_site.moments->var[c]);
  }
  // Learnable tensors are untouched by the statistics update.
  EXPECT_TRUE(bit_identical(params.get(se::conv_weight(0)), before.get(se::conv_weight(0))));
  for (const auto& n : se::running_stat_names(cfg)) EXPECT_FALSE(params.trainable(n)) << n;
}

TEST(SpeakerEncoder, EvalModeUsesRunningMoments) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels = {2};
  cfg.embedding_dim = 3;
  ParameterStore params = encoder_params(cfg, 8);
  params.get_mut(se::kOutMean) = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  params.get_mut(se::kOutVar) = Tensor::matrix(1, 3, {4.0, 1.0, 0.25});
  std::mt19937_64 rng(9);
  const MelFrameMatrix mel = uniform({6, 6}, rng);
  ParameterStore plain = params;
  plain.get_mut(se::kOutMean) = Tensor({1, 3}, 0.0);
  plain.get_mut(se::kOutVar) = Tensor({1, 3}, 1.0 - cfg.bn_eps);
  const SpeakerEmbedding raw = encode(mel, cfg, plain);  // projection output exactly
  const SpeakerEmbedding s = encode(mel, cfg, params);
  const double mean[3] = {0.5, -1.0, 2.0}, var[3] = {4.0, 1.0, 0.25};
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s[k], (raw[k] - mean[k]) / std::sqrt(var[k] + cfg.bn_eps), 1e-12);
}

TEST(SpeakerEncoder, EncoderGradientsMatchFiniteDifferences) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels = {3, 4};
  cfg.embedding_dim = 4;
  ParameterStore params = encoder_params(cfg, 30);
  std::mt19937_64 rng(31);
  const std::vector<Tensor> mels = {uniform({6, 5}, rng), uniform({7, 5}, rng), uniform({5, 5}, rng),
                                    uniform({6, 5}, rng)};
  const Tensor target = uniform({4, 4}, rng);
  LossBuilder loss = [&](Tape& tape) {
    std::vector<Var> vars;
    for (const auto& m : mels) vars.push_back(tape.constant(m));
    Var s = ops::concat_rows(encode_batch(tape, vars, cfg, EncoderMode::kTrain));
    return ops::mean_squared_diff(s, tape.constant(target));
  };
  EXPECT_LT(check_gradients(loss, params, 1e-5).max_relative_error, 1e-4);
}

TEST(EmbedCorpus, PreservesOrderAndRejectsEmpty) {
  SpeakerEncoderConfig cfg;
  cfg.conv_channels = {2, 2};
  cfg.embedding_dim = 3;
  const ParameterStore params = encoder_params(cfg, 2);
  std::mt19937_64 rng(3);
  std::vector<Utterance> utts;
  for (int i = 0; i < 4; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.mel = uniform({static_cast<std::size_t>(3 + i), 4}, rng);
    utts.push_back(u);
  }
  const auto single = embed_corpus(utts, cfg, params, 1);
  const auto multi = embed_corpus(utts, cfg, params, 3);
  ASSERT_EQ(single.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(single[i].first, utts[i].id);
    EXPECT_TRUE(bit_identical(single[i].second, encode(utts[i].mel, cfg, params)));
    EXPECT_TRUE(bit_identical(single[i].second, multi[i].second));
  }
  EXPECT_THROW(embed_corpus({}, cfg, params), ConfigError);
}

}  // namespace
}  // namespace adaspeech4
