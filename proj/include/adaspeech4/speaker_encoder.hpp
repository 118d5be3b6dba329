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

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "adaspeech4/mel_io.hpp"
#include "adaspeech4/ops.hpp"
#include "adaspeech4/parameters.hpp"

namespace adaspeech4 {

struct SpeakerEncoderConfig {
  std::vector<std::size_t> conv_channels = {32, 32, 64, 64, 128, 128};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t embedding_dim = 16;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const {
    if (conv_channels.empty()) throw ConfigError("speaker encoder needs at least one conv layer");
    for (auto c : conv_channels)
      if (c == 0) throw ConfigError("conv channel counts must be positive");
    if (embedding_dim < 2) throw ConfigError("embedding_dim must be at least 2");
    if (kernel == 0 || stride == 0) throw ConfigError("kernel and stride must be positive");
    if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be positive");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must be in (0, 1]");
  }
};

/// Fixed-width speaker vector S, stored as a 1 x d row.
using SpeakerEmbedding = Tensor;

enum class EncoderMode { kTrain, kEval };

namespace speaker_encoder {

inline std::string conv_weight(std::size_t i) { return "spk.conv" + std::to_string(i) + ".weight"; }
inline std::string bn_name(std::size_t i, const char* field) {
  return "spk.bn" + std::to_string(i) + "." + field;
}
inline const char* kProjection = "spk.proj.weight";
inline const char* kOutMean = "spk.out_norm.running_mean";
inline const char* kOutVar = "spk.out_norm.running_var";

/// Spatial size after every conv layer for a T x C input, first entry the input.
inline std::vector<std::pair<std::size_t, std::size_t>> feature_dims(std::size_t frames, std::size_t channels,
                                                                     const SpeakerEncoderConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> dims{{frames, channels}};
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    auto [h, w] = dims.back();
    dims.emplace_back((h + cfg.stride - 1) / cfg.stride, (w + cfg.stride - 1) / cfg.stride);
  }
  return dims;
}

inline void init(ParameterStore& store, const SpeakerEncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::size_t cout = cfg.conv_channels[i];
    const std::size_t fan_in = cfg.kernel * cfg.kernel * cin;
    // He-style scale for the ReLU stack.
    store.add(conv_weight(i), gaussian({fan_in, cout}, std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
    store.add(bn_name(i, "gamma"), Tensor({1, cout}, 1.0));
    store.add(bn_name(i, "beta"), Tensor({1, cout}, 0.0));
    store.add(bn_name(i, "running_mean"), Tensor({1, cout}, 0.0), false);
    store.add(bn_name(i, "running_var"), Tensor({1, cout}, 1.0), false);
    cin = cout;
  }
  store.add(kProjection, glorot_uniform(cin, cfg.embedding_dim, rng));
  store.add(kOutMean, Tensor({1, cfg.embedding_dim}, 0.0), false);
  store.add(kOutVar, Tensor({1, cfg.embedding_dim}, 1.0), false);
}

inline std::vector<std::string> running_stat_names(const SpeakerEncoderConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    out.push_back(bn_name(i, "running_mean"));
    out.push_back(bn_name(i, "running_var"));
  }
  out.push_back(kOutMean);
  out.push_back(kOutVar);
  return out;
}

}  // namespace speaker_encoder

/// Batch moments captured by a train-mode pass, one entry per norm site.
struct EncoderBatchStats {
  struct Site {
    std::string mean_name;
    std::string var_name;
    std::shared_ptr<ops::Moments> moments;
  };
  std::vector<Site> sites;

  /// Exponential update running = (1 - m) * running + m * batch.
  void apply(ParameterStore& store, double momentum) const {
    for (const auto& s : sites) {
      auto& rm = store.get_mut(s.mean_name);
      auto& rv = store.get_mut(s.var_name);
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1.0 - momentum) * rm[c] + momentum * s.moments->mean[c];
        rv[c] = (1.0 - momentum) * rv[c] + momentum * s.moments->var[c];
      }
    }
  }
};

namespace speaker_encoder {

// Eval-mode normalization with the stored running moments.
inline Var normalize_running(Tape& tape, Var x, const std::string& mean_name, const std::string& var_name,
                             double eps) {
  const ParameterStore& store = *tape.params();
  const Tensor& rm = store.get(mean_name);
  const Tensor& rv = store.get(var_name);
  Tensor neg_mean({1, rm.size()});
  Tensor inv_std({1, rm.size()});
  for (std::size_t c = 0; c < rm.size(); ++c) {
    neg_mean[c] = -rm[c];
    inv_std[c] = 1.0 / std::sqrt(rv[c] + eps);
  }
  return ops::mul_row(ops::add_row(x, tape.constant(std::move(neg_mean))), tape.constant(std::move(inv_std)));
}

}  // namespace speaker_encoder

/// Encodes a batch of T_i x C mel matrices into 1 x d embeddings. In train
/// mode each norm uses the statistics of the whole batch (all positions of
/// all utterances) and `stats`, when given, receives them.
inline std::vector<Var> encode_batch(Tape& tape, const std::vector<Var>& mels, const SpeakerEncoderConfig& cfg,
                                     EncoderMode mode, EncoderBatchStats* stats = nullptr) {
  namespace se = speaker_encoder;
  if (mels.empty()) throw ConfigError("encode_batch needs at least one mel");
  std::vector<Var> feats;
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (const Var& m : mels) {
    if (!m.value().all_finite()) throw EvaluationError("non-finite value in encoder input");
    dims.emplace_back(m.rows(), m.cols());
    feats.push_back(ops::reshape(m, {m.value().size(), 1}));
  }

  auto batch_norm = [&](std::vector<Var>& xs, const std::string& mean_name, const std::string& var_name) {
    if (mode == EncoderMode::kTrain) {
      std::vector<std::size_t> rows;
      for (const Var& x : xs) rows.push_back(x.rows());
      auto moments = std::make_shared<ops::Moments>();
      Var joined = xs.size() == 1 ? xs[0] : ops::concat_rows(xs);
      Var normed = ops::normalize_cols(joined, cfg.bn_eps, moments);
      if (stats) stats->sites.push_back({mean_name, var_name, moments});
      std::size_t begin = 0;
      for (std::size_t u = 0; u < xs.size(); ++u) {
        xs[u] = xs.size() == 1 ? normed : ops::slice_rows(normed, begin, rows[u]);
        begin += rows[u];
      }
    } else {
      for (Var& x : xs) x = se::normalize_running(tape, x, mean_name, var_name, cfg.bn_eps);
    }
  };

  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    Var w = tape.param(se::conv_weight(i));
    for (std::size_t u = 0; u < feats.size(); ++u) {
      ops::ConvGeometry geo{dims[u].first, dims[u].second, cfg.kernel, cfg.stride};
      feats[u] = ops::conv2d(feats[u], w, geo);
      dims[u] = {geo.out_height(), geo.out_width()};
    }
    batch_norm(feats, se::bn_name(i, "running_mean"), se::bn_name(i, "running_var"));
    Var gamma = tape.param(se::bn_name(i, "gamma"));
    Var beta = tape.param(se::bn_name(i, "beta"));
    for (Var& f : feats) f = ops::relu(ops::add_row(ops::mul_row(f, gamma), beta));
  }

  Var proj = tape.param(se::kProjection);
  for (Var& f : feats) f = ops::matmul(ops::mean_rows(f), proj);
  batch_norm(feats, se::kOutMean, se::kOutVar);
  return feats;
}

inline Var encode(Tape& tape, Var mel, const SpeakerEncoderConfig& cfg, EncoderMode mode,
                  EncoderBatchStats* stats = nullptr) {
  return encode_batch(tape, {mel}, cfg, mode, stats).front();
}

/// Value-level eval-mode encode.
inline SpeakerEmbedding encode(const MelFrameMatrix& mel, const SpeakerEncoderConfig& cfg,
                               const ParameterStore& params) {
  Tape tape(&params);
  return encode(tape, tape.constant(mel), cfg, EncoderMode::kEval).value();
}

}  // namespace adaspeech4
