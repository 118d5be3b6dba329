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

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "adaspeech4/conditioning.hpp"
#include "adaspeech4/mel_io.hpp"
#include "adaspeech4/ops.hpp"
#include "adaspeech4/parameters.hpp"
#include "adaspeech4/speaker_encoder.hpp"

namespace adaspeech4 {

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t mel_channels = 16;
  std::size_t num_basis = 16;
  std::size_t duration_hidden = 32;
  SpeakerEncoderConfig encoder;
  TransformerBlockConfig transformer;

  std::size_t embedding_dim() const { return encoder.embedding_dim; }

  void validate() const {
    encoder.validate();
    transformer.validate();
    if (vocab_size == 0 || mel_channels == 0 || duration_hidden == 0) {
      throw ConfigError("vocab_size, mel_channels and duration_hidden must be positive");
    }
    if (num_basis == 0) throw ConfigError("num_basis must be positive");
  }
};

struct Utterance {
  std::string id;
  int speaker_id = 0;
  std::vector<int> token_ids;
  std::vector<int> durations;
  MelFrameMatrix mel;

  std::size_t frames() const {
    std::size_t t = 0;
    for (int d : durations) t += static_cast<std::size_t>(d);
    return t;
  }

  void validate(std::size_t vocab_size) const {
    if (token_ids.empty()) throw DataError("utterance '" + id + "' has no tokens");
    if (token_ids.size() != durations.size()) {
      throw DataError("utterance '" + id + "' has " + std::to_string(token_ids.size()) + " tokens but " +
                      std::to_string(durations.size()) + " durations");
    }
    for (int t : token_ids)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
        throw DataError("utterance '" + id + "' token " + std::to_string(t) + " outside vocabulary");
    for (int d : durations)
      if (d < 1) throw DataError("utterance '" + id + "' has non-positive duration " + std::to_string(d));
    if (!mel.empty() && mel.rows() != frames()) {
      throw DataError("utterance '" + id + "' mel has " + std::to_string(mel.rows()) + " frames, durations sum to " +
                      std::to_string(frames()));
    }
  }
};

namespace acoustic {

inline const char* kTokenEmbedding = "tts.token_embedding";
inline const char* kMelOutWeight = "tts.mel_out.weight";
inline const char* kMelOutBias = "tts.mel_out.bias";
inline const char* kDurW1 = "tts.duration.W1";
inline const char* kDurB1 = "tts.duration.b1";
inline const char* kDurW2 = "tts.duration.W2";
inline const char* kDurB2 = "tts.duration.b2";

inline std::string encoder_block(std::size_t i) { return "tts.encoder." + std::to_string(i); }
inline std::string decoder_block(std::size_t i) { return "tts.decoder." + std::to_string(i); }

/// Every CLN projector prefix, phoneme encoder first.
inline std::vector<std::string> cln_prefixes(const TransformerBlockConfig& cfg, bool encoder, bool decoder) {
  std::vector<std::string> out;
  if (encoder)
    for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
      out.push_back(block::cln_attn(encoder_block(i)));
      out.push_back(block::cln_ffn(encoder_block(i)));
    }
  if (decoder)
    for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) {
      out.push_back(block::cln_attn(decoder_block(i)));
      out.push_back(block::cln_ffn(decoder_block(i)));
    }
  return out;
}

inline void init(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t h = cfg.transformer.hidden;
  const std::size_t d = cfg.embedding_dim();
  store.add(kTokenEmbedding, gaussian({cfg.vocab_size, h}, 1.0, rng));
  for (std::size_t i = 0; i < cfg.transformer.encoder_blocks; ++i)
    block::init(store, encoder_block(i), cfg.transformer, d, rng);
  for (std::size_t i = 0; i < cfg.transformer.decoder_blocks; ++i)
    block::init(store, decoder_block(i), cfg.transformer, d, rng);
  store.add(kDurW1, glorot_uniform(h, cfg.duration_hidden, rng));
  store.add(kDurB1, Tensor({1, cfg.duration_hidden}, 0.0));
  // Zero output layer: the untrained predictor emits log-duration 0.
  store.add(kDurW2, Tensor({cfg.duration_hidden, 1}, 0.0));
  store.add(kDurB2, Tensor({1, 1}, 0.0));
  store.add(kMelOutWeight, glorot_uniform(h, cfg.mel_channels, rng));
  store.add(kMelOutBias, Tensor({1, cfg.mel_channels}, 0.0));
}

}  // namespace acoustic

/// Repeats hidden row i durations[i] times.
inline Var length_regulate(Var hidden, const std::vector<int>& durations) {
  return ops::repeat_rows(hidden, durations);
}

/// Position-wise two-layer network emitting one log-duration per token (L x 1).
inline Var predict_log_durations(Tape& tape, Var hidden) {
  Var h1 = ops::relu(ops::add_row(ops::matmul(hidden, tape.param(acoustic::kDurW1)), tape.param(acoustic::kDurB1)));
  return ops::add_row(ops::matmul(h1, tape.param(acoustic::kDurW2)), tape.param(acoustic::kDurB2));
}

/// Inference durations max(1, round(exp(log_duration))).
inline std::vector<int> durations_from_log(const Tensor& log_durations) {
  std::vector<int> out;
  out.reserve(log_durations.size());
  for (double v : log_durations.values()) {
    const double frames = std::round(std::exp(std::min(v, 20.0)));
    out.push_back(std::max(1, static_cast<int>(frames)));
  }
  return out;
}

struct AcousticOutput {
  Var mel;            // T x C
  Var log_durations;  // L x 1
  std::vector<int> durations;
};

/// Token embedding -> CLN phoneme encoder -> length regulation -> CLN mel
/// decoder -> linear mel projection. Empty `durations` selects the predictor.
inline AcousticOutput run_acoustic_model(Tape& tape, const std::vector<int>& tokens, const std::vector<int>& durations,
                                         Var condition, const ModelConfig& cfg) {
  if (tokens.empty()) throw DataError("no tokens to synthesize");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
      throw DataError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
  if (!durations.empty() && durations.size() != tokens.size()) {
    throw DimensionError(std::to_string(durations.size()) + " durations for " + std::to_string(tokens.size()) +
                         " tokens");
  }
  const std::size_t h = cfg.transformer.hidden;
  Var x = ops::gather_rows(tape.param(acoustic::kTokenEmbedding), tokens);
  x = ops::add(x, tape.constant(positional_encoding(tokens.size(), h)));
  for (std::size_t i = 0; i < cfg.transformer.encoder_blocks; ++i)
    x = conditioned_block(tape, x, condition, acoustic::encoder_block(i), cfg.transformer);

  AcousticOutput out;
  out.log_durations = predict_log_durations(tape, x);
  out.durations = durations.empty() ? durations_from_log(out.log_durations.value()) : durations;
  Var y = length_regulate(x, out.durations);
  y = ops::add(y, tape.constant(positional_encoding(y.rows(), h)));
  for (std::size_t i = 0; i < cfg.transformer.decoder_blocks; ++i)
    y = conditioned_block(tape, y, condition, acoustic::decoder_block(i), cfg.transformer);
  out.mel = ops::add_row(ops::matmul(y, tape.param(acoustic::kMelOutWeight)), tape.param(acoustic::kMelOutBias));
  return out;
}

/// Value-level synthesis for a fixed conditioning representation.
inline MelFrameMatrix synthesize(const std::vector<int>& tokens, const std::vector<int>& durations,
                                 const Tensor& condition, const ParameterStore& params, const ModelConfig& cfg) {
  Tape tape(&params);
  return run_acoustic_model(tape, tokens, durations, tape.constant(condition), cfg).mel.value();
}

/// Mean absolute error over all T x C entries.
inline Var reconstruction_loss(Var predicted, Var target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw DimensionError("reconstruction loss shapes " + shape_string(predicted.shape()) + " and " +
                         shape_string(target.shape()));
  }
  return ops::mean_abs_diff(predicted, target);
}

inline double reconstruction_loss(const MelFrameMatrix& predicted, const MelFrameMatrix& target) {
  Tape tape;
  return reconstruction_loss(tape.constant(predicted), tape.constant(target)).value()[0];
}

/// Squared error of predicted log-durations against log of the true durations.
inline Var duration_loss(Tape& tape, Var log_durations, const std::vector<int>& durations) {
  Tensor target({durations.size(), 1});
  for (std::size_t i = 0; i < durations.size(); ++i) target[i] = std::log(static_cast<double>(durations[i]));
  return ops::mean_squared_diff(log_durations, tape.constant(std::move(target)));
}

}  // namespace adaspeech4
