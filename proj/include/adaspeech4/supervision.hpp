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

#include "adaspeech4/basis_bank.hpp"
#include "adaspeech4/ops.hpp"
#include "adaspeech4/speaker_encoder.hpp"

namespace adaspeech4 {

struct SupervisionConfig {
  double kl_floor = 1e-8;
  double lambda_dist = 1.0;
  double lambda_cos = 0.0;

  void validate() const {
    if (!(kl_floor > 0.0)) throw ConfigError("kl_floor must be positive");
    if (lambda_dist < 0.0 || lambda_cos < 0.0) throw ConfigError("loss weights must be non-negative");
  }
};

/// KL(w_ref || w_gen) with w_gen clamped below at kl_floor.
inline Var distribution_loss(Var w_ref, Var w_gen, const SupervisionConfig& cfg) {
  if (w_ref.value().size() != w_gen.value().size()) {
    throw DimensionError("distribution loss over " + shape_string(w_ref.shape()) + " and " +
                         shape_string(w_gen.shape()));
  }
  return ops::kl_divergence(w_ref, w_gen, cfg.kl_floor);
}

inline double distribution_loss(const Tensor& w_ref, const Tensor& w_gen, const SupervisionConfig& cfg = {}) {
  Tape tape;
  return distribution_loss(tape.constant(w_ref), tape.constant(w_gen), cfg).value()[0];
}

/// Attention weights of a generated mel: eval-mode encode, then basis
/// attention. Frozen extraction tensors enter the tape as constants, so only
/// the mel itself (and whatever produced it) receives gradient.
inline Var generated_weights(Tape& tape, Var generated_mel, const SpeakerEncoderConfig& cfg) {
  return attention_weights(tape, encode(tape, generated_mel, cfg, EncoderMode::kEval));
}

/// 1 - cos(S_ref, S_gen); zero-norm embeddings are degenerate.
inline Var cosine_embedding_loss(Var s_ref, Var s_gen) {
  if (s_ref.value().size() != s_gen.value().size()) {
    throw DimensionError("cosine loss over " + shape_string(s_ref.shape()) + " and " + shape_string(s_gen.shape()));
  }
  Tape& tape = *s_ref.tape();
  Var cos = ops::sum_all(ops::mul(ops::l2_normalize_rows(s_ref), ops::l2_normalize_rows(s_gen)));
  return ops::sub(tape.constant(Tensor({1, 1}, 1.0)), cos);
}

inline double cosine_embedding_loss(const Tensor& s_ref, const Tensor& s_gen) {
  Tape tape;
  return cosine_embedding_loss(tape.constant(s_ref), tape.constant(s_gen)).value()[0];
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) { return 1.0 - cosine_embedding_loss(a, b); }

}  // namespace adaspeech4
