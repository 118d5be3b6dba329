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

#include "adaspeech4/gradcheck.hpp"
#include "adaspeech4/pipeline.hpp"

namespace adaspeech4 {

/// Small end-to-end model for the composite finite-difference check:
/// d = 8, N = 4, two encoder and two decoder blocks, a four-utterance batch.
struct CompositeGradientFixture {
  PipelineConfig config;
  std::shared_ptr<const Corpus> corpus;
  ParameterStore params;
  LossBuilder loss;
};

inline CompositeGradientFixture composite_gradient_fixture(std::uint64_t seed = 42) {
  CompositeGradientFixture f;
  PipelineConfig& c = f.config;
  c.seed = seed;
  c.corpus.num_speakers = 3;
  c.corpus.utts_per_speaker = 2;
  c.corpus.heldout_speakers = 1;
  c.corpus.mel_channels = 6;
  c.corpus.vocab_size = 8;
  c.corpus.min_tokens = 3;
  c.corpus.max_tokens = 3;
  c.corpus.min_duration = 1;
  c.corpus.max_duration = 2;
  c.corpus.seed = seed;
  c.model.vocab_size = 8;
  c.model.mel_channels = 6;
  c.model.num_basis = 4;
  c.model.duration_hidden = 8;
  c.model.encoder.conv_channels = {4, 6};
  c.model.encoder.embedding_dim = 8;
  c.model.transformer.hidden = 8;
  c.model.transformer.heads = 2;
  c.model.transformer.ffn_inner = 12;
  c.model.transformer.encoder_blocks = 2;
  c.model.transformer.decoder_blocks = 2;
  c.basis_init = "random";
  c.validate();

  f.corpus = std::make_shared<const Corpus>(generate_corpus(c.corpus));
  Checkpoint init = initial_checkpoint(c);
  f.params = init_basis_from_checkpoint(init, *f.corpus, c).params;
  // Move every tensor off its special initial value so no gradient path is
  // trivially zero (identity CLN, zero duration head).
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& [name, e] : f.params.entries()) {
    if (pipeline_detail::is_running_stat(name)) {
      e.trainable = false;
      continue;
    }
    for (double& v : e.value.values()) v += jitter(rng);
  }

  ObjectiveSettings s;
  s.conditioning = Conditioning::kBasis;
  s.encoder_mode = EncoderMode::kTrain;
  s.lambda_duration = 1.0;
  s.lambda_reg = 0.1;
  s.lambda_dist = 1.0;
  const ModelConfig model = c.model;
  std::shared_ptr<const Corpus> corpus = f.corpus;
  f.loss = [corpus, model, s](Tape& tape) {
    std::vector<const Utterance*> batch;
    for (const auto& u : corpus->train) batch.push_back(&u);
    return build_objective(tape, batch, model, s).total;
  };
  return f;
}

}  // namespace adaspeech4
