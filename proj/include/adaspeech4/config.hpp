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
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaspeech4/acoustic_model.hpp"
#include "adaspeech4/corpus.hpp"
#include "adaspeech4/supervision.hpp"

namespace adaspeech4 {

struct StageConfig {
  int stage = 1;
  std::size_t steps = 0;
  double learning_rate = 0.05;
  std::size_t batch_size = 8;
  double lambda_reg = 0.0;
  double lambda_dist = 0.0;
  double lambda_cos = 0.0;
  std::vector<std::string> frozen_parameter_patterns;
  std::uint64_t seed = 0;

  void validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch statistics)");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (lambda_reg < 0.0 || lambda_dist < 0.0 || lambda_cos < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (stage == 1 && (lambda_reg != 0.0 || lambda_dist != 0.0 || lambda_cos != 0.0))
      throw ConfigError("stage 1 trains on reconstruction only");
    if (stage == 2 && (lambda_dist != 0.0 || lambda_cos != 0.0))
      throw ConfigError("stage 2 adds only the regularization loss");
  }
};

struct TrainingConfig {
  double momentum = 0.9;
  double lambda_duration = 1.0;
  double clip_grad_norm = 1.0;  // global L2 norm; 0 disables clipping
  std::size_t eval_every = 100;
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  CorpusConfig corpus;
  ModelConfig model;
  // False conditions every CLN directly on S (the "no basis" ablation).
  bool condition_on_basis = true;
  std::string basis_init = "kmeans";  // or "random"
  std::size_t kmeans_iters = 100;
  SupervisionConfig supervision;
  TrainingConfig training;
  StageConfig stage1{1, 500, 0.05, 8, 0.0, 0.0, 0.0, {}};
  StageConfig stage2{2, 200, 0.05, 8, 0.1, 0.0, 0.0, {}};
  StageConfig stage3{3, 400, 0.02, 8, 0.0, 1.0, 0.0, {"spk.*", "basis.*"}};

  const StageConfig& stage(int s) const { return s == 1 ? stage1 : (s == 2 ? stage2 : stage3); }
  StageConfig& stage(int s) { return s == 1 ? stage1 : (s == 2 ? stage2 : stage3); }

  void validate() const {
    corpus.validate();
    model.validate();
    supervision.validate();
    stage1.validate();
    stage2.validate();
    stage3.validate();
    if (corpus.mel_channels != model.mel_channels || corpus.vocab_size != model.vocab_size)
      throw ConfigError("model mel_channels/vocab_size must match the corpus");
    if (basis_init != "kmeans" && basis_init != "random")
      throw ConfigError("basis.init must be 'kmeans' or 'random', got '" + basis_init + "'");
    if (threads == 0) throw ConfigError("threads must be at least 1");
    if (!(training.momentum >= 0.0 && training.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (training.eval_every == 0) throw ConfigError("eval_every must be positive");
  }
};

/// Desk-scale defaults: small corpus, narrowed conv stack, N = 16.
inline PipelineConfig desk_config() {
  PipelineConfig c;
  c.model.encoder.conv_channels = {8, 8, 16, 16, 32, 32};
  return c;
}

/// The sizes reported for the full system: 80 mel channels, the
/// 32-32-64-64-128-128 conv stack and 2000 basis vectors.
inline PipelineConfig paper_scale_config() {
  PipelineConfig c;
  c.model.num_basis = 2000;
  c.model.mel_channels = 80;
  c.corpus.mel_channels = 80;
  c.model.encoder.conv_channels = {32, 32, 64, 64, 128, 128};
  return c;
}

namespace config_detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& section, const std::vector<std::string>& keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ConfigError("unknown config key '" + section + "." + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline json stage_to_json(const StageConfig& s) {
  return {{"stage", s.stage}, {"steps", s.steps}, {"learning_rate", s.learning_rate},
          {"batch_size", s.batch_size}, {"lambda_reg", s.lambda_reg}, {"lambda_dist", s.lambda_dist},
          {"lambda_cos", s.lambda_cos}, {"frozen_parameter_patterns", s.frozen_parameter_patterns},
          {"seed", s.seed}};
}

inline void stage_from_json(const json& j, const std::string& section, StageConfig& s) {
  check_keys(j, section, {"stage", "steps", "learning_rate", "batch_size", "lambda_reg", "lambda_dist", "lambda_cos",
                          "frozen_parameter_patterns", "seed"});
  const int expected = s.stage;
  read(j, "stage", s.stage);
  if (s.stage != expected) throw ConfigError(section + ".stage must be " + std::to_string(expected));
  read(j, "steps", s.steps);
  read(j, "learning_rate", s.learning_rate);
  read(j, "batch_size", s.batch_size);
  read(j, "lambda_reg", s.lambda_reg);
  read(j, "lambda_dist", s.lambda_dist);
  read(j, "lambda_cos", s.lambda_cos);
  read(j, "frozen_parameter_patterns", s.frozen_parameter_patterns);
  read(j, "seed", s.seed);
}

}  // namespace config_detail

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  using config_detail::stage_to_json;
  const auto& e = c.model.encoder;
  const auto& t = c.model.transformer;
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"corpus", corpus_config_to_json(c.corpus)},
      {"model",
       {{"vocab_size", c.model.vocab_size},
        {"mel_channels", c.model.mel_channels},
        {"num_basis", c.model.num_basis},
        {"duration_hidden", c.model.duration_hidden},
        {"condition_on_basis", c.condition_on_basis},
        {"speaker_encoder",
         {{"conv_channels", e.conv_channels}, {"kernel", e.kernel}, {"stride", e.stride},
          {"embedding_dim", e.embedding_dim}, {"bn_eps", e.bn_eps}, {"bn_momentum", e.bn_momentum}}},
        {"transformer",
         {{"hidden", t.hidden}, {"heads", t.heads}, {"ffn_inner", t.ffn_inner},
          {"encoder_blocks", t.encoder_blocks}, {"decoder_blocks", t.decoder_blocks}, {"ln_eps", t.ln_eps}}}}},
      {"basis", {{"init", c.basis_init}, {"kmeans_iters", c.kmeans_iters}}},
      {"supervision",
       {{"kl_floor", c.supervision.kl_floor}, {"lambda_dist", c.supervision.lambda_dist},
        {"lambda_cos", c.supervision.lambda_cos}}},
      {"training",
       {{"momentum", c.training.momentum}, {"lambda_duration", c.training.lambda_duration},
        {"clip_grad_norm", c.training.clip_grad_norm}, {"eval_every", c.training.eval_every}}},
      {"stage1", stage_to_json(c.stage1)},
      {"stage2", stage_to_json(c.stage2)},
      {"stage3", stage_to_json(c.stage3)},
  };
}

/// Overlays the keys present in `j` on `base`. Unknown keys are rejected.
/// supervision.lambda_dist / lambda_cos seed the stage-3 weights unless the
/// stage3 section sets them itself.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = desk_config()) {
  using namespace config_detail;
  try {
    check_keys(j, "config", {"seed", "threads", "corpus", "model", "basis", "supervision", "training", "stage1",
                             "stage2", "stage3"});
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    if (j.contains("corpus")) {
      c.corpus = corpus_config_from_json(j.at("corpus"));
      c.model.mel_channels = c.corpus.mel_channels;
      c.model.vocab_size = c.corpus.vocab_size;
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, "model", {"vocab_size", "mel_channels", "num_basis", "duration_hidden", "condition_on_basis",
                              "speaker_encoder", "transformer"});
      read(m, "vocab_size", c.model.vocab_size);
      read(m, "mel_channels", c.model.mel_channels);
      read(m, "num_basis", c.model.num_basis);
      read(m, "duration_hidden", c.model.duration_hidden);
      read(m, "condition_on_basis", c.condition_on_basis);
      if (m.contains("speaker_encoder")) {
        const json& e = m.at("speaker_encoder");
        check_keys(e, "model.speaker_encoder",
                   {"conv_channels", "kernel", "stride", "embedding_dim", "bn_eps", "bn_momentum"});
        auto& se = c.model.encoder;
        read(e, "conv_channels", se.conv_channels);
        read(e, "kernel", se.kernel);
        read(e, "stride", se.stride);
        read(e, "embedding_dim", se.embedding_dim);
        read(e, "bn_eps", se.bn_eps);
        read(e, "bn_momentum", se.bn_momentum);
      }
      if (m.contains("transformer")) {
        const json& t = m.at("transformer");
        check_keys(t, "model.transformer",
                   {"hidden", "heads", "ffn_inner", "encoder_blocks", "decoder_blocks", "ln_eps"});
        auto& tc = c.model.transformer;
        read(t, "hidden", tc.hidden);
        read(t, "heads", tc.heads);
        read(t, "ffn_inner", tc.ffn_inner);
        read(t, "encoder_blocks", tc.encoder_blocks);
        read(t, "decoder_blocks", tc.decoder_blocks);
        read(t, "ln_eps", tc.ln_eps);
      }
    }
    if (j.contains("basis")) {
      const json& b = j.at("basis");
      check_keys(b, "basis", {"init", "kmeans_iters"});
      read(b, "init", c.basis_init);
      read(b, "kmeans_iters", c.kmeans_iters);
    }
    if (j.contains("supervision")) {
      const json& s = j.at("supervision");
      check_keys(s, "supervision", {"kl_floor", "lambda_dist", "lambda_cos"});
      read(s, "kl_floor", c.supervision.kl_floor);
      read(s, "lambda_dist", c.supervision.lambda_dist);
      read(s, "lambda_cos", c.supervision.lambda_cos);
      c.stage3.lambda_dist = c.supervision.lambda_dist;
      c.stage3.lambda_cos = c.supervision.lambda_cos;
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      check_keys(t, "training", {"momentum", "lambda_duration", "clip_grad_norm", "eval_every"});
      read(t, "momentum", c.training.momentum);
      read(t, "lambda_duration", c.training.lambda_duration);
      read(t, "clip_grad_norm", c.training.clip_grad_norm);
      read(t, "eval_every", c.training.eval_every);
    }
    if (j.contains("stage1")) stage_from_json(j.at("stage1"), "stage1", c.stage1);
    if (j.contains("stage2")) stage_from_json(j.at("stage2"), "stage2", c.stage2);
    if (j.contains("stage3")) stage_from_json(j.at("stage3"), "stage3", c.stage3);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace adaspeech4
