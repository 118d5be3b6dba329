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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaspeech4/acoustic_model.hpp"
#include "adaspeech4/mel_io.hpp"

namespace adaspeech4 {

struct CorpusConfig {
  std::size_t num_speakers = 10;
  std::size_t utts_per_speaker = 20;
  std::size_t heldout_speakers = 2;
  std::size_t mel_channels = 16;
  std::size_t vocab_size = 32;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 8;
  int min_duration = 1;
  int max_duration = 4;
  double noise_std = 0.01;
  std::uint64_t seed = 3;

  void validate() const {
    if (num_speakers == 0 || utts_per_speaker == 0) throw ConfigError("corpus needs speakers and utterances");
    if (heldout_speakers >= num_speakers) throw ConfigError("heldout_speakers must be below num_speakers");
    if (mel_channels == 0 || vocab_size == 0) throw ConfigError("mel_channels and vocab_size must be positive");
    if (min_tokens == 0 || min_tokens > max_tokens) throw ConfigError("invalid token count range");
    if (min_duration < 1 || min_duration > max_duration) throw ConfigError("invalid duration range");
    if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  }
};

/// Speaker characteristic: a smooth multiplicative tilt in [0.5, 2] and an
/// additive offset in [-1, 1] over the mel channels.
struct SyntheticSpeaker {
  int speaker_id = 0;
  bool heldout = false;
  std::uint64_t seed = 0;
  std::vector<double> tilt;
  std::vector<double> offset;
};

struct UtteranceRecord {
  std::string id;
  std::string file;
  int speaker_id = 0;
  std::vector<int> token_ids;
  std::vector<int> durations;
};

struct CorpusManifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  CorpusConfig config;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<UtteranceRecord> utterances;

  bool is_heldout(int speaker_id) const {
    for (const auto& s : speakers)
      if (s.speaker_id == speaker_id) return s.heldout;
    throw DataError("unknown speaker id " + std::to_string(speaker_id));
  }
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<Utterance> train;
  std::vector<Utterance> heldout;
};

namespace corpus_detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline std::vector<std::vector<double>> token_patterns(const CorpusConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 1, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> patterns(cfg.vocab_size, std::vector<double>(cfg.mel_channels));
  for (auto& p : patterns)
    for (auto& v : p) v = unit(rng);
  return patterns;
}

/// `stratum` in [0, num_speakers) places the offset level in its own band so
/// no two speakers share a level.
inline SyntheticSpeaker make_speaker(const CorpusConfig& cfg, int id, std::size_t stratum) {
  SyntheticSpeaker s;
  s.speaker_id = id;
  s.heldout = static_cast<std::size_t>(id) >= cfg.num_speakers - cfg.heldout_speakers;
  s.seed = derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(id));
  std::mt19937_64 rng(s.seed);
  const double slope = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const double bend = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  const double band = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
  const double level = -0.9 + 1.8 * (static_cast<double>(stratum) + band) / static_cast<double>(cfg.num_speakers);
  const double lean = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
  for (std::size_t c = 0; c < cfg.mel_channels; ++c) {
    const double u = cfg.mel_channels == 1 ? 0.0 : 2.0 * static_cast<double>(c) / static_cast<double>(cfg.mel_channels - 1) - 1.0;
    s.tilt.push_back(std::clamp(std::exp(slope * u + bend * (u * u - 1.0 / 3.0)), 0.5, 2.0));
    s.offset.push_back(std::clamp(level + lean * u, -1.0, 1.0));
  }
  return s;
}

}  // namespace corpus_detail

/// Builds the manifest and every mel in memory. Mel values are rounded to
/// float32 so the in-memory corpus equals what the MEL1 files hold.
inline Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.manifest.config = cfg;
  const auto patterns = corpus_detail::token_patterns(cfg);
  std::vector<std::size_t> strata(cfg.num_speakers);
  std::iota(strata.begin(), strata.end(), std::size_t{0});
  std::mt19937_64 order(corpus_detail::derive_seed(cfg.seed, 4, 0));
  std::shuffle(strata.begin(), strata.end(), order);
  for (std::size_t s = 0; s < cfg.num_speakers; ++s)
    corpus.manifest.speakers.push_back(corpus_detail::make_speaker(cfg, static_cast<int>(s), strata[s]));

  std::size_t index = 0;
  for (const auto& spk : corpus.manifest.speakers) {
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u, ++index) {
      std::mt19937_64 rng(corpus_detail::derive_seed(cfg.seed, 3, index));
      std::uniform_int_distribution<std::size_t> len(cfg.min_tokens, cfg.max_tokens);
      std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.vocab_size) - 1);
      std::uniform_int_distribution<int> dur(cfg.min_duration, cfg.max_duration);
      std::normal_distribution<double> noise(0.0, cfg.noise_std);

      Utterance utt;
      char name[32];
      std::snprintf(name, sizeof(name), "utt_%05zu", index);
      utt.id = name;
      utt.speaker_id = spk.speaker_id;
      const std::size_t n = len(rng);
      for (std::size_t k = 0; k < n; ++k) utt.token_ids.push_back(tok(rng));
      for (std::size_t k = 0; k < n; ++k) utt.durations.push_back(dur(rng));
      utt.mel = MelFrameMatrix({utt.frames(), cfg.mel_channels});
      std::size_t t = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto& pat = patterns[static_cast<std::size_t>(utt.token_ids[k])];
        for (int r = 0; r < utt.durations[k]; ++r, ++t)
          for (std::size_t c = 0; c < cfg.mel_channels; ++c)
            utt.mel.at(t, c) = pat[c] * spk.tilt[c] + spk.offset[c] + (cfg.noise_std > 0.0 ? noise(rng) : 0.0);
      }
      utt.mel = quantize_to_f32(std::move(utt.mel));

      corpus.manifest.utterances.push_back(
          {utt.id, "mels/" + utt.id + ".mel", utt.speaker_id, utt.token_ids, utt.durations});
      (spk.heldout ? corpus.heldout : corpus.train).push_back(std::move(utt));
    }
  }
  return corpus;
}

inline nlohmann::json corpus_config_to_json(const CorpusConfig& c) {
  return {{"num_speakers", c.num_speakers}, {"utts_per_speaker", c.utts_per_speaker},
          {"heldout_speakers", c.heldout_speakers}, {"mel_channels", c.mel_channels},
          {"vocab_size", c.vocab_size}, {"min_tokens", c.min_tokens},
          {"max_tokens", c.max_tokens}, {"min_duration", c.min_duration},
          {"max_duration", c.max_duration}, {"noise_std", c.noise_std},
          {"seed", c.seed}};
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  static const std::vector<std::string> keys = {"num_speakers", "utts_per_speaker", "heldout_speakers",
                                                "mel_channels", "vocab_size", "min_tokens", "max_tokens",
                                                "min_duration", "max_duration", "noise_std", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ConfigError("unknown corpus key '" + it.key() + "'");
  c.num_speakers = j.value("num_speakers", c.num_speakers);
  c.utts_per_speaker = j.value("utts_per_speaker", c.utts_per_speaker);
  c.heldout_speakers = j.value("heldout_speakers", c.heldout_speakers);
  c.mel_channels = j.value("mel_channels", c.mel_channels);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.min_tokens = j.value("min_tokens", c.min_tokens);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.min_duration = j.value("min_duration", c.min_duration);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  nlohmann::json speakers = nlohmann::json::array();
  for (const auto& s : m.speakers)
    speakers.push_back({{"speaker_id", s.speaker_id}, {"split", s.heldout ? "heldout" : "train"},
                        {"seed", s.seed}, {"tilt", s.tilt}, {"offset", s.offset}});
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : m.utterances)
    utts.push_back({{"id", u.id}, {"file", u.file}, {"speaker_id", u.speaker_id},
                    {"token_ids", u.token_ids}, {"durations", u.durations}});
  return {{"format", "adaspeech4-corpus"}, {"version", m.version}, {"generation", corpus_config_to_json(m.config)},
          {"speakers", speakers}, {"utterances", utts}};
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
  try {
    CorpusManifest m;
    if (j.at("format").get<std::string>() != "adaspeech4-corpus") throw DataError("not a corpus manifest");
    m.version = j.at("version").get<int>();
    if (m.version != CorpusManifest::kVersion) throw DataError("unsupported manifest version " + std::to_string(m.version));
    m.config = corpus_config_from_json(j.at("generation"));
    for (const auto& s : j.at("speakers")) {
      SyntheticSpeaker spk;
      spk.speaker_id = s.at("speaker_id").get<int>();
      spk.heldout = s.at("split").get<std::string>() == "heldout";
      spk.seed = s.at("seed").get<std::uint64_t>();
      spk.tilt = s.at("tilt").get<std::vector<double>>();
      spk.offset = s.at("offset").get<std::vector<double>>();
      m.speakers.push_back(std::move(spk));
    }
    for (const auto& u : j.at("utterances")) {
      m.utterances.push_back({u.at("id").get<std::string>(), u.at("file").get<std::string>(),
                              u.at("speaker_id").get<int>(), u.at("token_ids").get<std::vector<int>>(),
                              u.at("durations").get<std::vector<int>>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed corpus manifest: ") + e.what());
  }
}

/// Writes manifest.json and mels/<id>.mel under `dir`.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "mels");
  std::ofstream(dir / "manifest.json") << manifest_to_json(corpus.manifest).dump(1) << '\n';
  for (const auto* split : {&corpus.train, &corpus.heldout})
    for (const auto& u : *split) write_mel((dir / "mels" / (u.id + ".mel")).string(), u.mel);
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open corpus manifest '" + manifest_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse '" + manifest_path.string() + "': " + e.what());
  }
  Corpus corpus;
  corpus.manifest = manifest_from_json(j);
  for (const auto& rec : corpus.manifest.utterances) {
    const auto path = dir / rec.file;
    if (!std::filesystem::exists(path)) throw IoError("missing corpus file '" + path.string() + "'");
    Utterance u{rec.id, rec.speaker_id, rec.token_ids, rec.durations, read_mel(path.string())};
    u.validate(corpus.manifest.config.vocab_size);
    (corpus.manifest.is_heldout(u.speaker_id) ? corpus.heldout : corpus.train).push_back(std::move(u));
  }
  if (corpus.train.empty()) throw ConfigError("corpus has no training utterances");
  return corpus;
}

}  // namespace adaspeech4
