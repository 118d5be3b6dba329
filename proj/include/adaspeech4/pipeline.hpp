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
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "adaspeech4/acoustic_model.hpp"
#include "adaspeech4/basis_bank.hpp"
#include "adaspeech4/checkpoint.hpp"
#include "adaspeech4/config.hpp"
#include "adaspeech4/corpus.hpp"
#include "adaspeech4/kmeans.hpp"
#include "adaspeech4/metrics.hpp"
#include "adaspeech4/speaker_encoder.hpp"
#include "adaspeech4/supervision.hpp"

namespace adaspeech4 {

/// Source of the vector every CLN site conditions on.
enum class Conditioning {
  kEmbedding,  // raw speaker embedding S
  kBasis,      // representation E from the basis attention
};

struct ObjectiveSettings {
  Conditioning conditioning = Conditioning::kBasis;
  EncoderMode encoder_mode = EncoderMode::kTrain;
  double lambda_duration = 1.0;
  double lambda_reg = 0.0;
  double lambda_dist = 0.0;
  double lambda_cos = 0.0;
  double kl_floor = 1e-8;
};

struct ObjectiveTerms {
  Var total;
  double recon = kNotAvailable;
  double duration = kNotAvailable;
  double reg = kNotAvailable;
  double dist = kNotAvailable;
  double cos = kNotAvailable;
};

/// Batch-mean training objective:
///   recon + l_dur * dur + l_reg * L_reg + l_dist * L_dist + l_cos * L_cos.
/// The reference side of L_dist and L_cos always uses the eval-mode encoder,
/// the same path generated_weights takes for the synthesized mel.
inline ObjectiveTerms build_objective(Tape& tape, const std::vector<const Utterance*>& batch, const ModelConfig& model,
                                      const ObjectiveSettings& s, EncoderBatchStats* stats = nullptr) {
  if (batch.empty()) throw ConfigError("empty training batch");
  std::vector<Var> mels;
  for (const Utterance* u : batch) mels.push_back(tape.constant(u->mel));
  const std::vector<Var> speakers = encode_batch(tape, mels, model.encoder, s.encoder_mode, stats);

  const bool want_dist = s.lambda_dist > 0.0;
  const bool want_cos = s.lambda_cos > 0.0;
  std::vector<Var> recon, dur, dist, cos;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Utterance& u = *batch[i];
    Var condition = s.conditioning == Conditioning::kBasis ? attend_basis(tape, speakers[i]).representation
                                                           : speakers[i];
    AcousticOutput out = run_acoustic_model(tape, u.token_ids, u.durations, condition, model);
    recon.push_back(reconstruction_loss(out.mel, mels[i]));
    dur.push_back(duration_loss(tape, out.log_durations, u.durations));
    if (want_dist || want_cos) {
      Var s_ref = s.encoder_mode == EncoderMode::kEval ? speakers[i]
                                                       : encode(tape, mels[i], model.encoder, EncoderMode::kEval);
      Var s_gen = encode(tape, out.mel, model.encoder, EncoderMode::kEval);
      if (want_dist) {
        dist.push_back(distribution_loss(attention_weights(tape, s_ref), attention_weights(tape, s_gen),
                                         SupervisionConfig{s.kl_floor, s.lambda_dist, s.lambda_cos}));
      }
      if (want_cos) cos.push_back(cosine_embedding_loss(s_ref, s_gen));
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  auto batch_mean = [&](const std::vector<Var>& terms) {
    return ops::scale(ops::sum_all(ops::concat_rows(terms)), inv);
  };

  ObjectiveTerms t;
  Var recon_mean = batch_mean(recon);
  Var dur_mean = batch_mean(dur);
  t.recon = recon_mean.value()[0];
  t.duration = dur_mean.value()[0];
  Var total = ops::add(recon_mean, ops::scale(dur_mean, s.lambda_duration));
  if (s.lambda_reg > 0.0) {
    Var reg = regularization_loss(tape.param(basis_bank::kBasis));
    t.reg = reg.value()[0];
    total = ops::add(total, ops::scale(reg, s.lambda_reg));
  }
  if (want_dist) {
    Var d = batch_mean(dist);
    t.dist = d.value()[0];
    total = ops::add(total, ops::scale(d, s.lambda_dist));
  }
  if (want_cos) {
    Var c = batch_mean(cos);
    t.cos = c.value()[0];
    total = ops::add(total, ops::scale(c, s.lambda_cos));
  }
  t.total = total;
  return t;
}

/// Gradient descent with heavy-ball momentum: v = mu v + g, x -= lr v.
class MomentumSgd {
 public:
  MomentumSgd(double learning_rate, double momentum, double clip_norm = 0.0)
      : lr_(learning_rate), mu_(momentum), clip_(clip_norm) {}

  void step(ParameterStore& params, const std::map<std::string, Tensor>& grads) {
    double scale = 1.0;
    if (clip_ > 0.0) {
      double n2 = 0.0;
      for (const auto& [name, g] : grads)
        for (double v : g.values()) n2 += v * v;
      const double norm = std::sqrt(n2);
      if (norm > clip_) scale = clip_ / norm;
    }
    for (const auto& [name, g] : grads) {
      if (!params.trainable(name)) continue;
      auto [it, fresh] = velocity_.try_emplace(name, Tensor(g.shape(), 0.0));
      Tensor& v = it->second;
      Tensor& x = params.get_mut(name);
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = mu_ * v[i] + scale * g[i];
        x[i] -= lr_ * v[i];
      }
    }
  }

 private:
  double lr_, mu_, clip_;
  std::map<std::string, Tensor> velocity_;
};

namespace pipeline_detail {

inline bool is_running_stat(const std::string& name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

inline const std::vector<std::string>& extraction_patterns() {
  static const std::vector<std::string> p = {"spk.*", "basis.*"};
  return p;
}

/// Fans `count` independent jobs out over `threads` workers.
template <class Job>
void parallel_for(std::size_t count, std::size_t threads, Job&& job) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t n = std::min(threads, count);
  for (std::size_t w = 0; w < n; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += n) job(i);
    });
  for (auto& t : workers) t.join();
}

}  // namespace pipeline_detail

inline bool has_basis(const ParameterStore& p) { return p.contains(basis_bank::kBasis); }

/// Fresh speaker encoder + acoustic model for stage 1.
inline Checkpoint initial_checkpoint(const PipelineConfig& cfg) {
  cfg.validate();
  Checkpoint ckpt;
  std::mt19937_64 rng(pipeline_detail::mix_seed(cfg.seed, 11));
  speaker_encoder::init(ckpt.params, cfg.model.encoder, rng);
  acoustic::init(ckpt.params, cfg.model, rng);
  ckpt.config_json = config_to_json(cfg).dump();
  return ckpt;
}

/// Eval-mode embedding of every utterance, in order.
inline std::vector<std::pair<std::string, SpeakerEmbedding>> embed_corpus(const std::vector<Utterance>& utts,
                                                                          const SpeakerEncoderConfig& cfg,
                                                                          const ParameterStore& params,
                                                                          std::size_t threads = 1) {
  if (utts.empty()) throw ConfigError("cannot embed an empty corpus");
  std::vector<std::pair<std::string, SpeakerEmbedding>> out(utts.size());
  pipeline_detail::parallel_for(utts.size(), threads, [&](std::size_t i) {
    out[i] = {utts[i].id, encode(utts[i].mel, cfg, params)};
  });
  return out;
}

inline Tensor stack_embeddings(const std::vector<std::pair<std::string, SpeakerEmbedding>>& embs) {
  Tensor m({embs.size(), embs.front().second.size()});
  for (std::size_t i = 0; i < embs.size(); ++i)
    std::copy(embs[i].second.values().begin(), embs[i].second.values().end(), m.row(i).begin());
  return m;
}

/// Embeds the training utterances, clusters them into N groups and writes the
/// centers as the basis, together with fresh seed-derived projections.
/// basis_init == "random" replaces the centers with unit Gaussian vectors.
inline Checkpoint init_basis_from_checkpoint(const Checkpoint& ckpt, const Corpus& corpus, const PipelineConfig& cfg) {
  const std::size_t n = cfg.model.num_basis;
  if (n > corpus.train.size()) {
    throw ConfigError("num_basis " + std::to_string(n) + " exceeds the " + std::to_string(corpus.train.size()) +
                      " training utterances");
  }
  Checkpoint out = ckpt;
  const std::size_t d = cfg.model.embedding_dim();
  std::mt19937_64 rng(pipeline_detail::mix_seed(cfg.seed, 12, n));
  Tensor basis;
  if (cfg.basis_init == "kmeans") {
    const Tensor points = stack_embeddings(embed_corpus(corpus.train, cfg.model.encoder, ckpt.params, cfg.threads));
    basis = kmeans(points, n, cfg.kmeans_iters, pipeline_detail::mix_seed(cfg.seed, 13, n)).centers;
  } else {
    basis = basis_bank::random_basis(n, d, rng);
  }
  basis_bank::validate_basis(basis);
  out.params.add(basis_bank::kBasis, basis);
  basis_bank::init_projections(out.params, d, rng);
  out.config_json = config_to_json(cfg).dump();
  return out;
}

inline Conditioning conditioning_for(const PipelineConfig& cfg, const ParameterStore& params) {
  return cfg.condition_on_basis && has_basis(params) ? Conditioning::kBasis : Conditioning::kEmbedding;
}

struct EvalPair {
  const Utterance* reference = nullptr;  // source of the speaker condition
  const Utterance* text = nullptr;       // tokens, durations and target mel
};

struct EvalSummary {
  double recon_mae = kNotAvailable;
  double kl = kNotAvailable;
  double embedding_cosine = kNotAvailable;
  std::size_t count = 0;
};

struct PairResult {
  double mae = 0.0;
  double kl = kNotAvailable;
  double cosine = 0.0;
  Tensor ref_weights;
  Tensor gen_weights;
};

/// Zero-shot evaluation of one pair with a frozen model: condition on the
/// reference, synthesize the text (ground-truth or predicted durations),
/// re-encode the output.
inline PairResult evaluate_pair(const ParameterStore& params, const ModelConfig& model, Conditioning cond,
                                const EvalPair& pair, bool predicted_durations, double kl_floor) {
  Tape tape(&params);
  Var s_ref = encode(tape, tape.constant(pair.reference->mel), model.encoder, EncoderMode::kEval);
  Var condition = s_ref;
  Var w_ref;
  if (has_basis(params)) {
    BasisAttention a = attend_basis(tape, s_ref);
    w_ref = a.weights;
    if (cond == Conditioning::kBasis) condition = a.representation;
  }
  AcousticOutput out = run_acoustic_model(tape, pair.text->token_ids,
                                          predicted_durations ? std::vector<int>{} : pair.text->durations, condition,
                                          model);
  PairResult r;
  if (!predicted_durations) r.mae = reconstruction_loss(out.mel.value(), pair.text->mel);
  Var s_gen = encode(tape, out.mel, model.encoder, EncoderMode::kEval);
  r.cosine = cosine_similarity(s_ref.value(), s_gen.value());
  if (w_ref.valid()) {
    r.ref_weights = w_ref.value();
    r.gen_weights = attention_weights(tape, s_gen).value();
    r.kl = distribution_loss(r.ref_weights, r.gen_weights, SupervisionConfig{kl_floor});
  }
  return r;
}

inline EvalSummary evaluate_pairs(const ParameterStore& params, const PipelineConfig& cfg,
                                  const std::vector<EvalPair>& pairs) {
  EvalSummary s;
  if (pairs.empty()) return s;
  const Conditioning cond = conditioning_for(cfg, params);
  std::vector<PairResult> results(pairs.size());
  pipeline_detail::parallel_for(pairs.size(), cfg.threads, [&](std::size_t i) {
    results[i] = evaluate_pair(params, cfg.model, cond, pairs[i], false, cfg.supervision.kl_floor);
  });
  // In-order reduction keeps the aggregate independent of the thread count.
  double mae = 0.0, kl = 0.0, cosine = 0.0;
  for (const auto& r : results) {
    mae += r.mae;
    kl += r.kl;
    cosine += r.cosine;
  }
  const double n = static_cast<double>(pairs.size());
  s.recon_mae = mae / n;
  s.kl = has_basis(params) ? kl / n : kNotAvailable;
  s.embedding_cosine = cosine / n;
  s.count = pairs.size();
  return s;
}

/// Reference utterance i of a speaker conditions the text of utterance i+1
/// of the same speaker (cyclically).
inline std::vector<EvalPair> heldout_pairs(const std::vector<Utterance>& utts) {
  std::map<int, std::vector<const Utterance*>> by_speaker;
  for (const auto& u : utts) by_speaker[u.speaker_id].push_back(&u);
  std::vector<EvalPair> pairs;
  for (const auto& [spk, list] : by_speaker)
    for (std::size_t i = 0; i < list.size(); ++i) pairs.push_back({list[i], list[(i + 1) % list.size()]});
  return pairs;
}

/// Every `stride`-th utterance paired with itself.
inline std::vector<EvalPair> self_pairs(const std::vector<Utterance>& utts, std::size_t stride = 1) {
  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < utts.size(); i += std::max<std::size_t>(stride, 1)) pairs.push_back({&utts[i], &utts[i]});
  return pairs;
}

/// Full metrics row for the current parameters.
inline MetricsRow evaluate_metrics(const ParameterStore& params, const PipelineConfig& cfg, const Corpus& corpus,
                                   std::size_t step, int stage) {
  MetricsRow row;
  row.step = step;
  row.stage = stage;
  const std::size_t stride = std::max<std::size_t>(1, corpus.train.size() / 40);
  const EvalSummary train = evaluate_pairs(params, cfg, self_pairs(corpus.train, stride));
  row.recon_mae = train.recon_mae;
  if (has_basis(params)) {
    row.l_dist = train.kl;
    row.basis_mean_cosine = mean_pairwise_cosine(params.get(basis_bank::kBasis));
    row.l_reg = row.basis_mean_cosine;
  }
  if (!corpus.heldout.empty()) {
    const EvalSummary held = evaluate_pairs(params, cfg, heldout_pairs(corpus.heldout));
    row.heldout_kl = held.kl;
    row.heldout_embedding_cosine = held.embedding_cosine;
  }
  return row;
}

struct StageResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

/// Resets trainability for a stage: running statistics never train, the
/// stage's freeze globs apply, and stage 3 always freezes the extraction path.
inline void apply_stage_trainability(ParameterStore& params, const StageConfig& stage) {
  for (auto& [name, e] : params.entries()) e.trainable = !pipeline_detail::is_running_stat(name);
  params.freeze(stage.frozen_parameter_patterns);
  if (stage.stage == 3) params.freeze(pipeline_detail::extraction_patterns());
}

inline StageResult run_stage(const PipelineConfig& cfg, int stage_id, Checkpoint start, const Corpus& corpus) {
  cfg.validate();
  const StageConfig& stage = cfg.stage(stage_id);
  if (corpus.train.size() < stage.batch_size) {
    throw ConfigError("batch_size " + std::to_string(stage.batch_size) + " exceeds the " +
                      std::to_string(corpus.train.size()) + " training utterances");
  }
  if (stage_id >= 2 && !has_basis(start.params)) {
    throw ConfigError("stage " + std::to_string(stage_id) + " needs a basis-initialized checkpoint");
  }
  StageResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt = std::move(start);
  apply_stage_trainability(ckpt.params, stage);

  bool encoder_trains = false;
  for (const auto& name : ckpt.params.trainable_names()) encoder_trains = encoder_trains || name.starts_with("spk.");

  ObjectiveSettings s;
  s.conditioning = stage_id == 1 ? Conditioning::kEmbedding : conditioning_for(cfg, ckpt.params);
  s.encoder_mode = encoder_trains ? EncoderMode::kTrain : EncoderMode::kEval;
  s.lambda_duration = cfg.training.lambda_duration;
  s.lambda_reg = stage_id >= 2 ? stage.lambda_reg : 0.0;
  s.lambda_dist = stage_id == 3 ? stage.lambda_dist : 0.0;
  s.lambda_cos = stage_id == 3 ? stage.lambda_cos : 0.0;
  s.kl_floor = cfg.supervision.kl_floor;

  MomentumSgd opt(stage.learning_rate, cfg.training.momentum, cfg.training.clip_grad_norm);
  std::mt19937_64 rng(pipeline_detail::mix_seed(cfg.seed, stage.seed, static_cast<std::uint64_t>(stage_id)));
  std::vector<std::size_t> order(corpus.train.size());

  const std::size_t base_step = ckpt.step_count;
  result.metrics.push_back(evaluate_metrics(ckpt.params, cfg, corpus, base_step, stage_id));
  for (std::size_t step = 1; step <= stage.steps; ++step) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const Utterance*> batch;
    for (std::size_t k = 0; k < stage.batch_size; ++k) {
      const std::size_t j = k + std::uniform_int_distribution<std::size_t>(0, order.size() - 1 - k)(rng);
      std::swap(order[k], order[j]);
      batch.push_back(&corpus.train[order[k]]);
    }
    EncoderBatchStats stats;
    std::map<std::string, Tensor> grads;
    {
      Tape tape(&ckpt.params);
      ObjectiveTerms terms = build_objective(tape, batch, cfg.model, s, &stats);
      if (!std::isfinite(terms.total.value()[0])) {
        throw EvaluationError("non-finite training loss at stage " + std::to_string(stage_id) + " step " +
                              std::to_string(step));
      }
      tape.backward(terms.total);
      grads = tape.gradients();
    }
    opt.step(ckpt.params, grads);
    if (s.encoder_mode == EncoderMode::kTrain) stats.apply(ckpt.params, cfg.model.encoder.bn_momentum);
    ckpt.step_count = base_step + step;
    if (step % cfg.training.eval_every == 0 || step == stage.steps) {
      result.metrics.push_back(evaluate_metrics(ckpt.params, cfg, corpus, ckpt.step_count, stage_id));
      const MetricsRow& r = result.metrics.back();
      if (!std::isfinite(r.recon_mae)) throw EvaluationError("non-finite evaluation loss");
    }
  }
  ckpt.stage_completed = static_cast<std::uint32_t>(stage_id);
  ckpt.config_json = config_to_json(cfg).dump();
  return result;
}

inline StageResult run_stage1(const PipelineConfig& cfg, const Corpus& corpus) {
  return run_stage(cfg, 1, initial_checkpoint(cfg), corpus);
}
inline StageResult run_stage2(const PipelineConfig& cfg, const Checkpoint& ckpt, const Corpus& corpus) {
  return run_stage(cfg, 2, ckpt, corpus);
}
inline StageResult run_stage3(const PipelineConfig& cfg, const Checkpoint& ckpt, const Corpus& corpus) {
  return run_stage(cfg, 3, ckpt, corpus);
}

/// Config snapshot stored in a checkpoint.
inline PipelineConfig checkpoint_config(const Checkpoint& ckpt) {
  if (ckpt.config_json.empty()) throw ConfigError("checkpoint carries no config snapshot");
  try {
    return config_from_json(nlohmann::json::parse(ckpt.config_json));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint config snapshot is malformed: ") + e.what());
  }
}

/// Conditions on one reference mel and synthesizes `tokens` with predicted
/// durations. Parameters are only read.
inline MelFrameMatrix zero_shot_synthesize(const Checkpoint& ckpt, const MelFrameMatrix& reference,
                                           const std::vector<int>& tokens) {
  const PipelineConfig cfg = checkpoint_config(ckpt);
  if (reference.cols() != cfg.model.mel_channels) {
    throw DimensionError("reference mel has " + std::to_string(reference.cols()) + " channels, model expects " +
                         std::to_string(cfg.model.mel_channels));
  }
  const ParameterStore& params = ckpt.params;
  Tape tape(&params);
  Var s = encode(tape, tape.constant(reference), cfg.model.encoder, EncoderMode::kEval);
  Var condition = conditioning_for(cfg, params) == Conditioning::kBasis ? attend_basis(tape, s).representation : s;
  return run_acoustic_model(tape, tokens, {}, condition, cfg.model).mel.value();
}

struct SimilarityTrials {
  std::size_t trials = 0;
  std::size_t matched_closer = 0;
  double fraction() const { return trials ? static_cast<double>(matched_closer) / static_cast<double>(trials) : 0.0; }
};

/// For every held-out reference: synthesize another utterance's text of the
/// same speaker zero-shot (predicted durations), then check whether the
/// output's weights are KL-closer to this reference than to a reference from
/// a randomly drawn different speaker.
inline SimilarityTrials speaker_similarity_trials(const Checkpoint& ckpt, const Corpus& corpus, std::uint64_t seed) {
  const PipelineConfig cfg = checkpoint_config(ckpt);
  if (!has_basis(ckpt.params)) throw ConfigError("similarity trials need a basis-initialized checkpoint");
  std::vector<const Utterance*> all;
  for (const auto* split : {&corpus.train, &corpus.heldout})
    for (const auto& u : *split) all.push_back(&u);
  const auto pairs = heldout_pairs(corpus.heldout);
  std::mt19937_64 rng(seed);
  std::vector<const Utterance*> impostors;
  for (const auto& p : pairs) {
    const Utterance* other = nullptr;
    do {
      other = all[std::uniform_int_distribution<std::size_t>(0, all.size() - 1)(rng)];
    } while (other->speaker_id == p.reference->speaker_id);
    impostors.push_back(other);
  }
  const Conditioning cond = conditioning_for(cfg, ckpt.params);
  std::vector<int> closer(pairs.size(), 0);
  pipeline_detail::parallel_for(pairs.size(), cfg.threads, [&](std::size_t i) {
    const PairResult r = evaluate_pair(ckpt.params, cfg.model, cond, pairs[i], true, cfg.supervision.kl_floor);
    const Tensor other_w =
        extract_representation(encode(impostors[i]->mel, cfg.model.encoder, ckpt.params), ckpt.params).second;
    const SupervisionConfig sc{cfg.supervision.kl_floor};
    closer[i] = distribution_loss(r.ref_weights, r.gen_weights, sc) < distribution_loss(other_w, r.gen_weights, sc);
  });
  SimilarityTrials t;
  t.trials = pairs.size();
  for (int c : closer) t.matched_closer += static_cast<std::size_t>(c);
  return t;
}

}  // namespace adaspeech4
