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

// Command-line front end: corpus generation, the three training stages,
// basis initialization, zero-shot synthesis, evaluation and ablations.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adaspeech4/ablation.hpp"
#include "adaspeech4/gradient_fixture.hpp"

namespace fs = std::filesystem;
using namespace adaspeech4;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out = ".";
};

PipelineConfig resolve_config(const GlobalOptions& g) {
  PipelineConfig cfg = g.config_path.empty() ? desk_config() : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

Corpus resolve_corpus(const std::string& dir, const PipelineConfig& cfg) {
  return dir.empty() ? generate_corpus(cfg.corpus) : load_corpus(dir);
}

fs::path out_file(const GlobalOptions& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

std::vector<int> parse_tokens(const std::string& text) {
  std::vector<int> tokens;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      tokens.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("token list entry '" + item + "' is not an integer");
    }
  }
  if (tokens.empty()) throw ConfigError("token list is empty");
  return tokens;
}

nlohmann::json tensor_json(const Tensor& t) { return t.values(); }

nlohmann::json metric_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json row_json(const MetricsRow& r) {
  return {{"step", r.step},
          {"stage", r.stage},
          {"recon_mae", metric_json(r.recon_mae)},
          {"l_reg", metric_json(r.l_reg)},
          {"l_dist", metric_json(r.l_dist)},
          {"basis_mean_cosine", metric_json(r.basis_mean_cosine)},
          {"heldout_kl", metric_json(r.heldout_kl)},
          {"heldout_embedding_cosine", metric_json(r.heldout_embedding_cosine)}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!(out << text)) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale zero-shot speaker conditioning pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  app.add_option("--seed", g.seed, "Override the pipeline seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Evaluation worker threads")->check(CLI::PositiveNumber);

  std::string corpus_dir, checkpoint_path, reference_path, tokens_text, mel_path, output_path, setting;
  int stage = 0;
  std::optional<std::size_t> num_basis;
  std::vector<std::size_t> counts;
  double fd_step = 1e-4, tolerance = 1e-4;
  std::uint64_t trial_seed = 7;

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus to --out");

  auto* train = app.add_subcommand("train", "Run one training stage");
  train->add_option("--stage", stage, "Stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  train->add_option("--corpus", corpus_dir, "Corpus directory (generated from config if omitted)");
  train->add_option("--checkpoint", checkpoint_path, "Input checkpoint (stages 2 and 3)");

  auto* init = app.add_subcommand("init-basis", "Initialize the basis bank from a stage-1 checkpoint");
  init->add_option("--checkpoint", checkpoint_path, "Stage-1 checkpoint")->required();
  init->add_option("--corpus", corpus_dir, "Corpus directory");
  init->add_option("--num-basis", num_basis, "Number of basis vectors N");

  auto* synth = app.add_subcommand("synth", "Zero-shot synthesis from a reference mel");
  synth->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
  synth->add_option("--reference", reference_path, "Reference MEL1 file")->required();
  synth->add_option("--tokens", tokens_text, "Comma-separated token ids")->required();
  synth->add_option("--output", output_path, "Output MEL1 file (default <out>/synth.mel)");

  auto* extract = app.add_subcommand("extract", "Speaker embedding and basis weights of a mel file");
  extract->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  extract->add_option("--mel", mel_path, "MEL1 file")->required();

  auto* grad = app.add_subcommand("check-grad", "Finite-difference check of the composite loss");
  grad->add_option("--step", fd_step, "Central-difference step");
  grad->add_option("--tolerance", tolerance, "Maximum relative error");

  auto* ablate = app.add_subcommand("ablate", "Run the full pipeline under one ablation setting");
  ablate->add_option("--setting", setting, "Ablation setting")->required();
  ablate->add_option("--corpus", corpus_dir, "Corpus directory");

  auto* scan = app.add_subcommand("scan-basis", "Run the full pipeline for several basis counts");
  scan->add_option("--counts", counts, "Basis counts")->required()->delimiter(',')->check(CLI::PositiveNumber);
  scan->add_option("--corpus", corpus_dir, "Corpus directory");

  auto* eval = app.add_subcommand("eval", "Held-out evaluation of a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  eval->add_option("--corpus", corpus_dir, "Corpus directory");
  eval->add_option("--trial-seed", trial_seed, "Seed for mismatched-speaker draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (gen->parsed()) {
      PipelineConfig cfg = resolve_config(g);
      if (g.seed) cfg.corpus.seed = *g.seed;
      const Corpus corpus = generate_corpus(cfg.corpus);
      write_corpus(corpus, g.out);
      std::printf("wrote %zu train + %zu held-out utterances to %s\n", corpus.train.size(), corpus.heldout.size(),
                  g.out.c_str());
    } else if (train->parsed()) {
      PipelineConfig cfg = resolve_config(g);
      const Corpus corpus = resolve_corpus(corpus_dir, cfg);
      Checkpoint start;
      if (stage == 1) {
        start = initial_checkpoint(cfg);
      } else {
        if (checkpoint_path.empty()) throw ConfigError("stage " + std::to_string(stage) + " needs --checkpoint");
        start = load_checkpoint(checkpoint_path);
      }
      StageResult r = run_stage(cfg, stage, std::move(start), corpus);
      const fs::path ckpt = out_file(g, "stage" + std::to_string(stage) + ".ckpt");
      save_checkpoint(ckpt.string(), r.checkpoint);
      write_metrics_csv(out_file(g, "metrics_stage" + std::to_string(stage) + ".csv").string(), r.metrics);
      std::printf("stage %d: %zu steps, recon_mae %.6g -> %.6g, checkpoint %s\n", stage, cfg.stage(stage).steps,
                  r.metrics.front().recon_mae, r.metrics.back().recon_mae, ckpt.c_str());
    } else if (init->parsed()) {
      PipelineConfig cfg = resolve_config(g);
      if (num_basis) cfg.model.num_basis = *num_basis;
      cfg.validate();
      const Corpus corpus = resolve_corpus(corpus_dir, cfg);
      const Checkpoint out = init_basis_from_checkpoint(load_checkpoint(checkpoint_path), corpus, cfg);
      const fs::path path = out_file(g, "basis.ckpt");
      save_checkpoint(path.string(), out);
      std::printf("basis N=%zu mean pairwise cosine %.6g, checkpoint %s\n", cfg.model.num_basis,
                  mean_pairwise_cosine(out.params.get(basis_bank::kBasis)), path.c_str());
    } else if (synth->parsed()) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      const MelFrameMatrix mel = zero_shot_synthesize(ckpt, read_mel(reference_path), parse_tokens(tokens_text));
      const fs::path path = output_path.empty() ? out_file(g, "synth.mel") : fs::path(output_path);
      write_mel(path.string(), mel);
      std::printf("wrote %zu x %zu mel to %s\n", mel.rows(), mel.cols(), path.c_str());
    } else if (extract->parsed()) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      const PipelineConfig cfg = checkpoint_config(ckpt);
      const SpeakerEmbedding s = encode(read_mel(mel_path), cfg.model.encoder, ckpt.params);
      nlohmann::json j = {{"embedding", tensor_json(s)}};
      if (has_basis(ckpt.params)) {
        auto [e, w] = extract_representation(s, ckpt.params);
        j["weights"] = tensor_json(w);
        j["representation"] = tensor_json(e);
      }
      std::cout << j.dump(1) << '\n';
    } else if (grad->parsed()) {
      const std::uint64_t seed = g.seed.value_or(42);
      CompositeGradientFixture f = composite_gradient_fixture(seed);
      const GradientCheckReport report = check_gradients(f.loss, f.params, fd_step);
      for (const auto& e : report.entries)
        std::printf("%-36s %6zu  rel %.3e  abs %.3e\n", e.name.c_str(), e.size, e.max_relative_error,
                    e.max_abs_error);
      std::printf("max relative error %.3e over %zu evaluations: %s\n", report.max_relative_error, report.evaluations,
                  report.passed(tolerance) ? "PASS" : "FAIL");
      return report.passed(tolerance) ? 0 : static_cast<int>(ExitCode::kFailure);
    } else if (ablate->parsed()) {
      const PipelineConfig cfg = apply_ablation(setting, resolve_config(g));
      const Corpus corpus = resolve_corpus(corpus_dir, cfg);
      const PipelineResult r = run_pipeline(cfg, corpus);
      write_metrics_csv(out_file(g, "ablation_" + setting + ".csv").string(), r.metrics);
      std::cout << nlohmann::json{{"setting", setting}, {"final", row_json(r.final_row())}}.dump(1) << '\n';
    } else if (scan->parsed()) {
      const PipelineConfig cfg = resolve_config(g);
      const Corpus corpus = resolve_corpus(corpus_dir, cfg);
      const auto rows = scan_basis_count(counts, cfg, corpus);
      std::string csv = "num_basis," + std::string(kMetricsHeader) + "\n";
      for (const auto& r : rows) {
        std::string line = metrics_csv({r.final});
        line = line.substr(line.rfind('\n', line.size() - 2) + 1);
        csv += std::to_string(r.num_basis) + "," + line;
      }
      write_text(out_file(g, "basis_scan.csv"), std::string(kMetricsVersionLine) + "\n" + csv);
      std::cout << csv;
    } else if (eval->parsed()) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      PipelineConfig cfg = checkpoint_config(ckpt);
      if (g.threads) cfg.threads = *g.threads;
      const Corpus corpus = resolve_corpus(corpus_dir, cfg);
      const EvalSummary held = evaluate_pairs(ckpt.params, cfg, heldout_pairs(corpus.heldout));
      nlohmann::json j = {{"heldout_recon_mae", metric_json(held.recon_mae)},
                          {"heldout_kl", metric_json(held.kl)},
                          {"heldout_embedding_cosine", metric_json(held.embedding_cosine)},
                          {"pairs", held.count}};
      if (has_basis(ckpt.params)) {
        const SimilarityTrials t = speaker_similarity_trials(ckpt, corpus, trial_seed);
        j["similarity_trials"] = t.trials;
        j["similarity_matched_closer"] = t.matched_closer;
        j["similarity_fraction"] = t.fraction();
      }
      write_text(out_file(g, "eval.json"), j.dump(1) + "\n");
      std::cout << j.dump(1) << '\n';
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
