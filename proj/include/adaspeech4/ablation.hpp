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

#include <string>
#include <vector>

#include "adaspeech4/pipeline.hpp"

namespace adaspeech4 {

struct PipelineResult {
  Checkpoint stage1;
  Checkpoint stage2;
  Checkpoint final;
  std::vector<MetricsRow> metrics;  // every stage, in order
  MetricsRow final_row() const { return metrics.back(); }
};

/// Stage 1, basis initialization, stage 2, stage 3.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const Corpus& corpus) {
  PipelineResult r;
  auto append = [&](StageResult s) {
    r.metrics.insert(r.metrics.end(), s.metrics.begin(), s.metrics.end());
    return std::move(s.checkpoint);
  };
  r.stage1 = append(run_stage1(cfg, corpus));
  r.stage2 = append(run_stage2(cfg, init_basis_from_checkpoint(r.stage1, corpus, cfg), corpus));
  r.final = append(run_stage3(cfg, r.stage2, corpus));
  return r;
}

inline const std::vector<std::string>& ablation_settings() {
  static const std::vector<std::string> names = {"full",       "no-kmeans",  "no-reg",   "no-basis", "no-cln-enc",
                                                 "no-cln-all", "no-dist",    "cos-only", "cos-plus-dist"};
  return names;
}

/// Derives a configuration variant from `base` by name.
inline PipelineConfig apply_ablation(const std::string& setting, PipelineConfig c) {
  auto freeze_all_stages = [&](const std::string& pattern) {
    for (int s = 1; s <= 3; ++s) c.stage(s).frozen_parameter_patterns.push_back(pattern);
  };
  if (setting == "full") {
  } else if (setting == "no-kmeans") {
    c.basis_init = "random";
  } else if (setting == "no-reg") {
    c.stage2.lambda_reg = 0.0;
  } else if (setting == "no-basis") {
    c.condition_on_basis = false;
  } else if (setting == "no-cln-enc") {
    freeze_all_stages("tts.encoder.*.cln_*");
  } else if (setting == "no-cln-all") {
    freeze_all_stages("tts.encoder.*.cln_*");
    freeze_all_stages("tts.decoder.*.cln_*");
  } else if (setting == "no-dist") {
    c.stage3.lambda_dist = 0.0;
  } else if (setting == "cos-only") {
    c.stage3.lambda_dist = 0.0;
    c.stage3.lambda_cos = c.stage3.lambda_cos > 0.0 ? c.stage3.lambda_cos : 1.0;
  } else if (setting == "cos-plus-dist") {
    c.stage3.lambda_dist = c.stage3.lambda_dist > 0.0 ? c.stage3.lambda_dist : 1.0;
    c.stage3.lambda_cos = c.stage3.lambda_cos > 0.0 ? c.stage3.lambda_cos : 1.0;
  } else {
    std::string valid;
    for (const auto& n : ablation_settings()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation setting '" + setting + "'; valid settings: " + valid);
  }
  c.validate();
  return c;
}

inline PipelineResult run_ablation(const std::string& setting, const PipelineConfig& base, const Corpus& corpus) {
  return run_pipeline(apply_ablation(setting, base), corpus);
}

struct BasisScanRow {
  std::size_t num_basis = 0;
  MetricsRow final;
};

/// Full pipeline once per basis count.
inline std::vector<BasisScanRow> scan_basis_count(const std::vector<std::size_t>& counts, const PipelineConfig& base,
                                                  const Corpus& corpus) {
  if (counts.empty()) throw ConfigError("basis scan needs at least one count");
  std::vector<BasisScanRow> rows;
  for (std::size_t n : counts) {
    PipelineConfig c = base;
    c.model.num_basis = n;
    c.validate();
    rows.push_back({n, run_pipeline(c, corpus).final_row()});
  }
  return rows;
}

}  // namespace adaspeech4
