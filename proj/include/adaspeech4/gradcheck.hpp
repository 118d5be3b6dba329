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
#include <functional>
#include <string>
#include <vector>

#include "adaspeech4/parameters.hpp"
#include "adaspeech4/tape.hpp"

namespace adaspeech4 {

/// Builds a scalar loss on a tape bound to the parameter store being checked.
using LossBuilder = std::function<Var(Tape&)>;

struct GradientCheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double max_relative_error = 0.0;
  std::size_t evaluations = 0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

inline double evaluate_loss(const LossBuilder& loss_fn, const ParameterStore& params) {
  Tape tape(&params);
  const double v = loss_fn(tape).value()[0];
  if (!std::isfinite(v)) throw EvaluationError("loss evaluated to a non-finite value");
  return v;
}

/// Relative error with the floor used in every gradient report.
inline double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients with central differences (f(x+h) - f(x-h)) / 2h
/// for every scalar of every trainable tensor. `params` is restored on exit.
inline GradientCheckReport check_gradients(const LossBuilder& loss_fn, ParameterStore& params,
                                           double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::map<std::string, Tensor> analytic;
  {
    Tape tape(&params);
    Var loss = loss_fn(tape);
    if (!std::isfinite(loss.value()[0])) throw EvaluationError("loss evaluated to a non-finite value");
    tape.backward(loss);
    analytic = tape.gradients();
  }
  GradientCheckReport report;
  for (const auto& name : params.trainable_names()) {
    GradientCheckEntry entry{name, params.get(name).size(), 0.0, 0.0};
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < entry.size; ++i) {
      double& x = params.get_mut(name)[i];
      const double saved = x;
      x = saved + step;
      const double up = evaluate_loss(loss_fn, params);
      x = saved - step;
      const double down = evaluate_loss(loss_fn, params);
      x = saved;
      report.evaluations += 2;
      const double numeric = (up - down) / (2.0 * step);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(g[i] - numeric));
      entry.max_relative_error =
          std::max(entry.max_relative_error, gradient_relative_error(g[i], numeric));
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace adaspeech4
