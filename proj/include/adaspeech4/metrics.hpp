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
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "adaspeech4/errors.hpp"

namespace adaspeech4 {

inline constexpr double kNotAvailable = std::numeric_limits<double>::quiet_NaN();

/// One evaluation point of a training run. Quantities that do not exist yet
/// (anything involving the basis during stage 1) are NaN.
struct MetricsRow {
  std::size_t step = 0;
  int stage = 0;
  double recon_mae = kNotAvailable;
  double l_reg = kNotAvailable;
  double l_dist = kNotAvailable;
  double basis_mean_cosine = kNotAvailable;
  double heldout_kl = kNotAvailable;
  double heldout_embedding_cosine = kNotAvailable;
};

inline constexpr const char* kMetricsVersionLine = "# adaspeech4-metrics v1";
inline constexpr const char* kMetricsHeader =
    "step,stage,recon_mae,l_reg,l_dist,basis_mean_cosine,heldout_kl,heldout_embedding_cosine";

inline std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << kMetricsVersionLine << '\n' << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << r.stage << ',' << format_metric(r.recon_mae) << ',' << format_metric(r.l_reg) << ','
       << format_metric(r.l_dist) << ',' << format_metric(r.basis_mean_cosine) << ',' << format_metric(r.heldout_kl)
       << ',' << format_metric(r.heldout_embedding_cosine) << '\n';
  }
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics '" + path + "'");
  out << metrics_csv(rows);
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsVersionLine) throw DataError("metrics CSV: missing version line");
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError("metrics CSV: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[8];
    for (auto& x : f)
      if (!std::getline(ls, x, ',')) throw DataError("metrics CSV: short row '" + line + "'");
    MetricsRow r;
    r.step = std::stoull(f[0]);
    r.stage = std::stoi(f[1]);
    double* dst[] = {&r.recon_mae, &r.l_reg, &r.l_dist, &r.basis_mean_cosine, &r.heldout_kl,
                     &r.heldout_embedding_cosine};
    for (int i = 0; i < 6; ++i) *dst[i] = f[i + 2] == "nan" ? kNotAvailable : std::stod(f[i + 2]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace adaspeech4
