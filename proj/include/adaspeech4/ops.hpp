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

// Differentiable primitives over Tape. Every tensor is read as a matrix;
// rank-1 tensors are single rows and every result is rank 2.

#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "adaspeech4/tape.hpp"

namespace adaspeech4::ops {

namespace detail {

inline void require(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  if (!ok) {
    throw DimensionError(op + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
}

inline Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  return t.reshaped({t.rows(), t.cols()});
}

inline void axpy(Tensor& dst, const Tensor& src, double scale = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

// out[m x n] += a[m x k] * b[k x n], with optional transposes of a or b.
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m,
                     std::size_t k, std::size_t n, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * b[j * k + p];
      } else {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace detail

/// Plain (non-differentiable) matrix product, also used by oracles-free helpers.
inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul", a, b);
  Tensor out({a.rows(), b.cols()}, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(),
                   b.cols(), false, false);
  return out;
}

inline Var matmul(Var a, Var b) {
  detail::require(a.cols() == b.rows(), "matmul", a.value(), b.value());
  return a.tape()->record(
      {a, b}, [](const Inputs& in) { return matmul_values(*in[0], *in[1]); },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
        if (gin[0]) detail::gemm_acc(g.data().data(), y.data().data(), gin[0]->data().data(), m, n, k, false, true);
        if (gin[1]) detail::gemm_acc(x.data().data(), g.data().data(), gin[1]->data().data(), k, m, n, true, false);
      });
}

inline Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  return a.tape()->record(
      {a}, [shape](const Inputs& in) { return in[0]->reshaped(shape); },
      [](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::axpy(*gin[0], g);
      });
}

/// Rows `ids` of a table; out-of-range ids are a data error.
inline Var gather_rows(Var table, const std::vector<int>& ids) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw DataError("row id " + std::to_string(id) + " outside table of " + std::to_string(table.rows()) + " rows");
    }
  }
  if (ids.empty()) throw DimensionError("gather_rows with no ids");
  return table.tape()->record(
      {table},
      [ids](const Inputs& in) {
        const Tensor& t = *in[0];
        Tensor out({ids.size(), t.cols()});
        for (std::size_t i = 0; i < ids.size(); ++i) {
          auto src = t.row(static_cast<std::size_t>(ids[i]));
          std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
      },
      [ids](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t c = 0; c < g.cols(); ++c) gin[0]->at(static_cast<std::size_t>(ids[i]), c) += g.at(i, c);
      });
}

inline Var transpose(Var a) {
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        const Tensor& x = *in[0];
        Tensor out({x.cols(), x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < x.cols(); ++c) out.at(c, r) = x.at(r, c);
        return out;
      },
      [](const Inputs&, const Tensor& out, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < out.rows(); ++r)
          for (std::size_t c = 0; c < out.cols(); ++c) gin[0]->at(c, r) += g.at(r, c);
      });
}

inline Var add(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  return a.tape()->record(
      {a, b},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        detail::axpy(out, *in[1]);
        return out;
      },
      [](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::axpy(*gin[0], g);
        if (gin[1]) detail::axpy(*gin[1], g);
      });
}

inline Var sub(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
  return a.tape()->record(
      {a, b},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        detail::axpy(out, *in[1], -1.0);
        return out;
      },
      [](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::axpy(*gin[0], g);
        if (gin[1]) detail::axpy(*gin[1], g, -1.0);
      });
}

/// Element-wise product.
inline Var mul(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.value(), b.value());
  return a.tape()->record(
      {a, b},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * (*in[1])[i];
          if (gin[1]) (*gin[1])[i] += g[i] * (*in[0])[i];
        }
      });
}

inline Var scale(Var a, double s) {
  return a.tape()->record(
      {a},
      [s](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        for (auto& v : out.values()) v *= s;
        return out;
      },
      [s](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::axpy(*gin[0], g, s);
      });
}

/// a[m x n] + r[1 x n] broadcast over rows.
inline Var add_row(Var a, Var r) {
  detail::require(r.rows() == 1 && r.cols() == a.cols(), "add_row", a.value(), r.value());
  return a.tape()->record(
      {a, r},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        const Tensor& row = *in[1];
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += row[j];
        return out;
      },
      [](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::axpy(*gin[0], g);
        if (gin[1]) {
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) (*gin[1])[j] += g.at(i, j);
        }
      });
}

/// a[m x n] * r[1 x n] broadcast over rows.
inline Var mul_row(Var a, Var r) {
  detail::require(r.rows() == 1 && r.cols() == a.cols(), "mul_row", a.value(), r.value());
  return a.tape()->record(
      {a, r},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        const Tensor& row = *in[1];
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= row[j];
        return out;
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        const Tensor& x = *in[0];
        const Tensor& row = *in[1];
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < g.cols(); ++j) {
            const std::size_t k = i * g.cols() + j;
            if (gin[0]) (*gin[0])[k] += g[k] * row[j];
            if (gin[1]) (*gin[1])[j] += g[k] * x[k];
          }
        }
      });
}

inline Var relu(Var a) {
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
        return out;
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          if ((*in[0])[i] > 0.0) (*gin[0])[i] += g[i];
      });
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_values(const Tensor& logits) {
  if (logits.empty()) throw DimensionError("softmax of an empty input");
  Tensor out = detail::as_matrix(logits);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return out;
}

inline Var softmax_rows(Var logits) {
  if (logits.value().empty()) throw DimensionError("softmax of an empty input");
  return logits.tape()->record(
      {logits}, [](const Inputs& in) { return softmax_values(*in[0]); },
      [](const Inputs&, const Tensor& y, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            gin[0]->at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
      });
}

/// Per-group mean and population variance seen by a standardization.
struct Moments {
  std::vector<double> mean;
  std::vector<double> var;
};

namespace detail {

// Standardizes groups of `count` values laid out with `stride` between them.

inline Tensor standardize(const Tensor& x, bool along_rows, double eps, Moments* moments) {
  Tensor out = as_matrix(x);
  const std::size_t groups = along_rows ? out.rows() : out.cols();
  const std::size_t count = along_rows ? out.cols() : out.rows();
  const std::size_t stride = along_rows ? 1 : out.cols();
  const std::size_t step = along_rows ? out.cols() : 1;
  if (moments) {
    moments->mean.assign(groups, 0.0);
    moments->var.assign(groups, 0.0);
  }
  auto d = out.data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double* base = d.data() + gi * step;
    double mean = 0.0;
    for (std::size_t k = 0; k < count; ++k) mean += base[k * stride];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const double c = base[k * stride] - mean;
      var += c * c;
    }
    var /= static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < count; ++k) base[k * stride] = (base[k * stride] - mean) * inv;
    if (moments) {
      moments->mean[gi] = mean;
      moments->var[gi] = var;
    }
  }
  return out;
}

inline void standardize_backward(const Tensor& x, const Tensor& y, const Tensor& g,
                                 bool along_rows, double eps, Tensor& gx) {
  const std::size_t groups = along_rows ? y.rows() : y.cols();
  const std::size_t count = along_rows ? y.cols() : y.rows();
  const std::size_t stride = along_rows ? 1 : y.cols();
  const std::size_t step = along_rows ? y.cols() : 1;
  const double n = static_cast<double>(count);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * step;
    double mean = 0.0;
    for (std::size_t k = 0; k < count; ++k) mean += x[base + k * stride];
    mean /= n;
    double var = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const double c = x[base + k * stride] - mean;
      var += c * c;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    double gmean = 0.0, gy = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = base + k * stride;
      gmean += g[i];
      gy += g[i] * y[i];
    }
    gmean /= n;
    gy /= n;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = base + k * stride;
      gx[i] += inv * (g[i] - gmean - y[i] * gy);
    }
  }
}

}  // namespace detail

/// (x - mean) / sqrt(var + eps) over each row (layer-norm statistics).
inline Var normalize_rows(Var x, double eps) {
  return x.tape()->record(
      {x}, [eps](const Inputs& in) { return detail::standardize(*in[0], true, eps, nullptr); },
      [eps](const Inputs& in, const Tensor& y, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::standardize_backward(*in[0], y, g, true, eps, *gin[0]);
      });
}

/// Per-column standardization over all rows (batch-norm statistics). The
/// batch moments of the forward pass are written to `moments` when given.
inline Var normalize_cols(Var x, double eps, std::shared_ptr<Moments> moments = {}) {
  return x.tape()->record(
      {x},
      [eps, moments](const Inputs& in) { return detail::standardize(*in[0], false, eps, moments.get()); },
      [eps](const Inputs& in, const Tensor& y, const Tensor& g, InputGrads& gin) {
        if (gin[0]) detail::standardize_backward(*in[0], y, g, false, eps, *gin[0]);
      });
}

/// Layer normalization of every row: normalize, scale by gamma, shift by beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  detail::require(gamma.cols() == x.cols() && gamma.rows() == 1, "layer_norm", x.value(), gamma.value());
  detail::require(beta.cols() == x.cols() && beta.rows() == 1, "layer_norm", x.value(), beta.value());
  return add_row(mul_row(normalize_rows(x, eps), gamma), beta);
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows() || count == 0) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of " + shape_string(a.shape()));
  }
  return a.tape()->record(
      {a},
      [begin, count](const Inputs& in) {
        const Tensor& x = *in[0];
        const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols());
        return Tensor({count, x.cols()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
      },
      [begin](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        const std::size_t off = begin * in[0]->cols();
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
      });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols() || count == 0) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of " + shape_string(a.shape()));
  }
  return a.tape()->record(
      {a},
      [begin, count](const Inputs& in) {
        const Tensor& x = *in[0];
        Tensor out({x.rows(), count});
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < count; ++c) out.at(r, c) = x.at(r, begin + c);
        return out;
      },
      [begin, count](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < count; ++c) gin[0]->at(r, begin + c) += g.at(r, c);
      });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  for (const Var& p : parts) detail::require(p.cols() == parts[0].cols(), "concat_rows", parts[0].value(), p.value());
  return parts[0].tape()->record(
      parts,
      [](const Inputs& in) {
        std::size_t rows = 0;
        for (const Tensor* t : in) rows += t->rows();
        std::vector<double> data;
        data.reserve(rows * in[0]->cols());
        for (const Tensor* t : in) data.insert(data.end(), t->values().begin(), t->values().end());
        return Tensor({rows, in[0]->cols()}, std::move(data));
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (gin[k]) {
            for (std::size_t i = 0; i < in[k]->size(); ++i) (*gin[k])[i] += g[off + i];
          }
          off += in[k]->size();
        }
      });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  for (const Var& p : parts) detail::require(p.rows() == parts[0].rows(), "concat_cols", parts[0].value(), p.value());
  return parts[0].tape()->record(
      parts,
      [](const Inputs& in) {
        std::size_t cols = 0;
        for (const Tensor* t : in) cols += t->cols();
        Tensor out({in[0]->rows(), cols});
        for (std::size_t r = 0; r < out.rows(); ++r) {
          std::size_t c0 = 0;
          for (const Tensor* t : in) {
            for (std::size_t c = 0; c < t->cols(); ++c) out.at(r, c0 + c) = t->at(r, c);
            c0 += t->cols();
          }
        }
        return out;
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          std::size_t c0 = 0;
          for (std::size_t k = 0; k < in.size(); ++k) {
            if (gin[k]) {
              for (std::size_t c = 0; c < in[k]->cols(); ++c) gin[k]->at(r, c) += g.at(r, c0 + c);
            }
            c0 += in[k]->cols();
          }
        }
      });
}

/// Column means over all rows: [m x n] -> [1 x n].
inline Var mean_rows(Var a) {
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        const Tensor& x = *in[0];
        Tensor out({1, x.cols()}, 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x.at(r, c);
        for (auto& v : out.values()) v /= static_cast<double>(x.rows());
        return out;
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        const double inv = 1.0 / static_cast<double>(in[0]->rows());
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gin[0]->at(r, c) += g[c] * inv;
      });
}

inline Var sum_all(Var a) {
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        const auto& v = in[0]->values();
        return Tensor({1, 1}, std::vector<double>{std::accumulate(v.begin(), v.end(), 0.0)});
      },
      [](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (auto& v : gin[0]->values()) v += g[0];
      });
}

inline Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

/// Repeats row i of `a` durations[i] times.
inline Var repeat_rows(Var a, const std::vector<int>& durations) {
  if (durations.size() != a.rows()) {
    throw DimensionError("repeat_rows: " + std::to_string(durations.size()) +
                         " durations for " + shape_string(a.shape()));
  }
  std::size_t total = 0;
  for (int d : durations) {
    if (d < 1) throw DataError("duration " + std::to_string(d) + " is not positive");
    total += static_cast<std::size_t>(d);
  }
  return a.tape()->record(
      {a},
      [durations, total](const Inputs& in) {
        const Tensor& x = *in[0];
        Tensor out({total, x.cols()});
        std::size_t t = 0;
        for (std::size_t i = 0; i < durations.size(); ++i)
          for (int k = 0; k < durations[i]; ++k, ++t)
            for (std::size_t c = 0; c < x.cols(); ++c) out.at(t, c) = x.at(i, c);
        return out;
      },
      [durations](const Inputs&, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        std::size_t t = 0;
        for (std::size_t i = 0; i < durations.size(); ++i)
          for (int k = 0; k < durations[i]; ++k, ++t)
            for (std::size_t c = 0; c < g.cols(); ++c) gin[0]->at(i, c) += g.at(t, c);
      });
}

/// Mean of |a - b| over all entries. The subgradient at a tie is 0.
inline Var mean_abs_diff(Var a, Var b) {
  detail::require(a.value().size() == b.value().size() && a.cols() == b.cols(), "mean_abs_diff",
                  a.value(), b.value());
  return a.tape()->record(
      {a, b},
      [](const Inputs& in) {
        double s = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) s += std::abs((*in[0])[i] - (*in[1])[i]);
        return Tensor({1, 1}, std::vector<double>{s / static_cast<double>(in[0]->size())});
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        const double w = g[0] / static_cast<double>(in[0]->size());
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double d = (*in[0])[i] - (*in[1])[i];
          const double s = d > 0.0 ? w : (d < 0.0 ? -w : 0.0);
          if (gin[0]) (*gin[0])[i] += s;
          if (gin[1]) (*gin[1])[i] -= s;
        }
      });
}

/// Mean of (a - b)^2 over all entries.
inline Var mean_squared_diff(Var a, Var b) {
  detail::require(a.value().size() == b.value().size(), "mean_squared_diff", a.value(), b.value());
  return a.tape()->record(
      {a, b},
      [](const Inputs& in) {
        double s = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double d = (*in[0])[i] - (*in[1])[i];
          s += d * d;
        }
        return Tensor({1, 1}, std::vector<double>{s / static_cast<double>(in[0]->size())});
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        const double w = 2.0 * g[0] / static_cast<double>(in[0]->size());
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double d = (*in[0])[i] - (*in[1])[i];
          if (gin[0]) (*gin[0])[i] += w * d;
          if (gin[1]) (*gin[1])[i] -= w * d;
        }
      });
}

/// Scales every row to unit L2 norm; a zero row is a degenerate input.
inline Var l2_normalize_rows(Var a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double n2 = 0.0;
    for (double v : a.value().row(r)) n2 += v * v;
    if (!(n2 > 0.0)) throw DegenerateError("row " + std::to_string(r) + " has zero norm");
  }
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        Tensor out = detail::as_matrix(*in[0]);
        for (std::size_t r = 0; r < out.rows(); ++r) {
          auto row = out.row(r);
          double n2 = 0.0;
          for (double v : row) n2 += v * v;
          const double inv = 1.0 / std::sqrt(n2);
          for (auto& v : row) v *= inv;
        }
        return out;
      },
      [](const Inputs& in, const Tensor& y, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double n2 = 0.0;
          for (double v : in[0]->row(r)) n2 += v * v;
          const double inv = 1.0 / std::sqrt(n2);
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            gin[0]->at(r, c) += inv * (g.at(r, c) - y.at(r, c) * dot);
        }
      });
}

/// Mean of the off-diagonal entries of a square matrix.
inline Var mean_off_diagonal(Var a) {
  if (a.rows() != a.cols() || a.rows() < 2) {
    throw DimensionError("mean_off_diagonal needs a square matrix of size >= 2, got " +
                         shape_string(a.shape()));
  }
  return a.tape()->record(
      {a},
      [](const Inputs& in) {
        const Tensor& x = *in[0];
        const std::size_t n = x.rows();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            if (i != j) s += x.at(i, j);
        return Tensor({1, 1}, std::vector<double>{s / static_cast<double>(n * (n - 1))});
      },
      [](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        if (!gin[0]) return;
        const std::size_t n = in[0]->rows();
        const double w = g[0] / static_cast<double>(n * (n - 1));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            if (i != j) gin[0]->at(i, j) += w;
      });
}

/// Sum_i p_i log(p_i / max(q_i, floor)) for two probability rows; 0 log 0 = 0.
inline Var kl_divergence(Var p, Var q, double floor) {
  detail::require(p.value().size() == q.value().size(), "kl_divergence", p.value(), q.value());
  return p.tape()->record(
      {p, q},
      [floor](const Inputs& in) {
        double s = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double pi = (*in[0])[i];
          if (pi <= 0.0) continue;
          s += pi * (std::log(pi) - std::log(std::max((*in[1])[i], floor)));
        }
        return Tensor({1, 1}, std::vector<double>{s});
      },
      [floor](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double pi = (*in[0])[i];
          const double qi = (*in[1])[i];
          const double qc = std::max(qi, floor);
          if (gin[0] && pi > 0.0) (*gin[0])[i] += g[0] * (std::log(pi) - std::log(qc) + 1.0);
          if (gin[1] && qi > floor) (*gin[1])[i] -= g[0] * pi / qi;
        }
      });
}

/// 2-D convolution with "same" padding over a single image stored as
/// [height*width x in_channels] (row-major positions). The weight is
/// [kernel*kernel*in_channels x out_channels], ordered (ky, kx, cin).
struct ConvGeometry {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  std::size_t out_height() const { return (height + stride - 1) / stride; }
  std::size_t out_width() const { return (width + stride - 1) / stride; }
  // Leading pad of the TensorFlow "same" rule.
  static std::size_t pad_before(std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>((out - 1) * s + k) - static_cast<std::ptrdiff_t>(in);
    return total > 0 ? static_cast<std::size_t>(total / 2) : 0;
  }
};

namespace detail {

template <class Visit>
inline void conv_taps(const ConvGeometry& geo, Visit&& visit) {
  const std::size_t oh = geo.out_height(), ow = geo.out_width();
  const std::size_t py = ConvGeometry::pad_before(geo.height, oh, geo.kernel, geo.stride);
  const std::size_t px = ConvGeometry::pad_before(geo.width, ow, geo.kernel, geo.stride);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - static_cast<std::ptrdiff_t>(py);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.height)) continue;
        for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - static_cast<std::ptrdiff_t>(px);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.width)) continue;
          visit(oy * ow + ox, static_cast<std::size_t>(iy) * geo.width + static_cast<std::size_t>(ix),
                ky * geo.kernel + kx);
        }
      }
    }
  }
}

}  // namespace detail

/// Bias-free convolution; the affine shift comes from the following norm.
inline Var conv2d(Var x, Var weight, const ConvGeometry& geo) {
  const std::size_t cin = x.cols();
  const std::size_t cout = weight.cols();
  if (x.rows() != geo.height * geo.width || weight.rows() != geo.kernel * geo.kernel * cin) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " for " +
                         std::to_string(geo.height) + "x" + std::to_string(geo.width) +
                         " image, weight " + shape_string(weight.shape()));
  }
  return x.tape()->record(
      {x, weight},
      [geo, cin, cout](const Inputs& in) {
        Tensor out({geo.out_height() * geo.out_width(), cout}, 0.0);
        const double* xd = in[0]->data().data();
        const double* wd = in[1]->data().data();
        double* od = out.data().data();
        detail::conv_taps(geo, [&](std::size_t op, std::size_t ip, std::size_t tap) {
          double* orow = od + op * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xv = xd[ip * cin + ci];
            if (xv == 0.0) continue;
            const double* wrow = wd + (tap * cin + ci) * cout;
            for (std::size_t c = 0; c < cout; ++c) orow[c] += xv * wrow[c];
          }
        });
        return out;
      },
      [geo, cin, cout](const Inputs& in, const Tensor&, const Tensor& g, InputGrads& gin) {
        const double* xd = in[0]->data().data();
        const double* wd = in[1]->data().data();
        const double* gd = g.data().data();
        double* gx = gin[0] ? gin[0]->data().data() : nullptr;
        double* gw = gin[1] ? gin[1]->data().data() : nullptr;
        detail::conv_taps(geo, [&](std::size_t op, std::size_t ip, std::size_t tap) {
          const double* grow = gd + op * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::size_t wr = (tap * cin + ci) * cout;
            if (gx) {
              double acc = 0.0;
              for (std::size_t c = 0; c < cout; ++c) acc += grow[c] * wd[wr + c];
              gx[ip * cin + ci] += acc;
            }
            if (gw) {
              const double xv = xd[ip * cin + ci];
              if (xv == 0.0) continue;
              for (std::size_t c = 0; c < cout; ++c) gw[wr + c] += xv * grow[c];
            }
          }
        });
      });
}

}  // namespace adaspeech4::ops
