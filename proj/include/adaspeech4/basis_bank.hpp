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
#include <random>
#include <string>

#include "adaspeech4/ops.hpp"
#include "adaspeech4/parameters.hpp"

namespace adaspeech4 {

/// N basis vectors B (N x d) attended by a speaker embedding through square
/// query/key/value projections.
namespace basis_bank {

inline const char* kBasis = "basis.B";
inline const char* kQuery = "basis.W_Q";
inline const char* kKey = "basis.W_K";
inline const char* kValue = "basis.W_V";

/// Fresh projections with a seed-derived Glorot init; B is left to the caller.
inline void init_projections(ParameterStore& store, std::size_t dim, std::mt19937_64& rng) {
  store.add(kQuery, glorot_uniform(dim, dim, rng));
  store.add(kKey, glorot_uniform(dim, dim, rng));
  store.add(kValue, glorot_uniform(dim, dim, rng));
}

/// Unit-variance Gaussian basis vectors (the "no k-means" initialization).
inline Tensor random_basis(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  return gaussian({count, dim}, 1.0, rng);
}

inline void validate_basis(const Tensor& basis) {
  if (!basis.all_finite()) throw EvaluationError("basis matrix has non-finite entries");
  for (std::size_t i = 0; i < basis.rows(); ++i) {
    double n2 = 0.0;
    for (double v : basis.row(i)) n2 += v * v;
    if (!(n2 > 0.0)) throw DegenerateError("basis vector " + std::to_string(i) + " is the zero vector");
  }
}

}  // namespace basis_bank

/// Attention weights w (1 x N) and representation E (1 x d).
struct BasisAttention {
  Var weights;
  Var representation;
};

/// w = softmax((S W_Q)(B W_K)^T / sqrt(d)), E = w (B W_V).
inline BasisAttention attend_basis(Tape& tape, Var speaker) {
  const ParameterStore& store = *tape.params();
  const std::size_t dim = store.get(basis_bank::kQuery).rows();
  if (speaker.rows() != 1 || speaker.cols() != dim) {
    throw DimensionError("speaker embedding " + shape_string(speaker.shape()) + " for a bank of width " +
                         std::to_string(dim));
  }
  Var basis = tape.param(basis_bank::kBasis);
  Var query = ops::matmul(speaker, tape.param(basis_bank::kQuery));
  Var keys = ops::matmul(basis, tape.param(basis_bank::kKey));
  Var logits = ops::scale(ops::matmul(query, ops::transpose(keys)), 1.0 / std::sqrt(static_cast<double>(dim)));
  Var weights = ops::softmax_rows(logits);
  Var values = ops::matmul(basis, tape.param(basis_bank::kValue));
  return {weights, ops::matmul(weights, values)};
}

inline Var attention_weights(Tape& tape, Var speaker) { return attend_basis(tape, speaker).weights; }

/// Value-level attention over a frozen bank.
inline std::pair<Tensor, Tensor> extract_representation(const Tensor& speaker, const ParameterStore& store) {
  Tape tape(&store);
  BasisAttention a = attend_basis(tape, tape.constant(speaker));
  return {a.representation.value(), a.weights.value()};
}

/// Mean cosine over ordered pairs i != j of basis rows.
inline Var regularization_loss(Var basis) {
  if (basis.rows() < 2) throw ConfigError("regularization loss needs at least two basis vectors");
  Var unit = ops::l2_normalize_rows(basis);
  return ops::mean_off_diagonal(ops::matmul(unit, ops::transpose(unit)));
}

inline double regularization_loss(const Tensor& basis) {
  Tape tape;
  return regularization_loss(tape.constant(basis)).value()[0];
}

/// Same quantity as regularization_loss, reported as a metric.
inline double mean_pairwise_cosine(const Tensor& basis) { return regularization_loss(basis); }

}  // namespace adaspeech4
