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
#include <vector>

#include "adaspeech4/ops.hpp"
#include "adaspeech4/parameters.hpp"

namespace adaspeech4 {

struct TransformerBlockConfig {
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t ffn_inner = 64;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  double ln_eps = 1e-5;

  void validate() const {
    if (hidden == 0 || heads == 0 || ffn_inner == 0 || encoder_blocks == 0 || decoder_blocks == 0) {
      throw ConfigError("transformer sizes must all be positive");
    }
    if (hidden % heads != 0) throw ConfigError("hidden width must be divisible by the head count");
    if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  }
};

/// Conditional layer normalization. Scale and shift of the normalized rows
/// are affine in the speaker representation:
///   gamma = E W_gamma + b_gamma,  beta = E W_beta + b_beta.
namespace cln {

struct Names {
  std::string w_gamma, b_gamma, w_beta, b_beta;
};

inline Names names(const std::string& prefix) {
  return {prefix + ".W_gamma", prefix + ".b_gamma", prefix + ".W_beta", prefix + ".b_beta"};
}

/// Identity projector: gamma == 1 and beta == 0 for every E.
inline void init(ParameterStore& store, const std::string& prefix, std::size_t cond_dim, std::size_t hidden) {
  const Names n = names(prefix);
  store.add(n.w_gamma, Tensor({cond_dim, hidden}, 0.0));
  store.add(n.b_gamma, Tensor({1, hidden}, 1.0));
  store.add(n.w_beta, Tensor({cond_dim, hidden}, 0.0));
  store.add(n.b_beta, Tensor({1, hidden}, 0.0));
}

inline void reset(ParameterStore& store, const std::string& prefix) {
  const Names n = names(prefix);
  store.get_mut(n.w_gamma).fill(0.0);
  store.get_mut(n.b_gamma).fill(1.0);
  store.get_mut(n.w_beta).fill(0.0);
  store.get_mut(n.b_beta).fill(0.0);
}

}  // namespace cln

/// Normalizes every row of x (L x h) and applies the speaker-dependent affine map.
inline Var conditional_layer_norm(Tape& tape, Var x, Var condition, const std::string& prefix, double eps) {
  const cln::Names n = cln::names(prefix);
  Var wg = tape.param(n.w_gamma);
  if (condition.rows() != 1 || condition.cols() != wg.rows() || x.cols() != wg.cols()) {
    throw DimensionError("cln '" + prefix + "': input " + shape_string(x.shape()) + ", condition " +
                         shape_string(condition.shape()) + ", projector " + shape_string(wg.shape()));
  }
  Var gamma = ops::add(ops::matmul(condition, wg), tape.param(n.b_gamma));
  Var beta = ops::add(ops::matmul(condition, tape.param(n.w_beta)), tape.param(n.b_beta));
  return ops::add_row(ops::mul_row(ops::normalize_rows(x, eps), gamma), beta);
}

/// Sinusoidal position table, length x width.
inline Tensor positional_encoding(std::size_t length, std::size_t width) {
  Tensor pe({length, width});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * rate;
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace block {

inline std::string attn(const std::string& p, const char* w) { return p + ".attn." + w; }
inline std::string ffn(const std::string& p, const char* w) { return p + ".ffn." + w; }
inline std::string cln_attn(const std::string& p) { return p + ".cln_attn"; }
inline std::string cln_ffn(const std::string& p) { return p + ".cln_ffn"; }

inline void init(ParameterStore& store, const std::string& prefix, const TransformerBlockConfig& cfg,
                 std::size_t cond_dim, std::mt19937_64& rng) {
  const std::size_t h = cfg.hidden;
  for (const char* w : {"W_q", "W_k", "W_v", "W_o"}) store.add(attn(prefix, w), glorot_uniform(h, h, rng));
  store.add(ffn(prefix, "W1"), glorot_uniform(h, cfg.ffn_inner, rng));
  store.add(ffn(prefix, "b1"), Tensor({1, cfg.ffn_inner}, 0.0));
  store.add(ffn(prefix, "W2"), glorot_uniform(cfg.ffn_inner, h, rng));
  store.add(ffn(prefix, "b2"), Tensor({1, h}, 0.0));
  cln::init(store, cln_attn(prefix), cond_dim, h);
  cln::init(store, cln_ffn(prefix), cond_dim, h);
}

}  // namespace block

/// Multi-head scaled dot-product self-attention over the rows of x.
inline Var self_attention(Tape& tape, Var x, const std::string& prefix, std::size_t heads) {
  Var q = ops::matmul(x, tape.param(block::attn(prefix, "W_q")));
  Var k = ops::matmul(x, tape.param(block::attn(prefix, "W_k")));
  Var v = ops::matmul(x, tape.param(block::attn(prefix, "W_v")));
  const std::size_t width = x.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  std::vector<Var> outs;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Var qh = heads == 1 ? q : ops::slice_cols(q, hd * width, width);
    Var kh = heads == 1 ? k : ops::slice_cols(k, hd * width, width);
    Var vh = heads == 1 ? v : ops::slice_cols(v, hd * width, width);
    Var scores = ops::softmax_rows(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale));
    outs.push_back(ops::matmul(scores, vh));
  }
  Var merged = heads == 1 ? outs[0] : ops::concat_cols(outs);
  return ops::matmul(merged, tape.param(block::attn(prefix, "W_o")));
}

/// Post-norm transformer block: x -> cln(x + attn(x)) -> cln(. + ffn(.)),
/// both normalizations conditioned on the same representation.
inline Var conditioned_block(Tape& tape, Var x, Var condition, const std::string& prefix,
                             const TransformerBlockConfig& cfg) {
  if (x.cols() != cfg.hidden) {
    throw DimensionError("block '" + prefix + "' expects width " + std::to_string(cfg.hidden) + ", got " +
                         shape_string(x.shape()));
  }
  Var a = ops::add(x, self_attention(tape, x, prefix, cfg.heads));
  a = conditional_layer_norm(tape, a, condition, block::cln_attn(prefix), cfg.ln_eps);
  Var hidden = ops::relu(ops::add_row(ops::matmul(a, tape.param(block::ffn(prefix, "W1"))),
                                      tape.param(block::ffn(prefix, "b1"))));
  Var f = ops::add_row(ops::matmul(hidden, tape.param(block::ffn(prefix, "W2"))), tape.param(block::ffn(prefix, "b2")));
  return conditional_layer_norm(tape, ops::add(a, f), condition, block::cln_ffn(prefix), cfg.ln_eps);
}

}  // namespace adaspeech4
