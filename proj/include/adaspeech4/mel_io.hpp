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

// MEL1 files: "MEL1", u32 frames, u32 channels, then frames*channels float32
// values in row-major order. All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "adaspeech4/tensor.hpp"

namespace adaspeech4 {

/// T x C spectral frames.
using MelFrameMatrix = Tensor;

namespace bytes {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

/// Bounds-checked little-endian reader that reports the failing offset.
class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(what_ + ": truncated", pos_);
  }

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw FormatError(what_ + ": " + msg, pos_); }

 private:
  const std::vector<std::uint8_t>& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bytes

inline constexpr std::array<char, 4> kMelMagic = {'M', 'E', 'L', '1'};

inline std::vector<std::uint8_t> encode_mel(const MelFrameMatrix& mel) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * mel.size());
  bytes::put_bytes(out, kMelMagic.data(), kMelMagic.size());
  bytes::put_u32(out, static_cast<std::uint32_t>(mel.rows()));
  bytes::put_u32(out, static_cast<std::uint32_t>(mel.cols()));
  for (double v : mel.values()) bytes::put_f32(out, static_cast<float>(v));
  return out;
}

inline MelFrameMatrix decode_mel(const std::vector<std::uint8_t>& data, const std::string& what = "mel") {
  bytes::Reader r(data, what);
  if (r.string(4) != std::string(kMelMagic.begin(), kMelMagic.end())) {
    throw FormatError(what + ": bad magic, expected MEL1", 0);
  }
  const std::uint32_t frames = r.u32();
  const std::uint32_t channels = r.u32();
  if (frames == 0 || channels == 0) r.fail("zero frame or channel count");
  const std::uint64_t count = static_cast<std::uint64_t>(frames) * channels;
  if (r.remaining() != count * 4) {
    throw FormatError(what + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(count * 4),
                      r.offset());
  }
  std::vector<double> values(count);
  for (auto& v : values) {
    const std::size_t at = r.offset();
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(what + ": non-finite frame value", at);
  }
  return MelFrameMatrix({frames, channels}, std::move(values));
}

inline void write_mel(const std::string& path, const MelFrameMatrix& mel) {
  bytes::write_file(path, encode_mel(mel));
}

inline MelFrameMatrix read_mel(const std::string& path) { return decode_mel(bytes::read_file(path), path); }

/// Rounds values to float32, matching what a MEL1 round trip stores.
inline MelFrameMatrix quantize_to_f32(MelFrameMatrix mel) {
  for (auto& v : mel.values()) v = static_cast<double>(static_cast<float>(v));
  return mel;
}

}  // namespace adaspeech4
