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

// ADSP4 checkpoint layout (little-endian):
//   "ADSP4" | u32 version | payload | u32 crc32(payload)
// payload:
//   u32 stage_completed | u64 step_count | u32 tensor_count
//   tensor_count x { u32 name_len | name | u8 dtype (0 f32, 1 f64) |
//                    u8 trainable | u32 rank | rank x u32 dim | data }
//   u32 config_len | config JSON text

#include <zlib.h>

#include <cstdint>
#include <string>
#include <vector>

#include "adaspeech4/mel_io.hpp"
#include "adaspeech4/parameters.hpp"

namespace adaspeech4 {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t stage_completed = 0;
  std::uint64_t step_count = 0;
  ParameterStore params;
  std::string config_json;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.stage_completed == b.stage_completed && a.step_count == b.step_count && a.params == b.params &&
           a.config_json == b.config_json;
  }
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

inline constexpr char kCheckpointMagic[] = "ADSP4";
inline constexpr std::size_t kCheckpointMagicLen = 5;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, DType dtype = DType::kF64) {
  std::vector<std::uint8_t> out;
  bytes::put_bytes(out, kCheckpointMagic, kCheckpointMagicLen);
  bytes::put_u32(out, Checkpoint::kVersion);
  const std::size_t payload_begin = out.size();
  bytes::put_u32(out, ckpt.stage_completed);
  bytes::put_u64(out, ckpt.step_count);
  bytes::put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, entry] : ckpt.params.entries()) {
    bytes::put_u32(out, static_cast<std::uint32_t>(name.size()));
    bytes::put_bytes(out, name.data(), name.size());
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(entry.trainable ? 1 : 0);
    bytes::put_u32(out, static_cast<std::uint32_t>(entry.value.rank()));
    for (auto d : entry.value.shape()) bytes::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : entry.value.values()) {
      if (dtype == DType::kF64) {
        bytes::put_f64(out, v);
      } else {
        bytes::put_f32(out, static_cast<float>(v));
      }
    }
  }
  bytes::put_u32(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  bytes::put_bytes(out, ckpt.config_json.data(), ckpt.config_json.size());
  bytes::put_u32(out, crc32_of(out.data() + payload_begin, out.size() - payload_begin));
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& data, const std::string& what = "checkpoint") {
  bytes::Reader r(data, what);
  if (r.string(kCheckpointMagicLen) != std::string(kCheckpointMagic, kCheckpointMagicLen))
    throw FormatError(what + ": bad magic, expected ADSP4", 0);
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version), 5);
  const std::size_t payload_begin = r.offset();
  if (data.size() < payload_begin + 4) throw FormatError(what + ": truncated", data.size());
  const std::size_t crc_at = data.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(data[crc_at + i]) << (8 * i);
  if (crc32_of(data.data() + payload_begin, crc_at - payload_begin) != stored)
    throw FormatError(what + ": CRC32 mismatch", crc_at);

  const std::vector<std::uint8_t> payload(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(crc_at));
  bytes::Reader p(payload, what);
  p.string(payload_begin);
  Checkpoint ckpt;
  ckpt.stage_completed = p.u32();
  ckpt.step_count = p.u64();
  const std::uint32_t count = p.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = p.u32();
    std::string name = p.string(len);
    const std::uint8_t dtype = p.u8();
    if (dtype > 1) p.fail("unknown dtype tag " + std::to_string(dtype));
    const bool trainable = p.u8() != 0;
    const std::uint32_t rank = p.u32();
    if (rank == 0 || rank > 8) p.fail("unsupported tensor rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t dim = p.u32();
      if (dim == 0) p.fail("zero dimension in tensor '" + name + "'");
      shape.push_back(dim);
    }
    const std::size_t n = shape_size(shape);
    p.need(n * (dtype == 1 ? 8 : 4));
    std::vector<double> values(n);
    for (auto& v : values) v = dtype == 1 ? p.f64() : static_cast<double>(p.f32());
    ckpt.params.add(name, Tensor(std::move(shape), std::move(values)), trainable);
  }
  const std::uint32_t cfg_len = p.u32();
  ckpt.config_json = p.string(cfg_len);
  if (p.remaining() != 0) p.fail("trailing bytes after config snapshot");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  bytes::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(bytes::read_file(path), path);
}

}  // namespace adaspeech4
