// cadv/io.h

// Copyright 2026  CADV Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef CADV_IO_H_
#define CADV_IO_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cadv/common.h"

namespace cadv {

// ---- tensor container -----------------------------------------------------
//
// Binary container used for checkpoints, PLDA models and embedding archives:
//   magic "CADV" | u32 version | u32 descriptor length | descriptor text |
//   repeated { u32 name length | name | u32 rank | u32 dims[rank] |
//              float32 data, row-major }
// All integers and floats little-endian.

constexpr uint32_t kTensorFileVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  size_t num_elements() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

struct TensorFile {
  std::string descriptor;
  std::vector<NamedTensor> tensors;

  const NamedTensor *find(const std::string &name) const;
};

// Writes via a temp file in the same directory, then renames.
void save_tensor_file(const std::string &path, const TensorFile &tf);
TensorFile load_tensor_file(const std::string &path);

NamedTensor tensor_from_matrix(const std::string &name, const Matf &m);
NamedTensor tensor_from_vector(const std::string &name, const Vecf &v);
Matf matrix_from_tensor(const NamedTensor &t);
Vecf vector_from_tensor(const NamedTensor &t);

// ---- WAV ------------------------------------------------------------------

struct WavData {
  int sample_rate = 0;
  int num_channels = 0;
  // Selected channel, scaled to [-1, 1).
  std::vector<float> samples;
};

// Reads 16-bit PCM WAV; channel selects which channel to keep (0-based).
WavData read_wav(const std::string &path, int channel = 0);
// Writes mono 16-bit PCM (values clipped to [-1, 1]).
void write_wav(const std::string &path, int sample_rate,
               const std::vector<float> &samples);

// ---- feature cache --------------------------------------------------------
//
// Per-utterance binary feature file:
//   u32 utt_id length | utt_id bytes | u32 T | u32 F | T*F float32 row-major
// (all little-endian).

void write_feature_cache(const std::string &path, const std::string &utt_id,
                         const Matf &feats);
Matf read_feature_cache(const std::string &path, std::string *utt_id = nullptr);

// Whether the file starts with a RIFF/WAVE header.
bool looks_like_wav(const std::string &path);

// ---- small file helpers ---------------------------------------------------

std::vector<std::string> read_lines(const std::string &path);
void write_text_atomic(const std::string &path, const std::string &content);

}  // namespace cadv

#endif  // CADV_IO_H_
