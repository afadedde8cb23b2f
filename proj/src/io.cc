// src/io.cc

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

#include "cadv/io.h"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "little-endian host assumed for binary formats");

namespace cadv {

namespace {

void write_u32(std::ostream &os, uint32_t v) {
  os.write(reinterpret_cast<const char *>(&v), 4);
}

uint32_t read_u32(std::istream &is, const std::string &what) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char *>(&v), 4);
  if (!is) throw Error("truncated file while reading " + what);
  return v;
}

void write_string(std::ostream &os, const std::string &s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream &is, const std::string &what) {
  uint32_t len = read_u32(is, what);
  if (len > (1u << 28)) throw Error("implausible string length in " + what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw Error("truncated file while reading " + what);
  return s;
}

void atomic_rename(const std::string &tmp, const std::string &path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("rename " + tmp + " -> " + path + ": " + ec.message());
}

std::string temp_path_for(const std::string &path) {
  return path + ".tmp";
}

}  // namespace

const NamedTensor *TensorFile::find(const std::string &name) const {
  for (const auto &t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_tensor_file(const std::string &path, const TensorFile &tf) {
  std::string tmp = temp_path_for(path);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    os.write("CADV", 4);
    write_u32(os, kTensorFileVersion);
    write_string(os, tf.descriptor);
    for (const auto &t : tf.tensors) {
      if (t.data.size() != t.num_elements())
        throw Error("tensor '" + t.name + "' dims/data mismatch");
      write_string(os, t.name);
      write_u32(os, static_cast<uint32_t>(t.dims.size()));
      for (uint32_t d : t.dims) write_u32(os, d);
      os.write(reinterpret_cast<const char *>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!os) throw Error("write failed for " + tmp);
  }
  atomic_rename(tmp, path);
}

TensorFile load_tensor_file(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CADV", 4) != 0)
    throw Error(path + ": bad magic, not a cadv tensor file");
  uint32_t version = read_u32(is, "version");
  if (version != kTensorFileVersion)
    throw Error(path + ": unsupported format version " + std::to_string(version));
  TensorFile tf;
  tf.descriptor = read_string(is, "descriptor");
  while (true) {
    is.peek();
    if (is.eof()) break;
    NamedTensor t;
    t.name = read_string(is, "tensor name");
    uint32_t rank = read_u32(is, "tensor rank");
    if (rank > 8) throw Error(path + ": implausible tensor rank");
    t.dims.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) t.dims[i] = read_u32(is, "tensor dims");
    size_t n = t.num_elements();
    t.data.resize(n);
    is.read(reinterpret_cast<char *>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw Error(path + ": truncated tensor data for '" + t.name + "'");
    tf.tensors.push_back(std::move(t));
  }
  return tf;
}

NamedTensor tensor_from_matrix(const std::string &name, const Matf &m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

NamedTensor tensor_from_vector(const std::string &name, const Vecf &v) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<uint32_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Matf matrix_from_tensor(const NamedTensor &t) {
  if (t.dims.size() != 2)
    throw Error("tensor '" + t.name + "' is not rank-2");
  Matf m(t.dims[0], t.dims[1]);
  std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(float));
  return m;
}

Vecf vector_from_tensor(const NamedTensor &t) {
  if (t.dims.size() != 1)
    throw Error("tensor '" + t.name + "' is not rank-1");
  Vecf v(t.dims[0]);
  std::memcpy(v.data(), t.data.data(), t.data.size() * sizeof(float));
  return v;
}

// ---- WAV -------------------------------------------------------------------

WavData read_wav(const std::string &path, int channel) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char riff[4], wave[4];
  uint32_t riff_size = 0;
  is.read(riff, 4);
  is.read(reinterpret_cast<char *>(&riff_size), 4);
  is.read(wave, 4);
  if (!is || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
    throw Error(path + ": not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (is && !(have_fmt && have_data)) {
    char id[4];
    uint32_t size = 0;
    is.read(id, 4);
    is.read(reinterpret_cast<char *>(&size), 4);
    if (!is) break;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      std::vector<char> fmt(size);
      is.read(fmt.data(), size);
      if (size < 16) throw Error(path + ": fmt chunk too small");
      std::memcpy(&format, fmt.data(), 2);
      std::memcpy(&channels, fmt.data() + 2, 2);
      std::memcpy(&sample_rate, fmt.data() + 4, 4);
      std::memcpy(&bits, fmt.data() + 14, 2);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      is.read(data.data(), size);
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw Error(path + ": missing fmt or data chunk");
  if (format != 1 || bits != 16)
    throw Error(path + ": only 16-bit PCM supported");
  if (channel < 0 || channel >= channels)
    throw Error(path + ": channel " + std::to_string(channel) + " out of range (" +
                std::to_string(channels) + " channels)");

  WavData out;
  out.sample_rate = static_cast<int>(sample_rate);
  out.num_channels = channels;
  size_t n_frames = data.size() / (2 * channels);
  out.samples.resize(n_frames);
  const int16_t *pcm = reinterpret_cast<const int16_t *>(data.data());
  for (size_t i = 0; i < n_frames; ++i)
    out.samples[i] = static_cast<float>(pcm[i * channels + channel]) / 32768.0f;
  return out;
}

void write_wav(const std::string &path, int sample_rate,
               const std::vector<float> &samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  uint32_t data_size = static_cast<uint32_t>(samples.size() * 2);
  uint32_t riff_size = 36 + data_size;
  os.write("RIFF", 4);
  os.write(reinterpret_cast<const char *>(&riff_size), 4);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  uint32_t fmt_size = 16;
  uint16_t format = 1, channels = 1, bits = 16;
  uint32_t sr = static_cast<uint32_t>(sample_rate);
  uint32_t byte_rate = sr * 2;
  uint16_t block_align = 2;
  os.write(reinterpret_cast<const char *>(&fmt_size), 4);
  os.write(reinterpret_cast<const char *>(&format), 2);
  os.write(reinterpret_cast<const char *>(&channels), 2);
  os.write(reinterpret_cast<const char *>(&sr), 4);
  os.write(reinterpret_cast<const char *>(&byte_rate), 4);
  os.write(reinterpret_cast<const char *>(&block_align), 2);
  os.write(reinterpret_cast<const char *>(&bits), 2);
  os.write("data", 4);
  os.write(reinterpret_cast<const char *>(&data_size), 4);
  for (float s : samples) {
    float clamped = std::max(-1.0f, std::min(1.0f, s));
    int16_t v = static_cast<int16_t>(std::lrint(clamped * 32767.0f));
    os.write(reinterpret_cast<const char *>(&v), 2);
  }
  if (!os) throw Error("write failed for " + path);
}

// ---- feature cache ---------------------------------------------------------

void write_feature_cache(const std::string &path, const std::string &utt_id,
                         const Matf &feats) {
  std::string tmp = temp_path_for(path);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    write_string(os, utt_id);
    write_u32(os, static_cast<uint32_t>(feats.rows()));
    write_u32(os, static_cast<uint32_t>(feats.cols()));
    os.write(reinterpret_cast<const char *>(feats.data()),
             static_cast<std::streamsize>(feats.size() * sizeof(float)));
    if (!os) throw Error("write failed for " + tmp);
  }
  atomic_rename(tmp, path);
}

Matf read_feature_cache(const std::string &path, std::string *utt_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::string id = read_string(is, "feature cache utt_id");
  uint32_t rows = read_u32(is, "feature cache T");
  uint32_t cols = read_u32(is, "feature cache F");
  if (rows > (1u << 26) || cols > (1u << 16))
    throw Error(path + ": implausible feature dimensions");
  Matf m(rows, cols);
  is.read(reinterpret_cast<char *>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!is) throw Error(path + ": truncated feature data");
  if (utt_id) *utt_id = id;
  return m;
}

bool looks_like_wav(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  char magic[4];
  is.read(magic, 4);
  return is && std::memcmp(magic, "RIFF", 4) == 0;
}

// ---- small file helpers ----------------------------------------------------

std::vector<std::string> read_lines(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_text_atomic(const std::string &path, const std::string &content) {
  std::string tmp = temp_path_for(path);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw Error("write failed for " + tmp);
  }
  atomic_rename(tmp, path);
}

}  // namespace cadv
