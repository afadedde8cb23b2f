// cadv/features.h

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

#ifndef CADV_FEATURES_H_
#define CADV_FEATURES_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cadv/common.h"

namespace cadv {

// 30-dim MFCC front end. Coefficient 0 carries the raw frame log-energy
// (used by the VAD); the remaining coefficients are DCT-II of the log mel
// filterbank energies.
struct FeatureConfig {
  double frame_len_s = 0.025;
  double frame_shift_s = 0.010;
  int num_mels = 30;
  int num_ceps = 30;
  double low_hz = 20.0;
  double high_hz = 0.0;   // <= 0: 7600 at 16 kHz, 3700 at 8 kHz
  double preemphasis = 0.97;
  double energy_floor = 1e-10;
  double vad_threshold = 5.0;    // tau
  double vad_mean_scale = 0.5;   // alpha
  int channel = 0;               // channel selector for stereo input

  double resolved_high_hz(int sample_rate) const {
    if (high_hz > 0) return high_hz;
    return sample_rate >= 16000 ? 7600.0 : 3700.0;
  }
  int window_samples(int sample_rate) const;
  int shift_samples(int sample_rate) const;
  int fft_size(int sample_rate) const;  // next power of two >= window
};

using VadMask = std::vector<uint8_t>;

// Log mel filterbank energies (T x num_mels) plus per-frame log-energy.
// The front end computes in double; float32 applies only at the cache file.
Matd compute_fbank(std::span<const float> pcm, int sample_rate,
                   const FeatureConfig &cfg, Vecd *log_energy);

// T x num_ceps MFCCs, c0 replaced by frame log-energy.
Matd compute_mfcc(std::span<const float> pcm, int sample_rate,
                  const FeatureConfig &cfg);

// Per-utterance, per-coefficient zero mean / unit variance (floored).
Matd apply_cmvn(const Matd &feats);

// Frame t selected iff logE_t > tau + alpha * mean(logE). Uses column 0,
// which must be the raw log-energy (i.e. pre-CMVN features).
VadMask energy_vad(const Matd &feats, const FeatureConfig &cfg);

// Rows of feats where mask is true, order preserved. Throws when empty.
Matd select_voiced(const Matd &feats, const VadMask &mask);

// MFCC -> VAD -> voiced selection -> CMVN. CMVN statistics therefore use
// voiced frames only.
Matd feature_pipeline(std::span<const float> pcm, int sample_rate,
                      const FeatureConfig &cfg);

// Mel scale helpers (HTK convention), shared with tests.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

}  // namespace cadv

#endif  // CADV_FEATURES_H_
