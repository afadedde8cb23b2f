// src/features.cc

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

#include "cadv/features.h"

#include <cmath>
#include <complex>

namespace cadv {

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

int FeatureConfig::window_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_len_s * sample_rate));
}

int FeatureConfig::shift_samples(int sample_rate) const {
  return static_cast<int>(std::lround(frame_shift_s * sample_rate));
}

int FeatureConfig::fft_size(int sample_rate) const {
  int n = 1;
  while (n < window_samples(sample_rate)) n <<= 1;
  return n;
}

namespace {

// Iterative radix-2 complex FFT, in place. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>> &x) {
  const size_t n = x.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double angle = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = x[i + k];
        std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Triangular mel filterbank weights over FFT bins 0..nfft/2.
std::vector<std::vector<double>> make_mel_bank(int num_mels, int nfft,
                                               int sample_rate, double low_hz,
                                               double high_hz) {
  int num_bins = nfft / 2 + 1;
  double mel_lo = hz_to_mel(low_hz);
  double mel_hi = hz_to_mel(high_hz);
  std::vector<double> centers(num_mels + 2);
  for (int i = 0; i < num_mels + 2; ++i)
    centers[i] = mel_lo + (mel_hi - mel_lo) * i / (num_mels + 1);
  std::vector<std::vector<double>> bank(num_mels,
                                        std::vector<double>(num_bins, 0.0));
  for (int b = 0; b < num_bins; ++b) {
    double mel = hz_to_mel(static_cast<double>(b) * sample_rate / nfft);
    for (int m = 0; m < num_mels; ++m) {
      double left = centers[m], center = centers[m + 1], right = centers[m + 2];
      if (mel > left && mel < right) {
        bank[m][b] = mel <= center ? (mel - left) / (center - left)
                                   : (right - mel) / (right - center);
      }
    }
  }
  return bank;
}

// Povey window: raised cosine to the power 0.85.
std::vector<double> make_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    double c = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1));
    w[i] = std::pow(c, 0.85);
  }
  return w;
}

// Orthonormal DCT-II matrix, num_ceps x num_mels.
Matd make_dct(int num_ceps, int num_mels) {
  Matd dct(num_ceps, num_mels);
  double norm0 = std::sqrt(1.0 / num_mels);
  double norm = std::sqrt(2.0 / num_mels);
  for (int k = 0; k < num_ceps; ++k)
    for (int n = 0; n < num_mels; ++n)
      dct(k, n) = (k == 0 ? norm0 : norm) *
                  std::cos(M_PI * k * (2.0 * n + 1.0) / (2.0 * num_mels));
  return dct;
}

}  // namespace

Matd compute_fbank(std::span<const float> pcm, int sample_rate,
                   const FeatureConfig &cfg, Vecd *log_energy) {
  const int window = cfg.window_samples(sample_rate);
  const int shift = cfg.shift_samples(sample_rate);
  if (static_cast<int>(pcm.size()) < window)
    throw Error("compute_fbank: audio shorter than one window (" +
                std::to_string(pcm.size()) + " < " + std::to_string(window) +
                " samples)");
  const int nfft = cfg.fft_size(sample_rate);
  const int num_frames =
      static_cast<int>((pcm.size() - window) / shift) + 1;
  const double high_hz = cfg.resolved_high_hz(sample_rate);
  const auto bank = make_mel_bank(cfg.num_mels, nfft, sample_rate, cfg.low_hz, high_hz);
  const auto win = make_window(window);

  Matd out(num_frames, cfg.num_mels);
  if (log_energy) log_energy->resize(num_frames);

  std::vector<std::complex<double>> buf(nfft);
  std::vector<double> frame(window);
  for (int t = 0; t < num_frames; ++t) {
    const float *src = pcm.data() + static_cast<size_t>(t) * shift;
    double energy = 0.0;
    for (int i = 0; i < window; ++i) {
      frame[i] = src[i];
      energy += frame[i] * frame[i];
    }
    if (log_energy)
      (*log_energy)(t) = std::log(std::max(energy, cfg.energy_floor));
    // Pre-emphasis, then window.
    for (int i = window - 1; i > 0; --i)
      frame[i] -= cfg.preemphasis * frame[i - 1];
    frame[0] -= cfg.preemphasis * frame[0];
    for (int i = 0; i < window; ++i) buf[i] = frame[i] * win[i];
    for (int i = window; i < nfft; ++i) buf[i] = 0.0;
    fft_inplace(buf);
    for (int m = 0; m < cfg.num_mels; ++m) {
      double e = 0.0;
      const auto &w = bank[m];
      for (int b = 0; b <= nfft / 2; ++b) {
        if (w[b] == 0.0) continue;
        e += w[b] * std::norm(buf[b]);
      }
      out(t, m) = std::log(std::max(e, cfg.energy_floor));
    }
  }
  return out;
}

Matd compute_mfcc(std::span<const float> pcm, int sample_rate,
                  const FeatureConfig &cfg) {
  if (cfg.num_ceps > cfg.num_mels)
    throw Error("compute_mfcc: num_ceps must not exceed num_mels");
  Vecd log_energy;
  Matd fbank = compute_fbank(pcm, sample_rate, cfg, &log_energy);
  Matd dct = make_dct(cfg.num_ceps, cfg.num_mels);
  Matd out = fbank * dct.transpose();
  out.col(0) = log_energy;
  return out;
}

Matd apply_cmvn(const Matd &feats) {
  const Eigen::Index T = feats.rows();
  if (T < 2) throw Error("apply_cmvn: need at least 2 frames");
  Matd out(T, feats.cols());
  for (Eigen::Index c = 0; c < feats.cols(); ++c) {
    double mean = feats.col(c).mean();
    double var = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      double d = feats(t, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(T);
    double inv_std = 1.0 / std::sqrt(std::max(var, 1e-10));
    for (Eigen::Index t = 0; t < T; ++t)
      out(t, c) = (feats(t, c) - mean) * inv_std;
  }
  return out;
}

VadMask energy_vad(const Matd &feats, const FeatureConfig &cfg) {
  const Eigen::Index T = feats.rows();
  VadMask mask(T, 0);
  if (T == 0) return mask;
  double mean = feats.col(0).mean();
  double threshold = cfg.vad_threshold + cfg.vad_mean_scale * mean;
  for (Eigen::Index t = 0; t < T; ++t)
    mask[t] = feats(t, 0) > threshold ? 1 : 0;
  return mask;
}

Matd select_voiced(const Matd &feats, const VadMask &mask) {
  if (static_cast<size_t>(feats.rows()) != mask.size())
    throw Error("select_voiced: mask length does not match frame count");
  Eigen::Index n = 0;
  for (uint8_t m : mask) n += m ? 1 : 0;
  if (n == 0) throw Error("select_voiced: no voiced frames");
  Matd out(n, feats.cols());
  Eigen::Index r = 0;
  for (Eigen::Index t = 0; t < feats.rows(); ++t)
    if (mask[t]) out.row(r++) = feats.row(t);
  return out;
}

Matd feature_pipeline(std::span<const float> pcm, int sample_rate,
                      const FeatureConfig &cfg) {
  Matd mfcc = compute_mfcc(pcm, sample_rate, cfg);
  VadMask mask = energy_vad(mfcc, cfg);
  Matd voiced = select_voiced(mfcc, mask);
  return apply_cmvn(voiced);
}

}  // namespace cadv
