// cadv/synthbench.h

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
//
// Desk-scale oracle: synthetic corpora with controllable speaker and channel
// factors, plus probes that measure how much recording information survives
// in a set of embeddings.

#ifndef CADV_SYNTHBENCH_H_
#define CADV_SYNTHBENCH_H_

#include <functional>
#include <map>
#include <string>

#include "cadv/corpus.h"
#include "cadv/eval.h"
#include "cadv/network.h"
#include "cadv/sampler.h"

namespace cadv {

// Frames of utterance (speaker k, recording r) are v_k + c_r + noise with
// v_k ~ N(0, speaker_scale^2 I) and c_r ~ N(0, channel_scale^2 I).
// Recordings are two-speaker conversations (a shared channel per recording),
// so within-recording nontarget trials exist; each speaker takes part in
// recordings_per_speaker conversations and contributes
// utterances_per_recording utterances to each.
struct SynthConfig {
  int n_speakers = 24;
  int recordings_per_speaker = 4;
  int utterances_per_recording = 8;
  int frames_per_utterance = 100;
  int feature_dim = 20;
  double speaker_scale = 1.0;
  double channel_scale = 1.0;
  double noise_scale = 0.3;
  uint64_t seed = 1;
  int n_datasets = 0;  // > 0: recordings partitioned round-robin into datasets

  void validate() const;
};

// Writes <out_dir>/manifest.txt and <out_dir>/feats/<utt_id>.feat, returns the
// index. Deterministic in cfg.seed regardless of worker count.
CorpusIndex generate_synthetic_corpus(const SynthConfig &cfg,
                                      const std::string &out_dir);

using EmbeddingMap = std::map<std::string, Vecf>;

// Per-utterance feature means, used as "raw" embeddings by the probe
// monotonicity checks.
EmbeddingMap utterance_mean_embeddings(const CorpusIndex &index,
                                       const FeatureStore &store);

struct ProbeOptions {
  size_t n_pairs = 2000;
  int hidden = 512;
  int iterations = 250;
  double lr = 0.05;
  double momentum = 0.9;
  double train_fraction = 0.8;
  bool shuffle_labels = false;  // null control
};

// Trains a fresh Siamese pair discriminator on same-speaker embedding pairs
// (half within-recording, half cross-recording) and reports held-out AUC.
// AUC near 0.5 means the embeddings carry no recording information.
double channel_probe_auc(const EmbeddingMap &embeddings, const CorpusIndex &index,
                         const ProbeOptions &opts, uint64_t seed);

// Trains a fresh dataset classifier probe on embeddings and reports held-out
// accuracy over the dataset labels.
double dataset_probe_accuracy(const EmbeddingMap &embeddings,
                              const CorpusIndex &index, const ProbeOptions &opts,
                              uint64_t seed);

struct EerGapReport {
  double within_eer = 0.0;
  double cross_eer = 0.0;
  double gap = 0.0;  // within - cross
};

using PairScorer = std::function<double(const Vecf &, const Vecf &)>;

// Within-recording-only vs cross-recording-only verification EER under the
// given backend scorer. A positive gap indicates channel information in the
// embeddings (same-recording impostors look alike).
EerGapReport eer_gap_report(const EmbeddingMap &embeddings, const CorpusIndex &index,
                            const PairScorer &scorer, double min_dur_s,
                            size_t max_trials, uint64_t seed);

// Welch's two-sample t-test p-value (two-sided, normal approximation).
double welch_t_test_p(const std::vector<double> &a, const std::vector<double> &b);

}  // namespace cadv

#endif  // CADV_SYNTHBENCH_H_
