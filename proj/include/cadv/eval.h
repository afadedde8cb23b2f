// cadv/eval.h

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

#ifndef CADV_EVAL_H_
#define CADV_EVAL_H_

#include <string>
#include <vector>

#include "cadv/corpus.h"

namespace cadv {

// ---- verification trials and EER -------------------------------------------

struct Trial {
  std::string utt_a, utt_b;
  bool target = false;  // same speaker
};

struct TrialScore {
  Trial trial;
  double score = 0.0;
};

enum class TrialScope { kAllPairs, kWithinRecording, kCrossRecording };

// Enumerates eligible segment pairs (duration >= min_dur_s on both sides),
// filters by scope, balances target/nontarget counts up to availability, and
// subsamples deterministically by seed.
std::vector<Trial> build_trials(const CorpusIndex &index, TrialScope scope,
                                double min_dur_s, size_t max_trials,
                                uint64_t seed);

// Rate at which false-accept equals false-reject, with linear interpolation
// between adjacent ROC operating points. Requires >= 1 target and >= 1
// nontarget score.
double compute_eer(const std::vector<double> &target_scores,
                   const std::vector<double> &nontarget_scores);
double compute_eer(const std::vector<TrialScore> &scores);

// Trial list file: "<label 0|1> <utt_a> <utt_b>" per line.
void save_trials(const std::string &path, const std::vector<Trial> &trials);
std::vector<Trial> load_trials(const std::string &path);
// Score file: "<utt_a> <utt_b> <score>" per line.
void save_scores(const std::string &path, const std::vector<TrialScore> &scores);
std::vector<TrialScore> load_scores(const std::string &path,
                                    const std::vector<Trial> &trials);

// ---- diarization ------------------------------------------------------------

struct LabeledSegment {
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string label;
};

struct DiarizationHypothesis {
  std::string recording_id;
  std::vector<LabeledSegment> segments;  // non-overlapping
};

struct ReferenceDiarization {
  std::string recording_id;
  std::vector<LabeledSegment> segments;  // may overlap
};

struct TimeSpan {
  double onset_s = 0.0;
  double offset_s = 0.0;
};

// Sliding 1.5 s windows with 0.75 s hop inside each speech region; a final
// uncovered tail becomes its own subsegment when >= 0.5 s and is merged into
// the previous window otherwise.
std::vector<TimeSpan> subsegment(const std::vector<TimeSpan> &speech_marks,
                                 double win_s = 1.5, double hop_s = 0.75,
                                 double min_tail_s = 0.5);

struct AhcStop {
  double threshold = 0.0;   // merge while best linkage >= threshold
  int target_clusters = 0;  // > 0: ignore threshold, stop at this many
};

// Average-linkage agglomeration on a symmetric similarity matrix with unit
// diagonal. Ties break on the lexicographically smallest pair of cluster
// representatives (smallest original indices).
std::vector<int> ahc_cluster(const Matd &similarity, const AhcStop &stop);

// Places the boundary between differently-labeled overlapping neighbors at
// the midpoint of their overlap and merges same-label neighbors.
DiarizationHypothesis resolve_overlaps(const std::string &recording_id,
                                       const std::vector<TimeSpan> &subsegments,
                                       const std::vector<int> &labels);

struct DerReport {
  double scored_speech_s = 0.0;
  double missed_s = 0.0;
  double falarm_s = 0.0;
  double confusion_s = 0.0;
  double der = 0.0;
};

// DER with a forgiveness collar around every reference boundary and optimal
// one-to-one speaker mapping (Hungarian on overlap time).
DerReport compute_der(const ReferenceDiarization &ref,
                      const DiarizationHypothesis &hyp, double collar_s = 0.25);

// Cosine matrix from length-normalized embeddings, AHC, overlap resolution.
DiarizationHypothesis diarize_recording(const std::string &recording_id,
                                        const Matf &subsegment_embeddings,
                                        const std::vector<TimeSpan> &subsegments,
                                        const AhcStop &stop);

// Min-cost assignment (square cost matrix); returns column assigned to each
// row. Exposed for tests.
std::vector<int> hungarian_min_cost(const Matd &cost);

// ---- RTTM -----------------------------------------------------------------

void save_rttm(const std::string &path,
               const std::vector<DiarizationHypothesis> &hyps);
std::vector<DiarizationHypothesis> load_rttm(const std::string &path);

std::string der_report_line(const DerReport &report);

}  // namespace cadv

#endif  // CADV_EVAL_H_
