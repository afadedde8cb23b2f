// cadv/sampler.h

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

#ifndef CADV_SAMPLER_H_
#define CADV_SAMPLER_H_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cadv/corpus.h"
#include "cadv/features.h"

namespace cadv {

// In-memory feature source keyed by utt_id. Feature-cache paths are read
// directly; WAV paths run through the front-end pipeline.
class FeatureStore {
 public:
  FeatureStore() = default;

  // Loads features for every utterance in the index (parallel across
  // utterances).
  static FeatureStore preload(const CorpusIndex &index, const FeatureConfig &cfg);

  void put(const std::string &utt_id, Matf feats);
  const Matf &features(const std::string &utt_id) const;
  int num_frames(const std::string &utt_id) const;

 private:
  std::map<std::string, Matf> feats_;
};

// Loads features for a single record (cache file or WAV + pipeline).
Matf load_utterance_features(const UtteranceRecord &rec, const FeatureConfig &cfg);

struct BatchSpec {
  int n = 400;              // anchor speakers (adversarial) or batch size (baseline)
  double min_dur_s = 2.0;
  double max_dur_s = 4.0;
  double frame_shift_s = 0.010;

  int min_frames() const;
  int max_frames() const;
};

struct CropRef {
  std::string utt_id;
  int start_frame = 0;
  int num_frames = 0;
};

struct AnchorTriplet {
  CropRef anchor, within, cross;
  std::string speaker_id;
  std::string anchor_recording, within_recording, cross_recording;
  bool within_from_subsegments = false;
  bool cross_from_subsegments = false;
};

// 3N crops in anchor/within/cross order per triplet; 2N embedding pairs with
// exactly N within-recording (true) labels.
struct AdversarialBatch {
  std::vector<CropRef> crops;
  std::vector<std::pair<int, int>> pair_index;
  std::vector<uint8_t> pair_labels;
  std::vector<int> speaker_labels;
  std::vector<AnchorTriplet> triplets;
};

struct BaselineBatch {
  std::vector<CropRef> crops;
  std::vector<int> speaker_labels;
};

// Shuffled ring over speakers; reshuffled each time a full pass completes.
// Batches never contain a speaker twice even when they span the reshuffle
// boundary.
class SpeakerCycle {
 public:
  SpeakerCycle(std::vector<std::string> speakers, Rng rng);

  // Next `count` distinct speakers, optionally restricted by a predicate
  // (non-matching speakers are consumed and skipped). Throws when fewer than
  // `count` acceptable speakers exist in the ring.
  std::vector<std::string> next(size_t count,
                                const std::function<bool(const std::string &)>
                                    &eligible = nullptr);

  size_t size() const { return order_.size(); }

 private:
  std::string take_one(const std::vector<std::string> &current_batch);

  std::vector<std::string> order_;
  size_t pos_ = 0;
  Rng rng_;
};

// Speaker id -> classifier class index (sorted order of speaker ids).
std::map<std::string, int> speaker_class_map(const CorpusIndex &index);
// Dataset label -> index (sorted order); empty labels are not included.
std::map<std::string, int> dataset_class_map(const CorpusIndex &index);

// Whether a speaker can supply a full anchor triplet: a second recording, or
// failing that a second utterance in the anchor's recording.
bool adversarial_eligible(const CorpusIndex &index, const std::string &speaker_id);

// Contiguous random crop of target_frames frames; the whole utterance when it
// is shorter than the target.
CropRef crop_random(const std::string &utt_id, int total_frames, int target_frames,
                    Rng &rng);

// Two crops of one utterance placed at opposite ends, so that their overlap
// is zero whenever the utterance is long enough and minimal otherwise.
std::pair<CropRef, CropRef> crop_subsegment_pair(const std::string &utt_id,
                                                 int total_frames, int target_a,
                                                 int target_b);

AnchorTriplet draw_anchor_triplet(const CorpusIndex &index, const FeatureStore &store,
                                  const std::string &speaker_id,
                                  const BatchSpec &spec, Rng &rng);

AdversarialBatch build_adversarial_batch(const CorpusIndex &index,
                                         const FeatureStore &store,
                                         const BatchSpec &spec,
                                         SpeakerCycle &cycle, Rng &rng);

BaselineBatch build_baseline_batch(const CorpusIndex &index,
                                   const FeatureStore &store,
                                   const BatchSpec &spec, SpeakerCycle &cycle,
                                   Rng &rng);

// Materializes the frame slice a CropRef points at.
Matf materialize_crop(const FeatureStore &store, const CropRef &crop);

}  // namespace cadv

#endif  // CADV_SAMPLER_H_
