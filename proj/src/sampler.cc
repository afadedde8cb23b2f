// src/sampler.cc

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

#include "cadv/sampler.h"

#include <algorithm>
#include <cmath>

#include "cadv/io.h"

namespace cadv {

Matf load_utterance_features(const UtteranceRecord &rec, const FeatureConfig &cfg) {
  if (looks_like_wav(rec.path)) {
    WavData wav = read_wav(rec.path, cfg.channel);
    if (wav.sample_rate != rec.sample_rate)
      throw Error(rec.utt_id + ": manifest sample_rate " +
                  std::to_string(rec.sample_rate) + " but file has " +
                  std::to_string(wav.sample_rate));
    size_t begin = static_cast<size_t>(std::lround(rec.start_s * wav.sample_rate));
    size_t end = static_cast<size_t>(std::lround(rec.end_s * wav.sample_rate));
    if (begin >= wav.samples.size())
      throw Error(rec.utt_id + ": start_s beyond end of file");
    end = std::min(end, wav.samples.size());
    std::span<const float> pcm(wav.samples.data() + begin, end - begin);
    return feature_pipeline(pcm, wav.sample_rate, cfg).cast<float>();
  }
  std::string stored_id;
  Matf feats = read_feature_cache(rec.path, &stored_id);
  if (!stored_id.empty() && stored_id != rec.utt_id)
    throw Error(rec.path + ": cache holds utt '" + stored_id +
                "' but manifest expects '" + rec.utt_id + "'");
  return feats;
}

FeatureStore FeatureStore::preload(const CorpusIndex &index,
                                   const FeatureConfig &cfg) {
  FeatureStore store;
  std::vector<const UtteranceRecord *> recs;
  for (const auto &[id, rec] : index.utterances()) recs.push_back(&rec);
  std::vector<Matf> loaded(recs.size());
  parallel_for(recs.size(), [&](size_t i) {
    loaded[i] = load_utterance_features(*recs[i], cfg);
  });
  for (size_t i = 0; i < recs.size(); ++i)
    store.put(recs[i]->utt_id, std::move(loaded[i]));
  return store;
}

void FeatureStore::put(const std::string &utt_id, Matf feats) {
  feats_[utt_id] = std::move(feats);
}

const Matf &FeatureStore::features(const std::string &utt_id) const {
  auto it = feats_.find(utt_id);
  if (it == feats_.end()) throw Error("FeatureStore: no features for '" + utt_id + "'");
  return it->second;
}

int FeatureStore::num_frames(const std::string &utt_id) const {
  return static_cast<int>(features(utt_id).rows());
}

int BatchSpec::min_frames() const {
  return std::max(1, static_cast<int>(std::lround(min_dur_s / frame_shift_s)));
}

int BatchSpec::max_frames() const {
  return std::max(min_frames(), static_cast<int>(std::lround(max_dur_s / frame_shift_s)));
}

SpeakerCycle::SpeakerCycle(std::vector<std::string> speakers, Rng rng)
    : order_(std::move(speakers)), rng_(rng) {
  if (order_.empty()) throw Error("SpeakerCycle: no speakers");
  std::sort(order_.begin(), order_.end());
  rng_.shuffle(order_);
}

std::string SpeakerCycle::take_one(const std::vector<std::string> &current_batch) {
  if (pos_ >= order_.size()) {
    rng_.shuffle(order_);
    pos_ = 0;
  }
  std::string candidate = order_[pos_];
  if (std::find(current_batch.begin(), current_batch.end(), candidate) !=
      current_batch.end()) {
    // A batch spanning the reshuffle boundary would repeat this speaker; swap
    // in the first later entry that is not already in the batch.
    size_t swap_at = pos_ + 1;
    while (swap_at < order_.size() &&
           std::find(current_batch.begin(), current_batch.end(), order_[swap_at]) !=
               current_batch.end())
      ++swap_at;
    if (swap_at >= order_.size())
      throw Error("SpeakerCycle: batch size exceeds number of speakers");
    std::swap(order_[pos_], order_[swap_at]);
    candidate = order_[pos_];
  }
  ++pos_;
  return candidate;
}

std::vector<std::string> SpeakerCycle::next(
    size_t count, const std::function<bool(const std::string &)> &eligible) {
  if (count > order_.size())
    throw Error("SpeakerCycle: batch size " + std::to_string(count) +
                " exceeds number of speakers " + std::to_string(order_.size()));
  std::vector<std::string> batch;
  batch.reserve(count);
  size_t attempts = 0;
  const size_t max_attempts = 2 * order_.size() + count;
  while (batch.size() < count) {
    if (++attempts > max_attempts)
      throw Error("SpeakerCycle: fewer than " + std::to_string(count) +
                  " eligible speakers");
    std::string spk = take_one(batch);
    if (eligible && !eligible(spk)) continue;
    batch.push_back(std::move(spk));
  }
  return batch;
}

std::map<std::string, int> speaker_class_map(const CorpusIndex &index) {
  std::map<std::string, int> out;
  int next = 0;
  for (const auto &spk : index.speaker_ids()) out[spk] = next++;
  return out;
}

std::map<std::string, int> dataset_class_map(const CorpusIndex &index) {
  std::map<std::string, int> out;
  int next = 0;
  for (const auto &ds : index.dataset_labels()) out[ds] = next++;
  return out;
}

bool adversarial_eligible(const CorpusIndex &index, const std::string &speaker_id) {
  const auto &recs = index.recordings_of(speaker_id);
  if (recs.size() >= 2) return true;
  return recs.begin()->second.size() >= 2;
}

CropRef crop_random(const std::string &utt_id, int total_frames, int target_frames,
                    Rng &rng) {
  CropRef crop;
  crop.utt_id = utt_id;
  if (total_frames <= target_frames) {
    crop.start_frame = 0;
    crop.num_frames = total_frames;
  } else {
    crop.start_frame =
        static_cast<int>(rng.uniform_int(total_frames - target_frames + 1));
    crop.num_frames = target_frames;
  }
  return crop;
}

std::pair<CropRef, CropRef> crop_subsegment_pair(const std::string &utt_id,
                                                 int total_frames, int target_a,
                                                 int target_b) {
  CropRef a, b;
  a.utt_id = b.utt_id = utt_id;
  a.num_frames = std::min(target_a, total_frames);
  b.num_frames = std::min(target_b, total_frames);
  a.start_frame = 0;
  b.start_frame = total_frames - b.num_frames;
  return {a, b};
}

namespace {

const std::string &random_element(const std::vector<std::string> &v, Rng &rng) {
  return v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(v.size())))];
}

int draw_target_frames(const BatchSpec &spec, Rng &rng) {
  int lo = spec.min_frames(), hi = spec.max_frames();
  return lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
}

}  // namespace

AnchorTriplet draw_anchor_triplet(const CorpusIndex &index, const FeatureStore &store,
                                  const std::string &speaker_id,
                                  const BatchSpec &spec, Rng &rng) {
  const auto &recs = index.recordings_of(speaker_id);
  std::vector<std::string> all_utts;
  for (const auto &[rec_id, utts] : recs)
    all_utts.insert(all_utts.end(), utts.begin(), utts.end());
  if (all_utts.empty())
    throw Error("draw_anchor_triplet: speaker '" + speaker_id + "' has no audio");

  AnchorTriplet triplet;
  triplet.speaker_id = speaker_id;

  const std::string anchor_utt = random_element(all_utts, rng);
  const std::string r1 = index.utterance(anchor_utt).recording_id;
  triplet.anchor_recording = r1;

  // Within-recording pair: a second segment of the same recording, else two
  // subsegments of the anchor utterance with overlap minimized.
  std::vector<std::string> same_rec = recs.at(r1);
  same_rec.erase(std::remove(same_rec.begin(), same_rec.end(), anchor_utt),
                 same_rec.end());
  std::string within_utt;
  if (!same_rec.empty()) {
    within_utt = random_element(same_rec, rng);
    triplet.anchor = crop_random(anchor_utt, store.num_frames(anchor_utt),
                                 draw_target_frames(spec, rng), rng);
    triplet.within = crop_random(within_utt, store.num_frames(within_utt),
                                 draw_target_frames(spec, rng), rng);
  } else {
    triplet.within_from_subsegments = true;
    within_utt = anchor_utt;
    auto [a, b] = crop_subsegment_pair(anchor_utt, store.num_frames(anchor_utt),
                                       draw_target_frames(spec, rng),
                                       draw_target_frames(spec, rng));
    triplet.anchor = a;
    triplet.within = b;
  }
  triplet.within_recording = index.utterance(within_utt).recording_id;

  // Out-of-recording member: an utterance from another recording, else a
  // different utterance of the same recording (flagged), else the speaker is
  // unusable for adversarial batches.
  std::vector<std::string> out_of_rec;
  for (const auto &[rec_id, utts] : recs) {
    if (rec_id == r1) continue;
    out_of_rec.insert(out_of_rec.end(), utts.begin(), utts.end());
  }
  std::string cross_utt;
  if (!out_of_rec.empty()) {
    cross_utt = random_element(out_of_rec, rng);
  } else {
    std::vector<std::string> alt = recs.at(r1);
    alt.erase(std::remove(alt.begin(), alt.end(), anchor_utt), alt.end());
    if (alt.size() > 1 && !within_utt.empty())
      alt.erase(std::remove(alt.begin(), alt.end(), within_utt), alt.end());
    if (alt.empty())
      throw Error("draw_anchor_triplet: speaker '" + speaker_id +
                  "' has no usable audio for an out-of-recording pair");
    cross_utt = random_element(alt, rng);
    triplet.cross_from_subsegments = true;
  }
  triplet.cross = crop_random(cross_utt, store.num_frames(cross_utt),
                              draw_target_frames(spec, rng), rng);
  triplet.cross_recording = index.utterance(cross_utt).recording_id;
  return triplet;
}

AdversarialBatch build_adversarial_batch(const CorpusIndex &index,
                                         const FeatureStore &store,
                                         const BatchSpec &spec,
                                         SpeakerCycle &cycle, Rng &rng) {
  AdversarialBatch batch;
  auto class_map = speaker_class_map(index);
  std::vector<std::string> speakers = cycle.next(
      static_cast<size_t>(spec.n),
      [&](const std::string &spk) { return adversarial_eligible(index, spk); });
  for (const std::string &spk : speakers) {
    AnchorTriplet triplet = draw_anchor_triplet(index, store, spk, spec, rng);
    int base = static_cast<int>(batch.crops.size());
    batch.crops.push_back(triplet.anchor);
    batch.crops.push_back(triplet.within);
    batch.crops.push_back(triplet.cross);
    int label = class_map.at(spk);
    batch.speaker_labels.insert(batch.speaker_labels.end(), 3, label);
    batch.pair_index.emplace_back(base, base + 1);
    batch.pair_labels.push_back(1);
    batch.pair_index.emplace_back(base, base + 2);
    batch.pair_labels.push_back(0);
    batch.triplets.push_back(std::move(triplet));
  }
  return batch;
}

BaselineBatch build_baseline_batch(const CorpusIndex &index,
                                   const FeatureStore &store,
                                   const BatchSpec &spec, SpeakerCycle &cycle,
                                   Rng &rng) {
  BaselineBatch batch;
  auto class_map = speaker_class_map(index);
  std::vector<std::string> speakers = cycle.next(static_cast<size_t>(spec.n));
  for (const std::string &spk : speakers) {
    std::vector<std::string> utts;
    for (const auto &[rec_id, rec_utts] : index.recordings_of(spk))
      utts.insert(utts.end(), rec_utts.begin(), rec_utts.end());
    const std::string &utt = random_element(utts, rng);
    batch.crops.push_back(crop_random(utt, store.num_frames(utt),
                                      draw_target_frames(spec, rng), rng));
    batch.speaker_labels.push_back(class_map.at(spk));
  }
  return batch;
}

Matf materialize_crop(const FeatureStore &store, const CropRef &crop) {
  const Matf &full = store.features(crop.utt_id);
  if (crop.start_frame < 0 || crop.num_frames < 1 ||
      crop.start_frame + crop.num_frames > full.rows())
    throw Error("materialize_crop: slice out of range for '" + crop.utt_id + "'");
  return full.middleRows(crop.start_frame, crop.num_frames);
}

}  // namespace cadv
