// cadv/corpus.h

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

#ifndef CADV_CORPUS_H_
#define CADV_CORPUS_H_

#include <map>
#include <set>
#include <string>
#include <vector>

#include "cadv/common.h"

namespace cadv {

// One audio segment with speaker and recording identity. Augmented copies of
// an utterance are registered under a distinct recording_id so that they are
// treated as separate recordings throughout the pipeline.
struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string recording_id;
  std::string path;       // WAV file or feature cache file
  double start_s = 0.0;
  double end_s = 0.0;
  int sample_rate = 16000;
  std::string dataset;    // optional domain label; empty when absent

  double duration_s() const { return end_s - start_s; }
  bool operator==(const UtteranceRecord &o) const = default;
};

// Immutable after load; mutating operations return a new index.
class CorpusIndex {
 public:
  using RecordingMap = std::map<std::string, std::vector<std::string>>;

  CorpusIndex() = default;

  static CorpusIndex load_manifest(const std::string &path);
  static CorpusIndex from_records(const std::vector<UtteranceRecord> &records);

  std::string to_manifest_text() const;
  void save_manifest(const std::string &path) const;

  // Adds a copy of the utterance under recording_id + "-" + suffix (and
  // utt_id + "-" + suffix). Speaker identity is preserved.
  CorpusIndex mark_augmentation(const std::string &utt_id,
                                const std::string &suffix) const;

  std::set<std::string> speakers_with_multiple_recordings() const;

  bool has_utterance(const std::string &utt_id) const;
  const UtteranceRecord &utterance(const std::string &utt_id) const;
  const std::map<std::string, UtteranceRecord> &utterances() const {
    return utterances_;
  }
  const std::map<std::string, RecordingMap> &speakers() const {
    return speakers_;
  }
  const RecordingMap &recordings_of(const std::string &speaker_id) const;

  // Sorted speaker ids; index into this list is the classifier class id.
  std::vector<std::string> speaker_ids() const;
  // Sorted distinct dataset labels (empty labels excluded).
  std::vector<std::string> dataset_labels() const;

  size_t num_speakers() const { return speakers_.size(); }
  size_t num_utterances() const { return utterances_.size(); }

  // Checks bidirectional consistency; throws on violation.
  void validate() const;

  bool operator==(const CorpusIndex &o) const {
    return utterances_ == o.utterances_ && speakers_ == o.speakers_;
  }

 private:
  void insert(const UtteranceRecord &rec, int line_no);

  std::map<std::string, UtteranceRecord> utterances_;
  std::map<std::string, RecordingMap> speakers_;
};

}  // namespace cadv

#endif  // CADV_CORPUS_H_
