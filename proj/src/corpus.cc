// src/corpus.cc

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

#include "cadv/corpus.h"

#include <algorithm>

#include "cadv/io.h"

namespace cadv {

namespace {

UtteranceRecord parse_manifest_line(const std::string &line, int line_no) {
  KvPairs kv;
  try {
    kv = parse_kv_line(line);
  } catch (const Error &e) {
    throw Error("manifest line " + std::to_string(line_no) + ": " + e.what());
  }
  UtteranceRecord rec;
  bool have_utt = false, have_spk = false, have_rec = false, have_path = false,
       have_start = false, have_end = false, have_sr = false;
  for (const auto &[key, value] : kv) {
    const std::string ctx = "manifest line " + std::to_string(line_no);
    if (key == "utt_id") {
      if (have_utt) throw Error(ctx + ": duplicate field utt_id");
      rec.utt_id = value;
      have_utt = true;
    } else if (key == "speaker_id") {
      if (have_spk) throw Error(ctx + ": duplicate field speaker_id");
      rec.speaker_id = value;
      have_spk = true;
    } else if (key == "recording_id") {
      if (have_rec) throw Error(ctx + ": duplicate field recording_id");
      rec.recording_id = value;
      have_rec = true;
    } else if (key == "path") {
      if (have_path) throw Error(ctx + ": duplicate field path");
      rec.path = value;
      have_path = true;
    } else if (key == "start_s") {
      rec.start_s = parse_double(value, ctx + " start_s");
      have_start = true;
    } else if (key == "end_s") {
      rec.end_s = parse_double(value, ctx + " end_s");
      have_end = true;
    } else if (key == "sample_rate") {
      rec.sample_rate = static_cast<int>(parse_int(value, ctx + " sample_rate"));
      have_sr = true;
    } else if (key == "dataset") {
      rec.dataset = value;
    } else {
      throw Error(ctx + ": unknown field '" + key + "'");
    }
  }
  auto missing = [&](const char *name) {
    throw Error("manifest line " + std::to_string(line_no) + ": missing field '" +
                std::string(name) + "'");
  };
  if (!have_utt) missing("utt_id");
  if (!have_spk) missing("speaker_id");
  if (!have_rec) missing("recording_id");
  if (!have_path) missing("path");
  if (!have_start) missing("start_s");
  if (!have_end) missing("end_s");
  if (!have_sr) missing("sample_rate");
  if (!(rec.end_s > rec.start_s))
    throw Error("manifest line " + std::to_string(line_no) +
                ": end_s must be greater than start_s");
  if (rec.sample_rate != 8000 && rec.sample_rate != 16000)
    throw Error("manifest line " + std::to_string(line_no) +
                ": sample_rate must be 8000 or 16000");
  return rec;
}

std::string manifest_line(const UtteranceRecord &r) {
  KvPairs kv = {{"utt_id", r.utt_id},
                {"speaker_id", r.speaker_id},
                {"recording_id", r.recording_id},
                {"path", r.path},
                {"start_s", format_double(r.start_s)},
                {"end_s", format_double(r.end_s)},
                {"sample_rate", std::to_string(r.sample_rate)}};
  if (!r.dataset.empty()) kv.emplace_back("dataset", r.dataset);
  return format_kv_line(kv);
}

}  // namespace

void CorpusIndex::insert(const UtteranceRecord &rec, int line_no) {
  std::string ctx = line_no > 0 ? "manifest line " + std::to_string(line_no) : "corpus";
  if (rec.utt_id.empty()) throw Error(ctx + ": empty utt_id");
  if (utterances_.count(rec.utt_id))
    throw Error(ctx + ": duplicate utt_id '" + rec.utt_id + "'");
  if (!(rec.end_s > rec.start_s))
    throw Error(ctx + ": end_s must be greater than start_s for '" + rec.utt_id + "'");
  utterances_[rec.utt_id] = rec;
  auto &utts = speakers_[rec.speaker_id][rec.recording_id];
  utts.insert(std::upper_bound(utts.begin(), utts.end(), rec.utt_id), rec.utt_id);
}

CorpusIndex CorpusIndex::load_manifest(const std::string &path) {
  CorpusIndex index;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string &line = lines[i];
    bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank || line[line.find_first_not_of(" \t")] == '#') continue;
    index.insert(parse_manifest_line(line, static_cast<int>(i + 1)),
                 static_cast<int>(i + 1));
  }
  index.validate();
  return index;
}

CorpusIndex CorpusIndex::from_records(const std::vector<UtteranceRecord> &records) {
  CorpusIndex index;
  for (const auto &r : records) index.insert(r, 0);
  index.validate();
  return index;
}

std::string CorpusIndex::to_manifest_text() const {
  std::string out;
  for (const auto &[id, rec] : utterances_) {
    out += manifest_line(rec);
    out += '\n';
  }
  return out;
}

void CorpusIndex::save_manifest(const std::string &path) const {
  write_text_atomic(path, to_manifest_text());
}

CorpusIndex CorpusIndex::mark_augmentation(const std::string &utt_id,
                                           const std::string &suffix) const {
  if (suffix.empty()) throw Error("mark_augmentation: empty suffix");
  auto it = utterances_.find(utt_id);
  if (it == utterances_.end())
    throw Error("mark_augmentation: unknown utt_id '" + utt_id + "'");
  UtteranceRecord copy = it->second;
  copy.utt_id = utt_id + "-" + suffix;
  copy.recording_id = it->second.recording_id + "-" + suffix;
  CorpusIndex out = *this;
  out.insert(copy, 0);
  return out;
}

std::set<std::string> CorpusIndex::speakers_with_multiple_recordings() const {
  std::set<std::string> out;
  for (const auto &[spk, recs] : speakers_)
    if (recs.size() >= 2) out.insert(spk);
  return out;
}

bool CorpusIndex::has_utterance(const std::string &utt_id) const {
  return utterances_.count(utt_id) > 0;
}

const UtteranceRecord &CorpusIndex::utterance(const std::string &utt_id) const {
  auto it = utterances_.find(utt_id);
  if (it == utterances_.end()) throw Error("unknown utt_id '" + utt_id + "'");
  return it->second;
}

const CorpusIndex::RecordingMap &CorpusIndex::recordings_of(
    const std::string &speaker_id) const {
  auto it = speakers_.find(speaker_id);
  if (it == speakers_.end()) throw Error("unknown speaker_id '" + speaker_id + "'");
  return it->second;
}

std::vector<std::string> CorpusIndex::speaker_ids() const {
  std::vector<std::string> out;
  out.reserve(speakers_.size());
  for (const auto &[spk, recs] : speakers_) out.push_back(spk);
  return out;
}

std::vector<std::string> CorpusIndex::dataset_labels() const {
  std::set<std::string> labels;
  for (const auto &[id, rec] : utterances_)
    if (!rec.dataset.empty()) labels.insert(rec.dataset);
  return std::vector<std::string>(labels.begin(), labels.end());
}

void CorpusIndex::validate() const {
  size_t listed = 0;
  for (const auto &[spk, recs] : speakers_) {
    if (recs.empty()) throw Error("corpus: speaker '" + spk + "' has no recordings");
    for (const auto &[rec_id, utts] : recs) {
      if (utts.empty())
        throw Error("corpus: recording '" + rec_id + "' has no utterances");
      for (const auto &utt_id : utts) {
        auto it = utterances_.find(utt_id);
        if (it == utterances_.end())
          throw Error("corpus: utt '" + utt_id + "' listed but not indexed");
        if (it->second.speaker_id != spk || it->second.recording_id != rec_id)
          throw Error("corpus: utt '" + utt_id + "' indexed under wrong keys");
        ++listed;
      }
    }
  }
  if (listed != utterances_.size())
    throw Error("corpus: speaker map and utterance map are inconsistent");
}

}  // namespace cadv
