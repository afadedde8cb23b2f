// tests/test_corpus.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>

#include "cadv/corpus.h"
#include "cadv/io.h"
#include "doctest.h"
#include "testutil.h"

using namespace cadv;
using cadv::test::TempDir;
using cadv::test::make_utt;

TEST_CASE("load_manifest: two lines, two speakers, two recordings") {
  TempDir tmp("corpus1");
  std::string path = tmp.path("manifest.txt");
  write_text_atomic(path,
                    "utt_id:u1 speaker_id:s1 recording_id:r1 path:a.feat "
                    "start_s:0 end_s:3 sample_rate:16000\n"
                    "utt_id:u2 speaker_id:s2 recording_id:r2 path:b.feat "
                    "start_s:0.5 end_s:2.5 sample_rate:8000\n");
  CorpusIndex index = CorpusIndex::load_manifest(path);
  CHECK(index.num_speakers() == 2);
  CHECK(index.num_utterances() == 2);
  CHECK(index.utterance("u2").sample_rate == 8000);
  CHECK(index.utterance("u2").duration_s() == doctest::Approx(2.0));
  CHECK(index.recordings_of("s1").count("r1") == 1);
}

TEST_CASE("load_manifest: duplicate utt_id is rejected with the line number") {
  TempDir tmp("corpus2");
  std::string path = tmp.path("manifest.txt");
  write_text_atomic(path,
                    "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                    "start_s:0 end_s:3 sample_rate:16000\n"
                    "utt_id:u1 speaker_id:s2 recording_id:r2 path:b "
                    "start_s:0 end_s:3 sample_rate:16000\n");
  CHECK_THROWS_WITH_AS(CorpusIndex::load_manifest(path),
                       doctest::Contains("line 2"), Error);
}

TEST_CASE("load_manifest: missing and unknown fields are reported") {
  TempDir tmp("corpus3");
  std::string path = tmp.path("manifest.txt");
  write_text_atomic(path, "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                          "start_s:0 sample_rate:16000\n");
  CHECK_THROWS_WITH_AS(CorpusIndex::load_manifest(path),
                       doctest::Contains("missing field 'end_s'"), Error);
  write_text_atomic(path, "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                          "start_s:0 end_s:3 sample_rate:16000 bogus:1\n");
  CHECK_THROWS_WITH_AS(CorpusIndex::load_manifest(path),
                       doctest::Contains("unknown field 'bogus'"), Error);
  write_text_atomic(path, "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                          "start_s:3 end_s:3 sample_rate:16000\n");
  CHECK_THROWS_AS(CorpusIndex::load_manifest(path), Error);
  write_text_atomic(path, "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                          "start_s:0 end_s:3 sample_rate:44100\n");
  CHECK_THROWS_AS(CorpusIndex::load_manifest(path), Error);
}

TEST_CASE("load_manifest: per-speaker counts match a brute-force line scan") {
  TempDir tmp("corpus4");
  std::string path = tmp.path("manifest.txt");
  Rng rng(101);
  std::string text;
  std::map<std::string, int> expected;
  for (int i = 0; i < 1000; ++i) {
    int spk = static_cast<int>(rng.uniform_int(37));
    int rec = static_cast<int>(rng.uniform_int(5));
    std::string spk_id = "s" + std::to_string(spk);
    text += "utt_id:u" + std::to_string(i) + " speaker_id:" + spk_id +
            " recording_id:r" + std::to_string(spk) + "_" + std::to_string(rec) +
            " path:p start_s:0 end_s:2 sample_rate:16000\n";
    expected[spk_id]++;
  }
  write_text_atomic(path, text);
  CorpusIndex index = CorpusIndex::load_manifest(path);
  CHECK(index.num_utterances() == 1000);
  for (const auto &[spk, count] : expected) {
    int indexed = 0;
    for (const auto &[rec, utts] : index.recordings_of(spk))
      indexed += static_cast<int>(utts.size());
    CHECK(indexed == count);
  }
}

TEST_CASE("manifest round trip: serialize then reparse gives an identical index") {
  TempDir tmp("corpus5");
  std::vector<UtteranceRecord> recs = {
      make_utt("u1", "s1", "r1", 3.0, "a.feat"),
      make_utt("u2", "s1", "r2", 2.5, "b.feat", "ds0"),
      make_utt("u3", "s2", "r3", 1.25, "c.feat"),
  };
  recs[2].start_s = 0.1;
  recs[2].end_s = 1.35;
  CorpusIndex index = CorpusIndex::from_records(recs);
  std::string path = tmp.path("out.txt");
  index.save_manifest(path);
  CorpusIndex reparsed = CorpusIndex::load_manifest(path);
  CHECK(index == reparsed);
}

TEST_CASE("mark_augmentation: derived recording id, same speaker") {
  CorpusIndex index = CorpusIndex::from_records({make_utt("u1", "s1", "r1")});
  CorpusIndex augmented = index.mark_augmentation("u1", "noise");
  CHECK(augmented.num_utterances() == 2);
  const auto &copy = augmented.utterance("u1-noise");
  CHECK(copy.recording_id == "r1-noise");
  CHECK(copy.speaker_id == "s1");
  CHECK(augmented.recordings_of("s1").size() == 2);
  // Twice with distinct suffixes: two distinct recordings.
  CorpusIndex twice = augmented.mark_augmentation("u1", "reverb");
  CHECK(twice.recordings_of("s1").size() == 3);
  CHECK_THROWS_AS(index.mark_augmentation("nope", "x"), Error);
  // Original index untouched (mutations return new values).
  CHECK(index.num_utterances() == 1);
  augmented.validate();
}

TEST_CASE("mark_augmentation property: speaker preserved, recording changed") {
  Rng rng(57);
  std::vector<UtteranceRecord> recs;
  for (int i = 0; i < 40; ++i)
    recs.push_back(make_utt("u" + std::to_string(i), "s" + std::to_string(i % 7),
                            "r" + std::to_string(i % 11)));
  CorpusIndex index = CorpusIndex::from_records(recs);
  for (int trial = 0; trial < 25; ++trial) {
    std::string utt = "u" + std::to_string(rng.uniform_int(40));
    std::string suffix = "aug" + std::to_string(trial);
    CorpusIndex next = index.mark_augmentation(utt, suffix);
    const auto &orig = index.utterance(utt);
    const auto &copy = next.utterance(utt + "-" + suffix);
    CHECK(copy.speaker_id == orig.speaker_id);
    CHECK(copy.recording_id != orig.recording_id);
    next.validate();
    index = std::move(next);
  }
}

TEST_CASE("speakers_with_multiple_recordings matches brute force") {
  Rng rng(61);
  std::vector<UtteranceRecord> recs;
  for (int i = 0; i < 200; ++i) {
    int spk = static_cast<int>(rng.uniform_int(23));
    int rec = static_cast<int>(rng.uniform_int(3));
    recs.push_back(make_utt("u" + std::to_string(i), "s" + std::to_string(spk),
                            "s" + std::to_string(spk) + "_r" + std::to_string(rec)));
  }
  CorpusIndex index = CorpusIndex::from_records(recs);
  auto fast = index.speakers_with_multiple_recordings();
  // Brute force over the utterance map.
  std::map<std::string, std::set<std::string>> by_speaker;
  for (const auto &[id, rec] : index.utterances())
    by_speaker[rec.speaker_id].insert(rec.recording_id);
  std::set<std::string> slow;
  for (const auto &[spk, recset] : by_speaker)
    if (recset.size() >= 2) slow.insert(spk);
  CHECK(fast == slow);

  CHECK(CorpusIndex::from_records({make_utt("u1", "s1", "r1"),
                                   make_utt("u2", "s1", "r2")})
            .speakers_with_multiple_recordings()
            .count("s1") == 1);
  CHECK(CorpusIndex::from_records({make_utt("u1", "s1", "r1")})
            .speakers_with_multiple_recordings()
            .empty());
}

TEST_CASE("manifest: comments and blank lines are skipped") {
  TempDir tmp("corpus6");
  std::string path = tmp.path("manifest.txt");
  write_text_atomic(path, "# header comment\n\n"
                          "utt_id:u1 speaker_id:s1 recording_id:r1 path:a "
                          "start_s:0 end_s:3 sample_rate:16000\n");
  CHECK(CorpusIndex::load_manifest(path).num_utterances() == 1);
}

TEST_CASE("dataset labels are optional and collected in sorted order") {
  CorpusIndex index = CorpusIndex::from_records(
      {make_utt("u1", "s1", "r1", 3.0, "p", "swb"),
       make_utt("u2", "s2", "r2", 3.0, "p", "sre"),
       make_utt("u3", "s3", "r3", 3.0, "p", "")});
  auto labels = index.dataset_labels();
  REQUIRE(labels.size() == 2);
  CHECK(labels[0] == "sre");
  CHECK(labels[1] == "swb");
}
