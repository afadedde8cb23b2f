// tests/test_synthbench.cc

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
#include <fstream>

#include "cadv/backend.h"
#include "cadv/synthbench.h"
#include "doctest.h"
#include "testutil.h"

using namespace cadv;
using cadv::test::TempDir;

namespace {

SynthConfig quick_cfg(double channel_scale, uint64_t seed, int n_datasets = 0) {
  SynthConfig cfg;
  cfg.n_speakers = 12;
  cfg.recordings_per_speaker = 4;
  cfg.utterances_per_recording = 4;
  cfg.frames_per_utterance = 40;
  cfg.feature_dim = 12;
  cfg.speaker_scale = 1.0;
  cfg.channel_scale = channel_scale;
  cfg.noise_scale = 0.3;
  cfg.seed = seed;
  cfg.n_datasets = n_datasets;
  return cfg;
}

ProbeOptions quick_probe() {
  ProbeOptions opts;
  opts.n_pairs = 600;
  opts.hidden = 64;
  opts.iterations = 150;
  opts.lr = 0.05;
  return opts;
}

}  // namespace

TEST_CASE("generate_synthetic_corpus: structure, determinism, formats") {
  TempDir tmp("synthgen");
  SynthConfig cfg = quick_cfg(1.0, 7);
  CorpusIndex index = generate_synthetic_corpus(cfg, tmp.path("a"));
  index.validate();
  CHECK(index.num_speakers() == 12);
  // Every speaker takes part in recordings_per_speaker conversations.
  for (const auto &spk : index.speaker_ids())
    CHECK(index.recordings_of(spk).size() == 4);
  // Conversations: every recording hosts at least two speakers.
  std::map<std::string, std::set<std::string>> rec_speakers;
  for (const auto &[id, rec] : index.utterances())
    rec_speakers[rec.recording_id].insert(rec.speaker_id);
  for (const auto &[rec, spks] : rec_speakers) CHECK(spks.size() >= 2);

  // The manifest and feature caches parse back.
  CorpusIndex reloaded =
      CorpusIndex::load_manifest(tmp.path("a") + "/manifest.txt");
  CHECK(reloaded == index);
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  CHECK(store.num_frames(index.utterances().begin()->first) == 40);

  // Bit-identical regeneration under the same seed.
  CorpusIndex again = generate_synthetic_corpus(cfg, tmp.path("b"));
  for (const auto &[id, rec] : index.utterances()) {
    Matf a = read_feature_cache(rec.path);
    Matf b = read_feature_cache(again.utterance(id).path);
    CHECK((a - b).norm() == 0.0f);
  }
}

TEST_CASE("synthetic corpus: channel_scale 0 makes within and cross distances "
          "indistinguishable") {
  TempDir tmp("synth0");
  SynthConfig cfg = quick_cfg(0.0, 11);
  cfg.utterances_per_recording = 6;
  CorpusIndex index = generate_synthetic_corpus(cfg, tmp.path());
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  EmbeddingMap means = utterance_mean_embeddings(index, store);

  // Same-speaker utterance-mean distances, split by recording relation.
  Rng rng(13);
  std::vector<double> within, cross;
  for (const auto &[spk, recs] : index.speakers()) {
    std::vector<std::pair<std::string, std::string>> utts;
    for (const auto &[rec_id, rec_utts] : recs)
      for (const auto &u : rec_utts) utts.emplace_back(u, rec_id);
    for (size_t i = 0; i < utts.size(); ++i)
      for (size_t j = i + 1; j < utts.size(); ++j) {
        double d = (means.at(utts[i].first) - means.at(utts[j].first)).norm();
        (utts[i].second == utts[j].second ? within : cross).push_back(d);
      }
  }
  while (within.size() > 1000) within.pop_back();
  while (cross.size() > 1000) cross.pop_back();
  REQUIRE(within.size() > 100);
  REQUIRE(cross.size() > 100);
  CHECK(welch_t_test_p(within, cross) > 0.01);
}

TEST_CASE("synthetic corpus: dominant speaker factor gives >= 99% "
          "nearest-centroid accuracy") {
  TempDir tmp("synthsep");
  SynthConfig cfg = quick_cfg(0.2, 17);
  cfg.speaker_scale = 2.0;
  cfg.noise_scale = 0.1;
  CorpusIndex index = generate_synthetic_corpus(cfg, tmp.path());
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  EmbeddingMap means = utterance_mean_embeddings(index, store);

  std::map<std::string, Vecf> centroids;
  std::map<std::string, int> counts;
  for (const auto &[id, rec] : index.utterances()) {
    auto [it, fresh] = centroids.try_emplace(rec.speaker_id,
                                             Vecf::Zero(cfg.feature_dim));
    it->second += means.at(id);
    counts[rec.speaker_id]++;
  }
  for (auto &[spk, c] : centroids) c /= static_cast<float>(counts[spk]);
  int correct = 0, total = 0;
  for (const auto &[id, rec] : index.utterances()) {
    double best = 1e18;
    std::string best_spk;
    for (const auto &[spk, c] : centroids) {
      double d = (means.at(id) - c).norm();
      if (d < best) {
        best = d;
        best_spk = spk;
      }
    }
    correct += best_spk == rec.speaker_id ? 1 : 0;
    ++total;
  }
  CHECK(static_cast<double>(correct) / total >= 0.99);
}

TEST_CASE("channel probe: separable on raw means, chance without channel, "
          "chance on shuffled labels") {
  TempDir tmp("probe");
  // Strong channel: probe should find it easily on raw feature means.
  SynthConfig strong = quick_cfg(2.0, 19);
  strong.noise_scale = 0.2;
  CorpusIndex index = generate_synthetic_corpus(strong, tmp.path("strong"));
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  EmbeddingMap means = utterance_mean_embeddings(index, store);
  double auc = channel_probe_auc(means, index, quick_probe(), 23);
  CHECK(auc >= 0.9);

  // No channel factor: chance.
  SynthConfig flat = quick_cfg(0.0, 29);
  CorpusIndex index0 = generate_synthetic_corpus(flat, tmp.path("flat"));
  FeatureStore store0 = FeatureStore::preload(index0, FeatureConfig{});
  EmbeddingMap means0 = utterance_mean_embeddings(index0, store0);
  double auc0 = channel_probe_auc(means0, index0, quick_probe(), 31);
  CHECK(auc0 >= 0.4);
  CHECK(auc0 <= 0.6);

  // Shuffled labels: null control at chance, even with a strong channel.
  ProbeOptions null_opts = quick_probe();
  null_opts.shuffle_labels = true;
  double auc_null = channel_probe_auc(means, index, null_opts, 37);
  CHECK(auc_null >= 0.4);
  CHECK(auc_null <= 0.6);
}

TEST_CASE("channel probe: AUC on raw features is non-decreasing in channel "
          "scale (median of 5 seeds at 3 scales)") {
  TempDir tmp("mono");
  std::vector<double> scales = {0.0, 0.7, 2.0};
  std::vector<double> medians;
  for (double scale : scales) {
    std::vector<double> aucs;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      SynthConfig cfg = quick_cfg(scale, 100 + seed);
      cfg.n_speakers = 8;
      cfg.recordings_per_speaker = 3;
      CorpusIndex index = generate_synthetic_corpus(
          cfg, tmp.path("s" + std::to_string(seed) + "_" +
                        std::to_string(static_cast<int>(scale * 10))));
      FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
      EmbeddingMap means = utterance_mean_embeddings(index, store);
      ProbeOptions opts = quick_probe();
      opts.n_pairs = 400;
      opts.iterations = 120;
      aucs.push_back(channel_probe_auc(means, index, opts, 200 + seed));
    }
    std::sort(aucs.begin(), aucs.end());
    medians.push_back(aucs[2]);
  }
  CHECK(medians[0] <= medians[1] + 1e-9);
  CHECK(medians[1] <= medians[2] + 1e-9);
}

TEST_CASE("dataset probe: reads dataset structure out of raw features") {
  TempDir tmp("dsprobe");
  SynthConfig cfg = quick_cfg(2.0, 41, 3);
  CorpusIndex index = generate_synthetic_corpus(cfg, tmp.path());
  CHECK(index.dataset_labels().size() == 3);
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  EmbeddingMap means = utterance_mean_embeddings(index, store);
  double acc = dataset_probe_accuracy(means, index, quick_probe(), 43);
  // Channel signatures identify recordings, and recordings map to datasets.
  CHECK(acc > 0.5);

  // Without labels the probe refuses to run.
  SynthConfig unlabeled = quick_cfg(1.0, 47);
  CorpusIndex index0 = generate_synthetic_corpus(unlabeled, tmp.path("u"));
  CHECK_THROWS_AS(dataset_probe_accuracy(means, index0, quick_probe(), 49), Error);
}

TEST_CASE("eer_gap_report: no channel term means a gap near zero; a strong "
          "channel inflates the within-recording EER") {
  TempDir tmp("gap");
  PairScorer cosine = [](const Vecf &a, const Vecf &b) {
    return cosine_score(a, b);
  };

  // Perfect speaker-only embeddings: both EERs 0, gap 0.
  SynthConfig clean = quick_cfg(0.0, 53);
  clean.speaker_scale = 3.0;
  clean.noise_scale = 0.05;
  CorpusIndex index = generate_synthetic_corpus(clean, tmp.path("clean"));
  FeatureStore store = FeatureStore::preload(index, FeatureConfig{});
  EmbeddingMap means = utterance_mean_embeddings(index, store);
  EerGapReport clean_gap = eer_gap_report(means, index, cosine, 0.3, 4000, 57);
  CHECK(std::abs(clean_gap.gap) < 0.02);
  CHECK(clean_gap.within_eer < 0.01);

  // Controlled scorer: same-recording impostors score high (channel leak),
  // so the within-recording list must come out strictly harder. Speaker and
  // recording identities are encoded in the first two embedding dimensions.
  CorpusIndex index2 = generate_synthetic_corpus(quick_cfg(0.0, 59), tmp.path("enc"));
  EmbeddingMap coded;
  std::map<std::string, int> spk_ids, rec_ids;
  for (const auto &[id, rec] : index2.utterances()) {
    spk_ids.try_emplace(rec.speaker_id, spk_ids.size());
    rec_ids.try_emplace(rec.recording_id, rec_ids.size());
    Vecf v = Vecf::Zero(4);
    v(0) = static_cast<float>(spk_ids.at(rec.speaker_id));
    v(1) = static_cast<float>(rec_ids.at(rec.recording_id));
    v(2) = static_cast<float>(coded.size());  // unique per utterance
    v(3) = 1.0f;
    coded[id] = v;
  }
  PairScorer leaky = [](const Vecf &a, const Vecf &b) {
    double base = a(0) == b(0) ? 1.0 : (a(1) == b(1) ? 0.6 : 0.0);
    uint64_t h = mix_seed(static_cast<uint64_t>(a(2)) * 7919 + 13,
                          static_cast<uint64_t>(b(2)) * 104729 + 17);
    double jitter = (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5) * 0.6;
    return base + jitter;
  };
  EerGapReport leak_gap = eer_gap_report(coded, index2, leaky, 0.3, 4000, 61);
  CHECK(leak_gap.gap > 0.05);
  CHECK(leak_gap.within_eer > leak_gap.cross_eer);
}

TEST_CASE("welch_t_test_p: separated samples give small p, equal samples large") {
  Rng rng(67);
  std::vector<double> a, b, c;
  for (int i = 0; i < 400; ++i) {
    a.push_back(rng.normal());
    b.push_back(rng.normal() + 1.0);
    c.push_back(rng.normal());
  }
  CHECK(welch_t_test_p(a, b) < 1e-6);
  CHECK(welch_t_test_p(a, c) > 0.01);
}

TEST_CASE("synth config validation") {
  SynthConfig cfg = quick_cfg(1.0, 1);
  cfg.n_speakers = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = quick_cfg(1.0, 1);
  cfg.noise_scale = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
