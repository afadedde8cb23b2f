// src/synthbench.cc

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

#include "cadv/synthbench.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cadv/backend.h"
#include "cadv/io.h"

namespace cadv {

void SynthConfig::validate() const {
  if (n_speakers < 2) throw Error("synth: need >= 2 speakers");
  if (recordings_per_speaker < 1 || utterances_per_recording < 1 ||
      frames_per_utterance < 1 || feature_dim < 1)
    throw Error("synth: all counts must be >= 1");
  if (speaker_scale < 0 || channel_scale < 0 || noise_scale < 0)
    throw Error("synth: scales must be >= 0");
}

CorpusIndex generate_synthetic_corpus(const SynthConfig &cfg,
                                      const std::string &out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "feats");

  Rng root(cfg.seed);
  char buf[128];

  std::vector<Vecf> speaker_vecs(cfg.n_speakers);
  for (int k = 0; k < cfg.n_speakers; ++k) {
    Rng r = root.fork(0x5000 + static_cast<uint64_t>(k));
    speaker_vecs[k] = Vecf(cfg.feature_dim);
    for (int d = 0; d < cfg.feature_dim; ++d)
      speaker_vecs[k](d) = static_cast<float>(r.normal() * cfg.speaker_scale);
  }

  // Conversations: each round pairs up a fresh shuffle of the speakers; an
  // odd leftover speaker joins the last pair of the round.
  struct Recording {
    std::string id;
    std::vector<int> speakers;
    Vecf channel;
    std::string dataset;
  };
  std::vector<Recording> recordings;
  Rng pair_rng = root.fork(0x9000);
  for (int round = 0; round < cfg.recordings_per_speaker; ++round) {
    std::vector<int> perm(cfg.n_speakers);
    for (int k = 0; k < cfg.n_speakers; ++k) perm[k] = k;
    pair_rng.shuffle(perm);
    for (int i = 0; i + 1 < cfg.n_speakers; i += 2) {
      Recording rec;
      int gidx = static_cast<int>(recordings.size());
      std::snprintf(buf, sizeof(buf), "rec%04d", gidx);
      rec.id = buf;
      rec.speakers = {perm[i], perm[i + 1]};
      bool last_pair = i + 3 >= cfg.n_speakers;
      if (last_pair && cfg.n_speakers % 2 == 1)
        rec.speakers.push_back(perm[cfg.n_speakers - 1]);
      Rng r = root.fork(0x6000 + static_cast<uint64_t>(gidx));
      rec.channel = Vecf(cfg.feature_dim);
      for (int d = 0; d < cfg.feature_dim; ++d)
        rec.channel(d) = static_cast<float>(r.normal() * cfg.channel_scale);
      if (cfg.n_datasets > 0) {
        std::snprintf(buf, sizeof(buf), "ds%d", gidx % cfg.n_datasets);
        rec.dataset = buf;
      }
      recordings.push_back(std::move(rec));
    }
  }

  std::vector<UtteranceRecord> manifest;
  uint64_t utt_counter = 0;
  for (const Recording &rec : recordings) {
    for (int spk : rec.speakers) {
      for (int u = 0; u < cfg.utterances_per_recording; ++u) {
        std::snprintf(buf, sizeof(buf), "utt_s%03d_%s_%02d", spk, rec.id.c_str(), u);
        UtteranceRecord ur;
        ur.utt_id = buf;
        std::snprintf(buf, sizeof(buf), "spk%03d", spk);
        ur.speaker_id = buf;
        ur.recording_id = rec.id;
        ur.path = (std::filesystem::path(out_dir) / "feats" / (ur.utt_id + ".feat"))
                      .string();
        ur.start_s = 0.0;
        ur.end_s = cfg.frames_per_utterance * 0.01;
        ur.sample_rate = 16000;
        ur.dataset = rec.dataset;

        Matf feats(cfg.frames_per_utterance, cfg.feature_dim);
        Rng r = root.fork(0x7000'0000 + utt_counter);
        for (int t = 0; t < cfg.frames_per_utterance; ++t)
          for (int d = 0; d < cfg.feature_dim; ++d)
            feats(t, d) = speaker_vecs[spk](d) + rec.channel(d) +
                          static_cast<float>(r.normal() * cfg.noise_scale);
        write_feature_cache(ur.path, ur.utt_id, feats);
        manifest.push_back(std::move(ur));
        ++utt_counter;
      }
    }
  }

  CorpusIndex index = CorpusIndex::from_records(manifest);
  index.save_manifest((std::filesystem::path(out_dir) / "manifest.txt").string());
  return index;
}

EmbeddingMap utterance_mean_embeddings(const CorpusIndex &index,
                                       const FeatureStore &store) {
  EmbeddingMap out;
  for (const auto &[id, rec] : index.utterances()) {
    const Matf &feats = store.features(id);
    out[id] = feats.colwise().mean().transpose();
  }
  return out;
}

namespace {

struct ProbePair {
  std::string utt_a, utt_b;
  uint8_t label;  // 1 = within-recording
};

// Same-speaker pairs, half within-recording and half cross-recording.
std::vector<ProbePair> sample_probe_pairs(const CorpusIndex &index, size_t n_pairs,
                                          Rng &rng) {
  std::vector<ProbePair> within, cross;
  for (const auto &[spk, recs] : index.speakers()) {
    std::vector<std::pair<std::string, std::string>> utts;  // (utt, rec)
    for (const auto &[rec_id, rec_utts] : recs)
      for (const auto &u : rec_utts) utts.emplace_back(u, rec_id);
    for (size_t i = 0; i < utts.size(); ++i)
      for (size_t j = i + 1; j < utts.size(); ++j) {
        bool same_rec = utts[i].second == utts[j].second;
        (same_rec ? within : cross)
            .push_back({utts[i].first, utts[j].first, same_rec ? uint8_t{1} : uint8_t{0}});
      }
  }
  if (within.empty() || cross.empty())
    throw Error("channel probe: need both within- and cross-recording "
                "same-speaker pairs");
  rng.shuffle(within);
  rng.shuffle(cross);
  size_t half = std::max<size_t>(n_pairs / 2, 1);
  size_t n_w = std::min(within.size(), half);
  size_t n_c = std::min(cross.size(), half);
  size_t n = std::min(n_w, n_c);  // keep the classes balanced
  std::vector<ProbePair> out;
  for (size_t i = 0; i < n; ++i) out.push_back(within[i]);
  for (size_t i = 0; i < n; ++i) out.push_back(cross[i]);
  rng.shuffle(out);
  return out;
}

// Column-wise standardization fit on the training rows.
void standardize(Matf *x, Eigen::Index n_train) {
  for (Eigen::Index c = 0; c < x->cols(); ++c) {
    double mean = x->col(c).head(n_train).cast<double>().mean();
    double var = 0;
    for (Eigen::Index r = 0; r < n_train; ++r) {
      double d = (*x)(r, c) - mean;
      var += d * d;
    }
    var /= std::max<double>(1.0, static_cast<double>(n_train));
    double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (Eigen::Index r = 0; r < x->rows(); ++r)
      (*x)(r, c) = static_cast<float>(((*x)(r, c) - mean) * inv);
  }
}

double rank_auc(const std::vector<double> &scores, const std::vector<uint8_t> &labels) {
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties.
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  size_t n_pos = 0, n_neg = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k]) {
      pos_rank_sum += rank[k];
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error("rank_auc: need both classes in the held-out split");
  double u = pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

const Vecf &lookup_embedding(const EmbeddingMap &embeddings, const std::string &utt) {
  auto it = embeddings.find(utt);
  if (it == embeddings.end()) throw Error("probe: missing embedding for '" + utt + "'");
  return it->second;
}

}  // namespace

double channel_probe_auc(const EmbeddingMap &embeddings, const CorpusIndex &index,
                         const ProbeOptions &opts, uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbePair> pairs = sample_probe_pairs(index, opts.n_pairs, rng);
  if (pairs.size() < 10) throw Error("channel probe: insufficient pairs");
  const int e_dim = static_cast<int>(embeddings.begin()->second.size());

  Matf x(static_cast<Eigen::Index>(pairs.size()), 2 * e_dim);
  std::vector<uint8_t> labels(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    x.block(static_cast<Eigen::Index>(i), 0, 1, e_dim) =
        lookup_embedding(embeddings, pairs[i].utt_a).transpose();
    x.block(static_cast<Eigen::Index>(i), e_dim, 1, e_dim) =
        lookup_embedding(embeddings, pairs[i].utt_b).transpose();
    labels[i] = pairs[i].label;
  }
  if (opts.shuffle_labels) rng.shuffle(labels);

  const Eigen::Index n_train =
      static_cast<Eigen::Index>(opts.train_fraction * static_cast<double>(pairs.size()));
  if (n_train < 4 || n_train >= static_cast<Eigen::Index>(pairs.size()))
    throw Error("channel probe: bad train/test split");
  standardize(&x, n_train);

  ArchConfig probe_arch;
  probe_arch.num_classes = 1;  // unused by the pair discriminator
  probe_arch.embedding_dim = e_dim;
  probe_arch.pair_disc_hidden = opts.hidden;

  PairDiscParams<float> probe;
  probe.hidden.W = Matf::Zero(opts.hidden, 2 * e_dim);
  probe.hidden.b = Vecf::Zero(opts.hidden);
  probe.out_w = Vecf::Zero(opts.hidden);
  probe.out_b = Vecf::Zero(1);
  init_pair_disc(probe, rng.fork(1));
  PairDiscParams<float> grads = probe, velocity = probe;
  auto zero = [](PairDiscParams<float> *p) {
    p->hidden.W.setZero();
    p->hidden.b.setZero();
    p->out_w.setZero();
    p->out_b.setZero();
  };
  zero(&grads);
  zero(&velocity);

  Matf x_train = x.topRows(n_train);
  std::vector<uint8_t> y_train(labels.begin(), labels.begin() + n_train);
  const float lr = static_cast<float>(opts.lr);
  const float mom = static_cast<float>(opts.momentum);
  for (int it = 0; it < opts.iterations; ++it) {
    zero(&grads);
    PairDiscCache<float> cache;
    pair_disc_loss<float>(probe, probe_arch, x_train, y_train, &cache, nullptr);
    pair_disc_backward<float>(probe, probe_arch, cache, &grads, nullptr);
    velocity.hidden.W = mom * velocity.hidden.W + grads.hidden.W;
    velocity.hidden.b = mom * velocity.hidden.b + grads.hidden.b;
    velocity.out_w = mom * velocity.out_w + grads.out_w;
    velocity.out_b = mom * velocity.out_b + grads.out_b;
    probe.hidden.W -= lr * velocity.hidden.W;
    probe.hidden.b -= lr * velocity.hidden.b;
    probe.out_w -= lr * velocity.out_w;
    probe.out_b -= lr * velocity.out_b;
  }

  Matf x_test = x.bottomRows(x.rows() - n_train);
  std::vector<uint8_t> y_test(labels.begin() + n_train, labels.end());
  Vecf logits = pair_disc_logits<float>(probe, probe_arch, x_test);
  std::vector<double> scores(logits.data(), logits.data() + logits.size());
  return rank_auc(scores, y_test);
}

double dataset_probe_accuracy(const EmbeddingMap &embeddings,
                              const CorpusIndex &index, const ProbeOptions &opts,
                              uint64_t seed) {
  auto ds_map = dataset_class_map(index);
  if (ds_map.size() < 2) throw Error("dataset probe: need >= 2 dataset labels");
  Rng rng(seed);

  std::vector<std::pair<std::string, int>> samples;
  for (const auto &[id, rec] : index.utterances())
    if (!rec.dataset.empty()) samples.emplace_back(id, ds_map.at(rec.dataset));
  if (samples.size() < 10) throw Error("dataset probe: insufficient samples");
  rng.shuffle(samples);

  const int e_dim = static_cast<int>(embeddings.begin()->second.size());
  Matf x(static_cast<Eigen::Index>(samples.size()), e_dim);
  std::vector<int> labels(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        lookup_embedding(embeddings, samples[i].first).transpose();
    labels[i] = samples[i].second;
  }
  const Eigen::Index n_train =
      static_cast<Eigen::Index>(opts.train_fraction * static_cast<double>(samples.size()));
  if (n_train < 4 || n_train >= static_cast<Eigen::Index>(samples.size()))
    throw Error("dataset probe: bad train/test split");
  standardize(&x, n_train);

  ArchConfig probe_arch;
  probe_arch.num_classes = 1;
  probe_arch.embedding_dim = e_dim;
  probe_arch.ds_disc_hidden = opts.hidden;
  probe_arch.num_datasets = static_cast<int>(ds_map.size());

  DatasetDiscParams<float> probe;
  probe.hidden.W = Matf::Zero(opts.hidden, e_dim);
  probe.hidden.b = Vecf::Zero(opts.hidden);
  probe.out.W = Matf::Zero(probe_arch.num_datasets, opts.hidden);
  probe.out.b = Vecf::Zero(probe_arch.num_datasets);
  init_dataset_disc(probe, rng.fork(1));
  DatasetDiscParams<float> grads = probe, velocity = probe;
  auto zero = [](DatasetDiscParams<float> *p) {
    p->hidden.W.setZero();
    p->hidden.b.setZero();
    p->out.W.setZero();
    p->out.b.setZero();
  };
  zero(&grads);
  zero(&velocity);

  Matf x_train = x.topRows(n_train);
  std::vector<int> y_train(labels.begin(), labels.begin() + n_train);
  const float lr = static_cast<float>(opts.lr);
  const float mom = static_cast<float>(opts.momentum);
  for (int it = 0; it < opts.iterations; ++it) {
    zero(&grads);
    DatasetDiscCache<float> cache;
    dataset_disc_loss<float>(probe, probe_arch, x_train, y_train, &cache, nullptr);
    dataset_disc_backward<float>(probe, probe_arch, cache, &grads, nullptr);
    velocity.hidden.W = mom * velocity.hidden.W + grads.hidden.W;
    velocity.hidden.b = mom * velocity.hidden.b + grads.hidden.b;
    velocity.out.W = mom * velocity.out.W + grads.out.W;
    velocity.out.b = mom * velocity.out.b + grads.out.b;
    probe.hidden.W -= lr * velocity.hidden.W;
    probe.hidden.b -= lr * velocity.hidden.b;
    probe.out.W -= lr * velocity.out.W;
    probe.out.b -= lr * velocity.out.b;
  }

  Matf x_test = x.bottomRows(x.rows() - n_train);
  std::vector<int> y_test(labels.begin() + n_train, labels.end());
  double acc = 0;
  dataset_disc_loss<float>(probe, probe_arch, x_test, y_test, nullptr, &acc);
  return acc;
}

EerGapReport eer_gap_report(const EmbeddingMap &embeddings, const CorpusIndex &index,
                            const PairScorer &scorer, double min_dur_s,
                            size_t max_trials, uint64_t seed) {
  auto eer_for = [&](TrialScope scope) {
    std::vector<Trial> trials = build_trials(index, scope, min_dur_s, max_trials, seed);
    std::vector<double> tar, non;
    for (const Trial &t : trials) {
      double s = scorer(lookup_embedding(embeddings, t.utt_a),
                        lookup_embedding(embeddings, t.utt_b));
      (t.target ? tar : non).push_back(s);
    }
    return compute_eer(tar, non);
  };
  EerGapReport report;
  report.within_eer = eer_for(TrialScope::kWithinRecording);
  report.cross_eer = eer_for(TrialScope::kCrossRecording);
  report.gap = report.within_eer - report.cross_eer;
  return report;
}

double welch_t_test_p(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() < 2 || b.size() < 2) throw Error("welch_t_test_p: need >= 2 samples");
  auto mean_var = [](const std::vector<double> &v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= static_cast<double>(v.size() - 1);
    return std::pair<double, double>(m, s2);
  };
  auto [ma, va] = mean_var(a);
  auto [mb, vb] = mean_var(b);
  double se = std::sqrt(va / a.size() + vb / b.size());
  if (se == 0) return ma == mb ? 1.0 : 0.0;
  double t = (ma - mb) / se;
  // Normal approximation (sample sizes here are large).
  double p = std::erfc(std::abs(t) / std::sqrt(2.0));
  return p;
}

}  // namespace cadv
