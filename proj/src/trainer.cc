// src/trainer.cc

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

#include "cadv/trainer.h"

#include <cmath>
#include <fstream>

namespace cadv {

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kChannelAdversarial: return "channel_adversarial";
    case TrainMode::kDatasetAdversarial: return "dataset_adversarial";
    case TrainMode::kDataTuned: return "data_tuned";
  }
  throw Error("unknown train mode");
}

TrainMode train_mode_from_name(const std::string &name) {
  if (name == "baseline") return TrainMode::kBaseline;
  if (name == "channel_adversarial" || name == "channel")
    return TrainMode::kChannelAdversarial;
  if (name == "dataset_adversarial" || name == "dataset")
    return TrainMode::kDatasetAdversarial;
  if (name == "data_tuned" || name == "tuned") return TrainMode::kDataTuned;
  throw Error("unknown train mode '" + name + "'");
}

void TrainerConfig::validate() const {
  if (lambda < 0) throw Error("trainer: lambda must be >= 0");
  if (lr0 <= 0) throw Error("trainer: lr0 must be > 0");
  if (total_steps < 1) throw Error("trainer: total_steps must be >= 1");
  if (batch.n < 1) throw Error("trainer: batch size must be >= 1");
  if (batch.min_dur_s <= 0 || batch.min_dur_s > batch.max_dur_s)
    throw Error("trainer: crop duration range invalid");
}

double lr_schedule(int64_t step, int64_t total_steps, double lr0) {
  double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  if (frac < 0.6) return lr0;
  if (frac < 0.7) return lr0 / 2.0;
  if (frac < 0.8) return lr0 / 4.0;
  if (frac < 0.9) return lr0 / 8.0;
  return lr0 / 16.0;
}

double dropout_schedule(int64_t step, int64_t total_steps, double peak) {
  double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  if (frac <= 0.5) return peak * (frac / 0.5);
  return peak * ((1.0 - frac) / 0.5);
}

double composite_loss(double loss_c, double loss_d, double lambda) {
  double total = loss_c - lambda * loss_d;
  if (!std::isfinite(total))
    throw Error("composite_loss: non-finite loss (L_C=" + format_double(loss_c) +
                ", L_D=" + format_double(loss_d) + ")");
  return total;
}

uint64_t speaker_list_hash(const CorpusIndex &index) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const std::string &spk : index.speaker_ids()) {
    for (char c : spk) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

void zero_params(ModelParams<float> *p) {
  for (auto &ref : collect_param_tensors(*p)) {
    if (ref.mat)
      ref.mat->setZero();
    else
      ref.vec->setZero();
  }
}

bool finite_report(const LossReport &r) {
  return std::isfinite(r.loss_c) && std::isfinite(r.loss_d) &&
         std::isfinite(r.loss_total);
}

}  // namespace

Trainer::Trainer(const CorpusIndex &index, const FeatureStore &store,
                 Model<float> model, const TrainerConfig &cfg)
    : index_(index),
      store_(store),
      model_(std::move(model)),
      cfg_(cfg),
      grads_(allocate_params<float>(model_.arch)),
      opt_{allocate_params<float>(model_.arch), 0},
      cycle_(index.speaker_ids(), Rng(cfg.seed).fork(10)),
      batch_rng_(Rng(cfg.seed).fork(11)),
      dropout_root_(Rng(cfg.seed).fork(12)) {
  cfg_.validate();
  if (index_.num_speakers() < 2) throw Error("trainer: need at least 2 speakers");
  zero_params(&grads_);
  zero_params(&opt_.velocity);
  if (cfg_.mode == TrainMode::kDatasetAdversarial) {
    auto ds_map = dataset_class_map(index_);
    if (static_cast<int>(ds_map.size()) < 2)
      throw Error("trainer: dataset_adversarial needs >= 2 dataset labels in the manifest");
    if (static_cast<int>(ds_map.size()) != model_.arch.num_datasets)
      throw Error("trainer: corpus has " + std::to_string(ds_map.size()) +
                  " dataset labels but the model expects " +
                  std::to_string(model_.arch.num_datasets));
  }
}

Matf Trainer::forward_crops(const std::vector<CropRef> &crops, float dropout_p,
                            int64_t step_idx,
                            std::vector<GeneratorCache<float>> *caches) {
  const Eigen::Index batch = static_cast<Eigen::Index>(crops.size());
  Matf emb(batch, model_.arch.embedding_dim);
  caches->resize(crops.size());
  Rng step_rng = dropout_root_.fork(static_cast<uint64_t>(step_idx));
  for (size_t i = 0; i < crops.size(); ++i) {
    Matf feats = materialize_crop(store_, crops[i]);
    Rng crop_rng = step_rng.fork(i);
    emb.row(static_cast<Eigen::Index>(i)) =
        generator_forward<float>(model_.params.gen, model_.arch, model_.running,
                                 feats, NetMode::kTrain, &model_.running,
                                 dropout_p, &crop_rng, &(*caches)[i])
            .transpose();
  }
  return emb;
}

void Trainer::backward_crops(const Matf &d_emb,
                             const std::vector<GeneratorCache<float>> &caches) {
  for (size_t i = 0; i < caches.size(); ++i) {
    Vecf g = d_emb.row(static_cast<Eigen::Index>(i)).transpose();
    generator_backward<float>(model_.params.gen, model_.arch, caches[i], g,
                              &grads_.gen);
  }
}

LossReport Trainer::step_baseline_like(int64_t step_idx) {
  const float dropout_p =
      static_cast<float>(dropout_schedule(step_idx, cfg_.total_steps, cfg_.dropout_peak));
  BaselineBatch batch = build_baseline_batch(index_, store_, cfg_.batch, cycle_, batch_rng_);

  std::vector<GeneratorCache<float>> caches;
  Matf emb = forward_crops(batch.crops, dropout_p, step_idx, &caches);

  Rng step_rng = dropout_root_.fork(static_cast<uint64_t>(step_idx));
  Rng cls_rng = step_rng.fork(1u << 20);
  ClassifierCache<float> cls_cache;
  LossReport report;
  report.loss_c = am_softmax_loss<float>(model_.params.cls, model_.arch,
                                         model_.running, emb, batch.speaker_labels,
                                         NetMode::kTrain, &model_.running, dropout_p,
                                         &cls_rng, &cls_cache, &report.acc_c);
  Matf d_emb;
  am_softmax_backward<float>(model_.params.cls, model_.arch, cls_cache, &grads_.cls,
                             &d_emb);

  if (cfg_.mode == TrainMode::kDatasetAdversarial) {
    auto ds_map = dataset_class_map(index_);
    crop_dataset_labels_.clear();
    for (const CropRef &crop : batch.crops) {
      const auto &rec = index_.utterance(crop.utt_id);
      if (rec.dataset.empty())
        throw Error("trainer: utterance '" + crop.utt_id + "' has no dataset label");
      crop_dataset_labels_.push_back(ds_map.at(rec.dataset));
    }
    DatasetDiscCache<float> ds_cache;
    report.loss_d = dataset_disc_loss<float>(model_.params.ds_disc, model_.arch, emb,
                                             crop_dataset_labels_, &ds_cache,
                                             &report.acc_d);
    Matf d_emb_disc;
    dataset_disc_backward<float>(model_.params.ds_disc, model_.arch, ds_cache,
                                 &grads_.ds_disc, &d_emb_disc);
    const float lambda = static_cast<float>(cfg_.lambda);
    if (lambda != 0.0f)
      d_emb += grad_reverse_backward(d_emb_disc, lambda);
    report.loss_total = report.loss_c - cfg_.lambda * report.loss_d;
  } else {
    report.loss_total = report.loss_c;
  }

  backward_crops(d_emb, caches);
  return report;
}

LossReport Trainer::step_triplet_like(int64_t step_idx) {
  const float dropout_p =
      static_cast<float>(dropout_schedule(step_idx, cfg_.total_steps, cfg_.dropout_peak));
  AdversarialBatch batch =
      build_adversarial_batch(index_, store_, cfg_.batch, cycle_, batch_rng_);

  std::vector<GeneratorCache<float>> caches;
  Matf emb = forward_crops(batch.crops, dropout_p, step_idx, &caches);

  // Classifier on all 3N crops, as for the plain x-vector system.
  Rng step_rng = dropout_root_.fork(static_cast<uint64_t>(step_idx));
  Rng cls_rng = step_rng.fork(1u << 20);
  ClassifierCache<float> cls_cache;
  LossReport report;
  report.loss_c = am_softmax_loss<float>(model_.params.cls, model_.arch,
                                         model_.running, emb, batch.speaker_labels,
                                         NetMode::kTrain, &model_.running, dropout_p,
                                         &cls_rng, &cls_cache, &report.acc_c);
  Matf d_emb;
  am_softmax_backward<float>(model_.params.cls, model_.arch, cls_cache, &grads_.cls,
                             &d_emb);

  if (cfg_.mode == TrainMode::kChannelAdversarial) {
    const Eigen::Index n_pairs = static_cast<Eigen::Index>(batch.pair_index.size());
    const int e_dim = model_.arch.embedding_dim;
    Matf pair_inputs(n_pairs, 2 * e_dim);
    for (Eigen::Index p = 0; p < n_pairs; ++p) {
      pair_inputs.block(p, 0, 1, e_dim) = emb.row(batch.pair_index[p].first);
      pair_inputs.block(p, e_dim, 1, e_dim) = emb.row(batch.pair_index[p].second);
    }
    PairDiscCache<float> disc_cache;
    report.loss_d = pair_disc_loss<float>(model_.params.pair_disc, model_.arch,
                                          pair_inputs, batch.pair_labels, &disc_cache,
                                          &report.acc_d);
    Matf d_pair_inputs;
    pair_disc_backward<float>(model_.params.pair_disc, model_.arch, disc_cache,
                              &grads_.pair_disc, &d_pair_inputs);
    const float lambda = static_cast<float>(cfg_.lambda);
    if (lambda != 0.0f) {
      // Gradient reversal between generator and discriminator; both halves of
      // every pair gradient flow back into the paired embeddings.
      Matf reversed = grad_reverse_backward(d_pair_inputs, lambda);
      for (Eigen::Index p = 0; p < n_pairs; ++p) {
        d_emb.row(batch.pair_index[p].first) += reversed.block(p, 0, 1, e_dim);
        d_emb.row(batch.pair_index[p].second) += reversed.block(p, e_dim, 1, e_dim);
      }
    }
    report.loss_total = report.loss_c - cfg_.lambda * report.loss_d;
  } else {
    // data_tuned: identical batches and schedules, no adversary.
    report.loss_total = report.loss_c;
  }

  backward_crops(d_emb, caches);
  return report;
}

LossReport Trainer::step() {
  const int64_t step_idx = opt_.step;
  zero_params(&grads_);
  LossReport report;
  switch (cfg_.mode) {
    case TrainMode::kBaseline:
    case TrainMode::kDatasetAdversarial:
      report = step_baseline_like(step_idx);
      break;
    case TrainMode::kChannelAdversarial:
    case TrainMode::kDataTuned:
      report = step_triplet_like(step_idx);
      break;
  }
  check_divergence(step_idx, report);
  const float lr = static_cast<float>(lr_schedule(step_idx, cfg_.total_steps, cfg_.lr0));
  sgd_momentum_step(&model_.params, &grads_, &opt_, lr,
                    static_cast<float>(cfg_.momentum));
  return report;
}

void Trainer::check_divergence(int64_t step_idx, const LossReport &report) {
  if (!finite_report(report)) {
    write_checkpoint(step_idx - 1);
    throw Error("training diverged at step " + std::to_string(step_idx) +
                ": non-finite loss (last good checkpoint " +
                (cfg_.checkpoint_path.empty() ? "not written" : cfg_.checkpoint_path) +
                ")");
  }
  if (initial_loss_c_ < 0) initial_loss_c_ = report.loss_c;
  if (report.loss_c > 10.0 * initial_loss_c_) {
    if (++divergence_run_ >= 100) {
      write_checkpoint(step_idx);
      throw Error("training diverged: classifier loss exceeded 10x its initial value "
                  "for 100 consecutive steps (step " + std::to_string(step_idx) + ")");
    }
  } else {
    divergence_run_ = 0;
  }
}

void Trainer::write_checkpoint(int64_t step_idx) {
  if (cfg_.checkpoint_path.empty()) return;
  KvPairs extra = {{"mode", train_mode_name(cfg_.mode)},
                   {"step", std::to_string(step_idx)},
                   {"total_steps", std::to_string(cfg_.total_steps)},
                   {"speaker_hash", std::to_string(speaker_list_hash(index_))}};
  std::vector<NamedTensor> opt_tensors;
  for (const auto &ref : collect_param_tensors(opt_.velocity)) {
    if (ref.mat)
      opt_tensors.push_back(tensor_from_matrix("optim." + ref.name + ".v", *ref.mat));
    else
      opt_tensors.push_back(tensor_from_vector("optim." + ref.name + ".v", *ref.vec));
  }
  save_checkpoint(cfg_.checkpoint_path, model_, extra, opt_tensors);
}

void Trainer::maybe_log_and_checkpoint(int64_t step_idx, const LossReport &report) {
  bool last = step_idx + 1 == cfg_.total_steps;
  if (!cfg_.log_path.empty() &&
      (step_idx % std::max<int64_t>(cfg_.log_every, 1) == 0 || last)) {
    KvPairs kv = {
        {"step", std::to_string(step_idx)},
        {"lr", format_double(lr_schedule(step_idx, cfg_.total_steps, cfg_.lr0))},
        {"dropout",
         format_double(dropout_schedule(step_idx, cfg_.total_steps, cfg_.dropout_peak))},
        {"loss_c", format_double(report.loss_c)},
        {"acc_c", format_double(report.acc_c)},
        {"loss_d", format_double(report.loss_d)},
        {"acc_d", format_double(report.acc_d)},
        {"loss_total", format_double(report.loss_total)}};
    log_buffer_ += format_kv_line(kv);
    log_buffer_ += '\n';
  }
  if (cfg_.checkpoint_every > 0 && step_idx > 0 &&
      step_idx % cfg_.checkpoint_every == 0)
    write_checkpoint(step_idx);
}

TrainResult Trainer::run() {
  TrainResult result;
  result.history.reserve(static_cast<size_t>(cfg_.total_steps));
  for (int64_t s = 0; s < cfg_.total_steps; ++s) {
    LossReport report = step();
    maybe_log_and_checkpoint(s, report);
    recent_acc_.push_back(report.acc_c);
    recent_disc_acc_.push_back(report.acc_d);
    if (recent_acc_.size() > 100) recent_acc_.pop_front();
    if (recent_disc_acc_.size() > 100) recent_disc_acc_.pop_front();
    result.history.push_back(report);
  }
  write_checkpoint(cfg_.total_steps - 1);
  if (!cfg_.log_path.empty()) write_text_atomic(cfg_.log_path, log_buffer_);
  double acc = 0, dacc = 0;
  for (double a : recent_acc_) acc += a;
  for (double a : recent_disc_acc_) dacc += a;
  result.final_accuracy = recent_acc_.empty() ? 0 : acc / recent_acc_.size();
  result.final_disc_accuracy =
      recent_disc_acc_.empty() ? 0 : dacc / recent_disc_acc_.size();
  result.model = std::move(model_);
  return result;
}

TrainResult train_phase1(const CorpusIndex &index, const FeatureStore &store,
                         const ArchConfig &arch, const TrainerConfig &cfg) {
  if (cfg.mode != TrainMode::kBaseline)
    throw Error("train_phase1: mode must be baseline");
  Model<float> model = init_model<float>(arch, cfg.seed);
  Trainer trainer(index, store, std::move(model), cfg);
  return trainer.run();
}

std::map<std::string, Vecf> extract_embeddings(const Model<float> &model,
                                               const CorpusIndex &index,
                                               const FeatureStore &store) {
  std::vector<const UtteranceRecord *> recs;
  for (const auto &[id, rec] : index.utterances()) recs.push_back(&rec);
  std::vector<Vecf> embs(recs.size());
  parallel_for(recs.size(), [&](size_t i) {
    const Matf &feats = store.features(recs[i]->utt_id);
    embs[i] = generator_forward<float>(model.params.gen, model.arch, model.running,
                                       feats, NetMode::kEval, nullptr, 0.0f,
                                       nullptr, nullptr);
  });
  std::map<std::string, Vecf> out;
  for (size_t i = 0; i < recs.size(); ++i) out[recs[i]->utt_id] = std::move(embs[i]);
  return out;
}

TrainResult train_phase2(Model<float> init, const CorpusIndex &index,
                         const FeatureStore &store, const TrainerConfig &cfg) {
  if (cfg.mode == TrainMode::kBaseline)
    throw Error("train_phase2: mode must be channel_adversarial, "
                "dataset_adversarial or data_tuned");
  if (cfg.mode == TrainMode::kDatasetAdversarial) {
    int n = static_cast<int>(index.dataset_labels().size());
    if (n < 2) throw Error("train_phase2: dataset_adversarial needs >= 2 dataset labels");
    init.arch.num_datasets = n;
    init.params.ds_disc = allocate_params<float>(init.arch).ds_disc;
  }
  // Fresh discriminator, independent of the phase-1 seed history.
  Rng disc_rng = Rng(cfg.seed).fork(13);
  init_pair_disc(init.params.pair_disc, disc_rng.fork(0));
  init_dataset_disc(init.params.ds_disc, disc_rng.fork(1));
  Trainer trainer(index, store, std::move(init), cfg);
  return trainer.run();
}

}  // namespace cadv
