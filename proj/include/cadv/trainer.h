// cadv/trainer.h

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
// Two-phase optimization. Phase 1 trains generator + classifier as a plain
// x-vector system. Phase 2 continues from a converged phase-1 model in one of
// three modes: channel_adversarial attaches the gradient-reversed Siamese
// pair discriminator on 3N anchor-triplet batches; dataset_adversarial
// attaches the 3-class dataset discriminator on baseline batches;
// data_tuned consumes the same batches as channel_adversarial but without an
// adversary (the control model).

#ifndef CADV_TRAINER_H_
#define CADV_TRAINER_H_

#include <deque>
#include <string>
#include <vector>

#include "cadv/network.h"
#include "cadv/sampler.h"

namespace cadv {

enum class TrainMode {
  kBaseline,
  kChannelAdversarial,
  kDatasetAdversarial,
  kDataTuned,
};

std::string train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string &name);

struct TrainerConfig {
  TrainMode mode = TrainMode::kBaseline;
  double lambda = 1.0;
  double lr0 = 0.4;
  double momentum = 0.5;
  int64_t total_steps = 100000;
  BatchSpec batch;
  double dropout_peak = 0.2;
  uint64_t seed = 0;
  int64_t log_every = 100;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string checkpoint_path;   // empty: no checkpoints written
  std::string log_path;          // empty: no training log written

  void validate() const;
};

// lr0 until 60% of training, then halved there and at every further 10%.
double lr_schedule(int64_t step, int64_t total_steps, double lr0);

// Piecewise linear 0 -> peak at 50% -> 0 at 100%.
double dropout_schedule(int64_t step, int64_t total_steps, double peak);

// L_total = L_C - lambda * L_D.
double composite_loss(double loss_c, double loss_d, double lambda);

template <typename R>
struct OptimizerState {
  ModelParams<R> velocity;
  int64_t step = 0;
};

// Heavy-ball SGD: v <- momentum*v + g; p <- p - lr*v.
template <typename R>
void sgd_momentum_step(ModelParams<R> *params, ModelParams<R> *grads,
                       OptimizerState<R> *state, R lr, R momentum) {
  auto p = collect_param_tensors(*params);
  auto g = collect_param_tensors(*grads);
  auto v = collect_param_tensors(state->velocity);
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i].mat) {
      *v[i].mat = momentum * *v[i].mat + *g[i].mat;
      *p[i].mat -= lr * *v[i].mat;
    } else {
      *v[i].vec = momentum * *v[i].vec + *g[i].vec;
      *p[i].vec -= lr * *v[i].vec;
    }
  }
  ++state->step;
}

struct TrainResult {
  Model<float> model;
  std::vector<LossReport> history;      // one entry per step
  double final_accuracy = 0.0;          // mean classifier accuracy, last 100 steps
  double final_disc_accuracy = 0.0;     // mean discriminator accuracy, last 100 steps
};

// Fingerprint of the sorted speaker list; phase 2 refuses a corpus whose
// class mapping differs from the one the checkpoint was trained with.
uint64_t speaker_list_hash(const CorpusIndex &index);

// Phase 1: fresh model, baseline batches, classifier loss only.
TrainResult train_phase1(const CorpusIndex &index, const FeatureStore &store,
                         const ArchConfig &arch, const TrainerConfig &cfg);

// Phase 2: continue from a phase-1 model; the discriminator for the selected
// mode is initialized fresh.
TrainResult train_phase2(Model<float> init, const CorpusIndex &index,
                         const FeatureStore &store, const TrainerConfig &cfg);

// Eval-mode embeddings for every utterance in the index (parallel across
// utterances; pure function of inputs and parameters).
std::map<std::string, Vecf> extract_embeddings(const Model<float> &model,
                                               const CorpusIndex &index,
                                               const FeatureStore &store);

// One optimization step, exposed for the update-equivalence tests.
class Trainer {
 public:
  Trainer(const CorpusIndex &index, const FeatureStore &store, Model<float> model,
          const TrainerConfig &cfg);

  LossReport step();
  TrainResult run();

  const Model<float> &model() const { return model_; }
  Model<float> take_model() { return std::move(model_); }

 private:
  LossReport step_baseline_like(int64_t step_idx);   // baseline / dataset_adversarial
  LossReport step_triplet_like(int64_t step_idx);    // channel_adversarial / data_tuned
  Matf forward_crops(const std::vector<CropRef> &crops, float dropout_p,
                     int64_t step_idx, std::vector<GeneratorCache<float>> *caches);
  void backward_crops(const Matf &d_emb,
                      const std::vector<GeneratorCache<float>> &caches);
  void maybe_log_and_checkpoint(int64_t step_idx, const LossReport &report);
  void write_checkpoint(int64_t step_idx);
  void check_divergence(int64_t step_idx, const LossReport &report);

  const CorpusIndex &index_;
  const FeatureStore &store_;
  Model<float> model_;
  TrainerConfig cfg_;
  ModelParams<float> grads_;
  OptimizerState<float> opt_;
  SpeakerCycle cycle_;
  Rng batch_rng_;
  Rng dropout_root_;
  std::vector<int> crop_dataset_labels_;  // scratch for dataset mode
  std::deque<double> recent_acc_, recent_disc_acc_;
  double initial_loss_c_ = -1.0;
  int divergence_run_ = 0;
  std::string log_buffer_;
};

}  // namespace cadv

#endif  // CADV_TRAINER_H_
