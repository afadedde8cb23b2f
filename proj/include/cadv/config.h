// cadv/config.h

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

#ifndef CADV_CONFIG_H_
#define CADV_CONFIG_H_

#include <string>
#include <vector>

#include "cadv/features.h"
#include "cadv/network.h"
#include "cadv/sampler.h"
#include "cadv/synthbench.h"
#include "cadv/trainer.h"

namespace cadv {

// Fully resolved run configuration. Values are set, in increasing precedence,
// by: built-in defaults, the preset, the config file (`key = value` lines),
// CADV_* environment variables, and command-line flags.
struct RunConfig {
  uint64_t seed = 0;
  int workers = 0;  // 0: all hardware threads
  bool deterministic = false;
  std::string preset = "large";

  // features.*
  FeatureConfig features;

  // batch.*
  int batch_size = 400;
  int adv_n = 0;  // anchor speakers per adversarial batch; 0: batch_size / 3
  double crop_min_dur_s = 2.0;
  double crop_max_dur_s = 4.0;

  // trainer.*
  double lambda = 1.0;
  double lr0 = 0.4;
  double momentum = 0.5;
  int64_t steps = 100000;
  int64_t phase2_steps = 0;   // 0: 20% of steps
  double phase2_lr0 = 0.0;    // 0: lr0 / 16 (the phase-1 final rate)
  double dropout_peak = 0.2;
  int64_t log_every = 100;
  int64_t checkpoint_every = 0;

  // network.* (0: value from the preset)
  int embedding_dim = 0;
  int attention_hidden = 0;
  int classifier_hidden = 0;
  int pair_disc_hidden = 0;
  double am_scale = 30.0;
  double am_margin = 0.35;

  // backend.*
  std::string backend = "cosine";  // cosine | plda
  int plda_iters = 10;

  // eval.*
  double trial_min_dur_s = 0.5;
  int64_t max_trials = 100000;
  double collar_s = 0.25;
  double ahc_threshold = 0.0;
  int num_speakers_stop = 0;  // 0: threshold mode
  double subseg_win_s = 1.5;
  double subseg_hop_s = 0.75;

  // synth.*
  SynthConfig synth;

  // probe.*
  ProbeOptions probe;

  void set(const std::string &key, const std::string &value);
  std::string get(const std::string &key) const;
  std::vector<std::string> keys() const;

  void apply_preset(const std::string &name);
  // `key = value` lines; '#' comments. Errors carry the key and line number.
  void load_file(const std::string &path);
  // CADV_<KEY> with '.' replaced by '_', upper case.
  void apply_env();

  // Resolved configuration in the config-file format.
  std::string print() const;

  ArchConfig arch(int input_dim, int num_classes) const;
  BatchSpec batch_spec(bool adversarial) const;
  TrainerConfig trainer_config(TrainMode mode) const;
};

// Reads 'preset' from flags/file before full resolution.
std::string peek_preset(const std::string &config_path,
                        const std::string &flag_preset);

}  // namespace cadv

#endif  // CADV_CONFIG_H_
