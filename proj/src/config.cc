// src/config.cc

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

#include "cadv/config.h"

#include <cstdlib>
#include <functional>

#include "cadv/io.h"

namespace cadv {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig &)> get;
  std::function<void(RunConfig &, const std::string &)> set;
};

std::string bool_str(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string &v, const std::string &key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config key '" + key + "': expected true/false, got '" + v + "'");
}

const std::vector<Field> &fields() {
  auto int_field = [](const std::string &key, auto member) {
    return Field{
        key,
        [member](const RunConfig &c) { return std::to_string(c.*member); },
        [member, key](RunConfig &c, const std::string &v) {
          c.*member = static_cast<std::decay_t<decltype(std::declval<RunConfig>().*member)>>(
              parse_int(v, "config key '" + key + "'"));
        }};
  };
  auto dbl_field = [](const std::string &key, auto member) {
    return Field{
        key,
        [member](const RunConfig &c) { return format_double(c.*member); },
        [member, key](RunConfig &c, const std::string &v) {
          c.*member = parse_double(v, "config key '" + key + "'");
        }};
  };
  auto str_field = [](const std::string &key, auto member) {
    return Field{key, [member](const RunConfig &c) { return c.*member; },
                 [member](RunConfig &c, const std::string &v) { c.*member = v; }};
  };

  static const std::vector<Field> kFields = {
      {"seed", [](const RunConfig &c) { return std::to_string(c.seed); },
       [](RunConfig &c, const std::string &v) {
         c.seed = static_cast<uint64_t>(parse_int(v, "config key 'seed'"));
       }},
      int_field("workers", &RunConfig::workers),
      {"deterministic", [](const RunConfig &c) { return bool_str(c.deterministic); },
       [](RunConfig &c, const std::string &v) {
         c.deterministic = parse_bool(v, "deterministic");
       }},
      str_field("preset", &RunConfig::preset),

      Field{"features.frame_len_s",
            [](const RunConfig &c) { return format_double(c.features.frame_len_s); },
            [](RunConfig &c, const std::string &v) {
              c.features.frame_len_s = parse_double(v, "features.frame_len_s");
            }},
      Field{"features.frame_shift_s",
            [](const RunConfig &c) { return format_double(c.features.frame_shift_s); },
            [](RunConfig &c, const std::string &v) {
              c.features.frame_shift_s = parse_double(v, "features.frame_shift_s");
            }},
      Field{"features.num_mels",
            [](const RunConfig &c) { return std::to_string(c.features.num_mels); },
            [](RunConfig &c, const std::string &v) {
              c.features.num_mels = static_cast<int>(parse_int(v, "features.num_mels"));
            }},
      Field{"features.num_ceps",
            [](const RunConfig &c) { return std::to_string(c.features.num_ceps); },
            [](RunConfig &c, const std::string &v) {
              c.features.num_ceps = static_cast<int>(parse_int(v, "features.num_ceps"));
            }},
      Field{"features.low_hz",
            [](const RunConfig &c) { return format_double(c.features.low_hz); },
            [](RunConfig &c, const std::string &v) {
              c.features.low_hz = parse_double(v, "features.low_hz");
            }},
      Field{"features.high_hz",
            [](const RunConfig &c) { return format_double(c.features.high_hz); },
            [](RunConfig &c, const std::string &v) {
              c.features.high_hz = parse_double(v, "features.high_hz");
            }},
      Field{"features.preemphasis",
            [](const RunConfig &c) { return format_double(c.features.preemphasis); },
            [](RunConfig &c, const std::string &v) {
              c.features.preemphasis = parse_double(v, "features.preemphasis");
            }},
      Field{"features.vad_threshold",
            [](const RunConfig &c) { return format_double(c.features.vad_threshold); },
            [](RunConfig &c, const std::string &v) {
              c.features.vad_threshold = parse_double(v, "features.vad_threshold");
            }},
      Field{"features.vad_mean_scale",
            [](const RunConfig &c) { return format_double(c.features.vad_mean_scale); },
            [](RunConfig &c, const std::string &v) {
              c.features.vad_mean_scale = parse_double(v, "features.vad_mean_scale");
            }},
      Field{"features.channel",
            [](const RunConfig &c) { return std::to_string(c.features.channel); },
            [](RunConfig &c, const std::string &v) {
              c.features.channel = static_cast<int>(parse_int(v, "features.channel"));
            }},

      int_field("batch.size", &RunConfig::batch_size),
      int_field("batch.adv_n", &RunConfig::adv_n),
      dbl_field("batch.min_dur_s", &RunConfig::crop_min_dur_s),
      dbl_field("batch.max_dur_s", &RunConfig::crop_max_dur_s),

      dbl_field("trainer.lambda", &RunConfig::lambda),
      dbl_field("trainer.lr0", &RunConfig::lr0),
      dbl_field("trainer.momentum", &RunConfig::momentum),
      int_field("trainer.steps", &RunConfig::steps),
      int_field("trainer.phase2_steps", &RunConfig::phase2_steps),
      dbl_field("trainer.phase2_lr0", &RunConfig::phase2_lr0),
      dbl_field("trainer.dropout_peak", &RunConfig::dropout_peak),
      int_field("trainer.log_every", &RunConfig::log_every),
      int_field("trainer.checkpoint_every", &RunConfig::checkpoint_every),

      int_field("network.embedding_dim", &RunConfig::embedding_dim),
      int_field("network.attention_hidden", &RunConfig::attention_hidden),
      int_field("network.classifier_hidden", &RunConfig::classifier_hidden),
      int_field("network.pair_disc_hidden", &RunConfig::pair_disc_hidden),
      dbl_field("network.am_scale", &RunConfig::am_scale),
      dbl_field("network.am_margin", &RunConfig::am_margin),

      str_field("backend.kind", &RunConfig::backend),
      int_field("backend.plda_iters", &RunConfig::plda_iters),

      dbl_field("eval.min_dur_s", &RunConfig::trial_min_dur_s),
      int_field("eval.max_trials", &RunConfig::max_trials),
      dbl_field("eval.collar_s", &RunConfig::collar_s),
      dbl_field("eval.ahc_threshold", &RunConfig::ahc_threshold),
      int_field("eval.num_speakers", &RunConfig::num_speakers_stop),
      dbl_field("eval.subseg_win_s", &RunConfig::subseg_win_s),
      dbl_field("eval.subseg_hop_s", &RunConfig::subseg_hop_s),

      Field{"synth.n_speakers",
            [](const RunConfig &c) { return std::to_string(c.synth.n_speakers); },
            [](RunConfig &c, const std::string &v) {
              c.synth.n_speakers = static_cast<int>(parse_int(v, "synth.n_speakers"));
            }},
      Field{"synth.recordings_per_speaker",
            [](const RunConfig &c) {
              return std::to_string(c.synth.recordings_per_speaker);
            },
            [](RunConfig &c, const std::string &v) {
              c.synth.recordings_per_speaker =
                  static_cast<int>(parse_int(v, "synth.recordings_per_speaker"));
            }},
      Field{"synth.utterances_per_recording",
            [](const RunConfig &c) {
              return std::to_string(c.synth.utterances_per_recording);
            },
            [](RunConfig &c, const std::string &v) {
              c.synth.utterances_per_recording =
                  static_cast<int>(parse_int(v, "synth.utterances_per_recording"));
            }},
      Field{"synth.frames_per_utterance",
            [](const RunConfig &c) {
              return std::to_string(c.synth.frames_per_utterance);
            },
            [](RunConfig &c, const std::string &v) {
              c.synth.frames_per_utterance =
                  static_cast<int>(parse_int(v, "synth.frames_per_utterance"));
            }},
      Field{"synth.feature_dim",
            [](const RunConfig &c) { return std::to_string(c.synth.feature_dim); },
            [](RunConfig &c, const std::string &v) {
              c.synth.feature_dim = static_cast<int>(parse_int(v, "synth.feature_dim"));
            }},
      Field{"synth.speaker_scale",
            [](const RunConfig &c) { return format_double(c.synth.speaker_scale); },
            [](RunConfig &c, const std::string &v) {
              c.synth.speaker_scale = parse_double(v, "synth.speaker_scale");
            }},
      Field{"synth.channel_scale",
            [](const RunConfig &c) { return format_double(c.synth.channel_scale); },
            [](RunConfig &c, const std::string &v) {
              c.synth.channel_scale = parse_double(v, "synth.channel_scale");
            }},
      Field{"synth.noise_scale",
            [](const RunConfig &c) { return format_double(c.synth.noise_scale); },
            [](RunConfig &c, const std::string &v) {
              c.synth.noise_scale = parse_double(v, "synth.noise_scale");
            }},
      Field{"synth.n_datasets",
            [](const RunConfig &c) { return std::to_string(c.synth.n_datasets); },
            [](RunConfig &c, const std::string &v) {
              c.synth.n_datasets = static_cast<int>(parse_int(v, "synth.n_datasets"));
            }},

      Field{"probe.n_pairs",
            [](const RunConfig &c) { return std::to_string(c.probe.n_pairs); },
            [](RunConfig &c, const std::string &v) {
              c.probe.n_pairs = static_cast<size_t>(parse_int(v, "probe.n_pairs"));
            }},
      Field{"probe.hidden",
            [](const RunConfig &c) { return std::to_string(c.probe.hidden); },
            [](RunConfig &c, const std::string &v) {
              c.probe.hidden = static_cast<int>(parse_int(v, "probe.hidden"));
            }},
      Field{"probe.iterations",
            [](const RunConfig &c) { return std::to_string(c.probe.iterations); },
            [](RunConfig &c, const std::string &v) {
              c.probe.iterations = static_cast<int>(parse_int(v, "probe.iterations"));
            }},
      Field{"probe.lr",
            [](const RunConfig &c) { return format_double(c.probe.lr); },
            [](RunConfig &c, const std::string &v) {
              c.probe.lr = parse_double(v, "probe.lr");
            }},
  };
  return kFields;
}

const Field &find_field(const std::string &key) {
  for (const Field &f : fields())
    if (f.key == key) return f;
  throw Error("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string &key, const std::string &value) {
  find_field(key).set(*this, value);
}

std::string RunConfig::get(const std::string &key) const {
  return find_field(key).get(*this);
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const Field &f : fields()) out.push_back(f.key);
  return out;
}

void RunConfig::apply_preset(const std::string &name) {
  preset = name;
  if (name == "large") {
    // Paper defaults are the built-ins.
  } else if (name == "small") {
    embedding_dim = embedding_dim ? embedding_dim : 128;
    attention_hidden = attention_hidden ? attention_hidden : 64;
  } else if (name == "tiny") {
    embedding_dim = embedding_dim ? embedding_dim : 32;
    attention_hidden = attention_hidden ? attention_hidden : 16;
    classifier_hidden = classifier_hidden ? classifier_hidden : 64;
    pair_disc_hidden = pair_disc_hidden ? pair_disc_hidden : 128;
  } else {
    throw Error("unknown preset '" + name + "' (expected large, small or tiny)");
  }
}

void RunConfig::load_file(const std::string &path) {
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string line = lines[i];
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(path + " line " + std::to_string(i + 1) +
                  ": expected 'key = value'");
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (key == "preset") {
      preset = value;
      continue;  // applied up front via peek_preset
    }
    try {
      set(key, value);
    } catch (const Error &e) {
      throw Error(path + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
}

void RunConfig::apply_env() {
  for (const Field &f : fields()) {
    std::string env_name = "CADV_";
    for (char c : f.key)
      env_name += c == '.' ? '_' : static_cast<char>(std::toupper(c));
    const char *v = std::getenv(env_name.c_str());
    if (v) f.set(*this, v);
  }
}

std::string RunConfig::print() const {
  std::string out;
  for (const Field &f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += '\n';
  }
  return out;
}

ArchConfig RunConfig::arch(int input_dim, int num_classes) const {
  ArchConfig a;
  if (preset == "small")
    a = ArchConfig::small(input_dim, num_classes);
  else if (preset == "tiny")
    a = ArchConfig::tiny(input_dim, num_classes);
  else
    a = ArchConfig::large(input_dim, num_classes);
  if (embedding_dim > 0) a.embedding_dim = embedding_dim;
  if (attention_hidden > 0) a.attention_hidden = attention_hidden;
  if (classifier_hidden > 0) a.classifier_hidden = classifier_hidden;
  if (pair_disc_hidden > 0) {
    a.pair_disc_hidden = pair_disc_hidden;
    a.ds_disc_hidden = pair_disc_hidden;
  }
  a.am_scale = am_scale;
  a.am_margin = am_margin;
  return a;
}

BatchSpec RunConfig::batch_spec(bool adversarial) const {
  BatchSpec spec;
  spec.n = adversarial ? (adv_n > 0 ? adv_n : std::max(1, batch_size / 3)) : batch_size;
  spec.min_dur_s = crop_min_dur_s;
  spec.max_dur_s = crop_max_dur_s;
  spec.frame_shift_s = features.frame_shift_s;
  return spec;
}

TrainerConfig RunConfig::trainer_config(TrainMode mode) const {
  TrainerConfig cfg;
  cfg.mode = mode;
  cfg.lambda = lambda;
  cfg.momentum = momentum;
  cfg.dropout_peak = dropout_peak;
  cfg.seed = seed;
  cfg.log_every = log_every;
  cfg.checkpoint_every = checkpoint_every;
  bool phase2 = mode != TrainMode::kBaseline;
  if (phase2) {
    cfg.total_steps = phase2_steps > 0 ? phase2_steps : std::max<int64_t>(1, steps / 5);
    cfg.lr0 = phase2_lr0 > 0 ? phase2_lr0 : lr0 / 16.0;
  } else {
    cfg.total_steps = steps;
    cfg.lr0 = lr0;
  }
  bool triplet_batches =
      mode == TrainMode::kChannelAdversarial || mode == TrainMode::kDataTuned;
  cfg.batch = batch_spec(triplet_batches);
  return cfg;
}

std::string peek_preset(const std::string &config_path,
                        const std::string &flag_preset) {
  if (!flag_preset.empty()) return flag_preset;
  if (!config_path.empty()) {
    for (const std::string &raw : read_lines(config_path)) {
      std::string line = raw.substr(0, raw.find('#'));
      size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      if (trim(line.substr(0, eq)) == "preset") return trim(line.substr(eq + 1));
    }
  }
  return "large";
}

}  // namespace cadv
