// src/network.cc

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

#include "cadv/network.h"

#include <algorithm>
#include <map>
#include <set>

namespace cadv {

ArchConfig ArchConfig::large(int input_dim, int num_classes) {
  ArchConfig a;
  a.input_dim = input_dim;
  a.num_classes = num_classes;
  return a;
}

ArchConfig ArchConfig::small(int input_dim, int num_classes) {
  ArchConfig a;
  a.input_dim = input_dim;
  a.num_classes = num_classes;
  a.attention_hidden = 64;
  a.embedding_dim = 128;
  return a;
}

ArchConfig ArchConfig::tiny(int input_dim, int num_classes) {
  ArchConfig a;
  a.input_dim = input_dim;
  a.num_classes = num_classes;
  a.tdnn_contexts = {{-2, -1, 0, 1, 2}, {-3, 0, 3}};
  a.tdnn_widths = {64, 128};
  a.attention_hidden = 16;
  a.embedding_dim = 32;
  a.classifier_hidden = 64;
  a.pair_disc_hidden = 512;
  a.ds_disc_hidden = 512;
  return a;
}

int ArchConfig::receptive_field() const {
  int span = 1;
  for (const auto &ctx : tdnn_contexts) span += ctx.back() - ctx.front();
  return span;
}

void ArchConfig::validate() const {
  if (input_dim < 1) throw Error("arch: input_dim must be positive");
  if (tdnn_contexts.size() != tdnn_widths.size() || tdnn_contexts.empty())
    throw Error("arch: tdnn_contexts and tdnn_widths must be non-empty and equal length");
  for (const auto &ctx : tdnn_contexts) {
    if (ctx.empty()) throw Error("arch: empty tdnn context");
    if (!std::is_sorted(ctx.begin(), ctx.end()))
      throw Error("arch: tdnn context offsets must be sorted");
    if (std::set<int>(ctx.begin(), ctx.end()).size() != ctx.size())
      throw Error("arch: duplicate tdnn context offsets");
  }
  for (int w : tdnn_widths)
    if (w < 1) throw Error("arch: tdnn width must be positive");
  if (attention_hidden < 1 || embedding_dim < 1 || classifier_hidden < 1)
    throw Error("arch: hidden sizes must be positive");
  if (num_classes < 1) throw Error("arch: num_classes must be positive");
}

namespace {

std::string join_ints(const std::vector<int> &v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> split_ints(const std::string &s, const std::string &what) {
  std::vector<int> out;
  for (const std::string &tok : split(s, ','))
    out.push_back(static_cast<int>(parse_int(tok, what)));
  return out;
}

}  // namespace

KvPairs ArchConfig::to_kv() const {
  KvPairs kv;
  kv.emplace_back("input_dim", std::to_string(input_dim));
  kv.emplace_back("num_layers", std::to_string(tdnn_widths.size()));
  for (size_t i = 0; i < tdnn_widths.size(); ++i) {
    kv.emplace_back("tdnn" + std::to_string(i) + ".context", join_ints(tdnn_contexts[i]));
    kv.emplace_back("tdnn" + std::to_string(i) + ".width", std::to_string(tdnn_widths[i]));
  }
  kv.emplace_back("attention_hidden", std::to_string(attention_hidden));
  kv.emplace_back("embedding_dim", std::to_string(embedding_dim));
  kv.emplace_back("classifier_hidden", std::to_string(classifier_hidden));
  kv.emplace_back("num_classes", std::to_string(num_classes));
  kv.emplace_back("pair_disc_hidden", std::to_string(pair_disc_hidden));
  kv.emplace_back("ds_disc_hidden", std::to_string(ds_disc_hidden));
  kv.emplace_back("num_datasets", std::to_string(num_datasets));
  kv.emplace_back("leaky_slope", format_double(leaky_slope));
  kv.emplace_back("bn_eps", format_double(bn_eps));
  kv.emplace_back("bn_momentum", format_double(bn_momentum));
  kv.emplace_back("am_scale", format_double(am_scale));
  kv.emplace_back("am_margin", format_double(am_margin));
  return kv;
}

ArchConfig ArchConfig::from_kv(const KvPairs &kv) {
  ArchConfig a;
  a.tdnn_contexts.clear();
  a.tdnn_widths.clear();
  size_t num_layers = 0;
  for (const auto &[key, value] : kv) {
    if (key == "num_layers") num_layers = static_cast<size_t>(parse_int(value, key));
  }
  if (num_layers == 0) throw Error("arch descriptor: missing num_layers");
  a.tdnn_contexts.resize(num_layers);
  a.tdnn_widths.resize(num_layers, 0);
  for (const auto &[key, value] : kv) {
    if (key == "input_dim") a.input_dim = static_cast<int>(parse_int(value, key));
    else if (key == "num_layers") continue;
    else if (starts_with(key, "tdnn")) {
      size_t dot = key.find('.');
      if (dot == std::string::npos) throw Error("arch descriptor: bad key " + key);
      size_t idx = static_cast<size_t>(parse_int(key.substr(4, dot - 4), key));
      if (idx >= num_layers) throw Error("arch descriptor: layer index out of range in " + key);
      std::string field = key.substr(dot + 1);
      if (field == "context") a.tdnn_contexts[idx] = split_ints(value, key);
      else if (field == "width") a.tdnn_widths[idx] = static_cast<int>(parse_int(value, key));
      else throw Error("arch descriptor: unknown key " + key);
    }
    else if (key == "attention_hidden") a.attention_hidden = static_cast<int>(parse_int(value, key));
    else if (key == "embedding_dim") a.embedding_dim = static_cast<int>(parse_int(value, key));
    else if (key == "classifier_hidden") a.classifier_hidden = static_cast<int>(parse_int(value, key));
    else if (key == "num_classes") a.num_classes = static_cast<int>(parse_int(value, key));
    else if (key == "pair_disc_hidden") a.pair_disc_hidden = static_cast<int>(parse_int(value, key));
    else if (key == "ds_disc_hidden") a.ds_disc_hidden = static_cast<int>(parse_int(value, key));
    else if (key == "num_datasets") a.num_datasets = static_cast<int>(parse_int(value, key));
    else if (key == "leaky_slope") a.leaky_slope = parse_double(value, key);
    else if (key == "bn_eps") a.bn_eps = parse_double(value, key);
    else if (key == "bn_momentum") a.bn_momentum = parse_double(value, key);
    else if (key == "am_scale") a.am_scale = parse_double(value, key);
    else if (key == "am_margin") a.am_margin = parse_double(value, key);
    else throw Error("arch descriptor: unknown key " + key);
  }
  a.validate();
  return a;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr const char *kArchPrefix = "arch.";

}  // namespace

void save_checkpoint(const std::string &path, const Model<float> &model,
                     const KvPairs &extra_kv,
                     const std::vector<NamedTensor> &extra_tensors) {
  TensorFile tf;
  std::string desc;
  for (const auto &[k, v] : model.arch.to_kv())
    desc += std::string(kArchPrefix) + k + ":" + v + "\n";
  for (const auto &[k, v] : extra_kv) desc += k + ":" + v + "\n";
  tf.descriptor = desc;

  auto &params = const_cast<ModelParams<float> &>(model.params);
  for (const auto &ref : collect_param_tensors(params)) {
    if (ref.mat)
      tf.tensors.push_back(tensor_from_matrix(ref.name, *ref.mat));
    else
      tf.tensors.push_back(tensor_from_vector(ref.name, *ref.vec));
  }
  auto &running = const_cast<RunningStats<float> &>(model.running);
  for (const auto &ref : collect_running_tensors(running))
    tf.tensors.push_back(tensor_from_vector(ref.name, *ref.vec));
  for (const auto &t : extra_tensors) tf.tensors.push_back(t);
  save_tensor_file(path, tf);
}

Model<float> load_checkpoint(const std::string &path, KvPairs *extra_kv,
                             std::vector<NamedTensor> *leftover) {
  TensorFile tf = load_tensor_file(path);
  KvPairs arch_kv, other_kv;
  for (const std::string &line : split(tf.descriptor, '\n')) {
    if (line.empty()) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos)
      throw Error(path + ": malformed descriptor line '" + line + "'");
    std::string key = line.substr(0, colon), value = line.substr(colon + 1);
    if (starts_with(key, kArchPrefix))
      arch_kv.emplace_back(key.substr(std::string(kArchPrefix).size()), value);
    else
      other_kv.emplace_back(key, value);
  }
  Model<float> model;
  model.arch = ArchConfig::from_kv(arch_kv);
  model.params = allocate_params<float>(model.arch);
  model.running = allocate_running<float>(model.arch);

  std::map<std::string, TensorRef<float>> by_name;
  for (const auto &ref : collect_param_tensors(model.params)) by_name[ref.name] = ref;
  for (const auto &ref : collect_running_tensors(model.running)) by_name[ref.name] = ref;

  std::set<std::string> filled;
  for (const auto &t : tf.tensors) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) {
      if (leftover) leftover->push_back(t);
      continue;
    }
    if (it->second.mat) {
      Matf m = matrix_from_tensor(t);
      if (m.rows() != it->second.mat->rows() || m.cols() != it->second.mat->cols())
        throw Error(path + ": tensor '" + t.name + "' has unexpected shape");
      *it->second.mat = m;
    } else {
      Vecf v = vector_from_tensor(t);
      if (v.size() != it->second.vec->size())
        throw Error(path + ": tensor '" + t.name + "' has unexpected shape");
      *it->second.vec = v;
    }
    filled.insert(t.name);
  }
  for (const auto &[name, ref] : by_name) {
    // Discriminators may be absent from phase-1 checkpoints; they are
    // re-initialized by the trainer before use.
    if (!filled.count(name) && !starts_with(name, "disc.") &&
        !starts_with(name, "dsdisc."))
      throw Error(path + ": missing tensor '" + name + "'");
  }
  if (extra_kv) *extra_kv = other_kv;
  return model;
}

}  // namespace cadv
