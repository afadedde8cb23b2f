// src/backend.cc

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

#include "cadv/backend.h"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>

#include "cadv/io.h"

namespace cadv {

namespace {
constexpr double kNormFloor = 1e-30;
constexpr double kEigFloor = 1e-8;

// Clamps eigenvalues from below; keeps the matrix symmetric.
Matd floor_spd(const Matd &m, double floor) {
  Matd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matd> es(sym);
  Vecd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double logdet_spd(const Matd &m, const std::string &what) {
  Eigen::LLT<Matd> llt(m);
  if (llt.info() != Eigen::Success)
    throw Error("matrix not positive definite in " + what);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

Vecd length_normalize(const Vecd &e) {
  double n = e.norm();
  if (n < kNormFloor) throw Error("length_normalize: zero vector");
  return e / n;
}

Vecf length_normalize(const Vecf &e) {
  return length_normalize(Vecd(e.cast<double>())).cast<float>();
}

double cosine_score(const Vecd &a, const Vecd &b) {
  double na = a.norm(), nb = b.norm();
  if (na < kNormFloor || nb < kNormFloor)
    throw Error("cosine_score: zero vector");
  return a.dot(b) / (na * nb);
}

double cosine_score(const Vecf &a, const Vecf &b) {
  return cosine_score(Vecd(a.cast<double>()), Vecd(b.cast<double>()));
}

PldaScorer::PldaScorer(const PldaModel &model) : mu_(model.mu) {
  const int d = model.dim();
  Matd total = model.sigma_b + model.sigma_w;  // T
  Eigen::LDLT<Matd> total_ldlt(total);
  if (total_ldlt.info() != Eigen::Success)
    throw Error("PldaScorer: total covariance not factorizable");
  Matd t_inv = total_ldlt.solve(Matd::Identity(d, d));
  // Joint covariance of a same-speaker pair is [[T, B], [B, T]]; its inverse
  // has block F on the diagonal and G off it.
  Matd schur = total - model.sigma_b * t_inv * model.sigma_b;
  Eigen::LDLT<Matd> schur_ldlt(schur);
  if (schur_ldlt.info() != Eigen::Success)
    throw Error("PldaScorer: degenerate same-speaker covariance");
  Matd f = schur_ldlt.solve(Matd::Identity(d, d));
  Matd g = -t_inv * model.sigma_b * f;
  q_ = 0.5 * (t_inv - f);
  g_ = g;
  const_ = 0.5 * (logdet_spd(total, "PldaScorer") - logdet_spd(schur, "PldaScorer"));
  // Symmetrize against round-off.
  q_ = 0.5 * (q_ + q_.transpose());
  g_ = 0.5 * (g_ + g_.transpose());
}

double PldaScorer::score(const Vecd &a, const Vecd &b) const {
  if (a.size() != mu_.size() || b.size() != mu_.size())
    throw Error("plda_score: dimension mismatch");
  Vecd ac = a - mu_, bc = b - mu_;
  return ac.dot(q_ * ac) + bc.dot(q_ * bc) - ac.dot(g_ * bc) + const_;
}

double PldaScorer::score(const Vecf &a, const Vecf &b) const {
  return score(Vecd(a.cast<double>()), Vecd(b.cast<double>()));
}

namespace {

std::map<std::string, std::vector<int>> group_by_speaker(
    const std::vector<std::string> &speaker_ids) {
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < speaker_ids.size(); ++i)
    groups[speaker_ids[i]].push_back(static_cast<int>(i));
  return groups;
}

}  // namespace

PldaModel plda_train(const Matd &embeddings,
                     const std::vector<std::string> &speaker_ids, int iterations,
                     PldaTrainReport *report) {
  const int n_total = static_cast<int>(embeddings.rows());
  const int d = static_cast<int>(embeddings.cols());
  if (static_cast<size_t>(n_total) != speaker_ids.size())
    throw Error("plda_train: embeddings/labels size mismatch");
  auto groups = group_by_speaker(speaker_ids);
  if (groups.size() < 2) throw Error("plda_train: need >= 2 speakers");
  bool any_multi = false;
  for (const auto &[spk, idx] : groups) any_multi |= idx.size() >= 2;
  if (!any_multi)
    throw Error("plda_train: need some speaker with >= 2 embeddings");
  if (iterations < 1) throw Error("plda_train: iterations must be >= 1");

  PldaModel model;
  model.mu = embeddings.colwise().mean().transpose();

  // Moment-based start: between = scatter of speaker means, within = residual.
  Matd between = Matd::Zero(d, d), within = Matd::Zero(d, d);
  for (const auto &[spk, idx] : groups) {
    Vecd mean = Vecd::Zero(d);
    for (int i : idx) mean += embeddings.row(i).transpose();
    mean /= static_cast<double>(idx.size());
    Vecd dm = mean - model.mu;
    between += dm * dm.transpose();
    for (int i : idx) {
      Vecd r = embeddings.row(i).transpose() - mean;
      within += r * r.transpose();
    }
  }
  model.sigma_b = floor_spd(between / static_cast<double>(groups.size()), kEigFloor);
  model.sigma_w = floor_spd(
      within / std::max(1.0, static_cast<double>(n_total - groups.size())), kEigFloor);

  for (int iter = 0; iter < iterations; ++iter) {
    Eigen::LDLT<Matd> w_ldlt(model.sigma_w);
    Eigen::LDLT<Matd> b_ldlt(model.sigma_b);
    if (w_ldlt.info() != Eigen::Success || b_ldlt.info() != Eigen::Success)
      throw Error("plda_train: covariance became non-PD (degenerate data?)");
    Matd w_inv = w_ldlt.solve(Matd::Identity(d, d));
    Matd b_inv = b_ldlt.solve(Matd::Identity(d, d));

    // E-step: posterior of each speaker variable y under the old parameters.
    std::vector<Vecd> post_means;
    std::vector<Matd> post_covs;
    std::vector<const std::vector<int> *> group_idx;
    Matd sum_b = Matd::Zero(d, d);
    Vecd sum_mu = Vecd::Zero(d);
    for (const auto &[spk, idx] : groups) {
      const double n = static_cast<double>(idx.size());
      Vecd sum_x = Vecd::Zero(d);
      for (int i : idx) sum_x += embeddings.row(i).transpose();
      Matd precision = b_inv + n * w_inv;
      Eigen::LDLT<Matd> p_ldlt(precision);
      Matd post_cov = p_ldlt.solve(Matd::Identity(d, d));
      Vecd post_mean = p_ldlt.solve(w_inv * (sum_x - n * model.mu));
      sum_b += post_mean * post_mean.transpose() + post_cov;
      sum_mu += sum_x - n * post_mean;
      post_means.push_back(std::move(post_mean));
      post_covs.push_back(std::move(post_cov));
      group_idx.push_back(&idx);
    }

    // M-step: mu first, then Sigma_w with the updated mu.
    model.mu = sum_mu / static_cast<double>(n_total);
    Matd sum_w = Matd::Zero(d, d);
    for (size_t g = 0; g < group_idx.size(); ++g) {
      for (int i : *group_idx[g]) {
        Vecd r = embeddings.row(i).transpose() - model.mu - post_means[g];
        sum_w += r * r.transpose();
      }
      sum_w += static_cast<double>(group_idx[g]->size()) * post_covs[g];
    }
    model.sigma_b = floor_spd(sum_b / static_cast<double>(groups.size()), kEigFloor);
    model.sigma_w = floor_spd(sum_w / static_cast<double>(n_total), kEigFloor);

    if (report)
      report->log_likelihoods.push_back(
          plda_log_likelihood(model, embeddings, speaker_ids));
  }
  return model;
}

double plda_log_likelihood(const PldaModel &model, const Matd &embeddings,
                           const std::vector<std::string> &speaker_ids) {
  const int d = model.dim();
  auto groups = group_by_speaker(speaker_ids);
  Eigen::LDLT<Matd> w_ldlt(model.sigma_w);
  if (w_ldlt.info() != Eigen::Success)
    throw Error("plda_log_likelihood: Sigma_w not factorizable");
  double ld_w = logdet_spd(model.sigma_w, "plda_log_likelihood");
  double ll = 0.0;
  const double log2pi = std::log(2.0 * M_PI);
  for (const auto &[spk, idx] : groups) {
    const double n = static_cast<double>(idx.size());
    Vecd mean = Vecd::Zero(d);
    for (int i : idx) mean += embeddings.row(i).transpose();
    mean /= n;
    // Orthonormal split: the scaled mean carries N(sqrt(n) mu, n Sigma_b +
    // Sigma_w); the n-1 within-speaker deviation directions carry Sigma_w.
    Matd mean_cov = n * model.sigma_b + model.sigma_w;
    Eigen::LDLT<Matd> m_ldlt(mean_cov);
    if (m_ldlt.info() != Eigen::Success)
      throw Error("plda_log_likelihood: mean covariance not factorizable");
    Vecd u = std::sqrt(n) * (mean - model.mu);
    double ld_m = logdet_spd(mean_cov, "plda_log_likelihood");
    ll += -0.5 * (d * log2pi + ld_m + u.dot(m_ldlt.solve(u)));
    double dev_quad = 0.0;
    for (int i : idx) {
      Vecd r = embeddings.row(i).transpose() - mean;
      dev_quad += r.dot(w_ldlt.solve(r));
    }
    ll += -0.5 * ((n - 1) * (d * log2pi + ld_w) + dev_quad);
  }
  return ll;
}

void save_plda(const std::string &path, const PldaModel &model) {
  TensorFile tf;
  tf.descriptor = "kind:plda\n";
  tf.tensors.push_back(tensor_from_vector("mu", model.mu.cast<float>()));
  tf.tensors.push_back(tensor_from_matrix("sigma_b", model.sigma_b.cast<float>()));
  tf.tensors.push_back(tensor_from_matrix("sigma_w", model.sigma_w.cast<float>()));
  save_tensor_file(path, tf);
}

PldaModel load_plda(const std::string &path) {
  TensorFile tf = load_tensor_file(path);
  const NamedTensor *mu = tf.find("mu");
  const NamedTensor *sb = tf.find("sigma_b");
  const NamedTensor *sw = tf.find("sigma_w");
  if (!mu || !sb || !sw) throw Error(path + ": not a PLDA model file");
  PldaModel model;
  model.mu = vector_from_tensor(*mu).cast<double>();
  model.sigma_b = matrix_from_tensor(*sb).cast<double>();
  model.sigma_w = matrix_from_tensor(*sw).cast<double>();
  return model;
}

}  // namespace cadv
