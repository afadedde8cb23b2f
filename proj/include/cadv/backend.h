// cadv/backend.h

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

#ifndef CADV_BACKEND_H_
#define CADV_BACKEND_H_

#include <string>
#include <vector>

#include "cadv/common.h"

namespace cadv {

// e / ||e||_2. Throws on (near-)zero vectors.
Vecd length_normalize(const Vecd &e);
Vecf length_normalize(const Vecf &e);

// a.b / (||a|| ||b||), in [-1, 1].
double cosine_score(const Vecd &a, const Vecd &b);
double cosine_score(const Vecf &a, const Vecf &b);

// Two-covariance PLDA: x = mu + y + eps with y ~ N(0, Sigma_b) per speaker
// and eps ~ N(0, Sigma_w) per example.
struct PldaModel {
  Vecd mu;
  Matd sigma_b;
  Matd sigma_w;

  int dim() const { return static_cast<int>(mu.size()); }
};

// Precomputed scoring state for a model.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel &model);
  // log p(a,b | same speaker) - log p(a,b | different speakers).
  double score(const Vecd &a, const Vecd &b) const;
  double score(const Vecf &a, const Vecf &b) const;

 private:
  Vecd mu_;
  Matd q_;       // 0.5 * (T^-1 - F)
  Matd g_;       // cross term
  double const_ = 0.0;
};

struct PldaTrainReport {
  std::vector<double> log_likelihoods;  // one per EM iteration, after the M-step
};

// EM for the two-covariance model. embeddings: one row per example;
// speaker_ids: parallel labels. Requires >= 2 speakers and at least one
// speaker with >= 2 examples.
PldaModel plda_train(const Matd &embeddings,
                     const std::vector<std::string> &speaker_ids, int iterations,
                     PldaTrainReport *report = nullptr);

// Marginal log-likelihood of the data under the model (for the EM audit).
double plda_log_likelihood(const PldaModel &model, const Matd &embeddings,
                           const std::vector<std::string> &speaker_ids);

void save_plda(const std::string &path, const PldaModel &model);
PldaModel load_plda(const std::string &path);

}  // namespace cadv

#endif  // CADV_BACKEND_H_
