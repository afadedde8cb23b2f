// cadv/gradcheck.h

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
// Central finite-difference checking of analytic gradients, in 64-bit.

#ifndef CADV_GRADCHECK_H_
#define CADV_GRADCHECK_H_

#include <functional>
#include <string>

#include "cadv/network.h"

namespace cadv {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int entries_checked = 0;
};

// rel_err = |a - n| / max(1, |a|, |n|); a loss scale of O(1) is assumed.
inline double grad_rel_err(double analytic, double numeric) {
  double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

template <typename GetSet>
void check_entry(const std::function<double()> &loss_fn, GetSet getset,
                 double analytic, double h, const std::string &name,
                 GradCheckReport *report) {
  double saved = getset(0.0, false);
  getset(saved + h, true);
  double up = loss_fn();
  getset(saved - h, true);
  double down = loss_fn();
  getset(saved, true);
  double numeric = (up - down) / (2.0 * h);
  double err = grad_rel_err(analytic, numeric);
  if (err > report->max_rel_err) {
    report->max_rel_err = err;
    report->worst_tensor = name;
  }
  ++report->entries_checked;
}

}  // namespace detail

// Compares the analytic gradients in `analytic` against central finite
// differences of loss_fn, which must recompute the loss from *params. At
// most max_entries_per_tensor entries are sampled per tensor (all entries
// when a tensor is smaller than that).
inline GradCheckReport check_param_gradients(
    ModelParams<double> *params, const ModelParams<double> &analytic,
    const std::function<double()> &loss_fn, double h = 1e-4,
    int max_entries_per_tensor = 64, uint64_t seed = 12345) {
  GradCheckReport report;
  auto prefs = collect_param_tensors(*params);
  auto arefs = collect_param_tensors(const_cast<ModelParams<double> &>(analytic));
  Rng rng(seed);
  for (size_t t = 0; t < prefs.size(); ++t) {
    Eigen::Index n = prefs[t].mat ? prefs[t].mat->size() : prefs[t].vec->size();
    if (n == 0) continue;
    std::vector<Eigen::Index> idx;
    if (n <= max_entries_per_tensor) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (int i = 0; i < max_entries_per_tensor; ++i)
        idx.push_back(static_cast<Eigen::Index>(rng.uniform_int(n)));
    }
    for (Eigen::Index i : idx) {
      double *p = prefs[t].mat ? prefs[t].mat->data() + i : prefs[t].vec->data() + i;
      const double *a = arefs[t].mat ? arefs[t].mat->data() + i : arefs[t].vec->data() + i;
      auto getset = [p](double v, bool set) {
        double old = *p;
        if (set) *p = v;
        return old;
      };
      detail::check_entry(loss_fn, getset, *a, h, prefs[t].name, &report);
    }
  }
  return report;
}

// Finite-difference check of a gradient with respect to an input matrix.
inline GradCheckReport check_input_gradient(Mat<double> *input,
                                            const Mat<double> &analytic,
                                            const std::function<double()> &loss_fn,
                                            double h = 1e-4,
                                            int max_entries = 128,
                                            uint64_t seed = 54321) {
  GradCheckReport report;
  Eigen::Index n = input->size();
  Rng rng(seed);
  std::vector<Eigen::Index> idx;
  if (n <= max_entries) {
    for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (int i = 0; i < max_entries; ++i)
      idx.push_back(static_cast<Eigen::Index>(rng.uniform_int(n)));
  }
  for (Eigen::Index i : idx) {
    double *p = input->data() + i;
    auto getset = [p](double v, bool set) {
      double old = *p;
      if (set) *p = v;
      return old;
    };
    detail::check_entry(loss_fn, getset, analytic.data()[i], h, "input", &report);
  }
  return report;
}

}  // namespace cadv

#endif  // CADV_GRADCHECK_H_
