// cadv/common.h

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

#ifndef CADV_COMMON_H_
#define CADV_COMMON_H_

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cadv {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

using Matf = Mat<float>;
using Vecf = Vec<float>;
using Matd = Mat<double>;
using Vecd = Vec<double>;

uint64_t mix_seed(uint64_t seed, uint64_t stream);

// All randomness in the toolkit flows through this generator. The raw engine
// is std::mt19937_64 (its output sequence is pinned by the standard); the
// derived draws below avoid std::*_distribution so that results are
// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
    int64_t v = static_cast<int64_t>(uniform() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  // Standard normal via Box-Muller.
  double normal();

  // Independent child stream; deterministic in (parent seed, stream id).
  Rng fork(uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

  template <typename T>
  void shuffle(std::vector<T> &v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---- worker pool ---------------------------------------------------------

// Global worker count used by parallel_for; 1 = fully serial.
void set_num_workers(int n);
int num_workers();

// Runs fn(i) for i in [0, n). Items must be independent; each writes only its
// own output slot, so the result does not depend on the worker count.
void parallel_for(size_t n, const std::function<void(size_t)> &fn);

// ---- key:value structured-text lines -------------------------------------

using KvPairs = std::vector<std::pair<std::string, std::string>>;

// Splits "k1:v1 k2:v2 ..." on whitespace; each token is split at the first
// ':'. Throws Error on a token without ':'.
KvPairs parse_kv_line(const std::string &line);
std::string format_kv_line(const KvPairs &kv);

// Shortest round-trip decimal formatting (std::to_chars).
std::string format_double(double v);
double parse_double(const std::string &s, const std::string &what);
int64_t parse_int(const std::string &s, const std::string &what);

std::vector<std::string> split(const std::string &s, char sep);
bool starts_with(const std::string &s, const std::string &prefix);

}  // namespace cadv

#endif  // CADV_COMMON_H_
