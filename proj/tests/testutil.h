// tests/testutil.h

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

#ifndef CADV_TESTS_TESTUTIL_H_
#define CADV_TESTS_TESTUTIL_H_

#include <filesystem>
#include <string>

#include "cadv/common.h"
#include "cadv/corpus.h"

namespace cadv::test {

// Temp directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string &tag) {
    base_ = std::filesystem::temp_directory_path() /
            ("cadv_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(base_);
    std::filesystem::create_directories(base_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(base_, ec);
  }
  std::string path(const std::string &name = "") const {
    return name.empty() ? base_.string() : (base_ / name).string();
  }

 private:
  std::filesystem::path base_;
};

inline UtteranceRecord make_utt(const std::string &utt, const std::string &spk,
                                const std::string &rec, double dur_s = 3.0,
                                const std::string &path = "unused",
                                const std::string &dataset = "") {
  UtteranceRecord r;
  r.utt_id = utt;
  r.speaker_id = spk;
  r.recording_id = rec;
  r.path = path;
  r.start_s = 0.0;
  r.end_s = dur_s;
  r.sample_rate = 16000;
  r.dataset = dataset;
  return r;
}

template <typename R>
Mat<R> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng &rng,
                     double scale = 1.0) {
  Mat<R> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<R>(rng.normal() * scale);
  return m;
}

template <typename R>
Vec<R> random_vector(Eigen::Index n, Rng &rng, double scale = 1.0) {
  Vec<R> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<R>(rng.normal() * scale);
  return v;
}

}  // namespace cadv::test

#endif  // CADV_TESTS_TESTUTIL_H_
