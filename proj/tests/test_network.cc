// tests/test_network.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "cadv/gradcheck.h"
#include "cadv/network.h"
#include "cadv/trainer.h"
#include "doctest.h"
#include "testutil.h"

using namespace cadv;
using cadv::test::random_matrix;
using cadv::test::random_vector;

namespace {

ArchConfig check_arch(int num_classes = 3) {
  ArchConfig a = ArchConfig::tiny(7, num_classes);
  a.tdnn_contexts = {{-1, 0, 1}, {-2, 0, 2}};
  a.tdnn_widths = {6, 8};
  a.attention_hidden = 5;
  a.embedding_dim = 4;
  a.classifier_hidden = 6;
  a.pair_disc_hidden = 6;
  a.ds_disc_hidden = 6;
  a.num_datasets = 3;
  return a;
}

// Perturbs random inputs away from the leaky-ReLU kink so central differences
// stay on one side of it.
template <typename R>
void nudge_from_kink(Mat<R> &m, R margin) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) < margin) m(i, j) += 2 * margin;
}

}  // namespace

TEST_CASE("tdnn: single-frame context keeps T and matches a per-frame map") {
  Rng rng(7);
  ArchConfig arch = check_arch();
  arch.tdnn_contexts = {{0}};
  arch.tdnn_widths = {5};
  TdnnLayerParams<double> layer;
  layer.aff.W = random_matrix<double>(5, 3, rng, 0.5);
  layer.aff.b = random_vector<double>(5, rng, 0.1);
  layer.bn.gamma = Vec<double>::Ones(5);
  layer.bn.beta = Vec<double>::Zero(5);
  BnStats<double> running{Vec<double>::Zero(5), Vec<double>::Ones(5)};
  Mat<double> x = random_matrix<double>(9, 3, rng);

  Mat<double> y = tdnn_layer_forward<double>(layer, arch.tdnn_contexts[0], x, arch,
                                             NetMode::kEval, running, nullptr, 0.0,
                                             nullptr, nullptr);
  CHECK(y.rows() == 9);
  // Eval-mode with unit running stats: y = lrelu(Wx + b) / sqrt(1 + eps).
  double inv = 1.0 / std::sqrt(1.0 + arch.bn_eps);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Vec<double> pre = layer.aff.W * x.row(t).transpose() + layer.aff.b;
    for (Eigen::Index j = 0; j < 5; ++j) {
      double act = pre(j) > 0 ? pre(j) : arch.leaky_slope * pre(j);
      CHECK(y(t, j) == doctest::Approx(act * inv).epsilon(1e-12));
    }
  }
}

TEST_CASE("tdnn: context {-2..2} shortens T=10 to T'=6") {
  Rng rng(3);
  ArchConfig arch = check_arch();
  std::vector<int> ctx = {-2, -1, 0, 1, 2};
  TdnnLayerParams<double> layer;
  layer.aff.W = random_matrix<double>(4, 5 * 3, rng, 0.3);
  layer.aff.b = Vec<double>::Zero(4);
  layer.bn.gamma = Vec<double>::Ones(4);
  layer.bn.beta = Vec<double>::Zero(4);
  BnStats<double> running{Vec<double>::Zero(4), Vec<double>::Ones(4)};
  Mat<double> x = random_matrix<double>(10, 3, rng);
  Mat<double> y = tdnn_layer_forward<double>(layer, ctx, x, arch, NetMode::kEval,
                                             running, nullptr, 0.0, nullptr, nullptr);
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 4);
  CHECK_THROWS_AS(
      tdnn_layer_forward<double>(layer, ctx, Mat<double>(random_matrix<double>(4, 3, rng)),
                                 arch, NetMode::kEval, running, nullptr, 0.0, nullptr,
                                 nullptr),
      Error);
}

TEST_CASE("tdnn: train-mode forward equals a naive per-frame loop oracle") {
  Rng rng(11);
  ArchConfig arch = check_arch();
  std::vector<int> ctx = {-1, 0, 2};
  const int f_in = 3, f_out = 4, t_in = 12;
  TdnnLayerParams<double> layer;
  layer.aff.W = random_matrix<double>(f_out, 3 * f_in, rng, 0.4);
  layer.aff.b = random_vector<double>(f_out, rng, 0.2);
  layer.bn.gamma = random_vector<double>(f_out, rng, 0.3);
  layer.bn.beta = random_vector<double>(f_out, rng, 0.2);
  layer.bn.gamma.array() += 1.0;
  BnStats<double> running{Vec<double>::Zero(f_out), Vec<double>::Ones(f_out)};
  Mat<double> x = random_matrix<double>(t_in, f_in, rng);

  Mat<double> y = tdnn_layer_forward<double>(layer, ctx, x, arch, NetMode::kTrain,
                                             running, nullptr, 0.0, nullptr, nullptr);

  // Naive oracle: explicit loops for splice, affine, lrelu, then batch norm.
  const int t_out = t_in - 3;  // span = 2 - (-1)
  Mat<double> act(t_out, f_out);
  for (int t = 0; t < t_out; ++t) {
    Vec<double> spliced(3 * f_in);
    for (size_t k = 0; k < ctx.size(); ++k)
      spliced.segment(k * f_in, f_in) = x.row(t + ctx[k] + 1).transpose();
    Vec<double> pre = layer.aff.W * spliced + layer.aff.b;
    for (int j = 0; j < f_out; ++j)
      act(t, j) = pre(j) > 0 ? pre(j) : arch.leaky_slope * pre(j);
  }
  for (int j = 0; j < f_out; ++j) {
    double mean = act.col(j).mean();
    double var = 0;
    for (int t = 0; t < t_out; ++t) var += (act(t, j) - mean) * (act(t, j) - mean);
    var /= t_out;
    for (int t = 0; t < t_out; ++t) {
      double xhat = (act(t, j) - mean) / std::sqrt(var + arch.bn_eps);
      double expected = layer.bn.gamma(j) * xhat + layer.bn.beta(j);
      CHECK(std::abs(y(t, j) - expected) < 1e-12);
    }
  }
}

TEST_CASE("tdnn: backward passes finite differences (train-mode batch norm)") {
  Rng rng(21);
  ArchConfig arch = check_arch();
  std::vector<int> ctx = {-2, 0, 2};
  const int f_in = 3, f_out = 5, t_in = 11;
  TdnnLayerParams<double> layer;
  layer.aff.W = random_matrix<double>(f_out, 3 * f_in, rng, 0.5);
  layer.aff.b = random_vector<double>(f_out, rng, 0.3);
  layer.bn.gamma = Vec<double>::Ones(f_out) + random_vector<double>(f_out, rng, 0.2);
  layer.bn.beta = random_vector<double>(f_out, rng, 0.2);
  BnStats<double> running{Vec<double>::Zero(f_out), Vec<double>::Ones(f_out)};
  Mat<double> x = random_matrix<double>(t_in, f_in, rng);
  Mat<double> proj = random_matrix<double>(t_in - 4, f_out, rng);

  auto loss_fn = [&]() {
    Mat<double> y = tdnn_layer_forward<double>(layer, ctx, x, arch, NetMode::kTrain,
                                               running, nullptr, 0.0, nullptr, nullptr);
    return (y.array() * proj.array()).sum();
  };

  TdnnLayerCache<double> cache;
  tdnn_layer_forward<double>(layer, ctx, x, arch, NetMode::kTrain, running, nullptr,
                             0.0, nullptr, &cache);
  TdnnLayerParams<double> grads;
  grads.aff.W = Mat<double>::Zero(f_out, 3 * f_in);
  grads.aff.b = Vec<double>::Zero(f_out);
  grads.bn.gamma = Vec<double>::Zero(f_out);
  grads.bn.beta = Vec<double>::Zero(f_out);
  Mat<double> dx = tdnn_layer_backward<double>(layer, ctx, cache, arch, proj, &grads);

  // Zero upstream gradient gives zero parameter and input gradients.
  {
    TdnnLayerParams<double> zg = grads;
    zg.aff.W.setZero();
    zg.aff.b.setZero();
    zg.bn.gamma.setZero();
    zg.bn.beta.setZero();
    Mat<double> zdx = tdnn_layer_backward<double>(
        layer, ctx, cache, arch, Mat<double>(Mat<double>::Zero(t_in - 4, f_out)), &zg);
    CHECK(zdx.norm() == 0.0);
    CHECK(zg.aff.W.norm() == 0.0);
  }

  double h = 1e-4;
  auto check_block = [&](Mat<double> *param, const Mat<double> &analytic) {
    for (Eigen::Index i = 0; i < param->size(); ++i) {
      double saved = param->data()[i];
      param->data()[i] = saved + h;
      double up = loss_fn();
      param->data()[i] = saved - h;
      double down = loss_fn();
      param->data()[i] = saved;
      double numeric = (up - down) / (2 * h);
      CHECK(grad_rel_err(analytic.data()[i], numeric) < 1e-4);
    }
  };
  auto check_vec = [&](Vec<double> *param, const Vec<double> &analytic) {
    for (Eigen::Index i = 0; i < param->size(); ++i) {
      double saved = (*param)(i);
      (*param)(i) = saved + h;
      double up = loss_fn();
      (*param)(i) = saved - h;
      double down = loss_fn();
      (*param)(i) = saved;
      double numeric = (up - down) / (2 * h);
      CHECK(grad_rel_err(analytic(i), numeric) < 1e-4);
    }
  };
  check_block(&layer.aff.W, grads.aff.W);
  check_vec(&layer.aff.b, grads.aff.b);
  check_vec(&layer.bn.gamma, grads.bn.gamma);
  check_vec(&layer.bn.beta, grads.bn.beta);
  check_block(&x, dx);
}

TEST_CASE("batch norm on a batch of identical frames stays finite") {
  Rng rng(5);
  ArchConfig arch = check_arch();
  std::vector<int> ctx = {0};
  TdnnLayerParams<double> layer;
  layer.aff.W = random_matrix<double>(4, 3, rng, 0.5);
  layer.aff.b = random_vector<double>(4, rng, 0.1);
  layer.bn.gamma = Vec<double>::Ones(4);
  layer.bn.beta = Vec<double>::Zero(4);
  BnStats<double> running{Vec<double>::Zero(4), Vec<double>::Ones(4)};
  Mat<double> x(6, 3);
  for (int t = 0; t < 6; ++t) x.row(t) << 0.3, -0.2, 0.9;

  TdnnLayerCache<double> cache;
  Mat<double> y = tdnn_layer_forward<double>(layer, ctx, x, arch, NetMode::kTrain,
                                             running, nullptr, 0.0, nullptr, &cache);
  CHECK(y.allFinite());
  TdnnLayerParams<double> grads = layer;
  grads.aff.W.setZero();
  grads.aff.b.setZero();
  grads.bn.gamma.setZero();
  grads.bn.beta.setZero();
  Mat<double> dy = random_matrix<double>(6, 4, rng);
  Mat<double> dx = tdnn_layer_backward<double>(layer, ctx, cache, arch, dy, &grads);
  CHECK(dx.allFinite());
  CHECK(grads.aff.W.allFinite());
}

TEST_CASE("attentive pooling: v = 0 reduces to plain mean and std") {
  Rng rng(13);
  AttentionParams<double> att;
  att.W = random_matrix<double>(5, 4, rng, 0.5);
  att.b = random_vector<double>(5, rng, 0.2);
  att.v = Vec<double>::Zero(5);
  Mat<double> h = random_matrix<double>(9, 4, rng);
  const double eps = 1e-5;
  Vec<double> out = attentive_stats_pool<double>(att, h, eps, nullptr);
  for (int d = 0; d < 4; ++d) {
    double mean = h.col(d).mean();
    double var = 0;
    for (int t = 0; t < 9; ++t) var += (h(t, d) - mean) * (h(t, d) - mean);
    var /= 9.0;
    CHECK(out(d) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out(4 + d) == doctest::Approx(std::sqrt(std::max(var, eps))).epsilon(1e-12));
  }
}

TEST_CASE("attentive pooling: T = 1 gives mu = h1 and floored sigma") {
  Rng rng(17);
  AttentionParams<double> att;
  att.W = random_matrix<double>(3, 4, rng, 0.5);
  att.b = random_vector<double>(3, rng, 0.2);
  att.v = random_vector<double>(3, rng, 0.5);
  Mat<double> h = random_matrix<double>(1, 4, rng);
  const double eps = 1e-5;
  Vec<double> out = attentive_stats_pool<double>(att, h, eps, nullptr);
  for (int d = 0; d < 4; ++d) {
    CHECK(out(d) == doctest::Approx(h(0, d)).epsilon(1e-12));
    CHECK(out(4 + d) == doctest::Approx(std::sqrt(eps)).epsilon(1e-12));
  }
}

TEST_CASE("attentive pooling: direct formula match and finite differences") {
  Rng rng(19);
  AttentionParams<double> att;
  att.W = random_matrix<double>(5, 4, rng, 0.6);
  att.b = random_vector<double>(5, rng, 0.3);
  att.v = random_vector<double>(5, rng, 0.6);
  Mat<double> h = random_matrix<double>(8, 4, rng);
  const double eps = 1e-5;

  AttentionCache<double> cache;
  Vec<double> out = attentive_stats_pool<double>(att, h, eps, &cache);

  // Direct evaluation of the formula.
  Vec<double> scores(8);
  for (int t = 0; t < 8; ++t)
    scores(t) = att.v.dot((att.W * h.row(t).transpose() + att.b).array().tanh().matrix());
  Vec<double> alpha = (scores.array() - scores.maxCoeff()).exp().matrix();
  alpha /= alpha.sum();
  for (int d = 0; d < 4; ++d) {
    double mu = 0, m2 = 0;
    for (int t = 0; t < 8; ++t) {
      mu += alpha(t) * h(t, d);
      m2 += alpha(t) * h(t, d) * h(t, d);
    }
    CHECK(std::abs(out(d) - mu) < 1e-12);
    CHECK(std::abs(out(4 + d) - std::sqrt(std::max(m2 - mu * mu, eps))) < 1e-12);
  }

  Vec<double> proj = random_vector<double>(8, rng);
  auto loss_fn = [&]() {
    Vec<double> o = attentive_stats_pool<double>(att, h, eps, nullptr);
    return proj.dot(o);
  };
  AttentionParams<double> grads;
  grads.W = Mat<double>::Zero(5, 4);
  grads.b = Vec<double>::Zero(5);
  grads.v = Vec<double>::Zero(5);
  Mat<double> dh = attentive_stats_pool_backward<double>(att, cache, eps, proj, &grads);

  double h_step = 1e-4;
  auto fd_check = [&](double *p, double analytic) {
    double saved = *p;
    *p = saved + h_step;
    double up = loss_fn();
    *p = saved - h_step;
    double down = loss_fn();
    *p = saved;
    CHECK(grad_rel_err(analytic, (up - down) / (2 * h_step)) < 1e-4);
  };
  for (Eigen::Index i = 0; i < att.W.size(); ++i) fd_check(att.W.data() + i, grads.W.data()[i]);
  for (Eigen::Index i = 0; i < att.b.size(); ++i) fd_check(att.b.data() + i, grads.b(i));
  for (Eigen::Index i = 0; i < att.v.size(); ++i) fd_check(att.v.data() + i, grads.v(i));
  for (Eigen::Index i = 0; i < h.size(); ++i) fd_check(h.data() + i, dh.data()[i]);
}

TEST_CASE("am-softmax: zero margin symmetric two-class toy gives ln 2") {
  ArchConfig arch = check_arch(2);
  arch.am_scale = 1.0;
  arch.am_margin = 0.0;
  Rng rng(23);
  Model<double> model = init_model<double>(arch, 23);
  // Identical class rows make every cosine pair symmetric.
  model.params.cls.out_W.row(1) = model.params.cls.out_W.row(0);
  Mat<double> emb = random_matrix<double>(4, arch.embedding_dim, rng);
  std::vector<int> labels = {0, 1, 0, 1};
  double loss = am_softmax_loss<double>(model.params.cls, arch, model.running, emb,
                                        labels, NetMode::kEval, nullptr, 0.0, nullptr,
                                        nullptr, nullptr);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("am-softmax: increasing the margin never decreases the loss") {
  ArchConfig arch = check_arch(4);
  Rng rng(29);
  Model<double> model = init_model<double>(arch, 29);
  Mat<double> emb = random_matrix<double>(6, arch.embedding_dim, rng);
  std::vector<int> labels = {0, 1, 2, 3, 1, 2};
  double prev = -1;
  for (double m : {0.0, 0.1, 0.2, 0.35, 0.5}) {
    arch.am_margin = m;
    double loss = am_softmax_loss<double>(model.params.cls, arch, model.running, emb,
                                          labels, NetMode::kEval, nullptr, 0.0,
                                          nullptr, nullptr, nullptr);
    CHECK(loss >= prev);
    prev = loss;
  }
}

TEST_CASE("am-softmax: rejects invalid labels") {
  ArchConfig arch = check_arch(3);
  Model<double> model = init_model<double>(arch, 31);
  Mat<double> emb = Mat<double>::Ones(2, arch.embedding_dim);
  CHECK_THROWS_AS(am_softmax_loss<double>(model.params.cls, arch, model.running, emb,
                                          {0, 3}, NetMode::kEval, nullptr, 0.0,
                                          nullptr, nullptr, nullptr),
                  Error);
}

TEST_CASE("am-softmax: loss and gradients match finite differences") {
  ArchConfig arch = check_arch(3);
  Rng rng(37);
  Model<double> model = init_model<double>(arch, 37);
  Mat<double> emb = random_matrix<double>(5, arch.embedding_dim, rng);
  std::vector<int> labels = {0, 1, 2, 1, 0};

  auto loss_fn = [&]() {
    return am_softmax_loss<double>(model.params.cls, arch, model.running, emb, labels,
                                   NetMode::kTrain, nullptr, 0.0, nullptr, nullptr,
                                   nullptr);
  };
  ClassifierCache<double> cache;
  am_softmax_loss<double>(model.params.cls, arch, model.running, emb, labels,
                          NetMode::kTrain, nullptr, 0.0, nullptr, &cache, nullptr);
  ModelParams<double> grads = allocate_params<double>(arch);
  Mat<double> d_emb;
  am_softmax_backward<double>(model.params.cls, arch, cache, &grads.cls, &d_emb);

  GradCheckReport input_report = check_input_gradient(&emb, d_emb, loss_fn, 1e-4, 64);
  CHECK(input_report.max_rel_err < 1e-4);

  // Parameter gradients via the generic checker (classifier tensors only).
  GradCheckReport report = check_param_gradients(&model.params, grads, loss_fn, 1e-4, 24);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("grad_reverse: forward identity, backward scales by -lambda") {
  Mat<double> x(1, 2);
  x << 2.0, -4.0;
  Mat<double> fwd = grad_reverse_forward(x);
  CHECK(fwd(0, 0) == 2.0);
  CHECK(fwd(0, 1) == -4.0);
  Mat<double> g1 = grad_reverse_backward(x, 1.0);
  CHECK(g1(0, 0) == -2.0);
  CHECK(g1(0, 1) == 4.0);
  Mat<double> g2 = grad_reverse_backward(x, 0.5);
  CHECK(g2(0, 0) == -1.0);
  CHECK(g2(0, 1) == 2.0);
}

TEST_CASE("pair discriminator: zero weights give logit 0 and BCE ln 2") {
  ArchConfig arch = check_arch();
  PairDiscParams<double> disc;
  disc.hidden.W = Mat<double>::Zero(6, 2 * arch.embedding_dim);
  disc.hidden.b = Vec<double>::Zero(6);
  disc.out_w = Vec<double>::Zero(6);
  disc.out_b = Vec<double>::Zero(1);
  Rng rng(41);
  Mat<double> inputs = random_matrix<double>(4, 2 * arch.embedding_dim, rng);
  std::vector<uint8_t> labels = {1, 0, 1, 0};
  PairDiscCache<double> cache;
  double loss = pair_disc_loss<double>(disc, arch, inputs, labels, &cache, nullptr);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cache.logits.norm() == 0.0);
}

TEST_CASE("pair discriminator: gradient reaches both concatenated halves") {
  ArchConfig arch = check_arch();
  Rng rng(43);
  Model<double> model = init_model<double>(arch, 43);
  const int e = arch.embedding_dim;
  Mat<double> inputs = random_matrix<double>(3, 2 * e, rng);
  std::vector<uint8_t> labels = {1, 0, 1};

  PairDiscCache<double> cache;
  pair_disc_loss<double>(model.params.pair_disc, arch, inputs, labels, &cache, nullptr);
  ModelParams<double> grads = allocate_params<double>(arch);
  Mat<double> d_in;
  pair_disc_backward<double>(model.params.pair_disc, arch, cache, &grads.pair_disc,
                             &d_in);
  CHECK(d_in.block(0, 0, 3, e).norm() > 0.0);
  CHECK(d_in.block(0, e, 3, e).norm() > 0.0);

  auto loss_fn = [&]() {
    return pair_disc_loss<double>(model.params.pair_disc, arch, inputs, labels,
                                  nullptr, nullptr);
  };
  GradCheckReport input_report = check_input_gradient(&inputs, d_in, loss_fn, 1e-4, 48);
  CHECK(input_report.max_rel_err < 1e-4);
  GradCheckReport report = check_param_gradients(&model.params, grads, loss_fn, 1e-4, 24);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("dataset discriminator: zero weights give uniform posterior ln 3") {
  ArchConfig arch = check_arch();
  DatasetDiscParams<double> disc;
  disc.hidden.W = Mat<double>::Zero(6, arch.embedding_dim);
  disc.hidden.b = Vec<double>::Zero(6);
  disc.out.W = Mat<double>::Zero(3, 6);
  disc.out.b = Vec<double>::Zero(3);
  Rng rng(47);
  Mat<double> inputs = random_matrix<double>(5, arch.embedding_dim, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1};
  double loss = dataset_disc_loss<double>(disc, arch, inputs, labels, nullptr, nullptr);
  CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("dataset discriminator: finite differences and toy separability") {
  ArchConfig arch = check_arch();
  Rng rng(53);
  Model<double> model = init_model<double>(arch, 53);
  Mat<double> inputs = random_matrix<double>(6, arch.embedding_dim, rng);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2};

  DatasetDiscCache<double> cache;
  dataset_disc_loss<double>(model.params.ds_disc, arch, inputs, labels, &cache, nullptr);
  ModelParams<double> grads = allocate_params<double>(arch);
  Mat<double> d_in;
  dataset_disc_backward<double>(model.params.ds_disc, arch, cache, &grads.ds_disc, &d_in);
  auto loss_fn = [&]() {
    return dataset_disc_loss<double>(model.params.ds_disc, arch, inputs, labels,
                                     nullptr, nullptr);
  };
  GradCheckReport input_report = check_input_gradient(&inputs, d_in, loss_fn, 1e-4, 48);
  CHECK(input_report.max_rel_err < 1e-4);
  GradCheckReport report = check_param_gradients(&model.params, grads, loss_fn, 1e-4, 24);
  CHECK(report.max_rel_err < 1e-4);

  // Separable toy data: a few plain gradient steps drive the loss toward 0.
  Mat<double> toy(9, arch.embedding_dim);
  std::vector<int> toy_labels(9);
  for (int i = 0; i < 9; ++i) {
    toy.row(i).setZero();
    toy(i, i % 3) = 4.0;
    toy_labels[i] = i % 3;
  }
  double first = dataset_disc_loss<double>(model.params.ds_disc, arch, toy, toy_labels,
                                           nullptr, nullptr);
  for (int it = 0; it < 200; ++it) {
    DatasetDiscCache<double> c;
    dataset_disc_loss<double>(model.params.ds_disc, arch, toy, toy_labels, &c, nullptr);
    DatasetDiscParams<double> g = allocate_params<double>(arch).ds_disc;
    dataset_disc_backward<double>(model.params.ds_disc, arch, c, &g, nullptr);
    model.params.ds_disc.hidden.W -= 0.5 * g.hidden.W;
    model.params.ds_disc.hidden.b -= 0.5 * g.hidden.b;
    model.params.ds_disc.out.W -= 0.5 * g.out.W;
    model.params.ds_disc.out.b -= 0.5 * g.out.b;
  }
  double last = dataset_disc_loss<double>(model.params.ds_disc, arch, toy, toy_labels,
                                          nullptr, nullptr);
  CHECK(last < 0.1 * first);
  CHECK(last < 0.05);
}

TEST_CASE("generator: eval mode is deterministic; full path passes finite differences") {
  ArchConfig arch = check_arch();
  Rng rng(59);
  Model<double> model = init_model<double>(arch, 59);
  Mat<double> feats = random_matrix<double>(14, arch.input_dim, rng);

  Vec<double> e1 = generator_forward<double>(model.params.gen, arch, model.running,
                                             feats, NetMode::kEval, nullptr, 0.0,
                                             nullptr, nullptr);
  Vec<double> e2 = generator_forward<double>(model.params.gen, arch, model.running,
                                             feats, NetMode::kEval, nullptr, 0.0,
                                             nullptr, nullptr);
  CHECK((e1 - e2).norm() == 0.0);

  Vec<double> proj = random_vector<double>(arch.embedding_dim, rng);
  auto loss_fn = [&]() {
    Vec<double> e = generator_forward<double>(model.params.gen, arch, model.running,
                                              feats, NetMode::kTrain, nullptr, 0.0,
                                              nullptr, nullptr);
    return proj.dot(e);
  };
  GeneratorCache<double> cache;
  generator_forward<double>(model.params.gen, arch, model.running, feats,
                            NetMode::kTrain, nullptr, 0.0, nullptr, &cache);
  ModelParams<double> grads = allocate_params<double>(arch);
  Mat<double> d_input;
  generator_backward<double>(model.params.gen, arch, cache, proj, &grads.gen, &d_input);

  GradCheckReport report = check_param_gradients(&model.params, grads, loss_fn, 1e-4, 16);
  CHECK(report.max_rel_err < 1e-4);
  GradCheckReport input_report = check_input_gradient(&feats, d_input, loss_fn, 1e-4, 48);
  CHECK(input_report.max_rel_err < 1e-4);
}

TEST_CASE("generator: crop shorter than the receptive field is rejected") {
  ArchConfig arch = check_arch();
  Model<double> model = init_model<double>(arch, 61);
  Mat<double> feats = Mat<double>::Ones(arch.receptive_field() - 1, arch.input_dim);
  CHECK_THROWS_AS(generator_forward<double>(model.params.gen, arch, model.running,
                                            feats, NetMode::kEval, nullptr, 0.0,
                                            nullptr, nullptr),
                  Error);
}

// Full channel-adversarial wiring: L = L_C - lambda * L_D through the
// generator, classifier, gradient reversal and pair discriminator.
namespace {

double adversarial_loss(const Model<double> &model, const ArchConfig &arch,
                        const std::vector<Mat<double>> &crops,
                        const std::vector<int> &labels,
                        const std::vector<std::pair<int, int>> &pairs,
                        const std::vector<uint8_t> &pair_labels, double lambda) {
  const int e = arch.embedding_dim;
  Mat<double> emb(static_cast<Eigen::Index>(crops.size()), e);
  for (size_t i = 0; i < crops.size(); ++i)
    emb.row(static_cast<Eigen::Index>(i)) =
        generator_forward<double>(model.params.gen, arch, model.running, crops[i],
                                  NetMode::kTrain, nullptr, 0.0, nullptr, nullptr)
            .transpose();
  double loss_c = am_softmax_loss<double>(model.params.cls, arch, model.running, emb,
                                          labels, NetMode::kTrain, nullptr, 0.0,
                                          nullptr, nullptr, nullptr);
  Mat<double> pair_inputs(static_cast<Eigen::Index>(pairs.size()), 2 * e);
  for (size_t p = 0; p < pairs.size(); ++p) {
    pair_inputs.block(static_cast<Eigen::Index>(p), 0, 1, e) = emb.row(pairs[p].first);
    pair_inputs.block(static_cast<Eigen::Index>(p), e, 1, e) = emb.row(pairs[p].second);
  }
  double loss_d = pair_disc_loss<double>(model.params.pair_disc, arch, pair_inputs,
                                         pair_labels, nullptr, nullptr);
  return loss_c - lambda * loss_d;
}

void adversarial_grads(const Model<double> &model, const ArchConfig &arch,
                       const std::vector<Mat<double>> &crops,
                       const std::vector<int> &labels,
                       const std::vector<std::pair<int, int>> &pairs,
                       const std::vector<uint8_t> &pair_labels, double lambda,
                       bool use_grad_reverse, ModelParams<double> *grads) {
  const int e = arch.embedding_dim;
  std::vector<GeneratorCache<double>> caches(crops.size());
  Mat<double> emb(static_cast<Eigen::Index>(crops.size()), e);
  for (size_t i = 0; i < crops.size(); ++i)
    emb.row(static_cast<Eigen::Index>(i)) =
        generator_forward<double>(model.params.gen, arch, model.running, crops[i],
                                  NetMode::kTrain, nullptr, 0.0, nullptr, &caches[i])
            .transpose();
  ClassifierCache<double> cls_cache;
  am_softmax_loss<double>(model.params.cls, arch, model.running, emb, labels,
                          NetMode::kTrain, nullptr, 0.0, nullptr, &cls_cache, nullptr);
  Mat<double> d_emb;
  am_softmax_backward<double>(model.params.cls, arch, cls_cache, &grads->cls, &d_emb);

  Mat<double> pair_inputs(static_cast<Eigen::Index>(pairs.size()), 2 * e);
  for (size_t p = 0; p < pairs.size(); ++p) {
    pair_inputs.block(static_cast<Eigen::Index>(p), 0, 1, e) = emb.row(pairs[p].first);
    pair_inputs.block(static_cast<Eigen::Index>(p), e, 1, e) = emb.row(pairs[p].second);
  }
  PairDiscCache<double> disc_cache;
  pair_disc_loss<double>(model.params.pair_disc, arch, pair_inputs, pair_labels,
                         &disc_cache, nullptr);
  Mat<double> d_pair;
  pair_disc_backward<double>(model.params.pair_disc, arch, disc_cache,
                             &grads->pair_disc, &d_pair);
  Mat<double> routed = use_grad_reverse ? grad_reverse_backward(d_pair, lambda)
                                        : Mat<double>((-lambda) * d_pair);
  for (size_t p = 0; p < pairs.size(); ++p) {
    d_emb.row(pairs[p].first) += routed.block(static_cast<Eigen::Index>(p), 0, 1, e);
    d_emb.row(pairs[p].second) += routed.block(static_cast<Eigen::Index>(p), e, 1, e);
  }
  for (size_t i = 0; i < crops.size(); ++i) {
    Vec<double> g = d_emb.row(static_cast<Eigen::Index>(i)).transpose();
    generator_backward<double>(model.params.gen, arch, caches[i], g, &grads->gen);
  }
}

}  // namespace

TEST_CASE("adversarial path: generator gradient matches finite differences of "
          "L_C - lambda L_D and the reversal algebra is exact") {
  ArchConfig arch = check_arch(2);
  Rng rng(67);
  Model<double> model = init_model<double>(arch, 67);
  const double lambda = 0.7;

  std::vector<Mat<double>> crops;
  for (int i = 0; i < 4; ++i)
    crops.push_back(random_matrix<double>(12 + i, arch.input_dim, rng));
  std::vector<int> labels = {0, 0, 1, 1};
  std::vector<std::pair<int, int>> pairs = {{0, 1}, {0, 2}, {2, 3}, {1, 3}};
  std::vector<uint8_t> pair_labels = {1, 0, 1, 0};

  ModelParams<double> grads = allocate_params<double>(arch);
  adversarial_grads(model, arch, crops, labels, pairs, pair_labels, lambda, true,
                    &grads);

  // The discriminator itself minimizes L_D: its finite-difference direction is
  // +dL_D/dtheta_D while the assembled loss is L_C - lambda L_D, so check the
  // discriminator tensors against their own loss and everything else against
  // the composite.
  auto composite_loss_fn = [&]() {
    return adversarial_loss(model, arch, crops, labels, pairs, pair_labels, lambda);
  };
  double h = 1e-4;
  auto fd = [&](double *p, const std::function<double()> &fn) {
    double saved = *p;
    *p = saved + h;
    double up = fn();
    *p = saved - h;
    double down = fn();
    *p = saved;
    return (up - down) / (2 * h);
  };

  Rng pick(71);
  auto check_tensor = [&](Mat<double> *param, const Mat<double> &analytic,
                          const std::function<double()> &fn, int count) {
    for (int k = 0; k < count; ++k) {
      Eigen::Index i = pick.uniform_int(param->size());
      CHECK(grad_rel_err(analytic.data()[i], fd(param->data() + i, fn)) < 1e-4);
    }
  };

  // Generator tensors against the composite loss (through grad reversal).
  for (size_t l = 0; l < model.params.gen.tdnn.size(); ++l) {
    check_tensor(&model.params.gen.tdnn[l].aff.W, grads.gen.tdnn[l].aff.W,
                 composite_loss_fn, 10);
  }
  check_tensor(&model.params.gen.att.W, grads.gen.att.W, composite_loss_fn, 8);
  check_tensor(&model.params.gen.proj.W, grads.gen.proj.W, composite_loss_fn, 10);
  check_tensor(&model.params.cls.hidden.W, grads.cls.hidden.W, composite_loss_fn, 10);

  // Discriminator tensors minimize L_D.
  auto disc_loss_fn = [&]() {
    const int e = arch.embedding_dim;
    Mat<double> emb(static_cast<Eigen::Index>(crops.size()), e);
    for (size_t i = 0; i < crops.size(); ++i)
      emb.row(static_cast<Eigen::Index>(i)) =
          generator_forward<double>(model.params.gen, arch, model.running, crops[i],
                                    NetMode::kTrain, nullptr, 0.0, nullptr, nullptr)
              .transpose();
    Mat<double> pair_inputs(static_cast<Eigen::Index>(pairs.size()), 2 * e);
    for (size_t p = 0; p < pairs.size(); ++p) {
      pair_inputs.block(static_cast<Eigen::Index>(p), 0, 1, e) = emb.row(pairs[p].first);
      pair_inputs.block(static_cast<Eigen::Index>(p), e, 1, e) = emb.row(pairs[p].second);
    }
    return pair_disc_loss<double>(model.params.pair_disc, arch, pair_inputs,
                                  pair_labels, nullptr, nullptr);
  };
  check_tensor(&model.params.pair_disc.hidden.W, grads.pair_disc.hidden.W,
               disc_loss_fn, 10);

  // Gradient-reversal algebra: the reversed route equals -lambda times the
  // identity-connector route, elementwise, to 1e-12.
  ModelParams<double> grads_identity = allocate_params<double>(arch);
  adversarial_grads(model, arch, crops, labels, pairs, pair_labels, lambda, false,
                    &grads_identity);
  auto a = collect_param_tensors(grads.gen.tdnn.empty() ? grads : grads);
  auto b = collect_param_tensors(grads_identity);
  for (size_t i = 0; i < a.size(); ++i) {
    double diff = a[i].mat ? (*a[i].mat - *b[i].mat).cwiseAbs().maxCoeff()
                           : (*a[i].vec - *b[i].vec).cwiseAbs().maxCoeff();
    CHECK(diff <= 1e-12);
  }
}

TEST_CASE("numerical_grad_check: linear layer reaches 1e-7") {
  Rng rng(73);
  Mat<double> w = random_matrix<double>(4, 3, rng);
  Vec<double> x = random_vector<double>(3, rng);
  Vec<double> proj = random_vector<double>(4, rng);
  // loss = proj . (W x): dW = proj x^T, exactly.
  Mat<double> analytic = proj * x.transpose();
  double h = 1e-4;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    double saved = w.data()[i];
    w.data()[i] = saved + h;
    double up = proj.dot(w * x);
    w.data()[i] = saved - h;
    double down = proj.dot(w * x);
    w.data()[i] = saved;
    CHECK(grad_rel_err(analytic.data()[i], (up - down) / (2 * h)) < 1e-7);
  }
}

TEST_CASE("checkpoint: save/load round trip preserves eval outputs exactly") {
  cadv::test::TempDir tmp("ckpt");
  ArchConfig arch = check_arch(5);
  Model<float> model = init_model<float>(arch, 79);
  // Perturb running stats away from the init so they are exercised too.
  model.running.tdnn[0].mean.setConstant(0.25f);
  model.running.cls_hidden.var.setConstant(1.5f);

  Rng rng(83);
  Matf feats = random_matrix<float>(20, arch.input_dim, rng);
  Vecf before = generator_forward<float>(model.params.gen, arch, model.running, feats,
                                         NetMode::kEval, nullptr, 0.0f, nullptr, nullptr);

  std::string path = tmp.path("model.cadv");
  save_checkpoint(path, model, {{"mode", "baseline"}, {"step", "5"}});
  KvPairs extra;
  Model<float> loaded = load_checkpoint(path, &extra);
  Vecf after = generator_forward<float>(loaded.params.gen, loaded.arch, loaded.running,
                                        feats, NetMode::kEval, nullptr, 0.0f, nullptr,
                                        nullptr);
  CHECK((before - after).norm() == 0.0f);
  bool found_mode = false;
  for (auto &[k, v] : extra)
    if (k == "mode") {
      found_mode = true;
      CHECK(v == "baseline");
    }
  CHECK(found_mode);

  auto p1 = collect_param_tensors(model.params);
  auto p2 = collect_param_tensors(loaded.params);
  for (size_t i = 0; i < p1.size(); ++i) {
    if (p1[i].mat)
      CHECK((*p1[i].mat - *p2[i].mat).norm() == 0.0f);
    else
      CHECK((*p1[i].vec - *p2[i].vec).norm() == 0.0f);
  }
}
