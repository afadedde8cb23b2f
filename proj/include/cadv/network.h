// cadv/network.h

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
// Hand-written forward and backward passes for the embedding generator
// (TDNN stack + attentive statistics pooling + projection), the AM-softmax
// speaker classifier, the Siamese pair discriminator, the 3-class dataset
// discriminator, and the gradient-reversal connector. Everything is
// templated on the scalar type: training runs in float, gradient checking
// in double.

#ifndef CADV_NETWORK_H_
#define CADV_NETWORK_H_

#include <cmath>
#include <string>
#include <vector>

#include "cadv/common.h"
#include "cadv/io.h"

namespace cadv {

// ---- architecture descriptor ------------------------------------------------

struct ArchConfig {
  int input_dim = 30;
  std::vector<std::vector<int>> tdnn_contexts = {
      {-2, -1, 0, 1, 2}, {-2, 0, 2}, {-3, 0, 3}, {0}, {0}};
  std::vector<int> tdnn_widths = {512, 512, 512, 512, 1500};
  int attention_hidden = 128;
  int embedding_dim = 512;
  int classifier_hidden = 512;
  int num_classes = 0;
  int pair_disc_hidden = 512;
  int ds_disc_hidden = 512;
  int num_datasets = 0;
  double leaky_slope = 0.01;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double am_scale = 30.0;
  double am_margin = 0.35;

  static ArchConfig large(int input_dim, int num_classes);
  static ArchConfig small(int input_dim, int num_classes);
  static ArchConfig tiny(int input_dim, int num_classes);

  int frame_dim() const { return tdnn_widths.back(); }
  // Minimum number of input frames a crop must have.
  int receptive_field() const;
  void validate() const;
  KvPairs to_kv() const;
  static ArchConfig from_kv(const KvPairs &kv);
};

// ---- parameters --------------------------------------------------------------

template <typename R>
struct AffineParams {
  Mat<R> W;  // out x in
  Vec<R> b;
};

template <typename R>
struct BnParams {
  Vec<R> gamma, beta;
};

template <typename R>
struct BnStats {
  Vec<R> mean, var;
};

template <typename R>
struct TdnnLayerParams {
  AffineParams<R> aff;
  BnParams<R> bn;
};

template <typename R>
struct AttentionParams {
  Mat<R> W;  // hidden x frame_dim
  Vec<R> b;  // hidden
  Vec<R> v;  // hidden
};

template <typename R>
struct GeneratorParams {
  std::vector<TdnnLayerParams<R>> tdnn;
  AttentionParams<R> att;
  AffineParams<R> proj;  // embedding_dim x 2*frame_dim
};

template <typename R>
struct ClassifierParams {
  AffineParams<R> hidden;
  BnParams<R> bn;
  Mat<R> out_W;  // num_classes x classifier_hidden (rows cosine-normalized)
};

template <typename R>
struct PairDiscParams {
  AffineParams<R> hidden;  // pair_disc_hidden x 2*embedding_dim
  Vec<R> out_w;            // pair_disc_hidden
  Vec<R> out_b;            // size 1
};

template <typename R>
struct DatasetDiscParams {
  AffineParams<R> hidden;  // ds_disc_hidden x embedding_dim
  AffineParams<R> out;     // num_datasets x ds_disc_hidden
};

template <typename R>
struct ModelParams {
  GeneratorParams<R> gen;
  ClassifierParams<R> cls;
  PairDiscParams<R> pair_disc;
  DatasetDiscParams<R> ds_disc;
};

template <typename R>
struct RunningStats {
  std::vector<BnStats<R>> tdnn;
  BnStats<R> cls_hidden;
};

template <typename R>
struct Model {
  ArchConfig arch;
  ModelParams<R> params;
  RunningStats<R> running;
};

enum class NetMode { kTrain, kEval };

// ---- tensor enumeration -------------------------------------------------------

template <typename R>
struct TensorRef {
  std::string name;
  Mat<R> *mat = nullptr;
  Vec<R> *vec = nullptr;
};

template <typename R>
std::vector<TensorRef<R>> collect_param_tensors(ModelParams<R> &p) {
  std::vector<TensorRef<R>> out;
  auto add_mat = [&](const std::string &n, Mat<R> &m) {
    out.push_back({n, &m, nullptr});
  };
  auto add_vec = [&](const std::string &n, Vec<R> &v) {
    out.push_back({n, nullptr, &v});
  };
  for (size_t i = 0; i < p.gen.tdnn.size(); ++i) {
    std::string base = "gen.tdnn" + std::to_string(i);
    add_mat(base + ".W", p.gen.tdnn[i].aff.W);
    add_vec(base + ".b", p.gen.tdnn[i].aff.b);
    add_vec(base + ".bn_gamma", p.gen.tdnn[i].bn.gamma);
    add_vec(base + ".bn_beta", p.gen.tdnn[i].bn.beta);
  }
  add_mat("gen.att.W", p.gen.att.W);
  add_vec("gen.att.b", p.gen.att.b);
  add_vec("gen.att.v", p.gen.att.v);
  add_mat("gen.proj.W", p.gen.proj.W);
  add_vec("gen.proj.b", p.gen.proj.b);
  add_mat("cls.hidden.W", p.cls.hidden.W);
  add_vec("cls.hidden.b", p.cls.hidden.b);
  add_vec("cls.hidden.bn_gamma", p.cls.bn.gamma);
  add_vec("cls.hidden.bn_beta", p.cls.bn.beta);
  add_mat("cls.out.W", p.cls.out_W);
  add_mat("disc.hidden.W", p.pair_disc.hidden.W);
  add_vec("disc.hidden.b", p.pair_disc.hidden.b);
  add_vec("disc.out.w", p.pair_disc.out_w);
  add_vec("disc.out.b", p.pair_disc.out_b);
  add_mat("dsdisc.hidden.W", p.ds_disc.hidden.W);
  add_vec("dsdisc.hidden.b", p.ds_disc.hidden.b);
  add_mat("dsdisc.out.W", p.ds_disc.out.W);
  add_vec("dsdisc.out.b", p.ds_disc.out.b);
  return out;
}

template <typename R>
std::vector<TensorRef<R>> collect_running_tensors(RunningStats<R> &r) {
  std::vector<TensorRef<R>> out;
  for (size_t i = 0; i < r.tdnn.size(); ++i) {
    std::string base = "running.gen.tdnn" + std::to_string(i);
    out.push_back({base + ".bn_mean", nullptr, &r.tdnn[i].mean});
    out.push_back({base + ".bn_var", nullptr, &r.tdnn[i].var});
  }
  out.push_back({"running.cls.hidden.bn_mean", nullptr, &r.cls_hidden.mean});
  out.push_back({"running.cls.hidden.bn_var", nullptr, &r.cls_hidden.var});
  return out;
}

// ---- allocation / init ----------------------------------------------------------

template <typename R>
ModelParams<R> allocate_params(const ArchConfig &a) {
  ModelParams<R> p;
  int in = a.input_dim;
  p.gen.tdnn.resize(a.tdnn_widths.size());
  for (size_t i = 0; i < a.tdnn_widths.size(); ++i) {
    int k = static_cast<int>(a.tdnn_contexts[i].size());
    int out = a.tdnn_widths[i];
    p.gen.tdnn[i].aff.W = Mat<R>::Zero(out, k * in);
    p.gen.tdnn[i].aff.b = Vec<R>::Zero(out);
    p.gen.tdnn[i].bn.gamma = Vec<R>::Zero(out);
    p.gen.tdnn[i].bn.beta = Vec<R>::Zero(out);
    in = out;
  }
  p.gen.att.W = Mat<R>::Zero(a.attention_hidden, in);
  p.gen.att.b = Vec<R>::Zero(a.attention_hidden);
  p.gen.att.v = Vec<R>::Zero(a.attention_hidden);
  p.gen.proj.W = Mat<R>::Zero(a.embedding_dim, 2 * in);
  p.gen.proj.b = Vec<R>::Zero(a.embedding_dim);
  p.cls.hidden.W = Mat<R>::Zero(a.classifier_hidden, a.embedding_dim);
  p.cls.hidden.b = Vec<R>::Zero(a.classifier_hidden);
  p.cls.bn.gamma = Vec<R>::Zero(a.classifier_hidden);
  p.cls.bn.beta = Vec<R>::Zero(a.classifier_hidden);
  p.cls.out_W = Mat<R>::Zero(a.num_classes, a.classifier_hidden);
  p.pair_disc.hidden.W = Mat<R>::Zero(a.pair_disc_hidden, 2 * a.embedding_dim);
  p.pair_disc.hidden.b = Vec<R>::Zero(a.pair_disc_hidden);
  p.pair_disc.out_w = Vec<R>::Zero(a.pair_disc_hidden);
  p.pair_disc.out_b = Vec<R>::Zero(1);
  int nds = std::max(a.num_datasets, 1);
  p.ds_disc.hidden.W = Mat<R>::Zero(a.ds_disc_hidden, a.embedding_dim);
  p.ds_disc.hidden.b = Vec<R>::Zero(a.ds_disc_hidden);
  p.ds_disc.out.W = Mat<R>::Zero(nds, a.ds_disc_hidden);
  p.ds_disc.out.b = Vec<R>::Zero(nds);
  return p;
}

template <typename R>
RunningStats<R> allocate_running(const ArchConfig &a) {
  RunningStats<R> r;
  r.tdnn.resize(a.tdnn_widths.size());
  for (size_t i = 0; i < a.tdnn_widths.size(); ++i) {
    r.tdnn[i].mean = Vec<R>::Zero(a.tdnn_widths[i]);
    r.tdnn[i].var = Vec<R>::Ones(a.tdnn_widths[i]);
  }
  r.cls_hidden.mean = Vec<R>::Zero(a.classifier_hidden);
  r.cls_hidden.var = Vec<R>::Ones(a.classifier_hidden);
  return r;
}

template <typename R>
void fill_normal(Mat<R> &m, Rng &rng, double stddev) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<R>(rng.normal() * stddev);
}

template <typename R>
void fill_normal(Vec<R> &v, Rng &rng, double stddev) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = static_cast<R>(rng.normal() * stddev);
}

template <typename R>
void init_generator(GeneratorParams<R> &g, Rng rng) {
  for (auto &layer : g.tdnn) {
    fill_normal(layer.aff.W, rng, std::sqrt(2.0 / layer.aff.W.cols()));
    layer.aff.b.setZero();
    layer.bn.gamma.setOnes();
    layer.bn.beta.setZero();
  }
  fill_normal(g.att.W, rng, std::sqrt(1.0 / g.att.W.cols()));
  g.att.b.setZero();
  fill_normal(g.att.v, rng, std::sqrt(1.0 / g.att.v.size()));
  fill_normal(g.proj.W, rng, std::sqrt(1.0 / g.proj.W.cols()));
  g.proj.b.setZero();
}

template <typename R>
void init_classifier(ClassifierParams<R> &c, Rng rng) {
  fill_normal(c.hidden.W, rng, std::sqrt(2.0 / c.hidden.W.cols()));
  c.hidden.b.setZero();
  c.bn.gamma.setOnes();
  c.bn.beta.setZero();
  fill_normal(c.out_W, rng, std::sqrt(1.0 / c.out_W.cols()));
}

template <typename R>
void init_pair_disc(PairDiscParams<R> &d, Rng rng) {
  fill_normal(d.hidden.W, rng, std::sqrt(2.0 / d.hidden.W.cols()));
  d.hidden.b.setZero();
  fill_normal(d.out_w, rng, std::sqrt(1.0 / d.out_w.size()));
  d.out_b.setZero();
}

template <typename R>
void init_dataset_disc(DatasetDiscParams<R> &d, Rng rng) {
  fill_normal(d.hidden.W, rng, std::sqrt(2.0 / d.hidden.W.cols()));
  d.hidden.b.setZero();
  fill_normal(d.out.W, rng, std::sqrt(1.0 / d.out.W.cols()));
  d.out.b.setZero();
}

template <typename R>
Model<R> init_model(const ArchConfig &arch, uint64_t seed) {
  arch.validate();
  Model<R> m;
  m.arch = arch;
  m.params = allocate_params<R>(arch);
  m.running = allocate_running<R>(arch);
  Rng rng(seed);
  init_generator(m.params.gen, rng.fork(1));
  init_classifier(m.params.cls, rng.fork(2));
  init_pair_disc(m.params.pair_disc, rng.fork(3));
  init_dataset_disc(m.params.ds_disc, rng.fork(4));
  return m;
}

template <typename A, typename B>
void convert_params(const ModelParams<A> &src, ModelParams<B> *dst) {
  auto s = collect_param_tensors(const_cast<ModelParams<A> &>(src));
  auto d = collect_param_tensors(*dst);
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i].mat)
      *d[i].mat = s[i].mat->template cast<B>();
    else
      *d[i].vec = s[i].vec->template cast<B>();
  }
}

template <typename A, typename B>
void convert_running(const RunningStats<A> &src, RunningStats<B> *dst) {
  auto s = collect_running_tensors(const_cast<RunningStats<A> &>(src));
  auto d = collect_running_tensors(*dst);
  for (size_t i = 0; i < s.size(); ++i) *d[i].vec = s[i].vec->template cast<B>();
}

template <typename A, typename B>
void convert_model(const Model<A> &src, Model<B> *dst) {
  dst->arch = src.arch;
  dst->params = allocate_params<B>(src.arch);
  dst->running = allocate_running<B>(src.arch);
  convert_params(src.params, &dst->params);
  convert_running(src.running, &dst->running);
}

// ---- shared layer pieces ---------------------------------------------------------

template <typename R>
Mat<R> leaky_relu(const Mat<R> &x, R slope) {
  return x.array().max(x.array() * slope).matrix();
}

template <typename R>
Mat<R> leaky_relu_grad(const Mat<R> &pre, const Mat<R> &dy, R slope) {
  return (pre.array() > R(0)).select(dy, dy * slope);
}

// Inverted-dropout mask with entries 0 or 1/(1-p).
template <typename R>
Mat<R> dropout_mask(Eigen::Index rows, Eigen::Index cols, R p, Rng &rng) {
  Mat<R> mask(rows, cols);
  R keep_scale = R(1) / (R(1) - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      mask(i, j) = rng.uniform() >= p ? keep_scale : R(0);
  return mask;
}

// Batch normalization over the rows of a matrix (per-column statistics).
template <typename R>
struct BnCache {
  Vec<R> mean, inv_std;
  Mat<R> xhat;
  bool train = false;
};

template <typename R>
Mat<R> batch_norm_forward(const Mat<R> &x, const BnParams<R> &bn, R eps,
                          NetMode mode, const BnStats<R> &running,
                          BnStats<R> *update_running, R momentum,
                          BnCache<R> *cache) {
  const Eigen::Index m = x.rows();
  Vec<R> mean, var;
  if (mode == NetMode::kTrain) {
    mean = x.colwise().mean().transpose();
    var = (x.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose() / R(m);
    if (update_running) {
      update_running->mean = (R(1) - momentum) * update_running->mean + momentum * mean;
      update_running->var = (R(1) - momentum) * update_running->var + momentum * var;
    }
  } else {
    mean = running.mean;
    var = running.var;
  }
  Vec<R> inv_std = (var.array() + eps).rsqrt().matrix();
  Mat<R> xhat = x.rowwise() - mean.transpose();
  xhat.array().rowwise() *= inv_std.transpose().array();
  Mat<R> y = xhat;
  y.array().rowwise() *= bn.gamma.transpose().array();
  y.rowwise() += bn.beta.transpose();
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->xhat = std::move(xhat);
    cache->train = mode == NetMode::kTrain;
  }
  return y;
}

template <typename R>
Mat<R> batch_norm_backward(const Mat<R> &dy, const BnParams<R> &bn,
                           const BnCache<R> &cache, Vec<R> *dgamma,
                           Vec<R> *dbeta) {
  const Eigen::Index m = cache.xhat.rows();
  *dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  *dbeta += dy.colwise().sum().transpose();
  Mat<R> dxhat = dy;
  dxhat.array().rowwise() *= bn.gamma.transpose().array();
  if (!cache.train) {
    dxhat.array().rowwise() *= cache.inv_std.transpose().array();
    return dxhat;
  }
  Vec<R> sum_dxhat = dxhat.colwise().sum().transpose();
  Vec<R> sum_dxhat_xhat =
      (dxhat.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  Mat<R> dx = R(m) * dxhat;
  dx.rowwise() -= sum_dxhat.transpose();
  dx -= cache.xhat * sum_dxhat_xhat.asDiagonal();
  dx.array().rowwise() *= (cache.inv_std.transpose().array() / R(m));
  return dx;
}

// ---- TDNN layer ---------------------------------------------------------------

template <typename R>
struct TdnnLayerCache {
  Mat<R> xc;       // context-expanded input
  Mat<R> pre;      // affine output
  Mat<R> act;      // post leaky-ReLU
  BnCache<R> bn;
  Mat<R> drop_mask;  // empty when no dropout applied
  Eigen::Index in_rows = 0;
  Eigen::Index in_cols = 0;
};

// Expands x (T x F) into (T' x K*F) rows of concatenated context frames.
template <typename R>
Mat<R> splice_context(const Mat<R> &x, const std::vector<int> &context) {
  const int min_off = context.front();
  const int max_off = context.back();
  const Eigen::Index t_out = x.rows() - (max_off - min_off);
  if (t_out < 1)
    throw Error("tdnn layer: input of " + std::to_string(x.rows()) +
                " frames is shorter than the receptive field");
  const Eigen::Index f = x.cols();
  Mat<R> xc(t_out, static_cast<Eigen::Index>(context.size()) * f);
  for (size_t k = 0; k < context.size(); ++k) {
    const Eigen::Index shift = context[k] - min_off;
    xc.block(0, static_cast<Eigen::Index>(k) * f, t_out, f) =
        x.block(shift, 0, t_out, f);
  }
  return xc;
}

// One frame-level layer: affine over spliced context, leaky ReLU, batch norm
// over the frames of this crop, optional dropout (train mode).
template <typename R>
Mat<R> tdnn_layer_forward(const TdnnLayerParams<R> &layer,
                          const std::vector<int> &context, const Mat<R> &x,
                          const ArchConfig &arch, NetMode mode,
                          const BnStats<R> &running, BnStats<R> *update_running,
                          R dropout_p, Rng *dropout_rng,
                          TdnnLayerCache<R> *cache) {
  Mat<R> xc = splice_context(x, context);
  Mat<R> pre = xc * layer.aff.W.transpose();
  pre.rowwise() += layer.aff.b.transpose();
  Mat<R> act = leaky_relu(pre, static_cast<R>(arch.leaky_slope));
  BnCache<R> bn_cache;
  Mat<R> y = batch_norm_forward(act, layer.bn, static_cast<R>(arch.bn_eps), mode,
                                running, update_running,
                                static_cast<R>(arch.bn_momentum),
                                cache ? &bn_cache : nullptr);
  Mat<R> drop_mask;
  if (mode == NetMode::kTrain && dropout_p > R(0)) {
    drop_mask = dropout_mask<R>(y.rows(), y.cols(), dropout_p, *dropout_rng);
    y = y.cwiseProduct(drop_mask);
  }
  if (cache) {
    cache->xc = std::move(xc);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->bn = std::move(bn_cache);
    cache->drop_mask = std::move(drop_mask);
    cache->in_rows = x.rows();
    cache->in_cols = x.cols();
  }
  return y;
}

template <typename R>
Mat<R> tdnn_layer_backward(const TdnnLayerParams<R> &layer,
                           const std::vector<int> &context,
                           const TdnnLayerCache<R> &cache, const ArchConfig &arch,
                           const Mat<R> &dy_in, TdnnLayerParams<R> *grads) {
  Mat<R> dy = dy_in;
  if (cache.drop_mask.size() > 0) dy = dy.cwiseProduct(cache.drop_mask);
  Mat<R> dact = batch_norm_backward(dy, layer.bn, cache.bn, &grads->bn.gamma,
                                    &grads->bn.beta);
  Mat<R> dpre = leaky_relu_grad(cache.pre, dact, static_cast<R>(arch.leaky_slope));
  grads->aff.W += dpre.transpose() * cache.xc;
  grads->aff.b += dpre.colwise().sum().transpose();
  Mat<R> dxc = dpre * layer.aff.W;
  // Scatter context-expanded gradient back onto input frames.
  Mat<R> dx = Mat<R>::Zero(cache.in_rows, cache.in_cols);
  const int min_off = context.front();
  const Eigen::Index f = cache.in_cols;
  const Eigen::Index t_out = dxc.rows();
  for (size_t k = 0; k < context.size(); ++k) {
    const Eigen::Index shift = context[k] - min_off;
    dx.block(shift, 0, t_out, f) +=
        dxc.block(0, static_cast<Eigen::Index>(k) * f, t_out, f);
  }
  return dx;
}

// ---- attentive statistics pooling -------------------------------------------------

template <typename R>
struct AttentionCache {
  Mat<R> h;      // T x D input
  Mat<R> a;      // tanh(W h + b), T x H
  Vec<R> alpha;  // attention weights, T
  Vec<R> mu, m2, svar, sigma;
};

// alpha_t = softmax_t(v' tanh(W h_t + b)); output = [weighted mean;
// weighted std with variance floor eps].
template <typename R>
Vec<R> attentive_stats_pool(const AttentionParams<R> &att, const Mat<R> &h,
                            R eps, AttentionCache<R> *cache) {
  Mat<R> z = h * att.W.transpose();
  z.rowwise() += att.b.transpose();
  Mat<R> a = z.array().tanh().matrix();
  Vec<R> scores = a * att.v;
  R max_score = scores.maxCoeff();
  Vec<R> alpha = (scores.array() - max_score).exp().matrix();
  alpha /= alpha.sum();
  Vec<R> mu = h.transpose() * alpha;
  Vec<R> m2 = h.array().square().matrix().transpose() * alpha;
  Vec<R> svar = m2 - mu.cwiseProduct(mu);
  Vec<R> sigma = svar.array().max(eps).sqrt().matrix();
  Vec<R> out(2 * h.cols());
  out << mu, sigma;
  if (cache) {
    cache->h = h;
    cache->a = std::move(a);
    cache->alpha = std::move(alpha);
    cache->mu = std::move(mu);
    cache->m2 = std::move(m2);
    cache->svar = std::move(svar);
    cache->sigma = std::move(sigma);
  }
  return out;
}

template <typename R>
Mat<R> attentive_stats_pool_backward(const AttentionParams<R> &att,
                                     const AttentionCache<R> &cache, R eps,
                                     const Vec<R> &d_out,
                                     AttentionParams<R> *grads) {
  const Eigen::Index d = cache.h.cols();
  Vec<R> dmu_up = d_out.head(d);
  Vec<R> dsigma = d_out.tail(d);
  // Variance floor: zero derivative where the floor is active.
  Vec<R> dsvar(d);
  for (Eigen::Index i = 0; i < d; ++i)
    dsvar(i) = cache.svar(i) > eps ? dsigma(i) * R(0.5) / cache.sigma(i) : R(0);
  Vec<R> dmu = dmu_up - R(2) * dsvar.cwiseProduct(cache.mu);
  const Vec<R> &dm2 = dsvar;
  // d alpha_t = h_t . dmu + h_t^2 . dm2
  Vec<R> dalpha = cache.h * dmu + cache.h.array().square().matrix() * dm2;
  // dh from the weighted statistics.
  Mat<R> dh = cache.alpha * dmu.transpose() +
              R(2) * (cache.alpha * dm2.transpose()).cwiseProduct(cache.h);
  // Softmax backward.
  R sdot = cache.alpha.dot(dalpha);
  Vec<R> dscores = (cache.alpha.array() * (dalpha.array() - sdot)).matrix();
  grads->v += cache.a.transpose() * dscores;
  Mat<R> da = dscores * att.v.transpose();
  Mat<R> dz = (da.array() * (R(1) - cache.a.array().square())).matrix();
  grads->W += dz.transpose() * cache.h;
  grads->b += dz.colwise().sum().transpose();
  dh += dz * att.W;
  return dh;
}

// ---- generator ---------------------------------------------------------------------

template <typename R>
struct GeneratorCache {
  std::vector<TdnnLayerCache<R>> layers;
  AttentionCache<R> att;
  Vec<R> pooled;
};

// Full embedding extractor for one crop of frames. In train mode batch-norm
// uses the crop's own frame statistics (and updates running stats when
// update_running is set); eval mode uses running statistics and is a pure
// function of (input, parameters).
template <typename R>
Vec<R> generator_forward(const GeneratorParams<R> &gen, const ArchConfig &arch,
                         const RunningStats<R> &running, const Mat<R> &feats,
                         NetMode mode, RunningStats<R> *update_running,
                         R dropout_p, Rng *dropout_rng,
                         GeneratorCache<R> *cache) {
  if (feats.rows() < arch.receptive_field())
    throw Error("generator_forward: crop of " + std::to_string(feats.rows()) +
                " frames is shorter than the receptive field (" +
                std::to_string(arch.receptive_field()) + ")");
  if (cache) cache->layers.resize(gen.tdnn.size());
  Mat<R> h = feats;
  for (size_t i = 0; i < gen.tdnn.size(); ++i) {
    h = tdnn_layer_forward(gen.tdnn[i], arch.tdnn_contexts[i], h, arch, mode,
                           running.tdnn[i],
                           update_running ? &update_running->tdnn[i] : nullptr,
                           dropout_p, dropout_rng,
                           cache ? &cache->layers[i] : nullptr);
  }
  Vec<R> pooled = attentive_stats_pool(gen.att, h, static_cast<R>(arch.bn_eps),
                                       cache ? &cache->att : nullptr);
  Vec<R> emb = gen.proj.W * pooled + gen.proj.b;
  if (cache) cache->pooled = std::move(pooled);
  return emb;
}

template <typename R>
void generator_backward(const GeneratorParams<R> &gen, const ArchConfig &arch,
                        const GeneratorCache<R> &cache, const Vec<R> &d_emb,
                        GeneratorParams<R> *grads, Mat<R> *d_input = nullptr) {
  grads->proj.W += d_emb * cache.pooled.transpose();
  grads->proj.b += d_emb;
  Vec<R> d_pooled = gen.proj.W.transpose() * d_emb;
  Mat<R> dh = attentive_stats_pool_backward(gen.att, cache.att,
                                            static_cast<R>(arch.bn_eps),
                                            d_pooled, &grads->att);
  for (size_t i = gen.tdnn.size(); i-- > 0;) {
    dh = tdnn_layer_backward(gen.tdnn[i], arch.tdnn_contexts[i], cache.layers[i],
                             arch, dh, &grads->tdnn[i]);
  }
  if (d_input) *d_input = std::move(dh);
}

// ---- AM-softmax classifier ------------------------------------------------------------

template <typename R>
struct ClassifierCache {
  Mat<R> emb;
  Mat<R> pre, act;
  BnCache<R> bn;
  Mat<R> drop_mask;
  Mat<R> z;        // hidden output after dropout
  Vec<R> z_norm;
  Mat<R> zhat;
  Mat<R> what;     // normalized class rows
  Vec<R> w_norm;
  Mat<R> cosine;
  Mat<R> prob;
  std::vector<int> labels;
};

// Additive-margin softmax over cosine logits; loss averaged over the batch.
// Accuracy is argmax over the raw cosines (margin excluded).
template <typename R>
R am_softmax_loss(const ClassifierParams<R> &cls, const ArchConfig &arch,
                  const RunningStats<R> &running, const Mat<R> &emb,
                  const std::vector<int> &labels, NetMode mode,
                  RunningStats<R> *update_running, R dropout_p, Rng *dropout_rng,
                  ClassifierCache<R> *cache, double *accuracy = nullptr) {
  const Eigen::Index batch = emb.rows();
  if (static_cast<size_t>(batch) != labels.size())
    throw Error("am_softmax_loss: labels/batch size mismatch");
  for (int label : labels)
    if (label < 0 || label >= arch.num_classes)
      throw Error("am_softmax_loss: label " + std::to_string(label) +
                  " out of range [0, " + std::to_string(arch.num_classes) + ")");
  Mat<R> pre = emb * cls.hidden.W.transpose();
  pre.rowwise() += cls.hidden.b.transpose();
  Mat<R> act = leaky_relu(pre, static_cast<R>(arch.leaky_slope));
  BnCache<R> bn_cache;
  Mat<R> z = batch_norm_forward(act, cls.bn, static_cast<R>(arch.bn_eps), mode,
                                running.cls_hidden,
                                update_running ? &update_running->cls_hidden : nullptr,
                                static_cast<R>(arch.bn_momentum),
                                cache ? &bn_cache : nullptr);
  Mat<R> drop_mask;
  if (mode == NetMode::kTrain && dropout_p > R(0)) {
    drop_mask = dropout_mask<R>(z.rows(), z.cols(), dropout_p, *dropout_rng);
    z = z.cwiseProduct(drop_mask);
  }
  const R norm_floor = R(1e-12);
  Vec<R> z_norm = z.rowwise().norm().cwiseMax(norm_floor);
  Mat<R> zhat = (z.array().colwise() / z_norm.array()).matrix();
  Vec<R> w_norm = cls.out_W.rowwise().norm().cwiseMax(norm_floor);
  Mat<R> what = (cls.out_W.array().colwise() / w_norm.array()).matrix();
  Mat<R> cosine = zhat * what.transpose();  // batch x classes

  const R s = static_cast<R>(arch.am_scale);
  const R m = static_cast<R>(arch.am_margin);
  Mat<R> logits = s * cosine;
  for (Eigen::Index i = 0; i < batch; ++i) logits(i, labels[i]) -= s * m;
  // Stable softmax cross-entropy.
  R loss = R(0);
  Mat<R> prob(batch, arch.num_classes);
  int correct = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    R mx = logits.row(i).maxCoeff();
    Vec<R> e = (logits.row(i).array() - mx).exp().matrix().transpose();
    R sum = e.sum();
    prob.row(i) = (e / sum).transpose();
    loss += std::log(sum) + mx - logits(i, labels[i]);
    Eigen::Index argmax;
    cosine.row(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == labels[i]) ++correct;
  }
  loss /= R(batch);
  if (accuracy) *accuracy = static_cast<double>(correct) / static_cast<double>(batch);
  if (cache) {
    cache->emb = emb;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->bn = std::move(bn_cache);
    cache->drop_mask = std::move(drop_mask);
    cache->z = std::move(z);
    cache->z_norm = std::move(z_norm);
    cache->zhat = std::move(zhat);
    cache->what = std::move(what);
    cache->w_norm = std::move(w_norm);
    cache->cosine = std::move(cosine);
    cache->prob = std::move(prob);
    cache->labels = labels;
  }
  return loss;
}

template <typename R>
void am_softmax_backward(const ClassifierParams<R> &cls, const ArchConfig &arch,
                         const ClassifierCache<R> &cache,
                         ClassifierParams<R> *grads, Mat<R> *d_emb) {
  const Eigen::Index batch = cache.emb.rows();
  const R s = static_cast<R>(arch.am_scale);
  Mat<R> dlogits = cache.prob;
  for (Eigen::Index i = 0; i < batch; ++i) dlogits(i, cache.labels[i]) -= R(1);
  dlogits /= R(batch);
  Mat<R> dcos = s * dlogits;

  // Through the double cosine normalization.
  Mat<R> dzhat = dcos * cache.what;  // batch x hidden
  Mat<R> dz(batch, cache.z.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    R dot = dzhat.row(i).dot(cache.zhat.row(i));
    dz.row(i) = (dzhat.row(i) - dot * cache.zhat.row(i)) / cache.z_norm(i);
  }
  Mat<R> dwhat = dcos.transpose() * cache.zhat;  // classes x hidden
  for (Eigen::Index j = 0; j < cache.what.rows(); ++j) {
    R dot = dwhat.row(j).dot(cache.what.row(j));
    grads->out_W.row(j) += (dwhat.row(j) - dot * cache.what.row(j)) / cache.w_norm(j);
  }

  if (cache.drop_mask.size() > 0) dz = dz.cwiseProduct(cache.drop_mask);
  Mat<R> dact = batch_norm_backward(dz, cls.bn, cache.bn, &grads->bn.gamma,
                                    &grads->bn.beta);
  Mat<R> dpre = leaky_relu_grad(cache.pre, dact, static_cast<R>(arch.leaky_slope));
  grads->hidden.W += dpre.transpose() * cache.emb;
  grads->hidden.b += dpre.colwise().sum().transpose();
  if (d_emb) *d_emb = dpre * cls.hidden.W;
}

// ---- gradient reversal ------------------------------------------------------------------

// Forward is the identity; the backward connector multiplies by -lambda.
template <typename R>
Mat<R> grad_reverse_forward(const Mat<R> &x) {
  return x;
}

template <typename R>
Mat<R> grad_reverse_backward(const Mat<R> &upstream, R lambda) {
  return (-lambda) * upstream;
}

template <typename R>
Vec<R> grad_reverse_backward(const Vec<R> &upstream, R lambda) {
  return (-lambda) * upstream;
}

// ---- Siamese pair discriminator -----------------------------------------------------------

template <typename R>
struct PairDiscCache {
  Mat<R> input;
  Mat<R> pre, act;
  Vec<R> logits;
  std::vector<uint8_t> labels;
};

template <typename R>
R stable_sigmoid(R x) {
  if (x >= R(0)) return R(1) / (R(1) + std::exp(-x));
  R e = std::exp(x);
  return e / (R(1) + e);
}

template <typename R>
Vec<R> pair_disc_logits(const PairDiscParams<R> &disc, const ArchConfig &arch,
                        const Mat<R> &inputs, PairDiscCache<R> *cache = nullptr) {
  if (inputs.cols() != disc.hidden.W.cols())
    throw Error("pair discriminator: input dim " + std::to_string(inputs.cols()) +
                " does not match expected " + std::to_string(disc.hidden.W.cols()));
  Mat<R> pre = inputs * disc.hidden.W.transpose();
  pre.rowwise() += disc.hidden.b.transpose();
  Mat<R> act = leaky_relu(pre, static_cast<R>(arch.leaky_slope));
  Vec<R> logits = act * disc.out_w;
  logits.array() += disc.out_b(0);
  if (cache) {
    cache->input = inputs;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->logits = logits;
  }
  return logits;
}

// Binary cross-entropy with logits against the within-recording label,
// averaged over the pair batch.
template <typename R>
R pair_disc_loss(const PairDiscParams<R> &disc, const ArchConfig &arch,
                 const Mat<R> &inputs, const std::vector<uint8_t> &labels,
                 PairDiscCache<R> *cache, double *accuracy = nullptr) {
  if (static_cast<size_t>(inputs.rows()) != labels.size())
    throw Error("pair_disc_loss: labels/batch size mismatch");
  PairDiscCache<R> local;
  PairDiscCache<R> *c = cache ? cache : &local;
  Vec<R> logits = pair_disc_logits(disc, arch, inputs, c);
  c->labels = labels;
  R loss = R(0);
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    R l = logits(i);
    R y = labels[i] ? R(1) : R(0);
    loss += std::max(l, R(0)) - l * y + std::log1p(std::exp(-std::abs(l)));
    if ((l > R(0)) == (labels[i] != 0)) ++correct;
  }
  loss /= R(logits.size());
  if (accuracy)
    *accuracy = static_cast<double>(correct) / static_cast<double>(logits.size());
  return loss;
}

template <typename R>
void pair_disc_backward(const PairDiscParams<R> &disc, const ArchConfig &arch,
                        const PairDiscCache<R> &cache, PairDiscParams<R> *grads,
                        Mat<R> *d_input) {
  const Eigen::Index n = cache.logits.size();
  Vec<R> dlogits(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    R y = cache.labels[i] ? R(1) : R(0);
    dlogits(i) = (stable_sigmoid(cache.logits(i)) - y) / R(n);
  }
  grads->out_w += cache.act.transpose() * dlogits;
  grads->out_b(0) += dlogits.sum();
  Mat<R> dact = dlogits * disc.out_w.transpose();
  Mat<R> dpre = leaky_relu_grad(cache.pre, dact, static_cast<R>(arch.leaky_slope));
  grads->hidden.W += dpre.transpose() * cache.input;
  grads->hidden.b += dpre.colwise().sum().transpose();
  if (d_input) *d_input = dpre * disc.hidden.W;
}

// ---- dataset discriminator ------------------------------------------------------------------

template <typename R>
struct DatasetDiscCache {
  Mat<R> input;
  Mat<R> pre, act;
  Mat<R> logits, prob;
  std::vector<int> labels;
};

// Plain cross-entropy over dataset classes, on every embedding in the batch.
template <typename R>
R dataset_disc_loss(const DatasetDiscParams<R> &disc, const ArchConfig &arch,
                    const Mat<R> &inputs, const std::vector<int> &labels,
                    DatasetDiscCache<R> *cache, double *accuracy = nullptr) {
  if (static_cast<size_t>(inputs.rows()) != labels.size())
    throw Error("dataset_disc_loss: labels/batch size mismatch");
  if (inputs.cols() != disc.hidden.W.cols())
    throw Error("dataset discriminator: input dim mismatch");
  Mat<R> pre = inputs * disc.hidden.W.transpose();
  pre.rowwise() += disc.hidden.b.transpose();
  Mat<R> act = leaky_relu(pre, static_cast<R>(arch.leaky_slope));
  Mat<R> logits = act * disc.out.W.transpose();
  logits.rowwise() += disc.out.b.transpose();
  const Eigen::Index batch = inputs.rows();
  const Eigen::Index k = logits.cols();
  R loss = R(0);
  Mat<R> prob(batch, k);
  int correct = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw Error("dataset_disc_loss: label out of range");
    R mx = logits.row(i).maxCoeff();
    Vec<R> e = (logits.row(i).array() - mx).exp().matrix().transpose();
    R sum = e.sum();
    prob.row(i) = (e / sum).transpose();
    loss += std::log(sum) + mx - logits(i, labels[i]);
    Eigen::Index argmax;
    logits.row(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == labels[i]) ++correct;
  }
  loss /= R(batch);
  if (accuracy) *accuracy = static_cast<double>(correct) / static_cast<double>(batch);
  if (cache) {
    cache->input = inputs;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->logits = std::move(logits);
    cache->prob = std::move(prob);
    cache->labels = labels;
  }
  return loss;
}

template <typename R>
void dataset_disc_backward(const DatasetDiscParams<R> &disc, const ArchConfig &arch,
                           const DatasetDiscCache<R> &cache,
                           DatasetDiscParams<R> *grads, Mat<R> *d_input) {
  const Eigen::Index batch = cache.input.rows();
  Mat<R> dlogits = cache.prob;
  for (Eigen::Index i = 0; i < batch; ++i) dlogits(i, cache.labels[i]) -= R(1);
  dlogits /= R(batch);
  grads->out.W += dlogits.transpose() * cache.act;
  grads->out.b += dlogits.colwise().sum().transpose();
  Mat<R> dact = dlogits * disc.out.W;
  Mat<R> dpre = leaky_relu_grad(cache.pre, dact, static_cast<R>(arch.leaky_slope));
  grads->hidden.W += dpre.transpose() * cache.input;
  grads->hidden.b += dpre.colwise().sum().transpose();
  if (d_input) *d_input = dpre * disc.hidden.W;
}

// ---- loss report ---------------------------------------------------------------------------

struct LossReport {
  double loss_c = 0.0;
  double loss_d = 0.0;
  double loss_total = 0.0;  // loss_c - lambda * loss_d
  double acc_c = 0.0;
  double acc_d = 0.0;
};

// ---- checkpoints -----------------------------------------------------------------------------

// Saves parameters and running statistics (names under "running."), plus any
// extra tensors the caller owns (e.g. optimizer state under "optim.").
void save_checkpoint(const std::string &path, const Model<float> &model,
                     const KvPairs &extra_kv,
                     const std::vector<NamedTensor> &extra_tensors = {});

// Loads a checkpoint; unknown tensors (e.g. "optim.*") are returned through
// leftover when requested, otherwise ignored.
Model<float> load_checkpoint(const std::string &path, KvPairs *extra_kv = nullptr,
                             std::vector<NamedTensor> *leftover = nullptr);

}  // namespace cadv

#endif  // CADV_NETWORK_H_
