// src/eval.cc

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

#include "cadv/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "cadv/backend.h"
#include "cadv/io.h"

namespace cadv {

// ---- trials -----------------------------------------------------------------

std::vector<Trial> build_trials(const CorpusIndex &index, TrialScope scope,
                                double min_dur_s, size_t max_trials,
                                uint64_t seed) {
  std::vector<const UtteranceRecord *> eligible;
  for (const auto &[id, rec] : index.utterances())
    if (rec.duration_s() >= min_dur_s) eligible.push_back(&rec);

  std::vector<Trial> targets, nontargets;
  for (size_t i = 0; i < eligible.size(); ++i) {
    for (size_t j = i + 1; j < eligible.size(); ++j) {
      const auto &a = *eligible[i], &b = *eligible[j];
      bool same_rec = a.recording_id == b.recording_id;
      if (scope == TrialScope::kWithinRecording && !same_rec) continue;
      if (scope == TrialScope::kCrossRecording && same_rec) continue;
      Trial t{a.utt_id, b.utt_id, a.speaker_id == b.speaker_id};
      (t.target ? targets : nontargets).push_back(std::move(t));
    }
  }
  if (targets.empty() && nontargets.empty())
    throw Error("build_trials: no eligible pairs");

  Rng rng(seed);
  rng.shuffle(targets);
  rng.shuffle(nontargets);
  // Balance up to availability within the max_trials budget.
  size_t half = std::max<size_t>(max_trials / 2, 1);
  size_t n_t = std::min(targets.size(), half);
  size_t n_n = std::min(nontargets.size(), max_trials - n_t);
  n_t = std::min(targets.size(), max_trials - n_n);
  std::vector<Trial> out;
  out.reserve(n_t + n_n);
  out.insert(out.end(), targets.begin(), targets.begin() + n_t);
  out.insert(out.end(), nontargets.begin(), nontargets.begin() + n_n);
  return out;
}

// ---- EER --------------------------------------------------------------------

double compute_eer(const std::vector<double> &target_scores,
                   const std::vector<double> &nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty())
    throw Error("compute_eer: need at least one target and one nontarget");
  for (double s : target_scores)
    if (!std::isfinite(s)) throw Error("compute_eer: non-finite score");
  for (double s : nontarget_scores)
    if (!std::isfinite(s)) throw Error("compute_eer: non-finite score");

  std::vector<double> tar = target_scores, non = nontarget_scores;
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());
  std::vector<double> thresholds;
  thresholds.reserve(tar.size() + non.size());
  thresholds.insert(thresholds.end(), tar.begin(), tar.end());
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  const double p = static_cast<double>(tar.size());
  const double m = static_cast<double>(non.size());
  // Operating points for "accept iff score >= threshold", thresholds
  // descending; FAR rises from 0 while FRR falls from 1.
  double prev_far = 0.0, prev_frr = 1.0;
  for (double th : thresholds) {
    double n_fa = static_cast<double>(
        non.end() - std::lower_bound(non.begin(), non.end(), th));
    double n_fr = static_cast<double>(
        std::lower_bound(tar.begin(), tar.end(), th) - tar.begin());
    double far = n_fa / m, frr = n_fr / p;
    if (far >= frr) {
      double denom = (far - prev_far) - (frr - prev_frr);
      if (denom <= 0.0) return far;  // exactly equal, or degenerate segment
      double t = (prev_frr - prev_far) / denom;
      return prev_far + t * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  // Below the smallest score everything is accepted: (FAR, FRR) = (1, 0).
  double denom = (1.0 - prev_far) + prev_frr;
  double t = (prev_frr - prev_far) / denom;
  return prev_far + t * (1.0 - prev_far);
}

double compute_eer(const std::vector<TrialScore> &scores) {
  std::vector<double> tar, non;
  for (const auto &ts : scores) (ts.trial.target ? tar : non).push_back(ts.score);
  return compute_eer(tar, non);
}

void save_trials(const std::string &path, const std::vector<Trial> &trials) {
  std::string out;
  for (const Trial &t : trials) {
    out += t.target ? "1 " : "0 ";
    out += t.utt_a + " " + t.utt_b + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<Trial> load_trials(const std::string &path) {
  std::vector<Trial> trials;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> fields;
    for (const auto &f : split(lines[i], ' '))
      if (!f.empty()) fields.push_back(f);
    if (fields.size() != 3)
      throw Error(path + " line " + std::to_string(i + 1) +
                  ": expected '<label> <utt_a> <utt_b>'");
    if (fields[0] != "0" && fields[0] != "1")
      throw Error(path + " line " + std::to_string(i + 1) + ": label must be 0 or 1");
    trials.push_back({fields[1], fields[2], fields[0] == "1"});
  }
  return trials;
}

void save_scores(const std::string &path, const std::vector<TrialScore> &scores) {
  std::string out;
  for (const auto &ts : scores)
    out += ts.trial.utt_a + " " + ts.trial.utt_b + " " + format_double(ts.score) + "\n";
  write_text_atomic(path, out);
}

std::vector<TrialScore> load_scores(const std::string &path,
                                    const std::vector<Trial> &trials) {
  std::map<std::pair<std::string, std::string>, double> by_pair;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> fields;
    for (const auto &f : split(lines[i], ' '))
      if (!f.empty()) fields.push_back(f);
    if (fields.size() != 3)
      throw Error(path + " line " + std::to_string(i + 1) +
                  ": expected '<utt_a> <utt_b> <score>'");
    by_pair[{fields[0], fields[1]}] =
        parse_double(fields[2], "score at line " + std::to_string(i + 1));
  }
  std::vector<TrialScore> out;
  for (const Trial &t : trials) {
    auto it = by_pair.find({t.utt_a, t.utt_b});
    if (it == by_pair.end()) it = by_pair.find({t.utt_b, t.utt_a});
    if (it == by_pair.end())
      throw Error(path + ": no score for trial " + t.utt_a + " " + t.utt_b);
    out.push_back({t, it->second});
  }
  return out;
}

// ---- subsegmentation ----------------------------------------------------------

std::vector<TimeSpan> subsegment(const std::vector<TimeSpan> &speech_marks,
                                 double win_s, double hop_s, double min_tail_s) {
  if (win_s <= 0 || hop_s <= 0 || hop_s > win_s)
    throw Error("subsegment: need 0 < hop <= win");
  const double eps = 1e-9;
  std::vector<TimeSpan> out;
  for (const TimeSpan &region : speech_marks) {
    if (!(region.offset_s > region.onset_s))
      throw Error("subsegment: empty speech region");
    size_t region_first = out.size();
    double start = region.onset_s;
    double covered = region.onset_s;
    while (start + win_s <= region.offset_s + eps) {
      out.push_back({start, std::min(start + win_s, region.offset_s)});
      covered = out.back().offset_s;
      start += hop_s;
    }
    if (covered < region.offset_s - eps) {
      double tail_len = region.offset_s - start;
      if (out.size() == region_first) {
        // Region shorter than one window: it becomes its own subsegment.
        out.push_back({region.onset_s, region.offset_s});
      } else if (tail_len >= min_tail_s) {
        out.push_back({start, region.offset_s});
      } else {
        out.back().offset_s = region.offset_s;
      }
    }
  }
  return out;
}

// ---- AHC ------------------------------------------------------------------------

std::vector<int> ahc_cluster(const Matd &similarity, const AhcStop &stop) {
  const Eigen::Index n = similarity.rows();
  if (n == 0) throw Error("ahc_cluster: empty similarity matrix");
  if (similarity.cols() != n)
    throw Error("ahc_cluster: matrix must be square");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(similarity(i, i) - 1.0) > 1e-6)
      throw Error("ahc_cluster: diagonal must be 1");
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (std::abs(similarity(i, j) - similarity(j, i)) > 1e-6)
        throw Error("ahc_cluster: matrix must be symmetric");
  }

  struct Cluster {
    int rep;  // smallest original index
    int size;
    bool active;
  };
  std::vector<Cluster> clusters(n);
  std::vector<int> assign(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    clusters[i] = {static_cast<int>(i), 1, true};
    assign[i] = static_cast<int>(i);
  }
  Matd linkage = similarity;
  int active = static_cast<int>(n);
  const int target = stop.target_clusters;

  while (active > 1) {
    if (target > 0 && active <= target) break;
    // Best pair by linkage; ties by smallest (rep_i, rep_j).
    int best_i = -1, best_j = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!clusters[i].active) continue;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (!clusters[j].active) continue;
        double l = linkage(i, j);
        bool better = l > best;
        if (!better && l == best && best_i >= 0) {
          auto cur = std::minmax(clusters[i].rep, clusters[j].rep);
          auto old = std::minmax(clusters[best_i].rep, clusters[best_j].rep);
          better = cur < old;
        }
        if (better) {
          best = l;
          best_i = static_cast<int>(i);
          best_j = static_cast<int>(j);
        }
      }
    }
    if (target <= 0 && best < stop.threshold) break;
    // Average linkage update (Lance-Williams).
    const double si = clusters[best_i].size, sj = clusters[best_j].size;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!clusters[k].active || k == best_i || k == best_j) continue;
      double l = (si * linkage(best_i, k) + sj * linkage(best_j, k)) / (si + sj);
      linkage(best_i, k) = linkage(k, best_i) = l;
    }
    clusters[best_i].size += clusters[best_j].size;
    clusters[best_i].rep = std::min(clusters[best_i].rep, clusters[best_j].rep);
    clusters[best_j].active = false;
    for (Eigen::Index k = 0; k < n; ++k)
      if (assign[k] == best_j) assign[k] = best_i;
    --active;
  }

  // Renumber labels by first appearance.
  std::map<int, int> renumber;
  std::vector<int> labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [it, inserted] = renumber.try_emplace(assign[i],
                                               static_cast<int>(renumber.size()));
    labels[i] = it->second;
  }
  return labels;
}

// ---- overlap resolution -----------------------------------------------------------

DiarizationHypothesis resolve_overlaps(const std::string &recording_id,
                                       const std::vector<TimeSpan> &subsegments,
                                       const std::vector<int> &labels) {
  if (subsegments.size() != labels.size())
    throw Error("resolve_overlaps: subsegments/labels size mismatch");
  DiarizationHypothesis hyp;
  hyp.recording_id = recording_id;
  if (subsegments.empty()) return hyp;

  std::vector<size_t> order(subsegments.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (subsegments[a].onset_s != subsegments[b].onset_s)
      return subsegments[a].onset_s < subsegments[b].onset_s;
    return subsegments[a].offset_s < subsegments[b].offset_s;
  });

  const double eps = 1e-9;
  LabeledSegment cur{subsegments[order[0]].onset_s, subsegments[order[0]].offset_s,
                     std::to_string(labels[order[0]])};
  for (size_t k = 1; k < order.size(); ++k) {
    TimeSpan next = subsegments[order[k]];
    std::string next_label = std::to_string(labels[order[k]]);
    if (next_label == cur.label && next.onset_s <= cur.offset_s + eps) {
      cur.offset_s = std::max(cur.offset_s, next.offset_s);
      continue;
    }
    if (next.onset_s < cur.offset_s - eps) {
      double mid = 0.5 * (next.onset_s + cur.offset_s);
      mid = std::min(mid, next.offset_s);
      cur.offset_s = mid;
      next.onset_s = mid;
    }
    if (cur.offset_s > cur.onset_s + eps) hyp.segments.push_back(cur);
    cur = {next.onset_s, next.offset_s, std::move(next_label)};
  }
  if (cur.offset_s > cur.onset_s + eps) hyp.segments.push_back(cur);
  return hyp;
}

// ---- Hungarian ----------------------------------------------------------------------

std::vector<int> hungarian_min_cost(const Matd &cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw Error("hungarian_min_cost: matrix must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assign[p[j] - 1] = j - 1;
  return assign;
}

// ---- DER ------------------------------------------------------------------------------

namespace {

struct Interval {
  double lo, hi;
};

std::vector<Interval> merge_intervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(),
            [](const Interval &a, const Interval &b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  for (const auto &iv : v) {
    if (!out.empty() && iv.lo <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, iv.hi);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

bool inside_any(const std::vector<Interval> &v, double t) {
  for (const auto &iv : v)
    if (t >= iv.lo && t <= iv.hi) return true;
  return false;
}

}  // namespace

DerReport compute_der(const ReferenceDiarization &ref,
                      const DiarizationHypothesis &hyp, double collar_s) {
  if (!ref.recording_id.empty() && !hyp.recording_id.empty() &&
      ref.recording_id != hyp.recording_id)
    throw Error("compute_der: recording ids differ ('" + ref.recording_id +
                "' vs '" + hyp.recording_id + "')");
  if (ref.segments.empty()) throw Error("compute_der: empty reference");

  // Collar exclusion zones around every reference boundary.
  std::vector<Interval> excluded;
  for (const auto &seg : ref.segments) {
    if (!(seg.offset_s > seg.onset_s))
      throw Error("compute_der: degenerate reference segment");
    if (collar_s > 0) {
      excluded.push_back({seg.onset_s - collar_s, seg.onset_s + collar_s});
      excluded.push_back({seg.offset_s - collar_s, seg.offset_s + collar_s});
    }
  }
  excluded = merge_intervals(std::move(excluded));

  std::vector<double> points;
  for (const auto &seg : ref.segments) {
    points.push_back(seg.onset_s);
    points.push_back(seg.offset_s);
  }
  for (const auto &seg : hyp.segments) {
    points.push_back(seg.onset_s);
    points.push_back(seg.offset_s);
  }
  for (const auto &iv : excluded) {
    points.push_back(iv.lo);
    points.push_back(iv.hi);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::map<std::string, int> ref_ids, hyp_ids;
  for (const auto &seg : ref.segments) ref_ids.try_emplace(seg.label, ref_ids.size());
  for (const auto &seg : hyp.segments) hyp_ids.try_emplace(seg.label, hyp_ids.size());
  const int nr = static_cast<int>(ref_ids.size());
  const int nh = static_cast<int>(hyp_ids.size());

  struct Slice {
    double dt;
    std::vector<int> ref_active, hyp_active;
  };
  std::vector<Slice> slices;
  Matd overlap = Matd::Zero(std::max(nr, 1), std::max(nh, 1));
  DerReport report;

  for (size_t k = 0; k + 1 < points.size(); ++k) {
    double t0 = points[k], t1 = points[k + 1];
    if (t1 - t0 <= 1e-12) continue;
    double mid = 0.5 * (t0 + t1);
    if (inside_any(excluded, mid)) continue;
    Slice slice;
    slice.dt = t1 - t0;
    std::set<int> ref_set, hyp_set;
    for (const auto &seg : ref.segments)
      if (seg.onset_s <= mid && mid < seg.offset_s)
        ref_set.insert(ref_ids.at(seg.label));
    for (const auto &seg : hyp.segments)
      if (seg.onset_s <= mid && mid < seg.offset_s)
        hyp_set.insert(hyp_ids.at(seg.label));
    if (ref_set.empty() && hyp_set.empty()) continue;
    slice.ref_active.assign(ref_set.begin(), ref_set.end());
    slice.hyp_active.assign(hyp_set.begin(), hyp_set.end());
    const double nr_t = static_cast<double>(slice.ref_active.size());
    const double nh_t = static_cast<double>(slice.hyp_active.size());
    report.scored_speech_s += nr_t * slice.dt;
    report.missed_s += std::max(0.0, nr_t - nh_t) * slice.dt;
    report.falarm_s += std::max(0.0, nh_t - nr_t) * slice.dt;
    for (int r : slice.ref_active)
      for (int h : slice.hyp_active) overlap(r, h) += slice.dt;
    slices.push_back(std::move(slice));
  }

  if (report.scored_speech_s <= 0.0)
    throw Error("compute_der: no scored reference speech after collar exclusion");

  // Optimal one-to-one mapping maximizing overlap time.
  const int dim = std::max(nr, nh);
  double max_entry = overlap.maxCoeff();
  Matd cost = Matd::Constant(dim, dim, max_entry);
  cost.block(0, 0, overlap.rows(), overlap.cols()) =
      (max_entry - overlap.array()).matrix();
  std::vector<int> assign = hungarian_min_cost(cost);
  std::vector<int> ref_to_hyp(nr, -1);
  for (int r = 0; r < nr; ++r)
    if (assign[r] < nh) ref_to_hyp[r] = assign[r];

  for (const auto &slice : slices) {
    int matched = 0;
    for (int r : slice.ref_active) {
      int h = ref_to_hyp[r];
      if (h >= 0 && std::find(slice.hyp_active.begin(), slice.hyp_active.end(), h) !=
                          slice.hyp_active.end())
        ++matched;
    }
    double both = static_cast<double>(
        std::min(slice.ref_active.size(), slice.hyp_active.size()));
    report.confusion_s += (both - matched) * slice.dt;
  }

  report.der =
      (report.missed_s + report.falarm_s + report.confusion_s) / report.scored_speech_s;
  return report;
}

DiarizationHypothesis diarize_recording(const std::string &recording_id,
                                        const Matf &subsegment_embeddings,
                                        const std::vector<TimeSpan> &subsegments,
                                        const AhcStop &stop) {
  const Eigen::Index n = subsegment_embeddings.rows();
  if (n == 0) throw Error("diarize_recording: no subsegment embeddings");
  if (static_cast<size_t>(n) != subsegments.size())
    throw Error("diarize_recording: embeddings/subsegments size mismatch");
  Matd normed(n, subsegment_embeddings.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    normed.row(i) =
        length_normalize(Vecd(subsegment_embeddings.row(i).transpose().cast<double>()))
            .transpose();
  Matd sim = normed * normed.transpose();
  for (Eigen::Index i = 0; i < n; ++i) sim(i, i) = 1.0;
  std::vector<int> labels = ahc_cluster(sim, stop);
  return resolve_overlaps(recording_id, subsegments, labels);
}

// ---- RTTM -------------------------------------------------------------------------------

void save_rttm(const std::string &path,
               const std::vector<DiarizationHypothesis> &hyps) {
  std::string out;
  char buf[256];
  for (const auto &hyp : hyps) {
    for (const auto &seg : hyp.segments) {
      std::snprintf(buf, sizeof(buf),
                    "SPEAKER %s 1 %.3f %.3f <NA> <NA> %s <NA> <NA>\n",
                    hyp.recording_id.c_str(), seg.onset_s,
                    seg.offset_s - seg.onset_s, seg.label.c_str());
      out += buf;
    }
  }
  write_text_atomic(path, out);
}

std::vector<DiarizationHypothesis> load_rttm(const std::string &path) {
  std::vector<DiarizationHypothesis> out;
  std::map<std::string, size_t> rec_pos;
  std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> fields;
    for (const auto &f : split(lines[i], ' '))
      if (!f.empty()) fields.push_back(f);
    if (fields.size() < 8 || fields[0] != "SPEAKER")
      throw Error(path + " line " + std::to_string(i + 1) + ": not an RTTM SPEAKER line");
    const std::string &rec = fields[1];
    double onset = parse_double(fields[3], "RTTM onset");
    double dur = parse_double(fields[4], "RTTM duration");
    auto [it, inserted] = rec_pos.try_emplace(rec, out.size());
    if (inserted) out.push_back({rec, {}});
    out[it->second].segments.push_back({onset, onset + dur, fields[7]});
  }
  return out;
}

std::string der_report_line(const DerReport &r) {
  KvPairs kv = {{"scored_speech_s", format_double(r.scored_speech_s)},
                {"miss_s", format_double(r.missed_s)},
                {"falarm_s", format_double(r.falarm_s)},
                {"confusion_s", format_double(r.confusion_s)},
                {"der", format_double(r.der)}};
  return format_kv_line(kv);
}

}  // namespace cadv
