// Copyright 2026 The ctxpress Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ctxpress/metrics.h"

#include <algorithm>
#include <numeric>
#include <set>

namespace ctxpress {

bool is_correct(const EvalRecord& r, TargetMode mode) {
  const auto predicted = answer_label(r.answer);
  return predicted && *predicted == resolve_target_label(r, mode);
}

double accuracy(std::span<const EvalRecord> records, TargetMode mode) {
  if (records.empty()) throw EmptyInputError("accuracy of an empty record set");
  std::size_t hits = 0;
  for (const auto& r : records) hits += is_correct(r, mode) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::vector<PairedOutcome> pair_outcomes(std::span<const EvalRecord> baseline,
                                         std::span<const EvalRecord> perturbed, TargetMode mode) {
  std::map<std::string, bool> base;
  for (const auto& r : baseline) {
    if (!base.emplace(r.study_id, is_correct(r, mode)).second) {
      throw AlignmentError("baseline has study " + r.study_id + " twice");
    }
  }
  std::vector<PairedOutcome> out;
  out.reserve(perturbed.size());
  std::set<std::string> seen;
  for (const auto& r : perturbed) {
    auto it = base.find(r.study_id);
    if (it == base.end()) throw AlignmentError("study " + r.study_id + " has no baseline");
    if (!seen.insert(r.study_id).second) {
      throw AlignmentError("perturbed side has study " + r.study_id + " twice");
    }
    out.push_back({r.study_id, it->second, is_correct(r, mode)});
  }
  if (seen.size() != base.size()) {
    throw AlignmentError("baseline covers " + std::to_string(base.size()) +
                         " studies, perturbed covers " + std::to_string(seen.size()));
  }
  std::sort(out.begin(), out.end(),
            [](const PairedOutcome& a, const PairedOutcome& b) { return a.study_id < b.study_id; });
  return out;
}

double nfr(std::span<const PairedOutcome> outcomes) {
  std::size_t correct = 0, flipped = 0;
  for (const auto& o : outcomes) {
    if (!o.baseline_correct) continue;
    ++correct;
    if (!o.perturbed_correct) ++flipped;
  }
  if (correct == 0) throw UndefinedMetricError("NFR undefined: no baseline-correct studies");
  return static_cast<double>(flipped) / static_cast<double>(correct);
}

namespace {

void check_aligned(const Predictions& a, const Predictions& b) {
  if (a.size() != b.size() ||
      !std::equal(a.begin(), a.end(), b.begin(),
                  [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw AlignmentError("prediction sets cover different studies");
  }
}

}  // namespace

double flip_rate(const Predictions& a, const Predictions& b) {
  check_aligned(a, b);
  if (a.empty()) throw EmptyInputError("flip rate of empty prediction sets");
  std::size_t discordant = 0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->second != ib->second) ++discordant;
  }
  return static_cast<double>(discordant) / static_cast<double>(a.size());
}

KappaResult cohen_kappa(const Predictions& a, const Predictions& b) {
  check_aligned(a, b);
  KappaResult res;
  std::size_t agree = 0, a_yes = 0, b_yes = 0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (!is_binary(ia->second) || !is_binary(ib->second)) {
      ++res.excluded;
      continue;
    }
    ++res.n;
    if (ia->second == ib->second) ++agree;
    if (ia->second == ModelAnswer::Yes) ++a_yes;
    if (ib->second == ModelAnswer::Yes) ++b_yes;
  }
  if (res.n < 2) throw UndefinedMetricError("Cohen's kappa needs at least 2 binary items");
  const double n = static_cast<double>(res.n);
  const double p_o = static_cast<double>(agree) / n;
  const double pa = static_cast<double>(a_yes) / n;
  const double pb = static_cast<double>(b_yes) / n;
  const double p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (p_e >= 1.0) {
    res.value = 1.0;
    res.degenerate = true;
    return res;
  }
  res.value = (p_o - p_e) / (1.0 - p_e);
  return res;
}

RatingMatrix build_rating_matrix(std::span<const Predictions> raters) {
  RatingMatrix m;
  if (raters.empty()) return m;
  for (const auto& r : raters.subspan(1)) check_aligned(raters.front(), r);
  for (const auto& [study, first] : raters.front()) {
    std::vector<ModelAnswer> row;
    row.reserve(raters.size());
    bool binary = true;
    for (const auto& r : raters) {
      const ModelAnswer a = r.at(study);
      binary = binary && is_binary(a);
      row.push_back(a);
    }
    if (binary) {
      m.rows.push_back(std::move(row));
    } else {
      ++m.excluded_items;
    }
  }
  return m;
}

KappaResult fleiss_kappa(const RatingMatrix& matrix) {
  const std::size_t items = matrix.rows.size();
  if (items < 2) throw MatrixError("Fleiss' kappa needs at least 2 items");
  const std::size_t raters = matrix.rows.front().size();
  if (raters < 2) throw MatrixError("Fleiss' kappa needs at least 2 raters");

  double sum_agreement = 0.0;
  std::size_t total_yes = 0;
  const double n = static_cast<double>(raters);
  for (const auto& row : matrix.rows) {
    if (row.size() != raters) throw MatrixError("ragged rating matrix");
    std::size_t yes = 0;
    for (ModelAnswer a : row) {
      if (!is_binary(a)) throw MatrixError("rating matrix holds a non-binary answer");
      if (a == ModelAnswer::Yes) ++yes;
    }
    const double ny = static_cast<double>(yes);
    const double nn = n - ny;
    sum_agreement += (ny * ny + nn * nn - n) / (n * (n - 1.0));
    total_yes += yes;
  }
  KappaResult res;
  res.n = items;
  res.excluded = matrix.excluded_items;
  const double p_bar = sum_agreement / static_cast<double>(items);
  const double p_yes = static_cast<double>(total_yes) / (static_cast<double>(items) * n);
  const double p_e = p_yes * p_yes + (1.0 - p_yes) * (1.0 - p_yes);
  if (p_e >= 1.0) {
    res.value = 1.0;
    res.degenerate = true;
    return res;
  }
  res.value = (p_bar - p_e) / (1.0 - p_e);
  return res;
}

std::string_view to_string(KappaBand b) {
  switch (b) {
    case KappaBand::Excellent: return "Excellent";
    case KappaBand::Good: return "Good";
    case KappaBand::Fair: return "Fair";
    case KappaBand::Poor: return "Poor";
  }
  return "?";
}

KappaBand kappa_band(double kappa) {
  if (kappa >= 0.75) return KappaBand::Excellent;
  if (kappa >= 0.60) return KappaBand::Good;
  if (kappa >= 0.40) return KappaBand::Fair;
  return KappaBand::Poor;
}

ConfidenceScore score_first_token(double p_yes, int label) {
  return {p_yes, (p_yes > 0.5) == (label == 1)};
}

namespace {

double bin_edge(int i, int m) { return static_cast<double>(i) / static_cast<double>(m); }

int bin_index(double confidence, int m) {
  int idx = static_cast<int>(std::floor(confidence * m));
  idx = std::clamp(idx, 0, m - 1);
  // Snap to the same edges reliability_bins reports.
  while (idx > 0 && confidence < bin_edge(idx, m)) --idx;
  while (idx < m - 1 && confidence >= bin_edge(idx + 1, m)) ++idx;
  return idx;
}

}  // namespace

std::vector<CalibrationBin> reliability_bins(std::span<const ConfidenceScore> scores, int m_bins) {
  if (m_bins < 1) throw RangeError("ECE needs at least one bin");
  std::vector<CalibrationBin> bins(static_cast<std::size_t>(m_bins));
  std::vector<double> conf_sum(bins.size(), 0.0), acc_sum(bins.size(), 0.0);
  for (int i = 0; i < m_bins; ++i) {
    bins[static_cast<std::size_t>(i)].lo = bin_edge(i, m_bins);
    bins[static_cast<std::size_t>(i)].hi = bin_edge(i + 1, m_bins);
  }
  for (const auto& s : scores) {
    if (!(s.p_yes >= 0.0 && s.p_yes <= 1.0)) throw RangeError("p_yes outside [0, 1]");
    const double conf = std::max(s.p_yes, 1.0 - s.p_yes);
    const auto b = static_cast<std::size_t>(bin_index(conf, m_bins));
    ++bins[b].count;
    conf_sum[b] += conf;
    acc_sum[b] += s.correct ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0) continue;
    const double c = static_cast<double>(bins[b].count);
    bins[b].mean_confidence = conf_sum[b] / c;
    bins[b].mean_accuracy = acc_sum[b] / c;
  }
  return bins;
}

double ece(std::span<const ConfidenceScore> scores, int m_bins) {
  if (scores.empty()) throw EmptyInputError("ECE of an empty score set");
  const auto bins = reliability_bins(scores, m_bins);
  const double n = static_cast<double>(scores.size());
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / n * std::abs(b.mean_accuracy - b.mean_confidence);
  }
  return total;
}

double first_token_accuracy(std::span<const LabeledScore> scores) {
  if (scores.empty()) throw EmptyInputError("first-token accuracy of an empty score set");
  std::size_t hits = 0;
  for (const auto& s : scores) {
    if (!(s.p_yes >= 0.0 && s.p_yes <= 1.0)) throw RangeError("p_yes outside [0, 1]");
    if ((s.p_yes > 0.5) == (s.label == 1)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

std::vector<std::size_t> bootstrap_indices(std::size_t n, const BootstrapOptions& options,
                                           int iteration) {
  if (n == 0) return {};
  const auto m = static_cast<std::size_t>(std::clamp<long long>(
      std::llround(options.fraction * static_cast<double>(n)), 1, static_cast<long long>(n)));
  Rng rng(derive_seed(options.seed, {"bootstrap", std::to_string(iteration)}));
  std::vector<std::size_t> out;
  out.reserve(m);
  if (options.with_replacement) {
    for (std::size_t i = 0; i < m; ++i) out.push_back(rng.below(n));
    return out;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
    out.push_back(idx[i]);
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyInputError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace ctxpress
