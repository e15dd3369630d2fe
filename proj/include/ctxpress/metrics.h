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

#ifndef CTXPRESS_METRICS_H_
#define CTXPRESS_METRICS_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxpress/core.h"
#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

// Fraction of records whose binary answer equals the target label view.
// Refusal and ParseError count as incorrect. Throws EmptyInputError.
double accuracy(std::span<const EvalRecord> records, TargetMode mode);

bool is_correct(const EvalRecord& r, TargetMode mode);

struct PairedOutcome {
  std::string study_id;
  bool baseline_correct = false;
  bool perturbed_correct = false;
};

// Joins baseline and perturbed records on study_id. Throws AlignmentError
// unless both sides cover the same studies exactly once.
std::vector<PairedOutcome> pair_outcomes(std::span<const EvalRecord> baseline,
                                         std::span<const EvalRecord> perturbed, TargetMode mode);

// Negative flip rate: share of baseline-correct studies that the perturbation
// makes incorrect. UndefinedMetricError when nothing was baseline-correct.
double nfr(std::span<const PairedOutcome> outcomes);

// Per-study answers of one rater (prompt variant).
using Predictions = std::map<std::string, ModelAnswer>;

// Fraction of studies with differing categories; Refusal and ParseError are
// categories of their own here. Throws AlignmentError on differing key sets.
double flip_rate(const Predictions& a, const Predictions& b);

struct KappaResult {
  double value = 0.0;
  std::size_t n = 0;         // items used
  std::size_t excluded = 0;  // items dropped for a non-binary answer
  bool degenerate = false;   // chance agreement was 1; value set to 1.0
};

// Two-rater kappa over items where both answers are binary.
KappaResult cohen_kappa(const Predictions& a, const Predictions& b);

// items x raters, binary categories only.
struct RatingMatrix {
  std::vector<std::vector<ModelAnswer>> rows;
  std::size_t excluded_items = 0;
};

// Builds the matrix over studies every rater answered; rows with any
// non-binary answer are counted in excluded_items and dropped. Throws
// AlignmentError when the raters cover different studies.
RatingMatrix build_rating_matrix(std::span<const Predictions> raters);

// Throws MatrixError on fewer than 2 items or raters, ragged rows, or
// non-binary cells.
KappaResult fleiss_kappa(const RatingMatrix& matrix);

enum class KappaBand { Excellent, Good, Fair, Poor };

std::string_view to_string(KappaBand b);
KappaBand kappa_band(double kappa);

struct ConfidenceScore {
  double p_yes = 0.5;
  bool correct = false;  // whether (p_yes > 0.5) matched the label
};

ConfidenceScore score_first_token(double p_yes, int label);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

// Equally spaced bins over confidence max(p, 1-p); half-open except the last.
std::vector<CalibrationBin> reliability_bins(std::span<const ConfidenceScore> scores, int m_bins);

// Expected calibration error. Throws EmptyInputError; RangeError when
// m_bins < 1 or a p_yes is outside [0, 1].
double ece(std::span<const ConfidenceScore> scores, int m_bins = 10);

struct LabeledScore {
  double p_yes = 0.5;
  int label = 0;
};

// Ties at 0.5 count as a negative prediction.
double first_token_accuracy(std::span<const LabeledScore> scores);

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapOptions {
  int iterations = 100;
  double fraction = 0.5;
  std::uint64_t seed = 0;
  bool with_replacement = false;
};

// Resample indices for one iteration; depends only on (seed, iteration).
std::vector<std::size_t> bootstrap_indices(std::size_t n, const BootstrapOptions& options,
                                           int iteration);

// Linear-interpolated percentile, q in [0, 1]. values must be non-empty.
double percentile(std::vector<double> values, double q);

// Metric returns nullopt where it is undefined on a subsample; those draws
// are skipped and counted. Throws UndefinedMetricError when the metric is
// undefined on the full set or on every subsample.
template <typename T>
MetricEstimate bootstrap(const std::function<std::optional<double>(std::span<const T>)>& metric,
                         std::span<const T> items, const BootstrapOptions& options = {}) {
  if (options.iterations < 1) throw RangeError("bootstrap needs at least one iteration");
  if (!(options.fraction > 0.0 && options.fraction <= 1.0)) {
    throw RangeError("bootstrap fraction must be in (0, 1]");
  }
  const auto point = metric(items);
  if (!point) throw UndefinedMetricError("metric undefined on the full sample");

  MetricEstimate est;
  est.point = *point;
  est.n = items.size();
  est.iterations = static_cast<std::size_t>(options.iterations);
  est.subsample_fraction = options.fraction;

  std::vector<double> draws;
  draws.reserve(est.iterations);
  std::vector<T> sample;
  for (int it = 0; it < options.iterations; ++it) {
    sample.clear();
    for (std::size_t idx : bootstrap_indices(items.size(), options, it)) {
      sample.push_back(items[idx]);
    }
    const auto v = metric(std::span<const T>(sample));
    if (v) {
      draws.push_back(*v);
    } else {
      ++est.skipped;
    }
  }
  if (draws.empty()) throw UndefinedMetricError("metric undefined on every bootstrap subsample");
  est.ci_low = percentile(draws, 0.025);
  est.ci_high = percentile(draws, 0.975);
  return est;
}

// Wraps a throwing metric so UndefinedMetricError and EmptyInputError map to
// nullopt.
template <typename T>
std::function<std::optional<double>(std::span<const T>)> tolerant(
    std::function<double(std::span<const T>)> metric) {
  return [metric = std::move(metric)](std::span<const T> s) -> std::optional<double> {
    try {
      return metric(s);
    } catch (const UndefinedMetricError&) {
      return std::nullopt;
    } catch (const EmptyInputError&) {
      return std::nullopt;
    }
  };
}

}  // namespace ctxpress

#endif  // CTXPRESS_METRICS_H_
