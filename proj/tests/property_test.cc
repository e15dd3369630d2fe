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

// Randomized checks of the invariants each module promises.

#include <algorithm>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ctxpress/curation.h"
#include "ctxpress/errors.h"
#include "ctxpress/metrics.h"
#include "ctxpress/parser.h"
#include "ctxpress/perturb.h"
#include "ctxpress/prompt.h"
#include "ctxpress/runner.h"
#include "ctxpress/synth.h"
#include "test_support.h"

namespace ctxpress {
namespace {

constexpr int kRounds = 200;

ModelAnswer random_answer(Rng& rng, bool binary_only = false) {
  const auto k = rng.below(binary_only ? 2 : 4);
  return std::array{ModelAnswer::Yes, ModelAnswer::No, ModelAnswer::Refusal,
                    ModelAnswer::ParseError}[k];
}

Predictions random_predictions(Rng& rng, int n, bool binary_only = false) {
  Predictions p;
  for (int i = 0; i < n; ++i) p["s" + std::to_string(i)] = random_answer(rng, binary_only);
  return p;
}

std::vector<EvalRecord> random_records(Rng& rng, int n) {
  std::vector<EvalRecord> v;
  for (int i = 0; i < n; ++i) {
    EvalRecord r;
    r.study_id = "s" + std::to_string(i);
    r.model_id = "m";
    r.answer = random_answer(rng);
    const int y = static_cast<int>(rng.below(2));
    r.labels = {y, y, y};
    v.push_back(r);
  }
  return v;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> atoms = {
      "yes", "No", " ", ".", ",", "—", "«", "»", "’", "there is", "no evidence of", "absent",
      "conclusive", "\n", "\t", "é", "Ü", "findings", "!", "?", "\xff", "YES", "  ", "as an AI"};
  std::string s;
  const auto len = rng.below(12);
  for (std::size_t i = 0; i < len; ++i) s += atoms[rng.below(atoms.size())];
  return s;
}

TEST(MetricProperties, AgreementIsSymmetric) {
  Rng rng(1);
  for (int t = 0; t < kRounds; ++t) {
    const int n = 2 + static_cast<int>(rng.below(30));
    const auto a = random_predictions(rng, n);
    const auto b = random_predictions(rng, n);
    EXPECT_DOUBLE_EQ(flip_rate(a, b), flip_rate(b, a));
    EXPECT_DOUBLE_EQ(flip_rate(a, a), 0.0);
    KappaResult kab, kba;
    try {
      kab = cohen_kappa(a, b);
    } catch (const UndefinedMetricError&) {
      EXPECT_THROW(cohen_kappa(b, a), UndefinedMetricError);
      continue;
    }
    kba = cohen_kappa(b, a);
    EXPECT_DOUBLE_EQ(kab.value, kba.value);
    EXPECT_EQ(kab.excluded, kba.excluded);
    EXPECT_LE(kab.value, 1.0 + 1e-12);
  }
}

TEST(MetricProperties, NfrBoundsAndIdentity) {
  Rng rng(2);
  for (int t = 0; t < kRounds; ++t) {
    const int n = 1 + static_cast<int>(rng.below(40));
    const auto base = random_records(rng, n);
    auto pert = base;
    for (auto& r : pert) r.answer = random_answer(rng);
    const auto same = pair_outcomes(base, base, TargetMode::Original);
    const auto paired = pair_outcomes(base, pert, TargetMode::Original);
    const bool any_correct = std::any_of(same.begin(), same.end(),
                                         [](const PairedOutcome& o) { return o.baseline_correct; });
    if (!any_correct) {
      EXPECT_THROW(nfr(paired), UndefinedMetricError);
      continue;
    }
    EXPECT_DOUBLE_EQ(nfr(same), 0.0);
    const double v = nfr(paired);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MetricProperties, PermutationInvariance) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(rng.below(40));
    auto records = random_records(rng, n);
    auto perturbed = random_records(rng, n);
    const double acc = accuracy(records, TargetMode::Original);
    const auto paired = pair_outcomes(records, perturbed, TargetMode::Original);
    std::optional<double> before;
    try {
      before = nfr(paired);
    } catch (const UndefinedMetricError&) {
    }
    rng.shuffle(records);
    rng.shuffle(perturbed);
    EXPECT_DOUBLE_EQ(accuracy(records, TargetMode::Original), acc);
    if (before) EXPECT_DOUBLE_EQ(nfr(pair_outcomes(records, perturbed, TargetMode::Original)), *before);

    RatingMatrix m;
    for (int i = 0; i < n; ++i) {
      std::vector<ModelAnswer> row;
      for (int j = 0; j < 4; ++j) row.push_back(random_answer(rng, true));
      m.rows.push_back(row);
    }
    const auto k = fleiss_kappa(m);
    rng.shuffle(m.rows);
    EXPECT_NEAR(fleiss_kappa(m).value, k.value, 1e-12);

    std::vector<ConfidenceScore> s;
    for (int i = 0; i < n; ++i) s.push_back({rng.uniform01(), rng.below(2) == 1});
    const double e = ece(s, 10);
    rng.shuffle(s);
    EXPECT_NEAR(ece(s, 10), e, 1e-12);
  }
}

TEST(MetricProperties, EceWithinUnitInterval) {
  Rng rng(4);
  for (int t = 0; t < kRounds; ++t) {
    std::vector<ConfidenceScore> s;
    const auto n = 1 + rng.below(50);
    for (std::size_t i = 0; i < n; ++i) s.push_back({rng.uniform01(), rng.below(2) == 1});
    const double v = ece(s, 1 + static_cast<int>(rng.below(20)));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MetricProperties, BootstrapIsSeedDeterministic) {
  Rng rng(5);
  const auto records = random_records(rng, 300);
  const auto metric = tolerant<EvalRecord>(
      [](std::span<const EvalRecord> s) { return accuracy(s, TargetMode::Original); });
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BootstrapOptions o;
    o.seed = seed;
    const auto a = bootstrap<EvalRecord>(metric, records, o);
    const auto b = bootstrap<EvalRecord>(metric, records, o);
    EXPECT_EQ(a.ci_low, b.ci_low);
    EXPECT_EQ(a.ci_high, b.ci_high);
    EXPECT_LE(a.ci_low, a.ci_high);
  }
}

TEST(ParserProperties, TotalDeterministicIdempotent) {
  Rng rng(6);
  const auto rules = ParserRules::defaults();
  for (int t = 0; t < 2000; ++t) {
    const auto s = random_text(rng);
    const auto n = normalize(s);
    EXPECT_EQ(normalize(n), n) << s;
    EXPECT_EQ(n, normalize(n.empty() ? n : " " + n + " "));
    EXPECT_EQ(n.find("  "), std::string::npos);
    const auto a = classify(s, rules);
    EXPECT_EQ(a, classify(s, rules));
    // A refusal marker anywhere wins over everything else.
    EXPECT_EQ(classify("yes " + s + " conclusive", rules), ModelAnswer::Refusal);
  }
}

TEST(KeyProperties, InjectiveOverRandomFields) {
  Rng rng(7);
  std::set<std::string> keys;
  std::set<std::tuple<std::string, std::string, std::string, int>> tuples;
  const auto conds = all_conditions();
  for (int t = 0; t < 5000; ++t) {
    const std::string study = "s" + std::to_string(rng.below(50));
    const std::string model = "m" + std::to_string(rng.below(3));
    const auto& c = conds[rng.below(conds.size())];
    const auto id = static_cast<int>(rng.below(4));
    const PromptVariant v{static_cast<VariantId>(id),
                          c.kind() == ConditionKind::History ? PromptFamily::History
                                                             : PromptFamily::Standard};
    const bool fresh = tuples.insert({study, model, c.name(), id}).second;
    const bool fresh_key = keys.insert(record_key(study, c, v, model)).second;
    EXPECT_EQ(fresh, fresh_key);
  }
}

TEST(CurationProperties, DerivedLabelMatchesRule) {
  Rng rng(8);
  const std::vector<std::string> targets = {"Atelectasis", "Cardiomegaly", "Consolidation", "Edema",
                                            "Pleural Effusion"};
  for (int t = 0; t < 2000; ++t) {
    LabelRow row;
    row.study_id = "s";
    int pos = 0;
    bool uncertain = false;
    auto draw = [&]() -> std::optional<Flag> {
      switch (rng.below(6)) {
        case 0: return Flag::Positive;
        case 1: return Flag::Uncertain;
        case 2: return Flag::Negative;
        default: return std::nullopt;
      }
    };
    std::string which;
    for (const auto& name : targets) {
      const auto f = draw();
      row.flags[name] = f;
      if (f == Flag::Positive) {
        ++pos;
        which = name;
      }
      uncertain |= f == Flag::Uncertain;
    }
    const bool nf = rng.below(2) == 1;
    row.flags["No Finding"] = nf ? std::optional(Flag::Positive) : std::nullopt;
    const bool other = rng.below(5) == 0;
    row.flags["Lung Opacity"] = other ? std::optional(Flag::Positive) : std::nullopt;
    const auto d = derive_label(row);
    if (!uncertain && pos == 1 && !nf) {
      EXPECT_EQ(d, DerivedLabel::positive(parse_pathology(which)));
    } else if (!uncertain && pos == 0 && nf && !other) {
      EXPECT_EQ(d, DerivedLabel::negative());
    } else {
      EXPECT_EQ(d, DerivedLabel::excluded());
    }
  }
}

TEST(PerturbProperties, PairingAlwaysOpposite) {
  Rng rng(9);
  for (int t = 0; t < 40; ++t) {
    std::vector<StudyRecord> v;
    const auto npos = 1 + rng.below(15);
    const auto nneg = 1 + rng.below(15);
    for (std::size_t i = 0; i < npos; ++i) v.push_back(testing::make_study("p" + std::to_string(i), 1));
    for (std::size_t i = 0; i < nneg; ++i) v.push_back(testing::make_study("n" + std::to_string(i), 0));
    const Manifest m(v);
    const auto p = pair_opposites(m, rng.next());
    for (const auto* role : {&p.text_donor, &p.image_donor}) {
      ASSERT_EQ(role->size(), m.size());
      for (const auto& [s, d] : *role) EXPECT_EQ(m.at(d).label, 1 - m.at(s).label);
    }
  }
}

TEST(PerturbProperties, BankConstraintsForAnySeed) {
  const auto m = testing::make_manifest(30);
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto bank = build_distractor_bank(m, rng.next());
    for (const auto& [id, e] : bank.entries()) {
      for (const auto& d : e.reports) {
        EXPECT_EQ(polarity_label(d.polarity), 1 - m.at(id).label);
        const auto gap = e.current_date - d.report_date;
        EXPECT_GE(gap, kMinPriorDays);
        EXPECT_LE(gap, kMaxPriorDays);
      }
    }
  }
}

TEST(PromptProperties, TextOnlyEqualsNoShiftAndHistoryCarriesEveryPrior) {
  const auto m = testing::make_manifest(10);
  const auto pairing = pair_opposites(m, 3);
  const auto bank = build_distractor_bank(m, 3);
  for (const auto& s : m.records()) {
    for (auto id : {VariantId::V0, VariantId::V1, VariantId::V2, VariantId::V3}) {
      const PromptVariant std_v{id, PromptFamily::Standard};
      const auto base = render(apply_condition(s, Condition::no_shift(), pairing, m, &bank), std_v);
      const auto text = render(apply_condition(s, Condition::text_only(), pairing, m, &bank), std_v);
      EXPECT_EQ(base.text(), text.text());
      EXPECT_EQ(text.image(), nullptr);
      for (int k = 1; k <= 5; ++k) {
        const auto c = apply_condition(s, Condition::history(k), pairing, m, &bank);
        const auto t = render(c, {id, PromptFamily::History}).text();
        for (const auto& d : c.history) {
          EXPECT_NE(t.find(d.report_text), std::string::npos);
          EXPECT_NE(t.find(format_date(d.report_date)), std::string::npos);
        }
        EXPECT_EQ(t.find('{'), std::string::npos);
      }
    }
  }
}

TEST(UtilProperties, CsvAndDateRoundTrips) {
  Rng rng(11);
  for (int t = 0; t < 500; ++t) {
    std::vector<std::string> fields;
    std::string line;
    for (int i = 0; i < 4; ++i) {
      fields.push_back(random_text(rng));
      line += (i ? "," : "") + csv_escape(fields.back());
    }
    const auto rows = parse_csv(line + "\n");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0], fields);
    const auto d = rng.between(-100000, 100000);
    EXPECT_EQ(parse_date(format_date(d)), d);
  }
}

// Any prefix of a finished results file, even one cut mid-line, resumes to the
// full plan with no duplicate keys.
TEST(RunnerProperties, ResumeFromAnyPrefix) {
  testing::TempDir dir;
  synth_corpus(4, 2, dir.path() / "corpus");
  json j;
  j["manifest"] = "corpus/manifest.jsonl";
  j["image_polarity"] = "corpus/image_polarity.csv";
  j["experiments"] = {"sms", "history"};
  j["models"] = json::array({{{"id", "o"}, {"backend", "oracle"}, {"seed", 1}}});
  j["output_dir"] = "full";
  const auto full = ExperimentConfig::from_json(j, dir.path());
  RunOptions quiet;
  quiet.log = [](const std::string&) {};
  run(full, quiet);
  const auto text = read_file(full.results_path());
  const auto planned = plan(full, prepare(full).manifest).size();

  Rng rng(12);
  for (int t = 0; t < 8; ++t) {
    j["output_dir"] = "cut" + std::to_string(t);
    const auto cfg = ExperimentConfig::from_json(j, dir.path());
    std::filesystem::create_directories(cfg.output_dir);
    write_file_atomic(cfg.results_path(), text.substr(0, rng.below(text.size() + 1)));
    run(cfg, quiet);
    const auto loaded = load_results(cfg.results_path());
    std::set<std::string> keys;
    for (const auto& r : loaded.records) keys.insert(record_key(r));
    EXPECT_EQ(keys.size(), planned);
    EXPECT_EQ(loaded.duplicate_keys, 0u);
    EXPECT_LE(loaded.malformed_lines, 1u);
  }
}

}  // namespace
}  // namespace ctxpress
