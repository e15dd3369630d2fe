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

#include "ctxpress/prompt.h"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ctxpress/errors.h"
#include "test_support.h"

namespace ctxpress {
namespace {

using nlohmann::json;

// The fixture behind tests/golden/*.txt; the expected renderings were written
// by tests/golden/make_goldens.py.
PerturbedCase golden_case(const Condition& condition) {
  const json j = json::parse(read_file(testing::data_path("golden/case.json")));
  PerturbedCase c;
  c.study_id = j.at("study_id");
  c.condition = condition;
  c.metadata = {j.at("age"), j.at("sex"), j.at("race"), j.at("view_position"),
                j.at("procedure_description")};
  c.current_date = parse_date(j.at("current_date").get<std::string>());
  c.labels = {1, 1, 1};
  if (condition.kind() != ConditionKind::TextOnly) c.image_ref = j.at("image_ref");
  if (condition.kind() != ConditionKind::ImageOnly) c.report_text = j.at("report_text");
  if (condition.kind() == ConditionKind::History) {
    for (const auto& h : j.at("history")) {
      DistractorReport d;
      d.report_text = h.at("text");
      d.report_date = parse_date(h.at("date").get<std::string>());
      c.history.push_back(d);
    }
  }
  return c;
}

std::string golden(const std::string& name) {
  return read_file(testing::data_path("golden/" + name + ".txt"));
}

constexpr VariantId kIds[] = {VariantId::V0, VariantId::V1, VariantId::V2, VariantId::V3};

TEST(Render, StandardNoShiftMatchesGoldens) {
  for (int v = 0; v < 4; ++v) {
    const auto m = render(golden_case(Condition::no_shift()), {kIds[v], PromptFamily::Standard});
    EXPECT_EQ(m.text(), golden("standard_v" + std::to_string(v) + "_no_shift")) << "v" << v;
    ASSERT_NE(m.image(), nullptr);
    EXPECT_EQ(m.image()->image_ref, "images/g001.png");
    EXPECT_EQ(m.image()->media_type, "image/png");
    EXPECT_EQ(m.system_text, kSystemPrompt);
  }
}

TEST(Render, StandardImageOnlyMatchesGoldens) {
  for (int v = 0; v < 4; ++v) {
    const auto m = render(golden_case(Condition::image_only()), {kIds[v], PromptFamily::Standard});
    EXPECT_EQ(m.text(), golden("standard_v" + std::to_string(v) + "_image_only")) << "v" << v;
    EXPECT_EQ(m.text().find("FINDINGS"), std::string::npos);
    ASSERT_NE(m.image(), nullptr);
  }
}

TEST(Render, HistoryTwoMatchesGoldens) {
  for (int v = 0; v < 4; ++v) {
    const auto m = render(golden_case(Condition::history(2)), {kIds[v], PromptFamily::History});
    EXPECT_EQ(m.text(), golden("history_v" + std::to_string(v) + "_k2")) << "v" << v;
  }
}

TEST(Render, HistoryBaselineDropsPriorSection) {
  for (int v = 0; v < 4; ++v) {
    const auto m = render(golden_case(Condition::no_shift()), {kIds[v], PromptFamily::History});
    EXPECT_EQ(m.text(), golden("history_v" + std::to_string(v) + "_k0")) << "v" << v;
    EXPECT_EQ(m.text().find("2152-"), std::string::npos);
  }
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

TEST(Render, HistoryBlocksAndCurrentHeader) {
  const auto m = render(golden_case(Condition::history(2)), {VariantId::V0, PromptFamily::History});
  const auto t = m.text();
  EXPECT_EQ(count(t, "[Report Date:"), 2u);
  EXPECT_EQ(count(t, "Current chest X-ray report (Study Date:"), 1u);
  // Priors come before the current report, in order.
  EXPECT_LT(t.find("2152-06-01"), t.find("2152-11-20"));
  EXPECT_LT(t.find("2152-11-20"), t.find("2153-04-09"));
}

TEST(Render, HistoryLengthsOneToFive) {
  auto c = golden_case(Condition::history(2));
  const auto extra = c.history.back();
  for (int k = 1; k <= 5; ++k) {
    c.condition = Condition::history(k);
    c.history.resize(static_cast<std::size_t>(k), extra);
    const auto t = render(c, {VariantId::V2, PromptFamily::History}).text();
    EXPECT_EQ(count(t, "CT ABDOMEN AND PELVIS"), static_cast<std::size_t>(k - 1));
    EXPECT_EQ(count(t, "[Report Date:"), static_cast<std::size_t>(k));
  }
}

TEST(Render, VariantWording) {
  const auto c = golden_case(Condition::no_shift());
  EXPECT_NE(render(c, {VariantId::V1, PromptFamily::Standard}).text().find("giving priority to the image"),
            std::string::npos);
  EXPECT_EQ(render(c, {VariantId::V0, PromptFamily::Standard}).text().find("giving priority to the image"),
            std::string::npos);
}

TEST(Render, TextOnlyHasNoImageAndSameText) {
  for (auto id : kIds) {
    const PromptVariant v{id, PromptFamily::Standard};
    const auto t = render(golden_case(Condition::text_only()), v);
    const auto n = render(golden_case(Condition::no_shift()), v);
    EXPECT_EQ(t.image(), nullptr);
    EXPECT_EQ(t.text(), n.text());
    for (const auto& part : t.parts) EXPECT_TRUE(std::holds_alternative<TextPart>(part));
  }
}

TEST(Render, ShiftsCarryTheSubstitutedModality) {
  auto c = golden_case(Condition::no_shift());
  c.condition = Condition::text_shift();
  c.report_text = "FINDINGS: none.\nIMPRESSION: Normal study.";
  const auto m = render(c, {VariantId::V0, PromptFamily::Standard});
  EXPECT_NE(m.text().find("IMPRESSION: Normal study."), std::string::npos);
  EXPECT_EQ(m.image()->image_ref, "images/g001.png");
}

TEST(Render, Deterministic) {
  const auto c = golden_case(Condition::history(2));
  for (auto id : kIds) {
    EXPECT_EQ(render(c, {id, PromptFamily::History}), render(c, {id, PromptFamily::History}));
  }
}

TEST(Render, FamilyMismatchIsRejected) {
  EXPECT_THROW(render(golden_case(Condition::history(2)), {VariantId::V0, PromptFamily::Standard}),
               TemplateError);
  EXPECT_THROW(render(golden_case(Condition::text_shift()), {VariantId::V0, PromptFamily::History}),
               TemplateError);
}

TEST(Render, PerturbedCaseFromPipeline) {
  const auto manifest = testing::make_manifest(4);
  const auto pairing = pair_opposites(manifest, 1);
  const auto bank = build_distractor_bank(manifest, 1);
  const auto& s = manifest.at("s001");
  const auto c = apply_condition(s, Condition::history(5), pairing, manifest, &bank);
  const auto t = render(c, {VariantId::V3, PromptFamily::History}).text();
  for (const auto& d : c.history) EXPECT_NE(t.find(d.report_text), std::string::npos);
  EXPECT_NE(t.find(s.report_text), std::string::npos);
}

TEST(Templates, EmbeddedMatchesSourceTree) {
  const auto disk = TemplateSet::load_dir(CTXPRESS_TEMPLATE_DIR);
  EXPECT_EQ(disk.checksum(), TemplateSet::embedded().checksum());
  for (auto fam : {PromptFamily::Standard, PromptFamily::History}) {
    for (auto id : kIds) EXPECT_EQ(disk.get({id, fam}), TemplateSet::embedded().get({id, fam}));
  }
  EXPECT_EQ(template_file_name({VariantId::V2, PromptFamily::History}), "history_v2.txt");
}

TEST(Templates, ChecksumMismatchIsFatal) {
  testing::TempDir dir;
  for (const auto& e : std::filesystem::directory_iterator(CTXPRESS_TEMPLATE_DIR)) {
    std::filesystem::copy_file(e.path(), dir.path() / e.path().filename());
  }
  EXPECT_NO_THROW(TemplateSet::load_dir(dir.path()));
  write_file_atomic(dir.path() / "standard_v1.txt", golden("standard_v1_no_shift") + "x");
  EXPECT_THROW(TemplateSet::load_dir(dir.path()), TemplateError);
  std::filesystem::remove(dir.path() / "standard_v1.txt");
  EXPECT_THROW(TemplateSet::load_dir(dir.path()), TemplateError);
}

TEST(Variants, ListedPerExperiment) {
  const auto sms = list_variants(Experiment::PromptSensitivity);
  ASSERT_EQ(sms.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(sms[i].id, kIds[i]);
    EXPECT_EQ(sms[i].family, PromptFamily::Standard);
  }
  for (const auto& v : list_variants(Experiment::History)) EXPECT_EQ(v.family, PromptFamily::History);
  EXPECT_EQ(list_variants(Experiment::Sms).front().family, PromptFamily::Standard);
}

TEST(MediaType, FromExtension) {
  EXPECT_EQ(media_type_for("a/b.PNG"), "image/png");
  EXPECT_EQ(media_type_for("x.jpg"), "image/jpeg");
  EXPECT_EQ(media_type_for("x.jpeg"), "image/jpeg");
}

}  // namespace
}  // namespace ctxpress
