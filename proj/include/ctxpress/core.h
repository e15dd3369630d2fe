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

#ifndef CTXPRESS_CORE_H_
#define CTXPRESS_CORE_H_

#include <array>
#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctxpress {

using json = nlohmann::json;

enum class Pathology { Atelectasis, Cardiomegaly, Consolidation, Edema, PleuralEffusion };

inline constexpr std::array<Pathology, 5> kAllPathologies = {
    Pathology::Atelectasis, Pathology::Cardiomegaly, Pathology::Consolidation,
    Pathology::Edema, Pathology::PleuralEffusion};

// Identifier form, e.g. "PleuralEffusion".
std::string_view to_string(Pathology p);
// Human form used in label tables and reports, e.g. "Pleural Effusion".
std::string_view display_name(Pathology p);
// Accepts either form.
Pathology parse_pathology(std::string_view s);

struct Metadata {
  std::string age;
  std::string sex;
  std::string race;
  std::string view_position;
  std::string procedure_description;

  bool operator==(const Metadata&) const = default;
};

// One radiograph plus its clinical summary and binary label.
struct StudyRecord {
  std::string study_id;
  std::string subject_id;
  std::string image_ref;
  std::string report_text;
  Metadata metadata;
  int label = 0;
  std::optional<Pathology> pathology;

  // Throws SchemaError unless label is 0/1 and pathology is set iff label=1.
  void validate() const;
  bool operator==(const StudyRecord&) const = default;
};

enum class ConditionKind { NoShift, TextShift, ImageShift, ImageOnly, TextOnly, History };

inline constexpr int kMaxHistory = 5;

class Condition {
 public:
  static Condition no_shift() { return Condition(ConditionKind::NoShift, std::nullopt); }
  static Condition text_shift() { return Condition(ConditionKind::TextShift, std::nullopt); }
  static Condition image_shift() { return Condition(ConditionKind::ImageShift, std::nullopt); }
  static Condition image_only() { return Condition(ConditionKind::ImageOnly, std::nullopt); }
  static Condition text_only() { return Condition(ConditionKind::TextOnly, std::nullopt); }
  // Throws RangeError unless 1 <= k <= 5.
  static Condition history(int k);
  // Inverse of name(): "no_shift", "text_shift", ..., "history_3".
  static Condition parse(std::string_view name);

  ConditionKind kind() const { return kind_; }
  std::optional<int> history_len() const { return history_len_; }
  bool is_shift() const {
    return kind_ == ConditionKind::TextShift || kind_ == ConditionKind::ImageShift;
  }

  // Canonical name: "no_shift", "text_shift", "image_shift", "image_only",
  // "text_only", "history_<k>".
  std::string name() const;
  // Kind token alone; "history" for every History(k).
  std::string_view kind_name() const;

  bool operator==(const Condition&) const = default;

 private:
  Condition(ConditionKind kind, std::optional<int> len) : kind_(kind), history_len_(len) {}

  ConditionKind kind_;
  std::optional<int> history_len_;
};

// The ten conditions the three experimental designs can reach.
std::vector<Condition> all_conditions();

enum class VariantId { V0, V1, V2, V3 };
enum class PromptFamily { Standard, History };

struct PromptVariant {
  VariantId id = VariantId::V0;
  PromptFamily family = PromptFamily::Standard;

  std::string_view id_name() const;  // "v0".."v3"
  bool operator==(const PromptVariant&) const = default;
};

VariantId parse_variant_id(std::string_view s);

enum class Experiment { Sms, History, PromptSensitivity };

std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view s);

enum class ModelAnswer { Yes, No, Refusal, ParseError };

std::string_view to_string(ModelAnswer a);
ModelAnswer parse_answer(std::string_view s);
inline bool is_binary(ModelAnswer a) { return a == ModelAnswer::Yes || a == ModelAnswer::No; }
// Yes -> 1, No -> 0, otherwise nullopt.
std::optional<int> answer_label(ModelAnswer a);

struct FirstTokenScore {
  double z_yes = 0.0;
  double z_no = 0.0;
  double p_yes = 0.5;

  bool operator==(const FirstTokenScore&) const = default;
};

struct LabelViews {
  int original = 0;
  int text_consistent = 0;
  int image_consistent = 0;

  bool operator==(const LabelViews&) const = default;
};

// Materializes the three label views a condition induces on a study label.
LabelViews label_views_for(ConditionKind kind, int label_original);

enum class TargetMode { Original, ImageConsistent, TextConsistent };

std::string_view to_string(TargetMode m);
TargetMode parse_target_mode(std::string_view s);

struct EvalRecord {
  std::string study_id;
  Condition condition = Condition::no_shift();
  PromptVariant variant;
  std::string model_id;
  std::string raw_text;
  ModelAnswer answer = ModelAnswer::ParseError;
  LabelViews labels;
  std::optional<FirstTokenScore> first_token;
  bool from_cache = false;
  std::chrono::system_clock::time_point timestamp{};

  // Equality ignores timestamp, which is informational.
  bool same_outcome(const EvalRecord& other) const;
};

// Resume and cache identity: "model|study|condition|variant". The history
// family's k=0 baseline (NoShift with a history variant) keys as history_0.
// Throws InvalidKeyError on empty fields or fields containing '|'.
std::string record_key(std::string_view study_id, const Condition& condition,
                       const PromptVariant& variant, std::string_view model_id);
std::string record_key(const EvalRecord& r);

int resolve_target_label(const EvalRecord& record, TargetMode mode);

json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const json& j);
std::string to_jsonl_line(const EvalRecord& r);

json to_json(const StudyRecord& s);
StudyRecord study_record_from_json(const json& j);

struct MetricEstimate {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
  std::size_t iterations = 0;
  double subsample_fraction = 1.0;
  // Subsamples on which the metric was undefined.
  std::size_t skipped = 0;
};

}  // namespace ctxpress

#endif  // CTXPRESS_CORE_H_
