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

#include "ctxpress/core.h"

#include <charconv>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

std::string_view to_string(Pathology p) {
  switch (p) {
    case Pathology::Atelectasis: return "Atelectasis";
    case Pathology::Cardiomegaly: return "Cardiomegaly";
    case Pathology::Consolidation: return "Consolidation";
    case Pathology::Edema: return "Edema";
    case Pathology::PleuralEffusion: return "PleuralEffusion";
  }
  return "?";
}

std::string_view display_name(Pathology p) {
  return p == Pathology::PleuralEffusion ? "Pleural Effusion" : to_string(p);
}

Pathology parse_pathology(std::string_view s) {
  for (Pathology p : kAllPathologies) {
    if (s == to_string(p) || s == display_name(p)) return p;
  }
  throw SchemaError("unknown pathology: " + std::string(s));
}

void StudyRecord::validate() const {
  if (study_id.empty()) throw SchemaError("study_id is empty");
  if (label != 0 && label != 1) {
    throw SchemaError("study " + study_id + ": label must be 0 or 1");
  }
  if ((label == 1) != pathology.has_value()) {
    throw SchemaError("study " + study_id + ": pathology must be present iff label = 1");
  }
}

Condition Condition::history(int k) {
  if (k < 1 || k > kMaxHistory) {
    throw RangeError("history length must be in [1, 5], got " + std::to_string(k));
  }
  return Condition(ConditionKind::History, k);
}

Condition Condition::parse(std::string_view name) {
  if (name == "no_shift") return no_shift();
  if (name == "text_shift") return text_shift();
  if (name == "image_shift") return image_shift();
  if (name == "image_only") return image_only();
  if (name == "text_only") return text_only();
  constexpr std::string_view kPrefix = "history_";
  if (name.substr(0, kPrefix.size()) == kPrefix) {
    int k = 0;
    const auto digits = name.substr(kPrefix.size());
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) return history(k);
  }
  throw SchemaError("unknown condition: " + std::string(name));
}

std::string_view Condition::kind_name() const {
  switch (kind_) {
    case ConditionKind::NoShift: return "no_shift";
    case ConditionKind::TextShift: return "text_shift";
    case ConditionKind::ImageShift: return "image_shift";
    case ConditionKind::ImageOnly: return "image_only";
    case ConditionKind::TextOnly: return "text_only";
    case ConditionKind::History: return "history";
  }
  return "?";
}

std::string Condition::name() const {
  if (kind_ == ConditionKind::History) return "history_" + std::to_string(*history_len_);
  return std::string(kind_name());
}

std::vector<Condition> all_conditions() {
  std::vector<Condition> out = {Condition::no_shift(), Condition::text_shift(),
                                Condition::image_shift(), Condition::image_only(),
                                Condition::text_only()};
  for (int k = 1; k <= kMaxHistory; ++k) out.push_back(Condition::history(k));
  return out;
}

std::string_view PromptVariant::id_name() const {
  switch (id) {
    case VariantId::V0: return "v0";
    case VariantId::V1: return "v1";
    case VariantId::V2: return "v2";
    case VariantId::V3: return "v3";
  }
  return "?";
}

VariantId parse_variant_id(std::string_view s) {
  if (s == "v0") return VariantId::V0;
  if (s == "v1") return VariantId::V1;
  if (s == "v2") return VariantId::V2;
  if (s == "v3") return VariantId::V3;
  throw SchemaError("unknown prompt variant: " + std::string(s));
}

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Sms: return "sms";
    case Experiment::History: return "history";
    case Experiment::PromptSensitivity: return "prompt_sensitivity";
  }
  return "?";
}

Experiment parse_experiment(std::string_view s) {
  if (s == "sms") return Experiment::Sms;
  if (s == "history") return Experiment::History;
  if (s == "prompt_sensitivity") return Experiment::PromptSensitivity;
  throw SchemaError("unknown experiment: " + std::string(s));
}

std::string_view to_string(ModelAnswer a) {
  switch (a) {
    case ModelAnswer::Yes: return "yes";
    case ModelAnswer::No: return "no";
    case ModelAnswer::Refusal: return "refusal";
    case ModelAnswer::ParseError: return "parse_error";
  }
  return "?";
}

ModelAnswer parse_answer(std::string_view s) {
  if (s == "yes") return ModelAnswer::Yes;
  if (s == "no") return ModelAnswer::No;
  if (s == "refusal") return ModelAnswer::Refusal;
  if (s == "parse_error") return ModelAnswer::ParseError;
  throw SchemaError("unknown answer category: " + std::string(s));
}

std::optional<int> answer_label(ModelAnswer a) {
  if (a == ModelAnswer::Yes) return 1;
  if (a == ModelAnswer::No) return 0;
  return std::nullopt;
}

LabelViews label_views_for(ConditionKind kind, int label_original) {
  LabelViews v{label_original, label_original, label_original};
  if (kind == ConditionKind::TextShift) v.text_consistent = 1 - label_original;
  if (kind == ConditionKind::ImageShift) v.image_consistent = 1 - label_original;
  return v;
}

std::string_view to_string(TargetMode m) {
  switch (m) {
    case TargetMode::Original: return "original";
    case TargetMode::ImageConsistent: return "image_consistent";
    case TargetMode::TextConsistent: return "text_consistent";
  }
  return "?";
}

TargetMode parse_target_mode(std::string_view s) {
  if (s == "original") return TargetMode::Original;
  if (s == "image_consistent") return TargetMode::ImageConsistent;
  if (s == "text_consistent") return TargetMode::TextConsistent;
  throw SchemaError("unknown target label mode: " + std::string(s));
}

bool EvalRecord::same_outcome(const EvalRecord& o) const {
  return study_id == o.study_id && condition == o.condition && variant == o.variant &&
         model_id == o.model_id && raw_text == o.raw_text && answer == o.answer &&
         labels == o.labels && first_token == o.first_token && from_cache == o.from_cache;
}

namespace {

void check_key_field(std::string_view value, std::string_view what) {
  if (value.empty()) throw InvalidKeyError(std::string(what) + " is empty");
  if (value.find('|') != std::string_view::npos) {
    throw InvalidKeyError(std::string(what) + " contains '|': " + std::string(value));
  }
}

}  // namespace

std::string record_key(std::string_view study_id, const Condition& condition,
                       const PromptVariant& variant, std::string_view model_id) {
  check_key_field(study_id, "study_id");
  check_key_field(model_id, "model_id");
  std::string cond = condition.name();
  if (variant.family == PromptFamily::History && condition.kind() == ConditionKind::NoShift) {
    cond = "history_0";
  }
  std::string key;
  key.reserve(model_id.size() + study_id.size() + cond.size() + 6);
  key.append(model_id).append("|").append(study_id).append("|").append(cond).append("|");
  key.append(variant.id_name());
  return key;
}

std::string record_key(const EvalRecord& r) {
  return record_key(r.study_id, r.condition, r.variant, r.model_id);
}

int resolve_target_label(const EvalRecord& record, TargetMode mode) {
  switch (mode) {
    case TargetMode::Original: return record.labels.original;
    case TargetMode::ImageConsistent: return record.labels.image_consistent;
    case TargetMode::TextConsistent: return record.labels.text_consistent;
  }
  return record.labels.original;
}

json to_json(const EvalRecord& r) {
  json j;
  j["study_id"] = r.study_id;
  j["condition"] = r.condition.kind_name();
  if (r.condition.kind() == ConditionKind::History) {
    j["history_len"] = *r.condition.history_len();
  } else if (r.variant.family == PromptFamily::History) {
    j["history_len"] = 0;
  } else {
    j["history_len"] = nullptr;
  }
  j["variant"] = r.variant.id_name();
  j["model_id"] = r.model_id;
  j["raw_text"] = r.raw_text;
  j["answer"] = to_string(r.answer);
  j["label_original"] = r.labels.original;
  j["label_text_consistent"] = r.labels.text_consistent;
  j["label_image_consistent"] = r.labels.image_consistent;
  if (r.first_token) {
    j["p_yes"] = r.first_token->p_yes;
    j["z_yes"] = r.first_token->z_yes;
    j["z_no"] = r.first_token->z_no;
  } else {
    j["p_yes"] = nullptr;
    j["z_yes"] = nullptr;
    j["z_no"] = nullptr;
  }
  j["from_cache"] = r.from_cache;
  j["timestamp"] = format_utc(r.timestamp);
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  try {
    EvalRecord r;
    r.study_id = j.at("study_id").get<std::string>();
    const auto kind = j.at("condition").get<std::string>();
    const auto& len = j.at("history_len");
    r.variant.id = parse_variant_id(j.at("variant").get<std::string>());
    if (kind == "history") {
      r.condition = Condition::history(len.get<int>());
      r.variant.family = PromptFamily::History;
    } else {
      r.condition = Condition::parse(kind);
      if (!len.is_null()) {
        if (kind != "no_shift" || len.get<int>() != 0) {
          throw SchemaError("history_len set on non-history condition " + kind);
        }
        r.variant.family = PromptFamily::History;
      }
    }
    r.model_id = j.at("model_id").get<std::string>();
    r.raw_text = j.at("raw_text").get<std::string>();
    r.answer = parse_answer(j.at("answer").get<std::string>());
    r.labels.original = j.at("label_original").get<int>();
    r.labels.text_consistent = j.at("label_text_consistent").get<int>();
    r.labels.image_consistent = j.at("label_image_consistent").get<int>();
    if (!j.at("p_yes").is_null()) {
      r.first_token = FirstTokenScore{j.at("z_yes").get<double>(), j.at("z_no").get<double>(),
                                      j.at("p_yes").get<double>()};
    }
    r.from_cache = j.at("from_cache").get<bool>();
    r.timestamp = parse_utc(j.at("timestamp").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed eval record: ") + e.what());
  }
}

std::string to_jsonl_line(const EvalRecord& r) { return to_json(r).dump() + "\n"; }

json to_json(const StudyRecord& s) {
  json j;
  j["study_id"] = s.study_id;
  j["subject_id"] = s.subject_id;
  j["image_ref"] = s.image_ref;
  j["report_text"] = s.report_text;
  j["metadata"] = {{"age", s.metadata.age},
                   {"sex", s.metadata.sex},
                   {"race", s.metadata.race},
                   {"view_position", s.metadata.view_position},
                   {"procedure_description", s.metadata.procedure_description}};
  j["label"] = s.label;
  j["pathology"] = s.pathology ? json(to_string(*s.pathology)) : json(nullptr);
  return j;
}

StudyRecord study_record_from_json(const json& j) {
  try {
    StudyRecord s;
    s.study_id = j.at("study_id").get<std::string>();
    s.subject_id = j.at("subject_id").get<std::string>();
    s.image_ref = j.at("image_ref").get<std::string>();
    s.report_text = j.at("report_text").get<std::string>();
    const auto& m = j.at("metadata");
    s.metadata.age = m.value("age", "");
    s.metadata.sex = m.value("sex", "");
    s.metadata.race = m.value("race", "");
    s.metadata.view_position = m.value("view_position", "");
    s.metadata.procedure_description = m.value("procedure_description", "");
    s.label = j.at("label").get<int>();
    if (!j.at("pathology").is_null()) {
      s.pathology = parse_pathology(j.at("pathology").get<std::string>());
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed study record: ") + e.what());
  }
}

}  // namespace ctxpress
