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

#include "ctxpress/perturb.h"

#include <algorithm>
#include <sstream>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

std::string_view to_string(DistractorKind k) {
  switch (k) {
    case DistractorKind::BrainMRI: return "brain_mri";
    case DistractorKind::CTAbdomenPelvis: return "ct_abdomen_pelvis";
    case DistractorKind::PriorChestXray: return "prior_chest_xray";
    case DistractorKind::WristUltrasound: return "wrist_ultrasound";
    case DistractorKind::KneeXray: return "knee_xray";
  }
  return "?";
}

DistractorKind parse_distractor_kind(std::string_view s) {
  for (auto k : kDistractorOrder) {
    if (s == to_string(k)) return k;
  }
  throw SchemaError("unknown distractor kind: " + std::string(s));
}

std::string_view to_string(Polarity p) { return p == Polarity::Normal ? "normal" : "abnormal"; }

Polarity parse_polarity(std::string_view s) {
  if (s == "normal") return Polarity::Normal;
  if (s == "abnormal") return Polarity::Abnormal;
  throw SchemaError("unknown polarity: " + std::string(s));
}

namespace {

// Study dates land in the 2150s, the same far-future range the de-identified
// source data uses.
constexpr std::int64_t kBaseStudyDate = 65744;  // 2150-01-01
constexpr std::int64_t kStudyDateSpan = 3652;

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&options)[N]) {
  return options[rng.below(N)];
}

std::string one_decimal(double v) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(1);
  ss << v;
  return ss.str();
}

std::string render_distractor(DistractorKind kind, Polarity polarity, Rng& rng) {
  static const char* const kSides[] = {"left", "right"};
  const std::string side = pick(rng, kSides);
  const bool normal = polarity == Polarity::Normal;
  switch (kind) {
    case DistractorKind::BrainMRI: {
      static const char* const kIndications[] = {"headache", "dizziness", "syncope",
                                                 "memory complaints"};
      static const char* const kLobes[] = {"frontal", "parietal", "temporal", "occipital"};
      const std::string indication = pick(rng, kIndications);
      if (normal) {
        return "MRI BRAIN WITHOUT AND WITH CONTRAST. INDICATION: " + indication +
               ". FINDINGS: No acute infarct, hemorrhage, or mass effect. Ventricles and sulci are "
               "within normal limits for age. No abnormal enhancement. IMPRESSION: Normal MRI of "
               "the brain.";
      }
      const std::string size = one_decimal(1.0 + 0.1 * static_cast<double>(rng.between(0, 25)));
      const std::string lobe = pick(rng, kLobes);
      return "MRI BRAIN WITHOUT AND WITH CONTRAST. INDICATION: " + indication +
             ". FINDINGS: There is a " + size + " cm enhancing lesion in the " + side + " " +
             lobe + " lobe with surrounding vasogenic edema and 3 mm of midline shift. "
             "IMPRESSION: Enhancing " + side + " " + lobe +
             " mass, neoplasm favored. Neurosurgical consultation recommended.";
    }
    case DistractorKind::CTAbdomenPelvis: {
      static const char* const kIndications[] = {"abdominal pain", "nausea", "weight loss"};
      const std::string indication = pick(rng, kIndications);
      if (normal) {
        return "CT ABDOMEN AND PELVIS WITH CONTRAST. INDICATION: " + indication +
               ". FINDINGS: The liver, spleen, pancreas, and adrenal glands are unremarkable. "
               "No bowel obstruction or free fluid. No lymphadenopathy. IMPRESSION: No acute "
               "abdominal or pelvic pathology.";
      }
      const std::string size = one_decimal(2.0 + 0.1 * static_cast<double>(rng.between(0, 40)));
      return "CT ABDOMEN AND PELVIS WITH CONTRAST. INDICATION: " + indication +
             ". FINDINGS: Dilated small bowel loops with a transition point in the " + side +
             " lower quadrant. A " + size +
             " cm fluid collection is present adjacent to the cecum. Moderate free fluid in the "
             "pelvis. IMPRESSION: Small bowel obstruction with adjacent fluid collection.";
    }
    case DistractorKind::PriorChestXray: {
      if (normal) {
        return "CHEST RADIOGRAPH, PA AND LATERAL. FINDINGS: The lungs are clear. No pleural "
               "effusion or pneumothorax. The cardiomediastinal silhouette is within normal "
               "limits. IMPRESSION: No acute cardiopulmonary process.";
      }
      static const char* const kGrades[] = {"small", "moderate", "large"};
      const std::string grade = pick(rng, kGrades);
      return "CHEST RADIOGRAPH, PA AND LATERAL. FINDINGS: There is a " + grade + " " + side +
             " pleural effusion with adjacent basilar atelectasis. The cardiac silhouette is "
             "enlarged. Mild pulmonary vascular congestion. IMPRESSION: " + grade + " " + side +
             " pleural effusion, cardiomegaly, and mild edema.";
    }
    case DistractorKind::WristUltrasound: {
      if (normal) {
        return "ULTRASOUND OF THE " + side +
               " WRIST. FINDINGS: Flexor and extensor tendons are intact with normal "
               "echotexture. No joint effusion, ganglion, or soft tissue mass. IMPRESSION: "
               "Normal ultrasound of the wrist.";
      }
      const std::string size = one_decimal(0.5 + 0.1 * static_cast<double>(rng.between(0, 20)));
      return "ULTRASOUND OF THE " + side + " WRIST. FINDINGS: A " + size +
             " cm anechoic ganglion cyst arises from the dorsal scapholunate joint. "
             "Tenosynovitis of the first extensor compartment. IMPRESSION: Dorsal ganglion cyst "
             "and de Quervain tenosynovitis.";
    }
    case DistractorKind::KneeXray: {
      if (normal) {
        return "X-RAY OF THE " + side +
               " KNEE, THREE VIEWS. FINDINGS: No fracture or dislocation. Joint spaces are "
               "preserved. No joint effusion. IMPRESSION: Normal radiographs of the knee.";
      }
      static const char* const kCompartments[] = {"medial", "lateral"};
      const std::string compartment = pick(rng, kCompartments);
      return "X-RAY OF THE " + side + " KNEE, THREE VIEWS. FINDINGS: Severe " + compartment +
             " compartment joint space narrowing with subchondral sclerosis and osteophytes. "
             "Moderate suprapatellar effusion. IMPRESSION: Advanced osteoarthritis with joint "
             "effusion.";
    }
  }
  return {};
}

}  // namespace

std::int64_t synthetic_current_date(std::uint64_t seed, std::string_view study_id) {
  Rng rng(derive_seed(seed, {"current_date", study_id}));
  return kBaseStudyDate + static_cast<std::int64_t>(rng.below(kStudyDateSpan));
}

void DistractorBank::add(BankEntry entry) {
  const std::string id = entry.study_id;
  entries_.insert_or_assign(id, std::move(entry));
}

const BankEntry* DistractorBank::find(std::string_view study_id) const {
  auto it = entries_.find(study_id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::string DistractorBank::to_jsonl() const {
  std::string out;
  for (const auto& [id, entry] : entries_) {
    for (const auto& r : entry.reports) {
      json j;
      j["study_id"] = id;
      j["kind"] = to_string(r.kind);
      j["polarity"] = to_string(r.polarity);
      j["report_date"] = format_date(r.report_date);
      j["report_text"] = r.report_text;
      j["current_date"] = format_date(entry.current_date);
      out += j.dump() + "\n";
    }
  }
  return out;
}

DistractorBank DistractorBank::from_jsonl(std::string_view text) {
  std::map<std::string, BankEntry> partial;
  std::map<std::string, std::array<bool, 5>> present;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string id = j.at("study_id").get<std::string>();
      auto& entry = partial[id];
      entry.study_id = id;
      entry.current_date = parse_date(j.at("current_date").get<std::string>());
      DistractorReport r;
      r.kind = parse_distractor_kind(j.at("kind").get<std::string>());
      r.polarity = parse_polarity(j.at("polarity").get<std::string>());
      r.report_date = parse_date(j.at("report_date").get<std::string>());
      r.report_text = j.at("report_text").get<std::string>();
      const auto slot = static_cast<std::size_t>(
          std::find(kDistractorOrder.begin(), kDistractorOrder.end(), r.kind) -
          kDistractorOrder.begin());
      entry.reports[slot] = std::move(r);
      present[id][slot] = true;
    } catch (const json::exception& e) {
      throw BankError("bank line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  DistractorBank bank;
  for (auto& [id, entry] : partial) {
    const auto& have = present[id];
    if (!std::all_of(have.begin(), have.end(), [](bool b) { return b; })) {
      throw BankError("bank entry for " + id + " does not cover all five kinds");
    }
    bank.add(std::move(entry));
  }
  return bank;
}

DistractorBank build_distractor_bank(const Manifest& manifest, std::uint64_t seed) {
  if (manifest.empty()) throw BankError("cannot build a bank for an empty manifest");
  DistractorBank bank;
  for (const auto& study : manifest.records()) {
    BankEntry entry;
    entry.study_id = study.study_id;
    entry.current_date = synthetic_current_date(seed, study.study_id);
    Rng rng(derive_seed(seed, {"bank", study.study_id}));
    const Polarity polarity = adversarial_polarity(study.label);
    for (std::size_t i = 0; i < kDistractorOrder.size(); ++i) {
      auto& r = entry.reports[i];
      r.kind = kDistractorOrder[i];
      r.polarity = polarity;
      r.report_date = entry.current_date - rng.between(kMinPriorDays, kMaxPriorDays);
      r.report_text = render_distractor(r.kind, polarity, rng);
    }
    bank.add(std::move(entry));
  }
  return bank;
}

std::vector<DistractorReport> assemble_history(const BankEntry& entry, int k) {
  if (k < 1 || k > kMaxHistory) {
    throw RangeError("history length must be in [1, 5], got " + std::to_string(k));
  }
  std::vector<DistractorReport> out(entry.reports.begin(), entry.reports.begin() + k);
  std::stable_sort(out.begin(), out.end(), [](const DistractorReport& a, const DistractorReport& b) {
    return a.report_date < b.report_date;
  });
  return out;
}

namespace {

std::int64_t current_date_for(std::string_view study_id, const DistractorBank* bank,
                              std::uint64_t date_seed) {
  if (bank != nullptr) {
    if (const auto* entry = bank->find(study_id)) return entry->current_date;
  }
  return synthetic_current_date(date_seed, study_id);
}

const StudyRecord& donor_for(const std::map<std::string, std::string>& donors,
                             const StudyRecord& study, const Manifest& manifest,
                             std::string_view role) {
  auto it = donors.find(study.study_id);
  if (it == donors.end()) {
    throw PairingError("no " + std::string(role) + " donor for study " + study.study_id);
  }
  const StudyRecord* donor = manifest.find(it->second);
  if (donor == nullptr) {
    throw PairingError(std::string(role) + " donor " + it->second + " for study " +
                       study.study_id + " is not in the manifest");
  }
  if (donor->label == study.label) {
    throw PairingError(std::string(role) + " donor " + donor->study_id +
                       " has the same label as " + study.study_id);
  }
  return *donor;
}

}  // namespace

PerturbedCase apply_condition(const StudyRecord& study, const Condition& condition,
                              const PairingMap& pairing, const Manifest& manifest,
                              const DistractorBank* bank, std::uint64_t date_seed) {
  if (study.image_ref.empty() || study.report_text.empty()) {
    throw PreconditionError("study " + study.study_id + " is incomplete");
  }
  PerturbedCase c;
  c.study_id = study.study_id;
  c.condition = condition;
  c.image_ref = study.image_ref;
  c.report_text = study.report_text;
  c.metadata = study.metadata;
  c.labels = label_views_for(condition.kind(), study.label);
  c.current_date = current_date_for(study.study_id, bank, date_seed);

  switch (condition.kind()) {
    case ConditionKind::NoShift:
      break;
    case ConditionKind::TextShift: {
      const auto& donor = donor_for(pairing.text_donor, study, manifest, "text");
      c.report_text = donor.report_text;
      c.text_donor = donor.study_id;
      break;
    }
    case ConditionKind::ImageShift: {
      const auto& donor = donor_for(pairing.image_donor, study, manifest, "image");
      c.image_ref = donor.image_ref;
      c.image_donor = donor.study_id;
      break;
    }
    case ConditionKind::ImageOnly:
      c.report_text.reset();
      break;
    case ConditionKind::TextOnly:
      c.image_ref.reset();
      break;
    case ConditionKind::History: {
      const BankEntry* entry = bank != nullptr ? bank->find(study.study_id) : nullptr;
      if (entry == nullptr) throw BankError("no bank entry for study " + study.study_id);
      c.history = assemble_history(*entry, *condition.history_len());
      break;
    }
  }
  return c;
}

PerturbedCase apply_condition(const PerturbedCase& base, const Condition& condition,
                              const PairingMap& pairing, const Manifest& manifest,
                              const DistractorBank* bank, std::uint64_t date_seed) {
  if (base.condition.kind() != ConditionKind::NoShift || !base.image_ref || !base.report_text ||
      !base.history.empty()) {
    throw PreconditionError("case " + base.study_id + " (" + base.condition.name() +
                            ") is not a complete study");
  }
  StudyRecord study;
  study.study_id = base.study_id;
  study.image_ref = *base.image_ref;
  study.report_text = *base.report_text;
  study.metadata = base.metadata;
  study.label = base.labels.original;
  if (const auto* original = manifest.find(base.study_id)) study.pathology = original->pathology;
  return apply_condition(study, condition, pairing, manifest, bank, date_seed);
}

PerturbedCase ablate(const StudyRecord& study, Modality which, std::uint64_t date_seed) {
  PerturbedCase c;
  c.study_id = study.study_id;
  c.metadata = study.metadata;
  c.labels = label_views_for(ConditionKind::NoShift, study.label);
  c.current_date = synthetic_current_date(date_seed, study.study_id);
  if (which == Modality::Image) {
    c.condition = Condition::text_only();
    c.report_text = study.report_text;
  } else {
    c.condition = Condition::image_only();
    c.image_ref = study.image_ref;
  }
  return c;
}

}  // namespace ctxpress
