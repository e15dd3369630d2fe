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

#ifndef CTXPRESS_PERTURB_H_
#define CTXPRESS_PERTURB_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxpress/core.h"
#include "ctxpress/curation.h"

namespace ctxpress {

enum class DistractorKind { BrainMRI, CTAbdomenPelvis, PriorChestXray, WristUltrasound, KneeXray };

// Fixed enumeration order; history stacks take a prefix of it.
inline constexpr std::array<DistractorKind, 5> kDistractorOrder = {
    DistractorKind::BrainMRI, DistractorKind::CTAbdomenPelvis, DistractorKind::PriorChestXray,
    DistractorKind::WristUltrasound, DistractorKind::KneeXray};

std::string_view to_string(DistractorKind k);
DistractorKind parse_distractor_kind(std::string_view s);

enum class Polarity { Normal, Abnormal };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);
// Polarity a distractor must carry for a study with this label.
inline Polarity adversarial_polarity(int study_label) {
  return study_label == 1 ? Polarity::Normal : Polarity::Abnormal;
}
inline int polarity_label(Polarity p) { return p == Polarity::Abnormal ? 1 : 0; }

inline constexpr int kMinPriorDays = 90;
inline constexpr int kMaxPriorDays = 365;

struct DistractorReport {
  DistractorKind kind = DistractorKind::BrainMRI;
  Polarity polarity = Polarity::Normal;
  std::string report_text;
  std::int64_t report_date = 0;  // days since epoch

  bool operator==(const DistractorReport&) const = default;
};

struct BankEntry {
  std::string study_id;
  std::int64_t current_date = 0;
  // Indexed by position in kDistractorOrder.
  std::array<DistractorReport, 5> reports;
};

class DistractorBank {
 public:
  void add(BankEntry entry);
  const BankEntry* find(std::string_view study_id) const;
  const std::map<std::string, BankEntry, std::less<>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // One line per distractor: study_id, kind, polarity, report_date,
  // report_text, current_date. Studies in id order, kinds in fixed order.
  std::string to_jsonl() const;
  static DistractorBank from_jsonl(std::string_view text);

 private:
  std::map<std::string, BankEntry, std::less<>> entries_;
};

// Study date used when no bank entry exists. Bank entries use the same value.
std::int64_t synthetic_current_date(std::uint64_t seed, std::string_view study_id);

// Five templated distractors per study, polarity opposite the study label,
// dates 90-365 days before the study's synthetic current date.
DistractorBank build_distractor_bank(const Manifest& manifest, std::uint64_t seed);

// First k kinds in fixed order, then sorted oldest first. Throws RangeError
// unless 1 <= k <= 5.
std::vector<DistractorReport> assemble_history(const BankEntry& entry, int k);

struct PerturbedCase {
  std::string study_id;
  Condition condition = Condition::no_shift();
  std::optional<std::string> image_ref;
  std::optional<std::string> report_text;
  // Demographics always come from the original study.
  Metadata metadata;
  std::vector<DistractorReport> history;
  LabelViews labels;
  std::int64_t current_date = 0;
  std::optional<std::string> text_donor;
  std::optional<std::string> image_donor;
};

// Builds the input configuration for a condition. PairingError when a shift
// has no donor; BankError when History has no bank entry. bank may be null
// for non-history conditions.
PerturbedCase apply_condition(const StudyRecord& study, const Condition& condition,
                              const PairingMap& pairing, const Manifest& manifest,
                              const DistractorBank* bank, std::uint64_t date_seed = 0);

// Re-applies a condition to an existing case; only complete (both modalities,
// no history) NoShift cases qualify. Anything else is a PreconditionError.
PerturbedCase apply_condition(const PerturbedCase& base, const Condition& condition,
                              const PairingMap& pairing, const Manifest& manifest,
                              const DistractorBank* bank, std::uint64_t date_seed = 0);

enum class Modality { Image, Text };

// Removes exactly one modality: Image -> TextOnly, Text -> ImageOnly.
PerturbedCase ablate(const StudyRecord& study, Modality which, std::uint64_t date_seed = 0);

}  // namespace ctxpress

#endif  // CTXPRESS_PERTURB_H_
