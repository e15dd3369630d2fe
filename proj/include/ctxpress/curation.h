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

#ifndef CTXPRESS_CURATION_H_
#define CTXPRESS_CURATION_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxpress/core.h"

namespace ctxpress {

// CheXpert per-pathology state. Blank cells are std::nullopt in LabelRow.
enum class Flag { Positive, Negative, Uncertain };

inline constexpr std::string_view kNoFindingColumn = "No Finding";
inline constexpr std::string_view kSupportDevicesColumn = "Support Devices";

struct LabelRow {
  std::string study_id;
  std::string subject_id;
  // Column name -> state; blank cells are absent or nullopt.
  std::map<std::string, std::optional<Flag>, std::less<>> flags;

  std::optional<Flag> flag(std::string_view column) const;
};

// Parses "1.0"/"1", "0.0"/"0", "-1.0"/"-1" and blank. Anything else is a
// SchemaError.
std::optional<Flag> parse_flag(std::string_view cell);

// Reads a CheXpert-style export. Throws SchemaError when the header lacks
// study_id, subject_id, "No Finding", or any of the five targets.
std::vector<LabelRow> parse_label_table(std::string_view csv_text);

struct DerivedLabel {
  enum class Kind { Positive, Negative, Excluded } kind = Kind::Excluded;
  std::optional<Pathology> pathology;

  static DerivedLabel positive(Pathology p) { return {Kind::Positive, p}; }
  static DerivedLabel negative() { return {Kind::Negative, std::nullopt}; }
  static DerivedLabel excluded() { return {Kind::Excluded, std::nullopt}; }
  bool operator==(const DerivedLabel&) const = default;
};

// Single-label inclusion rule. Any uncertain target flag excludes the row.
// Throws SchemaError if the row lacks a required column entirely.
DerivedLabel derive_label(const LabelRow& row);

// One row per image; a study may have several.
struct MetadataRow {
  std::string study_id;
  std::string image_ref;
  Metadata metadata;
  std::string report_text;
};

// Columns: study_id, image_ref, age, sex, race, ViewPosition,
// PerformedProcedureStepDescription, report_text. Demographic columns are
// optional; study_id, image_ref and ViewPosition are required.
std::vector<MetadataRow> parse_metadata_table(std::string_view csv_text);

struct CurationResult {
  std::vector<StudyRecord> records;
  // Human-readable notes: multi-view choices, missing metadata, etc.
  std::vector<std::string> log;
};

bool is_frontal_view(std::string_view view_position);

// Samples exactly n_per_class positives and negatives, deterministically in
// seed. Throws CurationError naming the deficient class.
CurationResult curate_balanced_subset(const std::vector<LabelRow>& rows,
                                      const std::vector<MetadataRow>& metadata,
                                      int n_per_class, std::uint64_t seed);

// Manifest with by-id lookup. Study ids must be unique.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<StudyRecord> records);

  const std::vector<StudyRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const StudyRecord* find(std::string_view study_id) const;
  const StudyRecord& at(std::string_view study_id) const;

 private:
  std::vector<StudyRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string manifest_to_jsonl(const std::vector<StudyRecord>& records);
Manifest manifest_from_jsonl(std::string_view text);
Manifest load_manifest(const std::filesystem::path& path);

struct PairingMap {
  std::uint64_t seed = 0;
  std::map<std::string, std::string> text_donor;
  std::map<std::string, std::string> image_donor;
};

// Assigns every study an opposite-label donor for each role. Each role runs
// its own seeded stream; donors are drawn without replacement until the
// opposite pool runs out, then with replacement.
PairingMap pair_opposites(const Manifest& manifest, std::uint64_t seed);

json to_json(const PairingMap& p);
PairingMap pairing_from_json(const json& j);

}  // namespace ctxpress

#endif  // CTXPRESS_CURATION_H_
