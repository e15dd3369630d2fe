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

#include "ctxpress/curation.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

std::optional<Flag> LabelRow::flag(std::string_view column) const {
  auto it = flags.find(column);
  if (it == flags.end()) return std::nullopt;
  return it->second;
}

std::optional<Flag> parse_flag(std::string_view cell) {
  const std::string v = trim(cell);
  if (v.empty()) return std::nullopt;
  if (v == "1.0" || v == "1") return Flag::Positive;
  if (v == "0.0" || v == "0") return Flag::Negative;
  if (v == "-1.0" || v == "-1") return Flag::Uncertain;
  throw SchemaError("label flag outside {1.0, 0.0, -1.0, blank}: '" + v + "'");
}

namespace {

std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) idx[trim(header[i])] = i;
  return idx;
}

std::size_t require_column(const std::map<std::string, std::size_t>& idx,
                           const std::string& name) {
  auto it = idx.find(name);
  if (it == idx.end()) throw SchemaError("missing column: " + name);
  return it->second;
}

const std::string& cell(const std::vector<std::string>& row, std::size_t i) {
  static const std::string kEmpty;
  return i < row.size() ? row[i] : kEmpty;
}

}  // namespace

std::vector<LabelRow> parse_label_table(std::string_view csv_text) {
  auto table = parse_csv(csv_text);
  if (table.empty()) throw SchemaError("label table is empty");
  const auto idx = header_index(table.front());
  const auto study_col = require_column(idx, "study_id");
  const auto subject_col = require_column(idx, "subject_id");
  require_column(idx, std::string(kNoFindingColumn));
  for (Pathology p : kAllPathologies) require_column(idx, std::string(display_name(p)));

  std::vector<LabelRow> rows;
  rows.reserve(table.size() - 1);
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& raw = table[r];
    LabelRow row;
    row.study_id = trim(cell(raw, study_col));
    row.subject_id = trim(cell(raw, subject_col));
    for (const auto& [name, i] : idx) {
      if (i == study_col || i == subject_col) continue;
      row.flags.emplace(name, parse_flag(cell(raw, i)));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

DerivedLabel derive_label(const LabelRow& row) {
  if (!row.flags.contains(kNoFindingColumn)) {
    throw SchemaError("row " + row.study_id + " lacks column No Finding");
  }
  int positives = 0;
  std::optional<Pathology> found;
  for (Pathology p : kAllPathologies) {
    const auto name = display_name(p);
    if (!row.flags.contains(name)) {
      throw SchemaError("row " + row.study_id + " lacks column " + std::string(name));
    }
    const auto f = row.flag(name);
    if (f == Flag::Uncertain) return DerivedLabel::excluded();
    if (f == Flag::Positive) {
      ++positives;
      found = p;
    }
  }
  const bool no_finding = row.flag(kNoFindingColumn) == Flag::Positive;
  if (positives == 1 && !no_finding) return DerivedLabel::positive(*found);
  if (positives == 0 && no_finding) {
    // Non-target pathology columns also veto the negative class.
    for (const auto& [name, f] : row.flags) {
      if (name == kNoFindingColumn || name == kSupportDevicesColumn) continue;
      if (f == Flag::Positive) return DerivedLabel::excluded();
    }
    return DerivedLabel::negative();
  }
  return DerivedLabel::excluded();
}

std::vector<MetadataRow> parse_metadata_table(std::string_view csv_text) {
  auto table = parse_csv(csv_text);
  if (table.empty()) throw SchemaError("metadata table is empty");
  const auto idx = header_index(table.front());
  const auto study_col = require_column(idx, "study_id");
  const auto image_col = require_column(idx, "image_ref");
  const auto view_col = require_column(idx, "ViewPosition");
  auto optional_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = idx.find(name);
    if (it == idx.end()) return std::nullopt;
    return it->second;
  };
  const auto age_col = optional_col("age");
  const auto sex_col = optional_col("sex");
  const auto race_col = optional_col("race");
  const auto proc_col = optional_col("PerformedProcedureStepDescription");
  const auto report_col = optional_col("report_text");
  auto get = [](const std::vector<std::string>& row, std::optional<std::size_t> c) {
    return c ? cell(row, *c) : std::string();
  };

  std::vector<MetadataRow> out;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& raw = table[r];
    MetadataRow m;
    m.study_id = trim(cell(raw, study_col));
    m.image_ref = trim(cell(raw, image_col));
    m.metadata.view_position = trim(cell(raw, view_col));
    m.metadata.age = trim(get(raw, age_col));
    m.metadata.sex = trim(get(raw, sex_col));
    m.metadata.race = trim(get(raw, race_col));
    m.metadata.procedure_description = trim(get(raw, proc_col));
    m.report_text = get(raw, report_col);
    out.push_back(std::move(m));
  }
  return out;
}

bool is_frontal_view(std::string_view view_position) {
  return view_position == "PA" || view_position == "AP";
}

CurationResult curate_balanced_subset(const std::vector<LabelRow>& rows,
                                      const std::vector<MetadataRow>& metadata,
                                      int n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) {
    throw CurationError("n_per_class must be at least 1, got " + std::to_string(n_per_class));
  }
  CurationResult result;

  std::map<std::string, std::vector<const MetadataRow*>> frontal;
  for (const auto& m : metadata) {
    if (is_frontal_view(m.metadata.view_position)) frontal[m.study_id].push_back(&m);
  }

  struct Candidate {
    const LabelRow* row;
    const MetadataRow* meta;
    DerivedLabel label;
  };
  std::vector<Candidate> positives, negatives;
  std::set<std::string> seen;
  std::size_t no_view = 0;
  for (const auto& row : rows) {
    if (!seen.insert(row.study_id).second) {
      throw SchemaError("duplicate study_id in label table: " + row.study_id);
    }
    const DerivedLabel label = derive_label(row);
    if (label.kind == DerivedLabel::Kind::Excluded) continue;
    auto it = frontal.find(row.study_id);
    if (it == frontal.end()) {
      ++no_view;
      continue;
    }
    auto views = it->second;
    std::sort(views.begin(), views.end(),
              [](const MetadataRow* a, const MetadataRow* b) { return a->image_ref < b->image_ref; });
    if (views.size() > 1) {
      result.log.push_back("study " + row.study_id + ": " + std::to_string(views.size()) +
                           " frontal images, using " + views.front()->image_ref);
    }
    Candidate c{&row, views.front(), label};
    (label.kind == DerivedLabel::Kind::Positive ? positives : negatives).push_back(c);
  }
  if (no_view > 0) {
    result.log.push_back(std::to_string(no_view) +
                         " eligible studies skipped: no frontal image in metadata");
  }

  auto sample = [&](std::vector<Candidate>& pool, std::string_view cls) {
    if (pool.size() < static_cast<std::size_t>(n_per_class)) {
      throw CurationError("insufficient eligible " + std::string(cls) + " studies: need " +
                          std::to_string(n_per_class) + ", have " + std::to_string(pool.size()));
    }
    std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
      return a.row->study_id < b.row->study_id;
    });
    Rng rng(derive_seed(seed, {"curate", cls}));
    rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(n_per_class));
  };
  sample(positives, "positive");
  sample(negatives, "negative");

  std::vector<Candidate> chosen = positives;
  chosen.insert(chosen.end(), negatives.begin(), negatives.end());
  Rng order_rng(derive_seed(seed, {"curate", "order"}));
  order_rng.shuffle(chosen);

  for (const auto& c : chosen) {
    StudyRecord s;
    s.study_id = c.row->study_id;
    s.subject_id = c.row->subject_id;
    s.image_ref = c.meta->image_ref;
    s.report_text = c.meta->report_text;
    s.metadata = c.meta->metadata;
    s.label = c.label.kind == DerivedLabel::Kind::Positive ? 1 : 0;
    s.pathology = c.label.pathology;
    result.records.push_back(std::move(s));
  }
  return result;
}

Manifest::Manifest(std::vector<StudyRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    records_[i].validate();
    if (!index_.emplace(records_[i].study_id, i).second) {
      throw SchemaError("duplicate study_id in manifest: " + records_[i].study_id);
    }
  }
}

const StudyRecord* Manifest::find(std::string_view study_id) const {
  auto it = index_.find(std::string(study_id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

const StudyRecord& Manifest::at(std::string_view study_id) const {
  const auto* s = find(study_id);
  if (s == nullptr) throw SchemaError("unknown study: " + std::string(study_id));
  return *s;
}

std::string manifest_to_jsonl(const std::vector<StudyRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

Manifest manifest_from_jsonl(std::string_view text) {
  std::vector<StudyRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(study_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw SchemaError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Manifest(std::move(records));
}

Manifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_jsonl(read_file(path));
}

PairingMap pair_opposites(const Manifest& manifest, std::uint64_t seed) {
  std::vector<const StudyRecord*> by_label[2];
  for (const auto& s : manifest.records()) by_label[s.label].push_back(&s);
  if (by_label[0].empty() || by_label[1].empty()) {
    throw PairingError("pairing needs studies of both labels");
  }
  PairingMap out;
  out.seed = seed;
  auto assign = [&](std::string_view role, std::map<std::string, std::string>& donors) {
    Rng rng(derive_seed(seed, {"pair", role}));
    for (int label : {0, 1}) {
      std::vector<const StudyRecord*> pool = by_label[1 - label];
      rng.shuffle(pool);
      const auto& recipients = by_label[label];
      for (std::size_t i = 0; i < recipients.size(); ++i) {
        const StudyRecord* donor = i < pool.size() ? pool[i] : pool[rng.below(pool.size())];
        donors[recipients[i]->study_id] = donor->study_id;
      }
    }
  };
  assign("text", out.text_donor);
  assign("image", out.image_donor);
  return out;
}

json to_json(const PairingMap& p) {
  return json{{"seed", p.seed}, {"text_donor", p.text_donor}, {"image_donor", p.image_donor}};
}

PairingMap pairing_from_json(const json& j) {
  try {
    PairingMap p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.text_donor = j.at("text_donor").get<std::map<std::string, std::string>>();
    p.image_donor = j.at("image_donor").get<std::map<std::string, std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed pairing map: ") + e.what());
  }
}

}  // namespace ctxpress
