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

#include "ctxpress/synth.h"

#include <array>
#include <string_view>

#include "ctxpress/core.h"
#include "ctxpress/curation.h"
#include "ctxpress/errors.h"
#include "ctxpress/gateway.h"
#include "ctxpress/util.h"

namespace ctxpress {

namespace {

std::uint32_t crc32(std::string_view data) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : data) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return c ^ 0xFFFFFFFFu;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

void put_chunk(std::string& out, std::string_view type, std::string_view data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type);
  body.append(data);
  out.append(body);
  put_be32(out, crc32(body));
}

struct Finding {
  std::string_view findings;
  std::string_view impression;
};

// Indexed like kAllPathologies.
constexpr std::array<Finding, 5> kPositiveFindings = {{
    {"Linear opacity at the left lung base with mild volume loss.",
     "Findings consistent with atelectasis."},
    {"The cardiac silhouette is enlarged. Lungs are clear.", "Findings consistent with cardiomegaly."},
    {"Focal airspace opacity in the right lower lobe.",
     "Findings consistent with consolidation."},
    {"Diffuse interstitial thickening with vascular congestion.",
     "Findings consistent with pulmonary edema."},
    {"Blunting of the right costophrenic angle with a layering fluid meniscus.",
     "Findings consistent with pleural effusion."},
}};

constexpr std::array<std::string_view, 3> kNormalFindings = {
    "The lungs are clear. Heart size is normal. No pleural effusion or pneumothorax.",
    "Clear lungs bilaterally. Cardiomediastinal silhouette within normal limits.",
    "No focal consolidation, effusion, or pneumothorax. Normal heart size.",
};

constexpr std::array<std::string_view, 5> kRaces = {"White", "Black/African American", "Asian",
                                                    "Hispanic/Latino", ""};

std::string report_for(int label, std::optional<Pathology> p, Rng& rng) {
  if (label == 1) {
    const auto& f = kPositiveFindings[static_cast<std::size_t>(*p)];
    return "FINDINGS: " + std::string(f.findings) + "\n" + std::string(kAbnormalImpression) + " " +
           std::string(f.impression);
  }
  return "FINDINGS: " + std::string(kNormalFindings[rng.below(kNormalFindings.size())]) + "\n" +
         std::string(kNormalImpression) + " No acute cardiopulmonary process.";
}

std::string image_for(int label, Rng& rng) {
  constexpr int kSide = 8;
  std::vector<std::uint8_t> px(kSide * kSide);
  const int base = label == 1 ? 64 : 192;
  for (auto& v : px) v = static_cast<std::uint8_t>(base + static_cast<int>(rng.below(32)) - 16);
  return encode_gray_png(kSide, kSide, px);
}

enum class RowKind { Positive, Negative, Uncertain, TwoPositive, OtherPositive };

}  // namespace

std::string encode_gray_png(int width, int height, const std::vector<std::uint8_t>& pixels) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw RangeError("png dimensions do not match pixel count");
  }
  std::string raw;
  for (int y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data()) + static_cast<std::size_t>(y) * width,
               static_cast<std::size_t>(width));
  }
  if (raw.size() > 0xFFFF) throw RangeError("png too large for a single stored block");

  std::string z = {'\x78', '\x01', '\x01'};
  const auto len = static_cast<std::uint16_t>(raw.size());
  z.push_back(static_cast<char>(len & 0xFF));
  z.push_back(static_cast<char>(len >> 8));
  z.push_back(static_cast<char>(~len & 0xFF));
  z.push_back(static_cast<char>((~len >> 8) & 0xFF));
  z.append(raw);
  std::uint32_t a = 1, b = 0;
  for (unsigned char c : raw) {
    a = (a + c) % 65521;
    b = (b + a) % 65521;
  }
  put_be32(z, (b << 16) | a);

  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.append({'\x08', '\x00', '\x00', '\x00', '\x00'});  // 8-bit gray

  std::string out = "\x89PNG\r\n\x1a\n";
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  return out;
}

SynthCorpus synth_corpus(int n_per_class, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n_per_class < 1) throw RangeError("n_per_class must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const int n_ineligible = std::max(3, n_per_class / 10);
  std::vector<RowKind> kinds;
  kinds.insert(kinds.end(), static_cast<std::size_t>(n_per_class), RowKind::Positive);
  kinds.insert(kinds.end(), static_cast<std::size_t>(n_per_class), RowKind::Negative);
  for (int i = 0; i < n_ineligible; ++i) {
    kinds.push_back(i % 3 == 0   ? RowKind::Uncertain
                    : i % 3 == 1 ? RowKind::TwoPositive
                                 : RowKind::OtherPositive);
  }
  Rng order(derive_seed(seed, {"synth", "order"}));
  order.shuffle(kinds);
  Rng rng(derive_seed(seed, {"synth", "fields"}));

  std::string labels =
      "study_id,subject_id,No Finding,Atelectasis,Cardiomegaly,Consolidation,Edema,"
      "Pleural Effusion,Lung Opacity,Support Devices\n";
  std::string meta =
      "study_id,image_ref,age,sex,race,ViewPosition,PerformedProcedureStepDescription,"
      "report_text\n";
  std::string sidecar = "image_ref,label\n";

  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const std::string study = "s" + std::to_string(50000000 + i);
    const std::string subject = "p" + std::to_string(10000000 + rng.below(90000000));
    const RowKind kind = kinds[i];

    std::array<std::string, 5> targets;
    for (auto& t : targets) t = rng.bernoulli(0.5) ? "0.0" : "";
    std::string no_finding, opacity, devices = rng.bernoulli(0.2) ? "1.0" : "";
    const auto p = static_cast<Pathology>(rng.below(kAllPathologies.size()));
    const auto pi = static_cast<std::size_t>(p);
    int label = 0;
    switch (kind) {
      case RowKind::Positive:
        targets[pi] = "1.0";
        label = 1;
        break;
      case RowKind::Negative:
        no_finding = "1.0";
        break;
      case RowKind::Uncertain:
        targets[pi] = "-1.0";
        label = 1;
        break;
      case RowKind::TwoPositive:
        targets[pi] = "1.0";
        targets[(pi + 1) % targets.size()] = "1.0";
        label = 1;
        break;
      case RowKind::OtherPositive:
        no_finding = "1.0";
        opacity = "1.0";
        break;
    }
    labels += study + "," + subject + "," + no_finding;
    for (const auto& t : targets) labels += "," + t;
    labels += "," + opacity + "," + devices + "\n";

    const std::string report =
        report_for(label, label == 1 ? std::optional<Pathology>(p) : std::nullopt, rng);
    const bool portable = rng.bernoulli(0.4);
    const std::string view = portable ? "AP" : "PA";
    const std::string procedure = portable ? "CHEST (PORTABLE AP)" : "CHEST (PA AND LAT)";
    const std::string age = rng.bernoulli(0.05) ? "" : std::to_string(rng.between(18, 95));
    const std::string sex = rng.bernoulli(0.5) ? "F" : "M";
    const std::string race(kRaces[rng.below(kRaces.size())]);

    auto add_image = [&](const std::string& suffix, const std::string& view_pos) {
      const std::string ref = "images/" + study + "_" + suffix + ".png";
      write_file_atomic(out_dir / ref, image_for(label, rng));
      meta += csv_escape(study) + "," + csv_escape(ref) + "," + age + "," + sex + "," +
              csv_escape(race) + "," + view_pos + "," + csv_escape(procedure) + "," +
              csv_escape(report) + "\n";
      sidecar += ref + "," + std::to_string(label) + "\n";
    };
    add_image("frontal", view);
    if (!portable && rng.bernoulli(0.5)) add_image("lateral", "LL");
  }

  SynthCorpus out;
  out.labels_csv = out_dir / "labels.csv";
  out.metadata_csv = out_dir / "metadata.csv";
  out.image_polarity_csv = out_dir / "image_polarity.csv";
  out.manifest_jsonl = out_dir / "manifest.jsonl";
  write_file_atomic(out.labels_csv, labels);
  write_file_atomic(out.metadata_csv, meta);
  write_file_atomic(out.image_polarity_csv, sidecar);

  const auto curated = curate_balanced_subset(parse_label_table(labels),
                                              parse_metadata_table(meta), n_per_class, seed);
  write_file_atomic(out.manifest_jsonl, manifest_to_jsonl(curated.records));
  out.records = curated.records.size();
  out.ineligible_rows = static_cast<std::size_t>(n_ineligible);
  return out;
}

}  // namespace ctxpress
