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

#ifndef CTXPRESS_PROMPT_H_
#define CTXPRESS_PROMPT_H_

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctxpress/core.h"
#include "ctxpress/perturb.h"

namespace ctxpress {

struct TextPart {
  std::string text;
  bool operator==(const TextPart&) const = default;
};

// The image travels by reference; backends load the bytes at dispatch time,
// which is also where a missing file surfaces.
struct ImagePart {
  std::string image_ref;
  std::string media_type;
  bool operator==(const ImagePart&) const = default;
};

using MessagePart = std::variant<TextPart, ImagePart>;

struct MessageSequence {
  std::string system_text;
  std::vector<MessagePart> parts;

  const ImagePart* image() const;
  // Concatenation of all text parts.
  std::string text() const;
  bool operator==(const MessageSequence&) const = default;
};

// Fixed system instruction enforcing the binary output format.
inline constexpr std::string_view kSystemPrompt =
    "You are a medical imaging assistant. Answer every question with a single word: "
    "\"Yes\" or \"No\".";

// Value substituted for empty metadata fields.
inline constexpr std::string_view kUnknownField = "Unknown";

std::string media_type_for(std::string_view image_ref);

// File name of a variant's template, e.g. "history_v2.txt".
std::string template_file_name(const PromptVariant& variant);

class TemplateSet {
 public:
  // Templates compiled into the library from templates/.
  static const TemplateSet& embedded();
  // Loads <dir>/*.txt and verifies each against <dir>/SHA256SUMS. Throws
  // TemplateError on a missing file or checksum mismatch.
  static TemplateSet load_dir(const std::filesystem::path& dir);

  const std::string& get(const PromptVariant& variant) const;
  // sha256 of the sums manifest; pins the exact template set used by a run.
  std::string checksum() const;
  // "<sha256>  <file>\n" lines in fixed order.
  std::string sums_manifest() const;

 private:
  std::array<std::string, 8> texts_;
};

// Renders the template for (case, variant). For History cases the prior block
// is repeated once per distractor; the history-family k=0 baseline (a NoShift
// case) drops the block and its framing. ImageOnly drops the report line.
// Throws TemplateError on a family/condition mismatch or an unresolved
// placeholder.
MessageSequence render(const PerturbedCase& c, const PromptVariant& variant,
                       const TemplateSet& templates = TemplateSet::embedded());

// [v0, v1, v2, v3] of the experiment's family. PromptSensitivity sweeps the
// standard family.
std::vector<PromptVariant> list_variants(Experiment experiment);

}  // namespace ctxpress

#endif  // CTXPRESS_PROMPT_H_
