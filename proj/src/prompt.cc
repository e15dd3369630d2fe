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

#include <algorithm>
#include <map>
#include <sstream>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

// Generated from templates/ at build time (embedded_templates.cc).
namespace embedded_templates {
extern const char* const kTexts[8];
}  // namespace embedded_templates

const ImagePart* MessageSequence::image() const {
  for (const auto& p : parts) {
    if (const auto* img = std::get_if<ImagePart>(&p)) return img;
  }
  return nullptr;
}

std::string MessageSequence::text() const {
  std::string out;
  for (const auto& p : parts) {
    if (const auto* t = std::get_if<TextPart>(&p)) out += t->text;
  }
  return out;
}

std::string media_type_for(std::string_view image_ref) {
  const std::string lower = to_lower_ascii(image_ref);
  auto ends_with = [&](std::string_view suffix) {
    return lower.size() >= suffix.size() &&
           lower.compare(lower.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".png")) return "image/png";
  if (ends_with(".jpg") || ends_with(".jpeg")) return "image/jpeg";
  if (ends_with(".webp")) return "image/webp";
  if (ends_with(".gif")) return "image/gif";
  return "application/octet-stream";
}

namespace {

std::size_t template_slot(const PromptVariant& v) {
  return (v.family == PromptFamily::History ? 4 : 0) + static_cast<std::size_t>(v.id);
}

constexpr std::array<PromptVariant, 8> kAllVariants = {{
    {VariantId::V0, PromptFamily::Standard}, {VariantId::V1, PromptFamily::Standard},
    {VariantId::V2, PromptFamily::Standard}, {VariantId::V3, PromptFamily::Standard},
    {VariantId::V0, PromptFamily::History},  {VariantId::V1, PromptFamily::History},
    {VariantId::V2, PromptFamily::History},  {VariantId::V3, PromptFamily::History},
}};

std::map<std::string, std::string> parse_sums(std::string_view text) {
  std::map<std::string, std::string> sums;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto sp = line.find("  ");
    if (sp == std::string::npos) throw TemplateError("malformed SHA256SUMS line: " + line);
    sums[line.substr(sp + 2)] = line.substr(0, sp);
  }
  return sums;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += '\n';
    out += lines[i];
  }
  return out;
}

using Values = std::map<std::string, std::string, std::less<>>;

// Single pass: substituted values are never rescanned, so braces inside a
// report cannot be mistaken for placeholders.
std::string substitute(std::string_view text, const Values& values) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find('{', i);
    if (open == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, open - i));
    const auto close = text.find('}', open);
    if (close == std::string_view::npos) {
      throw TemplateError("unterminated placeholder in template");
    }
    const auto name = text.substr(open + 1, close - open - 1);
    auto it = values.find(name);
    if (it == values.end()) {
      throw TemplateError("unresolved placeholder {" + std::string(name) + "}");
    }
    out.append(it->second);
    i = close + 1;
  }
  return out;
}

std::string or_unknown(const std::string& v) {
  return trim(v).empty() ? std::string(kUnknownField) : v;
}

constexpr std::string_view kBlockHead = "[Report Date: {past_date}]";
constexpr std::string_view kBlockTail = "{prior_report_text}";
constexpr std::string_view kBlockSeparator = "--- --- ---";

// Lines of framing removed around the prior block when a history-family
// prompt carries no prior reports: {above, below}.
constexpr std::array<std::pair<std::size_t, std::size_t>, 4> kEmptyHistoryTrim = {{
    {1, 1},  // v0: "Prior reports:" and the blank line after the block
    {0, 1},  // v1: keeps "2) Review prior radiology reports if any:"
    {1, 1},  // v2: "PRIOR REPORTS:"
    {2, 2},  // v3: "PRIOR REPORTS", both rules, trailing blank
}};

std::string render_history_template(const std::string& tmpl, const PerturbedCase& c,
                                    const PromptVariant& variant, const Values& values) {
  const auto lines = split_lines(tmpl);
  std::size_t first = lines.size(), last = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i] == kBlockHead && first == lines.size()) first = i;
    if (lines[i] == kBlockTail) last = i;
  }
  if (first == lines.size() || last == lines.size() || last < first) {
    throw TemplateError("history template " + template_file_name(variant) +
                        " has no prior-report block");
  }

  if (c.history.empty()) {
    const auto [above, below] = kEmptyHistoryTrim[static_cast<std::size_t>(variant.id)];
    if (above > first || last + below >= lines.size()) {
      throw TemplateError("history template " + template_file_name(variant) +
                          " does not match its framing rule");
    }
    std::vector<std::string> kept(lines.begin(), lines.begin() + (first - above));
    kept.insert(kept.end(), lines.begin() + (last + below + 1), lines.end());
    return substitute(join_lines(kept, 0, kept.size()), values);
  }

  std::string block;
  for (std::size_t i = 0; i < c.history.size(); ++i) {
    if (i > 0) block.append("\n").append(kBlockSeparator).append("\n");
    block.append("[Report Date: ").append(format_date(c.history[i].report_date)).append("]\n");
    block.append(c.history[i].report_text);
  }
  std::string out = substitute(join_lines(lines, 0, first), values);
  if (first > 0) out += '\n';
  out += block;
  if (last + 1 < lines.size()) {
    out += '\n';
    out += substitute(join_lines(lines, last + 1, lines.size()), values);
  }
  return out;
}

// Drops the line carrying {report}, plus a bare heading (no placeholder,
// ending in ':') directly above it.
std::string drop_report_line(const std::string& tmpl) {
  auto lines = split_lines(tmpl);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find("{report}") == std::string::npos) continue;
    std::size_t begin = i;
    if (i > 0) {
      const std::string head = trim(lines[i - 1]);
      if (!head.empty() && head.back() == ':' && head.find('{') == std::string::npos) begin = i - 1;
    }
    lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(begin),
                lines.begin() + static_cast<std::ptrdiff_t>(i + 1));
    return join_lines(lines, 0, lines.size());
  }
  return tmpl;
}

}  // namespace

std::string template_file_name(const PromptVariant& variant) {
  return std::string(variant.family == PromptFamily::History ? "history_" : "standard_") +
         std::string(variant.id_name()) + ".txt";
}

const TemplateSet& TemplateSet::embedded() {
  static const TemplateSet set = [] {
    TemplateSet s;
    for (std::size_t i = 0; i < s.texts_.size(); ++i) s.texts_[i] = embedded_templates::kTexts[i];
    return s;
  }();
  return set;
}

TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
  std::string sums_text;
  try {
    sums_text = read_file(dir / "SHA256SUMS");
  } catch (const IoError& e) {
    throw TemplateError(std::string("template checksum manifest: ") + e.what());
  }
  const auto sums = parse_sums(sums_text);
  TemplateSet s;
  for (const auto& v : kAllVariants) {
    const std::string name = template_file_name(v);
    auto it = sums.find(name);
    if (it == sums.end()) throw TemplateError("SHA256SUMS does not pin " + name);
    std::string text;
    try {
      text = read_file(dir / name);
    } catch (const IoError& e) {
      throw TemplateError(e.what());
    }
    if (sha256_hex(text) != it->second) {
      throw TemplateError("checksum mismatch for template " + name);
    }
    s.texts_[template_slot(v)] = std::move(text);
  }
  return s;
}

const std::string& TemplateSet::get(const PromptVariant& variant) const {
  return texts_[template_slot(variant)];
}

std::string TemplateSet::sums_manifest() const {
  std::string out;
  for (const auto& v : kAllVariants) {
    out += sha256_hex(get(v)) + "  " + template_file_name(v) + "\n";
  }
  return out;
}

std::string TemplateSet::checksum() const { return sha256_hex(sums_manifest()); }

MessageSequence render(const PerturbedCase& c, const PromptVariant& variant,
                       const TemplateSet& templates) {
  const auto kind = c.condition.kind();
  if (variant.family == PromptFamily::History) {
    if (kind != ConditionKind::History && kind != ConditionKind::NoShift) {
      throw TemplateError("history prompts apply only to history cases, not " +
                          c.condition.name());
    }
    if (kind == ConditionKind::History &&
        c.history.size() != static_cast<std::size_t>(*c.condition.history_len())) {
      throw TemplateError("history case " + c.study_id + " carries " +
                          std::to_string(c.history.size()) + " reports, expected " +
                          std::to_string(*c.condition.history_len()));
    }
    if (kind == ConditionKind::NoShift && !c.history.empty()) {
      throw TemplateError("baseline case " + c.study_id + " unexpectedly carries history");
    }
    if (!c.report_text) throw TemplateError("history prompts need the current report");
  } else if (kind == ConditionKind::History) {
    throw TemplateError("history case " + c.study_id + " needs a history-family prompt");
  }

  Values values{
      {"age", or_unknown(c.metadata.age)},
      {"sex", or_unknown(c.metadata.sex)},
      {"race", or_unknown(c.metadata.race)},
      {"ViewPosition", or_unknown(c.metadata.view_position)},
      {"PerformedProcedureStepDescription", or_unknown(c.metadata.procedure_description)},
      {"current_dt", format_date(c.current_date)},
  };
  if (c.report_text) values.emplace("report", *c.report_text);

  const std::string& tmpl = templates.get(variant);
  std::string text;
  if (variant.family == PromptFamily::History) {
    text = render_history_template(tmpl, c, variant, values);
  } else if (!c.report_text) {
    text = substitute(drop_report_line(tmpl), values);
  } else {
    text = substitute(tmpl, values);
  }

  MessageSequence seq;
  seq.system_text = std::string(kSystemPrompt);
  if (c.image_ref) seq.parts.emplace_back(ImagePart{*c.image_ref, media_type_for(*c.image_ref)});
  seq.parts.emplace_back(TextPart{std::move(text)});
  return seq;
}

std::vector<PromptVariant> list_variants(Experiment experiment) {
  const PromptFamily family =
      experiment == Experiment::History ? PromptFamily::History : PromptFamily::Standard;
  return {{VariantId::V0, family}, {VariantId::V1, family}, {VariantId::V2, family},
          {VariantId::V3, family}};
}

}  // namespace ctxpress
