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

#include "ctxpress/parser.h"

#include <algorithm>
#include <sstream>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

ParserRules ParserRules::defaults() {
  ParserRules r;
  r.refusal_markers = {"unmatched", "conclusive", "cannot determine", "unable to", "as an ai"};
  r.positive_phrases = {"evidence of", "there is", "findings consistent with", "present"};
  r.negative_phrases = {"no evidence of", "no signs of", "no acute", "absent", "none of"};
  return r;
}

void ParserRules::validate() const {
  auto check = [](const std::vector<std::string>& list, std::string_view name) {
    if (list.empty()) throw ConfigError("parser rules: [" + std::string(name) + "] is empty");
    for (const auto& entry : list) {
      if (entry.empty() || normalize(entry) != entry) {
        throw ConfigError("parser rules: [" + std::string(name) + "] entry '" + entry +
                          "' must be lowercase and punctuation-free");
      }
    }
  };
  check(refusal_markers, "refusal");
  check(positive_phrases, "positive");
  check(negative_phrases, "negative");
}

ParserRules ParserRules::parse(std::string_view text) {
  ParserRules r;
  std::vector<std::string>* section = nullptr;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      const auto name = line.substr(1, line.size() - 2);
      if (name == "refusal") section = &r.refusal_markers;
      else if (name == "positive") section = &r.positive_phrases;
      else if (name == "negative") section = &r.negative_phrases;
      else throw ConfigError("parser rules: unknown section [" + name + "]");
      continue;
    }
    if (section == nullptr) throw ConfigError("parser rules: entry before any section: " + line);
    section->push_back(line);
  }
  r.validate();
  return r;
}

std::string ParserRules::serialize() const {
  std::string out;
  auto emit = [&](std::string_view name, const std::vector<std::string>& list) {
    out.append("[").append(name).append("]\n");
    for (const auto& e : list) out.append(e).append("\n");
  };
  emit("refusal", refusal_markers);
  emit("positive", positive_phrases);
  emit("negative", negative_phrases);
  return out;
}

std::string ParserRules::checksum() const { return sha256_hex(serialize()); }

namespace {

// Decodes one UTF-8 sequence at s[i]; returns the code point and advances i.
// Invalid bytes decode as U+FFFD one byte at a time.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xFFFD;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

bool is_separator(char32_t cp) {
  if (cp < 0x80) {
    const auto c = static_cast<unsigned char>(cp);
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E) || c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
           c == '\v' || c == '\f';
  }
  return (cp >= 0xA0 && cp <= 0xBF) ||    // NBSP and Latin-1 punctuation/symbols
         cp == 0xD7 || cp == 0xF7 ||      // multiplication and division signs
         (cp >= 0x2000 && cp <= 0x206F) ||  // General Punctuation, incl. dashes and quotes
         (cp >= 0x2190 && cp <= 0x21FF) ||  // arrows
         (cp >= 0x3000 && cp <= 0x303F) ||  // CJK punctuation
         (cp >= 0xFF01 && cp <= 0xFF0F) || cp == 0xFFFD;
}

}  // namespace

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = next_code_point(text, i);
    if (is_separator(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp));
    } else {
      out.append(text.substr(start, i - start));
    }
  }
  return out;
}

ModelAnswer classify(std::string_view text, const ParserRules& rules) {
  const std::string norm = normalize(text);
  if (norm.empty()) return ModelAnswer::ParseError;
  auto contains_any = [&](const std::vector<std::string>& list) {
    return std::any_of(list.begin(), list.end(),
                       [&](const std::string& p) { return norm.find(p) != std::string::npos; });
  };
  if (contains_any(rules.refusal_markers)) return ModelAnswer::Refusal;
  const std::string first = norm.substr(0, norm.find(' '));
  if (first == "yes") return ModelAnswer::Yes;
  if (first == "no") return ModelAnswer::No;
  if (contains_any(rules.negative_phrases)) return ModelAnswer::No;
  if (contains_any(rules.positive_phrases)) return ModelAnswer::Yes;
  return ModelAnswer::ParseError;
}

}  // namespace ctxpress
