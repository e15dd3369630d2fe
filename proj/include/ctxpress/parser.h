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

#ifndef CTXPRESS_PARSER_H_
#define CTXPRESS_PARSER_H_

#include <string>
#include <string_view>
#include <vector>

#include "ctxpress/core.h"

namespace ctxpress {

struct ParserRules {
  std::vector<std::string> refusal_markers;
  std::vector<std::string> positive_phrases;
  std::vector<std::string> negative_phrases;

  static ParserRules defaults();
  // Plain-text rules file: [refusal], [positive], [negative] sections, one
  // phrase per line; blank lines and '#' comments are ignored. Throws
  // ConfigError on unknown sections, empty lists, or entries that are not
  // already lowercase and punctuation-free.
  static ParserRules parse(std::string_view text);

  // Canonical rules-file text; parse(serialize()) reproduces the rules.
  std::string serialize() const;
  std::string checksum() const;
  void validate() const;
};

// Lowercases ASCII, maps punctuation (ASCII and the common Unicode ranges)
// to spaces, collapses whitespace, and trims.
std::string normalize(std::string_view text);

// Tiered: refusal marker > leading "yes"/"no" > negative phrase > positive
// phrase > ParseError.
ModelAnswer classify(std::string_view text, const ParserRules& rules);

}  // namespace ctxpress

#endif  // CTXPRESS_PARSER_H_
