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

#ifndef CTXPRESS_SYNTH_H_
#define CTXPRESS_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctxpress {

struct SynthCorpus {
  std::filesystem::path labels_csv;
  std::filesystem::path metadata_csv;
  std::filesystem::path image_polarity_csv;
  std::filesystem::path manifest_jsonl;
  std::size_t records = 0;
  std::size_t ineligible_rows = 0;
};

// Writes a CheXpert-shaped fixture corpus under out_dir: labels.csv (with some
// rows the curator must exclude), metadata.csv, images/*.png, the
// image_polarity.csv oracle sidecar, and manifest.jsonl holding the curated
// 2 * n_per_class studies. Image refs are relative to out_dir. Deterministic
// in (n_per_class, seed). Throws IoError when out_dir is unwritable.
SynthCorpus synth_corpus(int n_per_class, std::uint64_t seed, const std::filesystem::path& out_dir);

// Minimal 8-bit grayscale PNG (stored deflate, no compression).
std::string encode_gray_png(int width, int height, const std::vector<std::uint8_t>& pixels);

}  // namespace ctxpress

#endif  // CTXPRESS_SYNTH_H_
