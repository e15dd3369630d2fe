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

#ifndef CTXPRESS_UTIL_H_
#define CTXPRESS_UTIL_H_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ctxpress {

// 64-bit FNV-1a. Used to derive seeds from string identities; not a
// content hash (see sha256_hex for that).
std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Derives a child seed from a parent seed and a list of labels. The result
// depends only on the arguments, so streams keyed this way are stable across
// processes, platforms, and schedules.
std::uint64_t derive_seed(std::uint64_t seed,
                          std::initializer_list<std::string_view> labels);

// Seeded generator with platform-stable derived draws. std::mt19937_64 output
// is fixed by the standard; the distribution adaptors are not, so the bounded
// and real-valued draws are done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  // Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  // Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view content);

// "2026-10-14T05:15:00.123Z"
std::string format_utc(std::chrono::system_clock::time_point t);
std::chrono::system_clock::time_point parse_utc(const std::string& text);

// Civil dates are carried as days since 1970-01-01 and printed YYYY-MM-DD.
std::string format_date(std::int64_t days_since_epoch);
std::int64_t parse_date(const std::string& iso);

// RFC 4180 reader: quoted fields may contain commas, quotes ("") and
// newlines. Returns rows of fields; a trailing newline does not add a row.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);

}  // namespace ctxpress

#endif  // CTXPRESS_UTIL_H_
