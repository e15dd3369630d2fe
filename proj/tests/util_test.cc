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

#include "ctxpress/util.h"

#include <algorithm>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "ctxpress/errors.h"

namespace ctxpress {
namespace {

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(DeriveSeed, StableAndLabelSensitive) {
  EXPECT_EQ(derive_seed(7, {"pair", "text"}), derive_seed(7, {"pair", "text"}));
  EXPECT_NE(derive_seed(7, {"pair", "text"}), derive_seed(7, {"pair", "image"}));
  EXPECT_NE(derive_seed(7, {"pair", "text"}), derive_seed(8, {"pair", "text"}));
  // Label boundaries matter: ("ab","c") is not ("a","bc").
  EXPECT_NE(derive_seed(1, {"ab", "c"}), derive_seed(1, {"a", "bc"}));
}

TEST(Rng, Mt19937ReferenceOutput) {
  // The standard fixes the 10000th output of a default-seeded mt19937_64.
  std::mt19937_64 e;
  e.discard(9999);
  EXPECT_EQ(e(), 9981545732273789042ULL);
}

TEST(Rng, DrawsStayInRange) {
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const auto b = rng.between(-3, 3);
    ASSERT_GE(b, -3);
    ASSERT_LE(b, 3);
  }
}

TEST(Rng, BelowIsRoughlyUniform) {
  Rng rng(1);
  std::array<int, 5> counts{};
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, ShuffleIsAPermutationAndSeeded) {
  std::vector<int> a(50), b;
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(9), r2(9);
  r1.shuffle(a);
  r2.shuffle(b);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Base64, Rfc4648Vectors) {
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("f"), "Zg==");
  EXPECT_EQ(base64_encode("fo"), "Zm8=");
  EXPECT_EQ(base64_encode("foo"), "Zm9v");
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
}

TEST(Dates, CivilRoundTrip) {
  EXPECT_EQ(format_date(0), "1970-01-01");
  EXPECT_EQ(parse_date("2150-01-01"), 65744);
  EXPECT_EQ(format_date(65744), "2150-01-01");
  for (std::int64_t d = 60000; d < 70000; d += 37) EXPECT_EQ(parse_date(format_date(d)), d);
  EXPECT_THROW(parse_date("2150-02-30"), SchemaError);
  EXPECT_THROW(parse_date("yesterday"), SchemaError);
}

TEST(Timestamps, UtcRoundTripAtMillisecondPrecision) {
  const auto t = std::chrono::system_clock::time_point(std::chrono::milliseconds(1791955200123));
  const std::string s = format_utc(t);
  EXPECT_EQ(s, "2026-10-14T05:20:00.123Z");
  EXPECT_EQ(parse_utc(s), t);
  EXPECT_THROW(parse_utc("2026-10-14 05:20"), SchemaError);
}

TEST(Csv, QuotedFieldsAndNewlines) {
  const auto rows = parse_csv("a,b,c\n\"x, y\",\"he said \"\"hi\"\"\",\"line1\nline2\"\n1,,3\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "x, y");
  EXPECT_EQ(rows[1][1], "he said \"hi\"");
  EXPECT_EQ(rows[1][2], "line1\nline2");
  EXPECT_EQ(rows[2][1], "");
  EXPECT_THROW(parse_csv("\"open"), SchemaError);
}

TEST(Csv, EscapeRoundTrips) {
  for (std::string f : {"plain", "with,comma", "with\"quote", "multi\nline", ""}) {
    const auto rows = parse_csv(csv_escape(f) + ",z\n");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0][0], f);
  }
}

TEST(Files, AtomicWriteReplacesContent) {
  const auto dir = std::filesystem::temp_directory_path() / "ctxpress_util_test";
  std::filesystem::create_directories(dir);
  const auto p = dir / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  EXPECT_EQ(read_file(p), "two");
  EXPECT_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_file(dir / "missing"), IoError);
}

TEST(Strings, TrimAndLower) {
  EXPECT_EQ(trim("  a b \t\n"), "a b");
  EXPECT_EQ(trim(""), "");
  EXPECT_EQ(to_lower_ascii("AbC-Ü"), "abc-Ü");
}

}  // namespace
}  // namespace ctxpress
