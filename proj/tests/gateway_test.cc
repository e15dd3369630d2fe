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

#include "ctxpress/gateway.h"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "ctxpress/errors.h"
#include "test_support.h"

namespace ctxpress {
namespace {

TEST(Softmax, Examples) {
  EXPECT_DOUBLE_EQ(softmax_pair(0, 0), 0.5);
  EXPECT_NEAR(softmax_pair(std::log(2.0), 0), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(softmax_pair(1000, 0), 1.0);
  EXPECT_DOUBLE_EQ(softmax_pair(0, 1000), 0.0);
  EXPECT_NEAR(softmax_pair(-1000, -1000.5), 1.0 / (1.0 + std::exp(-0.5)), 1e-12);
  EXPECT_THROW(softmax_pair(NAN, 0), NumericError);
  EXPECT_THROW(softmax_pair(0, INFINITY), NumericError);
}

TEST(FirstTokenLogits, MaxOverSurfaceForms) {
  const auto s = first_token_from_logits({{"Yes", 1.0}, {" yes", 3.0}, {"No", 2.0}, {"maybe", 9.0}});
  ASSERT_TRUE(s.has_value());
  EXPECT_DOUBLE_EQ(s->z_yes, 3.0);
  EXPECT_DOUBLE_EQ(s->z_no, 2.0);
  EXPECT_NEAR(s->p_yes, 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_FALSE(first_token_from_logits({{"Yes", 1.0}}).has_value());
}

TEST(TextMarker, Labels) {
  EXPECT_EQ(text_marker_label("FINDINGS: x\nIMPRESSION: Normal study."), 0);
  EXPECT_EQ(text_marker_label("FINDINGS: x\nIMPRESSION: Abnormal study. More."), 1);
  EXPECT_FALSE(text_marker_label("no marker").has_value());
}

class OracleTest : public ::testing::Test {
 protected:
  Manifest manifest = testing::make_manifest(200);
  PairingMap pairing = pair_opposites(manifest, 2);
  DistractorBank bank = build_distractor_bank(manifest, 2);
  ModalityIndex index = ModalityIndex::from_manifest(manifest);

  PerturbedCase make(const StudyRecord& s, const Condition& c) {
    return apply_condition(s, c, pairing, manifest, &bank);
  }
  static int answer(const RawResponse& r) { return r.text == "Yes" ? 1 : 0; }
};

TEST_F(OracleTest, AlphaExtremesPickAModality) {
  const PromptVariant v0{};
  for (const auto& s : manifest.records()) {
    const auto c = make(s, Condition::text_shift());
    OracleParams text_only{1.0, 0.0, 0.0, 1};
    OracleParams image_only{0.0, 0.0, 0.0, 1};
    EXPECT_EQ(answer(oracle_predict(c, v0, text_only, index)), c.labels.text_consistent);
    EXPECT_EQ(answer(oracle_predict(c, v0, image_only, index)), c.labels.image_consistent);
  }
}

TEST_F(OracleTest, AlphaSweepTracksTextFollowRate) {
  const PromptVariant v0{};
  for (double alpha : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const OracleParams p{alpha, 0.0, 0.0, 11};
    int follow = 0;
    for (const auto& s : manifest.records()) {
      const auto c = make(s, Condition::image_shift());
      follow += answer(oracle_predict(c, v0, p, index)) == c.labels.text_consistent;
    }
    const double rate = follow / static_cast<double>(manifest.size());
    // 4 sigma at n=400.
    EXPECT_NEAR(rate, alpha, 4 * std::sqrt(alpha * (1 - alpha) / 400.0)) << alpha;
  }
}

TEST_F(OracleTest, AnalyticFirstTokenProbability) {
  const OracleParams p{0.9, 0.05, 0.02, 3};
  const auto& s = manifest.at("s000");  // label 1
  const auto shifted = make(s, Condition::text_shift());
  auto r = oracle_predict(shifted, {}, p, index);
  ASSERT_TRUE(r.first_token.has_value());
  EXPECT_NEAR(r.first_token->p_yes, 0.1, 1e-9);  // text says 0, image says 1
  r = oracle_predict(shifted, {VariantId::V2, PromptFamily::Standard}, p, index);
  EXPECT_NEAR(r.first_token->p_yes, 0.1 * 0.98 + 0.9 * 0.02, 1e-9);
  // Three normal distractors on a positive study.
  const auto h = make(s, Condition::history(3));
  r = oracle_predict(h, {VariantId::V0, PromptFamily::History}, p, index);
  EXPECT_NEAR(r.first_token->p_yes, std::pow(0.95, 3), 1e-9);
  EXPECT_NEAR(std::exp(r.first_token->z_yes), r.first_token->p_yes, 1e-9);
  const auto clear = make(s, Condition::no_shift());
  EXPECT_NEAR(oracle_predict(clear, {}, p, index).first_token->p_yes, 1.0 - 1e-6, 1e-12);
}

TEST_F(OracleTest, ZeroNoiseReproducesLabels) {
  const OracleParams p{0.9, 0.0, 0.0, 5};
  for (const auto& s : manifest.records()) {
    for (auto id : {VariantId::V0, VariantId::V1, VariantId::V2, VariantId::V3}) {
      EXPECT_EQ(answer(oracle_predict(make(s, Condition::no_shift()), {id, PromptFamily::Standard}, p,
                                      index)),
                s.label);
      EXPECT_EQ(answer(oracle_predict(make(s, Condition::history(5)), {id, PromptFamily::History}, p,
                                      index)),
                s.label);
    }
  }
}

TEST_F(OracleTest, DeterministicAndSeedSensitive) {
  const OracleParams a{0.5, 0.3, 0.3, 1};
  OracleParams b = a;
  b.seed = 2;
  int diff = 0;
  for (const auto& s : manifest.records()) {
    const auto c = make(s, Condition::text_shift());
    const PromptVariant v{VariantId::V1, PromptFamily::Standard};
    EXPECT_EQ(oracle_predict(c, v, a, index).text, oracle_predict(c, v, a, index).text);
    diff += oracle_predict(c, v, a, index).text != oracle_predict(c, v, b, index).text;
  }
  EXPECT_GT(diff, 0);
}

TEST_F(OracleTest, UnresolvableInputs) {
  auto c = make(manifest.at("s001"), Condition::no_shift());
  c.image_ref = "images/unknown.png";
  EXPECT_THROW(oracle_predict(c, {}, {}, index), OracleError);
  c.image_ref.reset();
  c.report_text.reset();
  EXPECT_THROW(oracle_predict(c, {}, {}, index), OracleError);
  OracleParams bad;
  bad.alpha = 1.5;
  EXPECT_THROW(bad.validate(), RangeError);
}

TEST_F(OracleTest, BackendHonoursCaptureFlag) {
  OracleBackend backend("o", {}, std::make_shared<ModalityIndex>(index));
  const auto c = make(manifest.at("s001"), Condition::no_shift());
  const auto msgs = render(c, {});
  GenerationSettings g;
  EXPECT_FALSE(backend.complete({msgs, &c, {}, "k"}, g).first_token.has_value());
  g.capture_first_token_logits = true;
  const auto r = backend.complete({msgs, &c, {}, "k"}, g);
  EXPECT_TRUE(r.first_token.has_value());
  EXPECT_EQ(r.backend_id, "o");
  EXPECT_THROW(backend.complete({msgs, nullptr, {}, "k"}, g), OracleError);
}

TEST(Sidecar, ImagePolarityRows) {
  testing::TempDir dir;
  write_file_atomic(dir.path() / "pol.csv", "image_ref,label\na.png,1\nb.png,0\n");
  ModalityIndex idx;
  idx.load_image_sidecar(dir.path() / "pol.csv");
  EXPECT_EQ(idx.image_label("a.png"), 1);
  EXPECT_EQ(idx.image_label("b.png"), 0);
  EXPECT_FALSE(idx.image_label("c.png").has_value());
  idx.add_text("plain report", 1);
  EXPECT_EQ(idx.text_label("plain report"), 1);
}

class CountingBackend : public Backend {
 public:
  RawResponse complete(const DispatchRequest&, const GenerationSettings&) override {
    ++calls;
    RawResponse r;
    r.text = "No";
    r.first_token = FirstTokenScore{-0.1, -2.3, 0.9};
    r.backend_id = "count";
    r.latency_ms = 12;
    return r;
  }
  std::string id() const override { return "count"; }
  std::atomic<int> calls{0};
};

TEST(Cache, RoundTripAndHits) {
  testing::TempDir dir;
  auto inner = std::make_shared<CountingBackend>();
  auto cache = std::make_shared<ResponseCache>(dir.path() / "cache");
  CachingBackend cached(inner, cache);
  const MessageSequence msgs;
  const auto first = cached.complete({msgs, nullptr, {}, "m|s1|no_shift|v0"}, {});
  const auto second = cached.complete({msgs, nullptr, {}, "m|s1|no_shift|v0"}, {});
  EXPECT_EQ(inner->calls, 1);
  EXPECT_FALSE(first.from_cache);
  EXPECT_TRUE(second.from_cache);
  EXPECT_EQ(second.text, "No");
  EXPECT_EQ(second.first_token, first.first_token);
  EXPECT_EQ(second.latency_ms, 12);
  EXPECT_EQ(cache->path_for("m|s1|no_shift|v0").filename(),
            sha256_hex("m|s1|no_shift|v0") + ".json");
  cached.complete({msgs, nullptr, {}, "m|s2|no_shift|v0"}, {});
  EXPECT_EQ(inner->calls, 2);
}

TEST(Cache, CorruptEntryIsAnError) {
  testing::TempDir dir;
  ResponseCache cache(dir.path());
  write_file_atomic(cache.path_for("k"), "{oops");
  EXPECT_THROW(cache.load("k"), ProtocolError);
}

TEST(Retry, ExponentialBackoffIsCapped) {
  RetryPolicy p;
  EXPECT_EQ(p.backoff_for(0).count(), 500);
  EXPECT_EQ(p.backoff_for(1).count(), 1000);
  EXPECT_EQ(p.backoff_for(3).count(), 4000);
  EXPECT_EQ(p.backoff_for(10).count(), 30000);
}

TEST(RateLimit, SpacesRequests) {
  RateLimiter off(0, 1);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) off.acquire();
  RateLimiter limited(50, 1);
  for (int i = 0; i < 6; ++i) limited.acquire();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  EXPECT_GE(ms, 90);  // five waits of 20 ms
}

MessageSequence image_message(const std::filesystem::path& png) {
  MessageSequence m;
  m.system_text = std::string(kSystemPrompt);
  m.parts.emplace_back(ImagePart{png.string(), "image/png"});
  m.parts.emplace_back(TextPart{"Is there any finding?"});
  return m;
}

TEST(WireFormat, ChatRequestLayout) {
  testing::TempDir dir;
  write_file_atomic(dir.path() / "x.png", "foo");
  HttpConfig cfg;
  cfg.model = "vlm-1";
  cfg.logprobs = true;
  GenerationSettings g;
  g.capture_first_token_logits = true;
  const auto body = build_chat_request(image_message(dir.path() / "x.png"), g, cfg, true);
  EXPECT_EQ(body.at("model"), "vlm-1");
  EXPECT_EQ(body.at("max_tokens"), 16);
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("logprobs"), true);
  EXPECT_EQ(body.at("top_logprobs"), 20);
  const auto& msgs = body.at("messages");
  EXPECT_EQ(msgs.at(0).at("role"), "system");
  const auto& content = msgs.at(1).at("content");
  EXPECT_EQ(content.at(0).at("type"), "image_url");
  EXPECT_EQ(content.at(0).at("image_url").at("url"), "data:image/png;base64,Zm9v");
  EXPECT_EQ(content.at(1).at("text"), "Is there any finding?");

  const auto plain = build_chat_request(image_message(dir.path() / "x.png"), {}, cfg, false);
  EXPECT_FALSE(plain.contains("temperature"));
  EXPECT_FALSE(plain.contains("logprobs"));
  EXPECT_THROW(build_chat_request(image_message(dir.path() / "missing.png"), {}, cfg, true), IoError);
}

TEST(WireFormat, ParseResponse) {
  const auto r = parse_chat_response(R"({"choices":[{"message":{"content":"Yes."},
    "logprobs":{"content":[{"token":"Yes","logprob":-0.2,
      "top_logprobs":[{"token":"Yes","logprob":-0.2},{"token":"No","logprob":-1.8},
                      {"token":" no","logprob":-1.6}]}]}}]})");
  EXPECT_EQ(r.text, "Yes.");
  ASSERT_TRUE(r.first_token.has_value());
  EXPECT_DOUBLE_EQ(r.first_token->z_no, -1.6);
  EXPECT_NEAR(r.first_token->p_yes, 1.0 / (1.0 + std::exp(-1.4)), 1e-12);
  EXPECT_EQ(parse_chat_response(R"({"choices":[{"message":{"content":null}}]})").text, "");
  EXPECT_FALSE(parse_chat_response(R"({"choices":[{"message":{"content":"No"}}]})").first_token);
  EXPECT_THROW(parse_chat_response("<html>"), ProtocolError);
  EXPECT_THROW(parse_chat_response(R"({"choices":[]})"), ProtocolError);
}

// Scripted chat-completions endpoint on a loopback port.
class StubServer {
 public:
  using Handler = std::function<void(int hit, const httplib::Request&, httplib::Response&)>;

  explicit StubServer(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = hits++;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      handler_(n, req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> hits{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  Handler handler_;
  int port_ = 0;
  std::thread thread_;
};

constexpr const char* kOk = R"({"choices":[{"message":{"content":"No"}}]})";

HttpConfig fast_config(const std::string& url) {
  HttpConfig c;
  c.base_url = url;
  c.model = "stub";
  c.api_key = "secret";
  c.retry.initial_backoff = std::chrono::milliseconds(1);
  c.retry.max_backoff = std::chrono::milliseconds(5);
  c.timeout = std::chrono::seconds(5);
  return c;
}

RawResponse call(HttpBackend& b) {
  const MessageSequence m{std::string(kSystemPrompt), {TextPart{"q"}}};
  return b.complete({m, nullptr, {}, "k"}, {});
}

TEST(Http, RetriesThrottlingThenSucceeds) {
  StubServer s([](int hit, const httplib::Request&, httplib::Response& res) {
    if (hit < 2) {
      res.status = 429;
      res.set_header("Retry-After", "100");  // capped by max_backoff
      return;
    }
    res.set_content(kOk, "application/json");
  });
  HttpBackend b("h", fast_config(s.base_url()));
  const auto r = call(b);
  EXPECT_EQ(r.text, "No");
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(s.hits, 3);
  EXPECT_EQ(s.last_auth, "Bearer secret");
  EXPECT_EQ(nlohmann::json::parse(s.last_body).at("model"), "stub");
}

TEST(Http, AuthFailureIsNotRetried) {
  StubServer s([](int, const httplib::Request&, httplib::Response& res) { res.status = 401; });
  HttpBackend b("h", fast_config(s.base_url()));
  EXPECT_THROW(call(b), AuthError);
  EXPECT_EQ(s.hits, 1);
}

TEST(Http, ServerErrorsExhaustRetries) {
  StubServer s([](int, const httplib::Request&, httplib::Response& res) { res.status = 503; });
  auto cfg = fast_config(s.base_url());
  cfg.retry.max_retries = 2;
  HttpBackend b("h", cfg);
  EXPECT_THROW(call(b), TransportError);
  EXPECT_EQ(s.hits, 3);
}

TEST(Http, OtherClientErrorsAreProtocolErrors) {
  StubServer s([](int, const httplib::Request&, httplib::Response& res) { res.status = 404; });
  HttpBackend b("h", fast_config(s.base_url()));
  EXPECT_THROW(call(b), ProtocolError);
  EXPECT_EQ(s.hits, 1);
}

TEST(Http, TemperatureRejectionFallsBack) {
  StubServer s([](int, const httplib::Request& req, httplib::Response& res) {
    if (nlohmann::json::parse(req.body).contains("temperature")) {
      res.status = 400;
      res.set_content(R"({"error":"Unsupported parameter: temperature"})", "application/json");
      return;
    }
    res.set_content(kOk, "application/json");
  });
  HttpBackend b("h", fast_config(s.base_url()));
  const auto r = call(b);
  EXPECT_TRUE(r.temperature_fallback);
  EXPECT_EQ(r.retries, 0);
  EXPECT_EQ(s.hits, 2);
}

TEST(Http, TransportFailure) {
  // Bind and release a port so nothing listens on it.
  int port = 0;
  {
    httplib::Server tmp;
    port = tmp.bind_to_any_port("127.0.0.1");
  }
  auto cfg = fast_config("http://127.0.0.1:" + std::to_string(port) + "/v1");
  cfg.retry.max_retries = 1;
  cfg.timeout = std::chrono::seconds(1);
  HttpBackend b("h", cfg);
  EXPECT_THROW(call(b), TransportError);
}

TEST(Http, ConfigFromEnvironment) {
  ::setenv("CTXPRESS_BASE_URL", "http://example.invalid/v1", 1);
  ::setenv("CTXPRESS_API_KEY", "envkey", 1);
  HttpConfig c;
  c.api_key = "explicit";
  c.apply_environment();
  EXPECT_EQ(c.base_url, "http://example.invalid/v1");
  EXPECT_EQ(c.api_key, "explicit");
  ::unsetenv("CTXPRESS_BASE_URL");
  ::unsetenv("CTXPRESS_API_KEY");
  HttpConfig missing;
  missing.model = "m";
  EXPECT_THROW(HttpBackend("h", missing), ConfigError);
  missing.base_url = "no-scheme";
  EXPECT_THROW(HttpBackend("h", missing), ConfigError);
}

TEST(BankRegeneration, KeepsStructure) {
  const auto manifest = testing::make_manifest(2);
  const auto bank = build_distractor_bank(manifest, 1);
  CountingBackend llm;
  const auto fresh = regenerate_bank_text(bank, llm, {});
  EXPECT_EQ(llm.calls, static_cast<int>(bank.size() * kDistractorOrder.size()));
  for (const auto& [id, e] : fresh.entries()) {
    const auto& old = *bank.find(id);
    EXPECT_EQ(e.current_date, old.current_date);
    for (std::size_t i = 0; i < e.reports.size(); ++i) {
      EXPECT_EQ(e.reports[i].kind, old.reports[i].kind);
      EXPECT_EQ(e.reports[i].polarity, old.reports[i].polarity);
      EXPECT_EQ(e.reports[i].report_date, old.reports[i].report_date);
      EXPECT_EQ(e.reports[i].report_text, "No");
    }
  }
}

}  // namespace
}  // namespace ctxpress
