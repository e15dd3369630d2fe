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

#ifndef CTXPRESS_GATEWAY_H_
#define CTXPRESS_GATEWAY_H_

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "ctxpress/core.h"
#include "ctxpress/curation.h"
#include "ctxpress/perturb.h"
#include "ctxpress/prompt.h"

namespace ctxpress {

struct GenerationSettings {
  double temperature = 0.0;
  int max_output_tokens = 16;
  bool capture_first_token_logits = false;
};

struct RawResponse {
  std::string text;
  std::optional<FirstTokenScore> first_token;
  std::int64_t latency_ms = 0;
  std::string backend_id;
  bool from_cache = false;
  int retries = 0;
  // The backend rejected temperature=0 and the request was resent without it.
  bool temperature_fallback = false;
};

// exp(z_yes) / (exp(z_yes) + exp(z_no)), evaluated without overflow. Throws
// NumericError on non-finite input.
double softmax_pair(double z_yes, double z_no);

// Surface forms whose maximum logit stands for the Yes (or No) token.
inline constexpr std::array<std::string_view, 4> kYesTokens = {"Yes", " Yes", "yes", " yes"};
inline constexpr std::array<std::string_view, 4> kNoTokens = {"No", " No", "no", " no"};

// Builds the score from per-token logits (or log-probabilities, which differ
// by a constant). nullopt unless both a Yes and a No form are present.
std::optional<FirstTokenScore> first_token_from_logits(
    const std::map<std::string, double>& token_logits);

struct DispatchRequest {
  const MessageSequence& messages;
  // Null for requests that are not tied to a study (bank regeneration).
  const PerturbedCase* perturbed = nullptr;
  PromptVariant variant;
  std::string key;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual RawResponse complete(const DispatchRequest& request,
                               const GenerationSettings& settings) = 0;
  virtual std::string id() const = 0;
  // Whether first-token logits can be captured at all.
  virtual bool supports_first_token() const { return false; }
};

// ---------------------------------------------------------------------------
// Deterministic oracle

struct OracleParams {
  double alpha = 0.9;    // follow the text-implied label when modalities conflict
  double gamma = 0.03;   // per-distractor flip toward the distractor polarity
  double epsilon = 0.02; // per-variant flip for v1..v3
  std::uint64_t seed = 0;

  void validate() const;
};

// Marker lines the synthetic corpus writes into every report.
inline constexpr std::string_view kNormalImpression = "IMPRESSION: Normal study.";
inline constexpr std::string_view kAbnormalImpression = "IMPRESSION: Abnormal study.";

// Label implied by a report's marker, if it carries one.
std::optional<int> text_marker_label(std::string_view report);

// Image (and fallback text) polarity lookups backing the oracle.
class ModalityIndex {
 public:
  // Every manifest image and report keyed to its study label.
  static ModalityIndex from_manifest(const Manifest& manifest);
  // Adds "image_ref,label" rows from the corpus sidecar.
  void load_image_sidecar(const std::filesystem::path& csv_path);

  void add_image(std::string ref, int label) { images_[std::move(ref)] = label; }
  void add_text(std::string_view text, int label);

  std::optional<int> image_label(std::string_view ref) const;
  // Marker first, then exact-text lookup.
  std::optional<int> text_label(std::string_view text) const;

 private:
  std::unordered_map<std::string, int> images_;
  std::unordered_map<std::string, int> texts_;
};

// Seeded, pure simulation of a text-leaning model. Throws OracleError when
// the case carries no modality or a modality's polarity cannot be resolved.
RawResponse oracle_predict(const PerturbedCase& c, const PromptVariant& variant,
                           const OracleParams& params, const ModalityIndex& index);

class OracleBackend : public Backend {
 public:
  OracleBackend(std::string id, OracleParams params, std::shared_ptr<const ModalityIndex> index);

  RawResponse complete(const DispatchRequest& request, const GenerationSettings& settings) override;
  std::string id() const override { return id_; }
  bool supports_first_token() const override { return true; }

 private:
  std::string id_;
  OracleParams params_;
  std::shared_ptr<const ModalityIndex> index_;
};

// ---------------------------------------------------------------------------
// Response cache

// Content-addressed directory: <dir>/<sha256(record_key)>.json.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<RawResponse> load(const std::string& key) const;
  void store(const std::string& key, const RawResponse& response);
  std::filesystem::path path_for(const std::string& key) const;

  std::mutex& lock_for(const std::string& key);

 private:
  std::filesystem::path dir_;
  std::array<std::mutex, 64> stripes_;
};

// Serves hits from the cache; misses go to the inner backend and are stored.
class CachingBackend : public Backend {
 public:
  CachingBackend(std::shared_ptr<Backend> inner, std::shared_ptr<ResponseCache> cache);

  RawResponse complete(const DispatchRequest& request, const GenerationSettings& settings) override;
  std::string id() const override { return inner_->id(); }
  bool supports_first_token() const override { return inner_->supports_first_token(); }

 private:
  std::shared_ptr<Backend> inner_;
  std::shared_ptr<ResponseCache> cache_;
};

// ---------------------------------------------------------------------------
// HTTP chat-completions backend

struct RetryPolicy {
  int max_retries = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{30000};

  std::chrono::milliseconds backoff_for(int attempt) const;
};

// Token bucket; acquire() blocks until a token is available. A rate of 0
// disables limiting.
class RateLimiter {
 public:
  RateLimiter(double tokens_per_second, double burst);
  void acquire();

 private:
  std::mutex mu_;
  double rate_;
  double burst_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

// Caps requests in flight.
class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

struct HttpConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  std::string api_key;
  int max_in_flight = 4;
  double requests_per_second = 0.0;
  double burst = 4.0;
  RetryPolicy retry;
  std::chrono::seconds timeout{60};
  bool logprobs = false;
  int top_logprobs = 20;

  // Fills base_url and api_key from CTXPRESS_BASE_URL / CTXPRESS_API_KEY
  // where they are empty.
  void apply_environment();
};

// Request body for one completion; exposed for wire-format tests.
json build_chat_request(const MessageSequence& messages, const GenerationSettings& settings,
                        const HttpConfig& config, bool include_temperature);
// Extracts text and optional first-token score from a response body. Throws
// ProtocolError when the payload is not a chat completion.
RawResponse parse_chat_response(std::string_view body);

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(std::string id, HttpConfig config);
  ~HttpBackend() override;

  RawResponse complete(const DispatchRequest& request, const GenerationSettings& settings) override;
  std::string id() const override { return id_; }
  bool supports_first_token() const override { return config_.logprobs; }

 private:
  std::string id_;
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  RateLimiter limiter_;
  Semaphore in_flight_;
};

// Rewrites every distractor text through a generation endpoint, keeping kind,
// polarity, and dates.
DistractorBank regenerate_bank_text(const DistractorBank& bank, Backend& backend,
                                    const GenerationSettings& settings);

}  // namespace ctxpress

#endif  // CTXPRESS_GATEWAY_H_
